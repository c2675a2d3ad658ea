// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::time::Instant;

use rayon::prelude::*;

use super::output::ResultRow;
use super::spec::{ExperimentKind, ExperimentSpec, SchemeId};
use super::streams::{stream, Tag};
use crate::beamforming::{best_of_codebook, joint_optimize, rate_report, zf_baseline, PowerAllocation, RateReport};
use crate::channel::{aperture_channel, direct_channel, spatial_correlation, ChannelRealization, CorrelationModel};
use crate::doa::{evaluate, generate_samples, train, DoaModel, DoaSample, LinkBudget, TrainMethod};
use crate::error::{Error, Result};
use crate::geometry::{build_scenario, build_sim_geometry, PhaseLevels, Scenario, ScenarioKind, Vec3};
use crate::linalg::CMatrix;
use crate::propagation::{build_transfer_stack, quantize_phases, sim_response, PhaseState, TransferStack};
use crate::units::dbm_to_mw;

/// A per-trial value and the seconds spent computing it.
type Timed = (f64, f64);

fn timed<T>(enabled: bool, f: impl FnOnce() -> T) -> (T, f64) {
    if enabled {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed().as_secs_f64())
    } else {
        (f(), 0.0)
    }
}

fn quantized(phases: &PhaseState, levels: PhaseLevels) -> Result<PhaseState> {
    match levels {
        PhaseLevels::Continuous => Ok(phases.clone()),
        PhaseLevels::Discrete(n) => quantize_phases(phases, n),
    }
}

struct SumrateSetup {
    spec: ExperimentSpec,
    scenario: Scenario,
    /// Outer layer; it sits at the full SIM thickness for every L.
    aperture: Vec<Vec3>,
    aperture_corr: CorrelationModel,
    stacks: Vec<TransferStack>,
    zf_arrays: Vec<(SchemeId, Vec<Vec3>)>,
    wavelength: f64,
    noise: f64,
    budget: f64,
}

impl SumrateSetup {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        let base = spec.sim.config(spec.layers[0]);
        let wavelength = base.wavelength();
        let scenario = build_scenario(ScenarioKind::Multiuser, &base, &spec.scenario)?;
        let aperture = build_sim_geometry(&base)?.outer_layer().to_vec();
        let aperture_corr = spatial_correlation(&aperture, wavelength)?;
        let stacks = spec
            .layers
            .iter()
            .map(|&l| {
                let cfg = spec.sim.config(l);
                build_transfer_stack(&build_sim_geometry(&cfg)?, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let zf_arrays = spec
            .schemes
            .iter()
            .filter_map(|&s| s.zf_antennas().map(|m| (s, m)))
            .map(|(s, m)| {
                let mut cfg = spec.sim.config(1);
                cfg.num_antennas = m;
                Ok((s, build_sim_geometry(&cfg)?.antenna_positions))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            noise: dbm_to_mw(scenario.noise_power_dbm),
            budget: dbm_to_mw(scenario.tx_power_dbm),
            scenario,
            aperture,
            aperture_corr,
            stacks,
            zf_arrays,
            wavelength,
        })
    }

    fn sim_schemes(&self) -> impl Iterator<Item = SchemeId> + '_ {
        self.spec.schemes.iter().copied().filter(|s| s.zf_antennas().is_none())
    }

    /// `(value, seconds)` per (layer index, scheme index); `None` marks a
    /// skipped trial (rank-deficient ZF channel).
    fn trial(&self, trial: usize) -> Result<Vec<Vec<Option<Timed>>>> {
        let spec = &self.spec;
        let levels = spec.sim.phase_levels;
        let mut out = vec![vec![None; spec.schemes.len()]; spec.layers.len()];
        let index_of = |s: SchemeId| spec.schemes.iter().position(|&x| x == s);

        for &(scheme, ref antennas) in &self.zf_arrays {
            let (report, secs) = timed(spec.timing, || -> Result<Option<f64>> {
                let mut rng = stream(spec.seed, 0, Tag::scheme(scheme), trial);
                let ch = direct_channel(&mut rng, antennas, &self.scenario, self.wavelength)?;
                match zf_baseline(&ch.h, self.noise, self.budget) {
                    Ok(r) => Ok(Some(r.sum_rate)),
                    Err(Error::Numerical(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            });
            let si = index_of(scheme).expect("listed");
            if let Some(v) = report? {
                for row in &mut out {
                    row[si] = Some((v, secs));
                }
            }
        }

        if self.sim_schemes().next().is_none() {
            return Ok(out);
        }
        // One realization per trial, shared by every L and scheme.
        let mut rng = stream(spec.seed, 0, Tag::Channel, trial);
        let ChannelRealization { h, .. } = aperture_channel(
            &mut rng,
            &self.aperture,
            &self.aperture_corr,
            &self.scenario,
            self.wavelength,
        )?;

        for (li, (&layers, stack)) in spec.layers.iter().zip(&self.stacks).enumerate() {
            let wants_joint = index_of(SchemeId::Joint).is_some();
            let wants_avg = index_of(SchemeId::AveragePa).is_some();
            if wants_joint || wants_avg {
                // Average-PA is the joint scheme's first round; both draw
                // from the joint stream so either one alone gives the same
                // numbers as the pair.
                let (outcome, secs) = timed(spec.timing, || {
                    let mut rng = stream(spec.seed, layers, Tag::Joint, trial);
                    let mut opts = spec.joint;
                    if !wants_joint {
                        opts.max_rounds = 1;
                    }
                    joint_optimize(stack, &h, self.noise, self.budget, &opts, &mut rng)
                });
                let outcome = outcome?;
                if let Some(si) = index_of(SchemeId::Joint) {
                    let v = match levels {
                        PhaseLevels::Continuous => outcome.report.sum_rate,
                        _ => {
                            self.rate_at(stack, &h, &quantized(&outcome.phases, levels)?, &outcome.power)?
                                .sum_rate
                        }
                    };
                    out[li][si] = Some((v, secs));
                }
                if let Some(si) = index_of(SchemeId::AveragePa) {
                    let v = match levels {
                        PhaseLevels::Continuous => outcome.first_round.sum_rate,
                        _ => {
                            let pa = PowerAllocation::uniform(h.rows(), self.budget);
                            let q = quantized(&outcome.first_round_phases, levels)?;
                            self.rate_at(stack, &h, &q, &pa)?.sum_rate
                        }
                    };
                    out[li][si] = Some((v, secs));
                }
            }
            if let Some(si) = index_of(SchemeId::Codebook) {
                let (report, secs) = timed(spec.timing, || -> Result<RateReport> {
                    let mut rng = stream(spec.seed, layers, Tag::Codebook, trial);
                    let (l, n) = (stack.num_layers(), stack.atoms_per_layer());
                    let candidates = (0..10 * l * n)
                        .map(|_| quantized(&PhaseState::random(l, n, &mut rng), levels))
                        .collect::<Result<Vec<_>>>()?;
                    best_of_codebook(stack, &h, self.noise, self.budget, candidates).map(|(_, _, r)| r)
                });
                out[li][si] = Some((report?.sum_rate, secs));
            }
        }
        Ok(out)
    }

    fn rate_at(
        &self,
        stack: &TransferStack,
        h: &CMatrix,
        phases: &PhaseState,
        pa: &PowerAllocation,
    ) -> Result<RateReport> {
        let b = h.matmul(&sim_response(stack, phases)?)?;
        Ok(rate_report(&b, &pa.p, self.noise))
    }
}

/// Average sum-rate of every selected scheme at every L.
///
/// Trials run in parallel on the current rayon pool; each draws from its
/// own positional streams and results are reduced in trial order, so the
/// rows do not depend on the number of threads.
pub fn run_sumrate_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    if spec.experiment != ExperimentKind::Sumrate {
        return Err(Error::InvalidConfig("spec is not a sum-rate experiment".into()));
    }
    let setup = SumrateSetup::new(spec)?;
    let per_trial = (0..spec.trials)
        .into_par_iter()
        .map(|t| setup.trial(t))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(spec.layers.len() * spec.schemes.len());
    for (li, &layers) in spec.layers.iter().enumerate() {
        for (si, scheme) in spec.schemes.iter().enumerate() {
            let cells: Vec<(f64, f64)> = per_trial.iter().filter_map(|t| t[li][si]).collect();
            let values: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let seconds: f64 = cells.iter().map(|c| c.1).sum();
            rows.push(ResultRow::from_samples(
                layers,
                scheme.name(),
                "sum_rate",
                &values,
                seconds,
            )?);
        }
    }
    Ok(rows)
}

/// Trained model and its accuracies for one (L, trial) cell.
#[derive(Debug, Clone)]
pub struct DoaCell {
    pub layers: usize,
    pub trial: usize,
    pub model: DoaModel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
}

/// Train and test sets of one trial; the same for every L because the outer
/// layer does not move with L.
pub fn doa_samples(spec: &ExperimentSpec, trial: usize) -> Result<(Vec<DoaSample>, Vec<DoaSample>)> {
    let cfg = spec.sim.config(spec.layers[0]);
    let geom = build_sim_geometry(&cfg)?;
    let scenario = build_scenario(ScenarioKind::Doa, &cfg, &spec.scenario)?;
    let mut rng = stream(spec.seed, 0, Tag::DoaSamples, trial);
    let train = generate_samples(&mut rng, &scenario, &geom, cfg.wavelength(), spec.doa.train_samples)?;
    let test = generate_samples(&mut rng, &scenario, &geom, cfg.wavelength(), spec.doa.test_samples)?;
    Ok((train, test))
}

/// Trains and evaluates every (L, trial) cell.
pub fn run_doa_cells(spec: &ExperimentSpec) -> Result<Vec<DoaCell>> {
    if spec.experiment != ExperimentKind::Doa {
        return Err(Error::InvalidConfig("spec is not a DOA experiment".into()));
    }
    let link = {
        let s = build_scenario(ScenarioKind::Doa, &spec.sim.config(1), &spec.scenario)?;
        LinkBudget {
            tx_power_dbm: s.tx_power_dbm,
            noise_power_dbm: s.noise_power_dbm,
        }
    };
    let sets = (0..spec.trials)
        .map(|t| doa_samples(spec, t))
        .collect::<Result<Vec<_>>>()?;
    let stacks = spec
        .layers
        .iter()
        .map(|&l| {
            let cfg = spec.sim.config(l);
            build_transfer_stack(&build_sim_geometry(&cfg)?, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.layers.len())
        .flat_map(|li| (0..spec.trials).map(move |t| (li, t)))
        .collect();

    let cells = jobs
        .into_par_iter()
        .map(|(li, trial)| -> Result<DoaCell> {
            let layers = spec.layers[li];
            let stack = &stacks[li];
            let (train_set, test_set) = &sets[trial];
            let (result, seconds) = timed(spec.timing, || -> Result<_> {
                let mut rng = stream(spec.seed, layers, Tag::DoaInit, trial);
                let init = PhaseState::random(stack.num_layers(), stack.atoms_per_layer(), &mut rng);
                let mut model = DoaModel::new(stack.clone(), init, link)?;
                let mut rng = stream(spec.seed, layers, Tag::DoaTrain, trial);
                let report = train(&mut model, train_set, &spec.doa.train, &mut rng)?;
                model.phases = quantized(&model.phases, spec.sim.phase_levels)?;
                let mut rng = stream(spec.seed, layers, Tag::DoaEval, trial);
                let train_accuracy = evaluate(&model, train_set, &mut rng)?;
                let test_accuracy = evaluate(&model, test_set, &mut rng)?;
                Ok((model, report.loss_trace, train_accuracy, test_accuracy))
            });
            let (model, loss_trace, train_accuracy, test_accuracy) = result?;
            Ok(DoaCell {
                layers,
                trial,
                model,
                train_accuracy,
                test_accuracy,
                loss_trace,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &spec.doa.model_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            context: format!("cannot create {}", dir.display()),
            source,
        })?;
        for c in &cells {
            let path = dir.join(format!("doa-L{}-trial{}.phases", c.layers, c.trial));
            fs::write(&path, c.model.phases.to_text()).map_err(|source| Error::Io {
                context: format!("cannot write {}", path.display()),
                source,
            })?;
        }
    }
    Ok(cells)
}

pub fn doa_method_name(method: TrainMethod) -> &'static str {
    match method {
        TrainMethod::Gradient => "sim-gradient",
        TrainMethod::Spsa => "sim-spsa",
    }
}

/// Train and test accuracy at every L, averaged over trials.
pub fn run_doa_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let cells = run_doa_cells(spec)?;
    let name = doa_method_name(spec.doa.train.method);
    let mut rows = Vec::with_capacity(2 * spec.layers.len());
    for &layers in &spec.layers {
        let mine: Vec<&DoaCell> = cells.iter().filter(|c| c.layers == layers).collect();
        let seconds: f64 = mine.iter().map(|c| c.seconds).sum();
        let train: Vec<f64> = mine.iter().map(|c| c.train_accuracy).collect();
        let test: Vec<f64> = mine.iter().map(|c| c.test_accuracy).collect();
        rows.push(ResultRow::from_samples(
            layers,
            name,
            "train_accuracy",
            &train,
            seconds,
        )?);
        rows.push(ResultRow::from_samples(layers, name, "test_accuracy", &test, seconds)?);
    }
    Ok(rows)
}

/// Dispatches on the experiment kind.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    match spec.experiment {
        ExperimentKind::Sumrate => run_sumrate_sweep(spec),
        ExperimentKind::Doa => run_doa_sweep(spec),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}
