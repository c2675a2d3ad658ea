// SPDX-License-Identifier: Apache-2.0

//! Wave-domain direction-of-arrival classification.
//!
//! A target somewhere in a square coverage area radiates towards the SIM.
//! After propagating through the layers, the energy collected by each of the
//! four receive antennas is read out and the strongest antenna names the
//! quadrant. Training shapes the phases so that the energy of each sample
//! concentrates on the antenna mapped to its quadrant.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, los_uplink};
use crate::error::{Error, Result};
use crate::geometry::{Quadrant, Scenario, SimGeometry, Vec3};
use crate::linalg::{CMatrix, C64, ZERO};
use crate::propagation::{sim_response, CascadeTrace, PhaseState, TransferStack};
use crate::units::dbm_to_mw;

/// Radius of the keep-out disk around the BS ground point, metres.
pub const EXCLUSION_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaSample {
    pub target_position: Vec3,
    pub label: Quadrant,
    /// Field at each outer-layer atom.
    pub uplink: Vec<C64>,
}

/// Draws `count` targets uniformly over the coverage square (outside the
/// keep-out disk around the BS) and computes their uplinks.
pub fn generate_samples<R: Rng + ?Sized>(
    rng: &mut R,
    scenario: &Scenario,
    geometry: &SimGeometry,
    wavelength: f64,
    count: usize,
) -> Result<Vec<DoaSample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let area = scenario
        .coverage()
        .ok_or_else(|| Error::InvalidArgument("DOA sampling needs a coverage area".into()))?;
    let bs = geometry.aperture_center();
    let half = area.side / 2.0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = area.center[0] + rng.gen_range(-half..half);
        let y = area.center[1] + rng.gen_range(-half..half);
        if (x - bs.x()).hypot(y - bs.y()) < EXCLUSION_RADIUS {
            continue;
        }
        let target = Vec3::new(x, y, 0.0);
        out.push(DoaSample {
            target_position: target,
            label: area.quadrant_of(target),
            uplink: los_uplink(target, geometry.outer_layer(), wavelength)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    /// Per antenna; `-inf` disables noise.
    pub noise_power_dbm: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            noise_power_dbm: -140.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaModel {
    pub phases: PhaseState,
    pub stack: TransferStack,
    /// `antenna_map[q]` is the antenna that should light up for quadrant `q`.
    pub antenna_map: [usize; 4],
    pub link: LinkBudget,
}

impl DoaModel {
    pub fn new(stack: TransferStack, phases: PhaseState, link: LinkBudget) -> Result<Self> {
        let model = Self {
            phases,
            stack,
            antenna_map: [0, 1, 2, 3],
            link,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack.num_antennas() != 4 {
            return Err(Error::DimensionMismatch(format!(
                "DOA readout needs 4 antennas, the stack has {}",
                self.stack.num_antennas()
            )));
        }
        let mut seen = [false; 4];
        for &a in &self.antenna_map {
            if a >= 4 || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidArgument(format!(
                    "antenna map {:?} is not a bijection",
                    self.antenna_map
                )));
            }
        }
        if self.phases.num_layers() != self.stack.num_layers()
            || self.phases.atoms_per_layer() != self.stack.atoms_per_layer()
        {
            return Err(Error::DimensionMismatch("phases do not fit the stack".into()));
        }
        Ok(())
    }

    pub fn antenna_for(&self, q: Quadrant) -> usize {
        self.antenna_map[q.index()]
    }

    /// Quadrant whose antenna has the strictly largest energy, if unique.
    pub fn predict(&self, energies: &[f64; 4]) -> Option<Quadrant> {
        let best = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut winners = energies.iter().enumerate().filter(|(_, &e)| e == best);
        let (antenna, _) = winners.next()?;
        if winners.next().is_some() {
            return None;
        }
        Quadrant::ALL.into_iter().find(|&q| self.antenna_for(q) == antenna)
    }
}

/// `y = Gᵀ s`: the receive direction runs the transmit cascade backwards
/// with transposed inter-layer matrices, which is the transpose of `G`.
fn receive(g: &CMatrix, field: &[C64]) -> [C64; 4] {
    let mut y = [ZERO; 4];
    for (row, s) in g.as_slice().chunks_exact(4).zip(field) {
        for (acc, w) in y.iter_mut().zip(row) {
            *acc += w * s;
        }
    }
    y
}

fn readout_with_response<R: Rng + ?Sized>(g: &CMatrix, sample: &DoaSample, link: &LinkBudget, rng: &mut R) -> [f64; 4] {
    let amp = dbm_to_mw(link.tx_power_dbm).sqrt();
    let sigma = dbm_to_mw(link.noise_power_dbm).sqrt();
    let mut y = receive(g, &sample.uplink);
    for v in &mut y {
        *v *= amp;
        if sigma > 0.0 {
            *v += complex_gaussian(rng) * sigma;
        }
    }
    y.map(|v| v.norm_sqr())
}

/// Energy at each antenna for one sample, with receiver noise.
pub fn readout<R: Rng + ?Sized>(model: &DoaModel, sample: &DoaSample, rng: &mut R) -> Result<[f64; 4]> {
    model.validate()?;
    if sample.uplink.len() != model.stack.atoms_per_layer() {
        return Err(Error::DimensionMismatch(format!(
            "uplink has {} entries for {} atoms",
            sample.uplink.len(),
            model.stack.atoms_per_layer()
        )));
    }
    let g = sim_response(&model.stack, &model.phases)?;
    Ok(readout_with_response(&g, sample, &model.link, rng))
}

/// `‖e/Σe − onehot(target)‖² / 4`.
pub fn doa_loss(energies: &[f64; 4], target_antenna: usize) -> Result<f64> {
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("energies sum to zero".into()));
    }
    Ok(energies
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let t = if i == target_antenna { 1.0 } else { 0.0 };
            (e / total - t).powi(2)
        })
        .sum::<f64>()
        / 4.0)
}

/// Loss and `∂loss/∂e`.
fn loss_and_energy_grad(energies: &[f64; 4], target: usize) -> (f64, [f64; 4]) {
    let total: f64 = energies.iter().sum();
    let normed = energies.map(|e| e / total);
    let resid: [f64; 4] = std::array::from_fn(|i| normed[i] - if i == target { 1.0 } else { 0.0 });
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / 4.0;
    let coupling: f64 = resid.iter().zip(&normed).map(|(r, n)| r * n).sum();
    let grad = std::array::from_fn(|m| (resid[m] - coupling) / (2.0 * total));
    (loss, grad)
}

fn noiseless_energies(g: &CMatrix, sample: &DoaSample) -> [f64; 4] {
    receive(g, &sample.uplink).map(|v| v.norm_sqr())
}

/// Mean noiseless loss over `samples` at the given phases.
pub fn mean_loss(model: &DoaModel, phases: &PhaseState, samples: &[&DoaSample]) -> Result<f64> {
    let g = sim_response(&model.stack, phases)?;
    mean_loss_with_response(model, &g, samples)
}

fn mean_loss_with_response(model: &DoaModel, g: &CMatrix, samples: &[&DoaSample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        acc += doa_loss(&noiseless_energies(g, s), model.antenna_for(s.label))?;
    }
    Ok(acc / samples.len() as f64)
}

/// Mean noiseless loss and its gradient with respect to the phases.
pub fn loss_and_gradient(model: &DoaModel, phases: &PhaseState, samples: &[&DoaSample]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let trace = CascadeTrace::forward(&model.stack, phases)?;
    let g = trace.response();
    let mut g_bar = CMatrix::zeros(g.rows(), g.cols());
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    for s in samples {
        let y = receive(g, &s.uplink);
        let energies = y.map(|v| v.norm_sqr());
        if !(energies.iter().sum::<f64>() > 0.0) {
            return Err(Error::Numerical("sample produced no energy at the antennas".into()));
        }
        let (loss, de) = loss_and_energy_grad(&energies, model.antenna_for(s.label));
        total += loss;
        // ∂loss/∂conj(y_m) = de_m y_m ; ∂/∂conj(G[n,m]) adds that times conj(s_n)
        let y_bar: [C64; 4] = std::array::from_fn(|m| y[m] * (de[m] * scale));
        for (row, sn) in g_bar.as_mut_slice().chunks_exact_mut(4).zip(&s.uplink) {
            let sc = sn.conj();
            for (o, yb) in row.iter_mut().zip(&y_bar) {
                *o += yb * sc;
            }
        }
    }
    Ok((total * scale, trace.backward(&model.stack, &g_bar)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    /// Mini-batch gradient descent on the analytic gradient.
    Gradient,
    /// Simultaneous-perturbation stochastic approximation (gradient-free).
    Spsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub method: TrainMethod,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stop when an epoch lowers the training loss by less than this.
    pub tolerance: f64,
    /// Largest phase change (radians) of a first trial step.
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Consecutive rejected epochs before giving up.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            method: TrainMethod::Gradient,
            batch_size: 32,
            max_epochs: 200,
            tolerance: 1e-8,
            initial_step: 0.5,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 30,
            patience: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Noiseless mean training loss after each epoch (entry 0 is the
    /// starting point).
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
}

/// Trains `model.phases` in place on `samples` and reports the training
/// accuracy. The epoch-level loss trace never increases: an epoch whose
/// mini-batch steps end up raising the full training loss is rolled back
/// and the step scale halved.
pub fn train<R: Rng + ?Sized>(
    model: &mut DoaModel,
    samples: &[DoaSample],
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<TrainReport> {
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let seed: u64 = rng.gen();
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<&DoaSample> = samples.iter().collect();

    let mut phases = model.phases.clone();
    let mut loss = mean_loss(model, &phases, &all)?;
    let mut loss_trace = vec![loss];
    let mut step_scale = 1.0;
    let mut last_step: Option<f64> = None;
    let mut rejected = 0;
    let mut epochs = 0;
    let mut spsa_k = 0usize;

    for _ in 0..opts.max_epochs {
        epochs += 1;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut order_rng);
        let mut candidate = phases.clone();
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&DoaSample> = chunk.iter().map(|&i| &samples[i]).collect();
            match opts.method {
                TrainMethod::Gradient => {
                    gradient_step(model, &mut candidate, &batch, opts, step_scale, &mut last_step)?
                }
                TrainMethod::Spsa => {
                    spsa_step(model, &mut candidate, &batch, opts, step_scale, spsa_k, &mut order_rng)?;
                    spsa_k += 1;
                }
            }
        }
        let next = mean_loss(model, &candidate, &all)?;
        if next <= loss {
            let gain = loss - next;
            phases = candidate;
            loss = next;
            loss_trace.push(loss);
            rejected = 0;
            if gain < opts.tolerance {
                break;
            }
        } else {
            loss_trace.push(loss);
            step_scale *= 0.5;
            last_step = None;
            rejected += 1;
            if rejected >= opts.patience {
                break;
            }
        }
    }

    model.phases = phases;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_e7a1);
    let train_accuracy = evaluate(model, samples, &mut eval_rng)?;
    Ok(TrainReport {
        loss_trace,
        train_accuracy,
        test_accuracy: None,
        epochs,
        seed,
    })
}

fn gradient_step(
    model: &DoaModel,
    phases: &mut PhaseState,
    batch: &[&DoaSample],
    opts: &TrainOptions,
    step_scale: f64,
    last_step: &mut Option<f64>,
) -> Result<()> {
    let (value, grad) = loss_and_gradient(model, phases, batch)?;
    let max_abs = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
    if !(max_abs > 0.0) {
        return Ok(());
    }
    let cap = step_scale * opts.initial_step / max_abs;
    let mut t = last_step.map_or(cap, |s| (2.0 * s).min(16.0 * cap));
    for _ in 0..opts.max_backtracks {
        let trial = phases.stepped(&grad, -t);
        let v = mean_loss(model, &trial, batch)?;
        if v <= value - opts.sufficient_decrease * t * norm_sq {
            *phases = trial;
            *last_step = Some(t);
            return Ok(());
        }
        t *= opts.shrink;
    }
    Ok(())
}

fn spsa_step<R: Rng + ?Sized>(
    model: &DoaModel,
    phases: &mut PhaseState,
    batch: &[&DoaSample],
    opts: &TrainOptions,
    step_scale: f64,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    // Standard gain sequences a_k = a/(k+1+A)^0.602, c_k = c/(k+1)^0.101.
    let a = step_scale * opts.initial_step;
    let ak = a / (k as f64 + 11.0).powf(0.602);
    let ck = 0.1 / (k as f64 + 1.0).powf(0.101);
    let delta: Vec<f64> = (0..phases.as_slice().len())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let up = mean_loss(model, &phases.stepped(&delta, ck), batch)?;
    let down = mean_loss(model, &phases.stepped(&delta, -ck), batch)?;
    let slope = (up - down) / (2.0 * ck);
    // Rademacher Δ is its own inverse, so the estimate is slope·Δ.
    let norm = slope.abs().max(1e-12);
    let trial = phases.stepped(&delta, -ak * slope / norm);
    if mean_loss(model, &trial, batch)? <= mean_loss(model, phases, batch)? {
        *phases = trial;
    }
    Ok(())
}

/// Fraction of samples whose strongest antenna maps to the true quadrant;
/// ties count as misses. Sample `i` draws its receiver noise from stream `i`
/// of a generator seeded from `rng`, so the result does not depend on
/// evaluation order.
pub fn evaluate<R: Rng + ?Sized>(model: &DoaModel, samples: &[DoaSample], rng: &mut R) -> Result<f64> {
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let g = sim_response(&model.stack, &model.phases)?;
    let base: u64 = rng.gen();
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let mut noise = ChaCha8Rng::seed_from_u64(base);
        noise.set_stream(i as u64);
        let e = readout_with_response(&g, s, &model.link, &mut noise);
        if model.predict(&e) == Some(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Accuracy when every sample sees its own independent uniformly random
/// phase configuration (the untrained chance level).
pub fn evaluate_random_phases<R: Rng + ?Sized>(
    stack: &TransferStack,
    link: &LinkBudget,
    samples: &[DoaSample],
    rng: &mut R,
) -> Result<f64> {
    let mut model = DoaModel::new(
        stack.clone(),
        PhaseState::zeros(stack.num_layers(), stack.atoms_per_layer()),
        *link,
    )?;
    let mut correct = 0usize;
    for s in samples {
        model.phases = PhaseState::random(stack.num_layers(), stack.atoms_per_layer(), rng);
        let g = sim_response(&model.stack, &model.phases)?;
        let e = readout_with_response(&g, s, link, rng);
        if model.predict(&e) == Some(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
