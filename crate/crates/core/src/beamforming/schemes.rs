// SPDX-License-Identifier: Apache-2.0

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::waterfill::{waterfill, waterfill_fixed_point, FixedPointOptions};
use super::wbf::{optimize_wbf, optimize_wbf_from, WbfOptions};
use super::{rate_report, sum_rate_value, PowerAllocation, RateReport, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::propagation::{sim_response, PhaseState, TransferStack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointOptions {
    pub wbf: WbfOptions,
    pub max_rounds: usize,
    /// Stop when an outer round improves the sum-rate by less than this.
    pub round_tolerance: f64,
    pub waterfill: FixedPointOptions,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            wbf: WbfOptions::default(),
            max_rounds: 20,
            round_tolerance: 1e-3,
            waterfill: FixedPointOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOutcome {
    pub report: RateReport,
    pub phases: PhaseState,
    pub power: PowerAllocation,
    /// Sum-rate at the end of every outer round.
    pub round_trace: Vec<f64>,
    /// Result of the first round (uniform powers), which is exactly the
    /// average-PA scheme under the same initialization.
    pub first_round: RateReport,
    pub first_round_phases: PhaseState,
}

fn effective(stack: &TransferStack, phases: &PhaseState, h: &CMatrix) -> Result<CMatrix> {
    h.matmul(&sim_response(stack, phases)?)
}

/// Water-fills on a fixed configuration; the new allocation is kept only if
/// it raises the sum-rate.
fn refine_power(
    b: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
    opts: FixedPointOptions,
) -> Result<(PowerAllocation, f64)> {
    let before = sum_rate_value(b, &pa.p, noise);
    if (0..b.rows()).all(|k| b[(k, k)].norm_sqr() == 0.0) {
        return Ok((pa.clone(), before));
    }
    let candidate = waterfill_fixed_point(b, pa, noise, opts)?;
    let after = sum_rate_value(b, &candidate.p, noise);
    Ok(if after > before {
        (candidate, after)
    } else {
        (pa.clone(), before)
    })
}

/// Alternates gradient-ascent WBF (powers fixed) with fixed-point
/// water-filling (phases fixed), starting from uniform powers.
pub fn joint_optimize<R: Rng + ?Sized>(
    stack: &TransferStack,
    h: &CMatrix,
    noise: f64,
    total_budget: f64,
    opts: &JointOptions,
    rng: &mut R,
) -> Result<JointOutcome> {
    let k = h.rows();
    let mut pa = PowerAllocation::uniform(k, total_budget);
    let first = optimize_wbf(stack, h, &pa, noise, &opts.wbf, rng)?;
    let mut iterations = first.report.iterations;
    let first_round = first.report.clone().tagged(Scheme::AveragePa, iterations);
    let first_round_phases = first.phases.clone();
    let mut phases = first.phases;
    let mut value = first.report.sum_rate;
    let mut round_trace = vec![value];

    for _ in 1..opts.max_rounds {
        let b = effective(stack, &phases, h)?;
        let (new_pa, _) = refine_power(&b, &pa, noise, opts.waterfill)?;
        pa = new_pa;
        let run = optimize_wbf_from(stack, h, &pa, noise, &opts.wbf, &phases)?;
        iterations += run.report.iterations;
        phases = run.phases;
        let next = run.report.sum_rate;
        round_trace.push(next);
        let gain = next - value;
        value = next;
        if gain < opts.round_tolerance {
            break;
        }
    }

    // Final power pass so the reported allocation is the water-filled one.
    let b = effective(stack, &phases, h)?;
    let (pa, final_value) = refine_power(&b, &pa, noise, opts.waterfill)?;
    if final_value > value {
        round_trace.push(final_value);
    }
    let report = rate_report(&b, &pa.p, noise).tagged(Scheme::Joint, iterations);
    Ok(JointOutcome {
        report,
        phases,
        power: pa,
        round_trace,
        first_round,
        first_round_phases,
    })
}

/// WBF with the budget split evenly and never re-allocated.
pub fn average_pa_scheme<R: Rng + ?Sized>(
    stack: &TransferStack,
    h: &CMatrix,
    noise: f64,
    total_budget: f64,
    opts: &WbfOptions,
    rng: &mut R,
) -> Result<RateReport> {
    let pa = PowerAllocation::uniform(h.rows(), total_budget);
    let out = optimize_wbf(stack, h, &pa, noise, opts, rng)?;
    let iterations = out.report.iterations;
    Ok(out.report.tagged(Scheme::AveragePa, iterations))
}

/// Picks the best of `candidates` under uniform powers, then water-fills on
/// the winner. Returns the winning index alongside the report.
pub fn best_of_codebook(
    stack: &TransferStack,
    h: &CMatrix,
    noise: f64,
    total_budget: f64,
    candidates: impl IntoIterator<Item = PhaseState>,
) -> Result<(usize, PhaseState, RateReport)> {
    let uniform = PowerAllocation::uniform(h.rows(), total_budget);
    let mut best: Option<(usize, PhaseState, f64)> = None;
    let mut evaluated = 0;
    for (i, cand) in candidates.into_iter().enumerate() {
        let v = sum_rate_value(&effective(stack, &cand, h)?, &uniform.p, noise);
        evaluated += 1;
        if best.as_ref().is_none_or(|(_, _, b)| v > *b) {
            best = Some((i, cand, v));
        }
    }
    let (index, phases, _) = best.ok_or_else(|| Error::InvalidArgument("codebook is empty".into()))?;
    let b = effective(stack, &phases, h)?;
    let (pa, _) = refine_power(&b, &uniform, noise, FixedPointOptions::default())?;
    let report = rate_report(&b, &pa.p, noise).tagged(Scheme::Codebook, evaluated);
    Ok((index, phases, report))
}

/// Random codebook of `10·L·N` full-SIM configurations.
pub fn codebook_scheme<R: Rng + ?Sized>(
    stack: &TransferStack,
    h: &CMatrix,
    noise: f64,
    total_budget: f64,
    rng: &mut R,
) -> Result<RateReport> {
    let (layers, atoms) = (stack.num_layers(), stack.atoms_per_layer());
    let size = 10 * layers * atoms;
    let candidates = (0..size).map(|_| PhaseState::random(layers, atoms, rng));
    best_of_codebook(stack, h, noise, total_budget, candidates).map(|(_, _, r)| r)
}

/// Column-normalized zero-forcing precoder `F ∝ Hᴴ(HHᴴ)⁻¹` (M×K).
///
/// Computed from a QR factorization of `Hᴴ` so that the nulling residual
/// scales with cond(H) rather than cond(H)².
pub fn zf_precoder(h: &CMatrix) -> Result<CMatrix> {
    let (k, m) = (h.rows(), h.cols());
    if m < k {
        return Err(Error::InvalidArgument(format!(
            "zero-forcing needs at least as many antennas ({m}) as users ({k})"
        )));
    }
    let ha: DMatrix<C64> = h.to_nalgebra().adjoint();
    let qr = ha.qr();
    let (q, r) = (qr.q(), qr.r());
    let diag_max = (0..k).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    if (0..k).any(|i| !(r[(i, i)].norm() > 1e-12 * diag_max)) {
        return Err(Error::Numerical("channel matrix is rank deficient".into()));
    }
    // H = Rᴴ Qᴴ, so F = Q R⁻ᴴ satisfies H F = I.
    let rh = r.adjoint();
    let x = rh
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut f = CMatrix::from_nalgebra(&(q * x));
    let norms: Vec<C64> = (0..k)
        .map(|c| C64::new(1.0 / f.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(), 0.0))
        .collect();
    f.scale_cols(&norms);
    Ok(f)
}

/// Digital zero-forcing without a SIM; powers water-filled over the
/// post-ZF gains.
pub fn zf_baseline(h_direct: &CMatrix, noise: f64, total_budget: f64) -> Result<RateReport> {
    let f = zf_precoder(h_direct)?;
    let b = h_direct.matmul(&f)?;
    let gains: Vec<f64> = (0..b.rows()).map(|k| b[(k, k)].norm_sqr()).collect();
    let pa = waterfill(&gains, &vec![0.0; gains.len()], noise, total_budget)?;
    Ok(rate_report(&b, &pa.p, noise).tagged(Scheme::ZeroForcing, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::geometry::{build_sim_geometry, SimConfig};
    use crate::propagation::build_transfer_stack;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk(layers: usize, atoms: usize, users: usize, seed: u64) -> (TransferStack, CMatrix) {
        let mut cfg = SimConfig::new(28e9, layers, atoms, users, users);
        cfg.num_antennas = users;
        let g = build_sim_geometry(&cfg).unwrap();
        let stack = build_transfer_stack(&g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = CMatrix::from_fn(users, atoms, |_, _| complex_gaussian(&mut rng) * 1e-6);
        (stack, h)
    }

    fn random_channel(k: usize, m: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(k, m, |_, _| complex_gaussian(&mut rng))
    }

    #[test]
    fn single_user_keeps_the_whole_budget() {
        let (stack, h) = desk(1, 4, 1, 3);
        let out = joint_optimize(
            &stack,
            &h,
            1e-10,
            100.0,
            &JointOptions::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(out.power.p.len(), 1);
        assert!((out.power.p[0] - 100.0).abs() < 1e-9);
        assert!(out.report.sum_rate >= out.first_round.sum_rate);
    }

    #[test]
    fn joint_dominates_average_pa_with_shared_init() {
        let (stack, h) = desk(2, 9, 2, 7);
        let opts = JointOptions::default();
        let joint = joint_optimize(&stack, &h, 1e-10, 100.0, &opts, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let avg = average_pa_scheme(&stack, &h, 1e-10, 100.0, &opts.wbf, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(avg.sum_rate, joint.first_round.sum_rate);
        assert!(joint.report.sum_rate >= avg.sum_rate);
        assert!(joint.round_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((joint.power.total() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn codebook_returns_the_argmax() {
        let (stack, h) = desk(1, 4, 2, 9);
        let noise = 1e-10;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cands: Vec<PhaseState> = (0..40).map(|_| PhaseState::random(1, 4, &mut rng)).collect();
        let uniform = PowerAllocation::uniform(2, 100.0);
        let values: Vec<f64> = cands
            .iter()
            .map(|c| sum_rate_value(&effective(&stack, c, &h).unwrap(), &uniform.p, noise))
            .collect();
        let (argmax, _) = values.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
        let (index, phases, report) = best_of_codebook(&stack, &h, noise, 100.0, cands.clone()).unwrap();
        assert_eq!(index, argmax);
        assert_eq!(phases, cands[argmax]);
        assert!(report.sum_rate >= values[0]);
        assert!(report.sum_rate >= values[argmax]);

        // all-zeros best → reported as is
        cands.truncate(1);
        cands[0] = PhaseState::zeros(1, 4);
        let (index, phases, _) = best_of_codebook(&stack, &h, noise, 100.0, cands).unwrap();
        assert_eq!(index, 0);
        assert_eq!(phases, PhaseState::zeros(1, 4));
    }

    #[test]
    fn codebook_replays_from_seed() {
        let (stack, h) = desk(1, 4, 2, 10);
        let a = codebook_scheme(&stack, &h, 1e-10, 100.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let replay: Vec<PhaseState> = (0..40).map(|_| PhaseState::random(1, 4, &mut rng)).collect();
        let (_, _, b) = best_of_codebook(&stack, &h, 1e-10, 100.0, replay).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iterations, 40);
    }

    #[test]
    fn zf_identity_channel() {
        let h = CMatrix::identity(4);
        let f = zf_precoder(&h).unwrap();
        assert!(f.max_abs_diff(&CMatrix::identity(4)) < 1e-14);
        let noise = 0.5;
        let r = zf_baseline(&h, noise, 8.0).unwrap();
        let expected = 4.0 * (1.0 + 8.0 / (4.0 * noise)).log2();
        assert!((r.sum_rate - expected).abs() < 1e-12);
    }

    #[test]
    fn zf_nulls_interference() {
        for (m, seed) in [(4, 1), (8, 2), (8, 3)] {
            let h = random_channel(4, m, seed);
            let hf = h.matmul(&zf_precoder(&h).unwrap()).unwrap();
            let diag = (0..4).map(|k| hf[(k, k)].norm()).fold(0.0, f64::max);
            for r in 0..4 {
                for c in 0..4 {
                    if r != c {
                        assert!(hf[(r, c)].norm() <= 1e-10 * diag);
                    }
                }
            }
        }
    }

    #[test]
    fn zf_rate_vanishes_with_noise() {
        let h = random_channel(4, 4, 5);
        let r = zf_baseline(&h, 1e30, 1.0).unwrap();
        assert!(r.sum_rate < 1e-20);
    }

    #[test]
    fn zf_rejects_rank_deficient_channels() {
        let mut h = random_channel(2, 4, 6);
        let first: Vec<C64> = h.row(0).to_vec();
        h.row_mut(1).copy_from_slice(&first);
        assert!(zf_precoder(&h).is_err());
        assert!(zf_precoder(&random_channel(4, 2, 1)).is_err());
    }
}
