// SPDX-License-Identifier: Apache-2.0

//! Wave-based beamforming: gradient ascent on the SIM phases with a fixed
//! power allocation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gradient::{sumrate_at, sumrate_value_and_gradient};
use super::{rate_report, PowerAllocation, RateReport, Scheme};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::propagation::{sim_response, PhaseState, TransferStack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbfOptions {
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop once one accepted step improves the sum-rate by less than this
    /// (bps/Hz).
    pub tolerance: f64,
    /// Step multiplier applied on each backtrack.
    pub shrink: f64,
    /// Armijo sufficient-increase constant.
    pub sufficient_increase: f64,
    pub max_backtracks: usize,
    /// Largest phase change (radians) of the first trial step.
    pub initial_step: f64,
}

impl Default for WbfOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            restarts: 4,
            tolerance: 1e-4,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_backtracks: 40,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbfOutcome {
    pub phases: PhaseState,
    pub report: RateReport,
    /// Sum-rate after every accepted step of the returned run, starting with
    /// the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn validate(stack: &TransferStack, h: &CMatrix, pa: &PowerAllocation, noise: f64) -> Result<()> {
    if h.cols() != stack.atoms_per_layer() || h.rows() != stack.num_antennas() {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{}; expected {}x{} (users x atoms, users = antennas)",
            h.rows(),
            h.cols(),
            stack.num_antennas(),
            stack.atoms_per_layer()
        )));
    }
    if pa.p.len() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} powers for {} users",
            pa.p.len(),
            h.rows()
        )));
    }
    if !(noise > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {noise}"
        )));
    }
    Ok(())
}

/// Multi-start gradient ascent from uniformly random phases; returns the best
/// restart.
pub fn optimize_wbf<R: Rng + ?Sized>(
    stack: &TransferStack,
    h: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
    opts: &WbfOptions,
    rng: &mut R,
) -> Result<WbfOutcome> {
    validate(stack, h, pa, noise)?;
    let starts: Vec<PhaseState> = (0..opts.restarts.max(1))
        .map(|_| PhaseState::random(stack.num_layers(), stack.atoms_per_layer(), rng))
        .collect();
    let mut best: Option<WbfOutcome> = None;
    for start in starts {
        let run = ascend(stack, h, pa, noise, opts, start)?;
        if best.as_ref().is_none_or(|b| run.report.sum_rate > b.report.sum_rate) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Single gradient-ascent run from a given starting point.
pub fn optimize_wbf_from(
    stack: &TransferStack,
    h: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
    opts: &WbfOptions,
    start: &PhaseState,
) -> Result<WbfOutcome> {
    validate(stack, h, pa, noise)?;
    ascend(stack, h, pa, noise, opts, start.clone())
}

fn ascend(
    stack: &TransferStack,
    h: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
    opts: &WbfOptions,
    mut phases: PhaseState,
) -> Result<WbfOutcome> {
    let (mut value, mut grad) = sumrate_value_and_gradient(stack, &phases, h, pa, noise)?;
    let mut trace = vec![value];
    let mut converged = false;
    let mut step: Option<f64> = None;

    for _ in 0..opts.max_iters {
        let max_abs = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        if !(max_abs > 0.0) || !norm_sq.is_finite() {
            converged = true;
            break;
        }
        // Try twice the last accepted step, capped so no phase moves by more
        // than the initial step on the first trial.
        let cap = opts.initial_step / max_abs;
        let mut t = step.map_or(cap, |s| (2.0 * s).min(16.0 * cap));
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let candidate = phases.stepped(&grad, t);
            let v = sumrate_at(stack, &candidate, h, &pa.p, noise)?;
            if v >= value + opts.sufficient_increase * t * norm_sq {
                accepted = Some((candidate, v));
                break;
            }
            t *= opts.shrink;
        }
        let Some((candidate, v)) = accepted else {
            converged = true;
            break;
        };
        let gain = v - value;
        phases = candidate;
        step = Some(t);
        (value, grad) = sumrate_value_and_gradient(stack, &phases, h, pa, noise)?;
        trace.push(value);
        if gain < opts.tolerance {
            converged = true;
            break;
        }
    }

    if !value.is_finite() {
        return Err(Error::Numerical("sum-rate became non-finite".into()));
    }
    let b = h.matmul(&sim_response(stack, &phases)?)?;
    let iterations = trace.len() - 1;
    let report = rate_report(&b, &pa.p, noise).tagged(Scheme::AveragePa, iterations);
    Ok(WbfOutcome {
        phases,
        report,
        trace,
        converged,
    })
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

    #[test]
    fn single_user_objective_is_flat() {
        let (stack, h) = desk(1, 1, 1, 2);
        let pa = PowerAllocation::uniform(1, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = optimize_wbf(&stack, &h, &pa, 1e-10, &WbfOptions::default(), &mut rng).unwrap();
        assert!((out.report.sum_rate - out.trace[0]).abs() <= 1e-9);
    }

    #[test]
    fn traces_never_decrease() {
        let (stack, h) = desk(2, 9, 2, 5);
        let pa = PowerAllocation::uniform(2, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = optimize_wbf(&stack, &h, &pa, 1e-10, &WbfOptions::default(), &mut rng).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(out.report.sum_rate >= out.trace[0]);
    }

    #[test]
    fn seeded_runs_repeat() {
        let (stack, h) = desk(2, 4, 2, 5);
        let pa = PowerAllocation::uniform(2, 100.0);
        let opts = WbfOptions::default();
        let a = optimize_wbf(&stack, &h, &pa, 1e-10, &opts, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = optimize_wbf(&stack, &h, &pa, 1e-10, &opts, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beats_random_search() {
        let (stack, h) = desk(1, 4, 2, 21);
        let pa = PowerAllocation::uniform(2, 100.0);
        let noise = 1e-10;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = optimize_wbf(&stack, &h, &pa, noise, &WbfOptions::default(), &mut rng).unwrap();
        let mut search = ChaCha8Rng::seed_from_u64(99);
        let best_random = (0..10_000)
            .map(|_| {
                let p = PhaseState::random(1, 4, &mut search);
                sumrate_at(&stack, &p, &h, &pa.p, noise).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            out.report.sum_rate >= best_random - 1e-3,
            "{} vs {}",
            out.report.sum_rate,
            best_random
        );
    }
}
