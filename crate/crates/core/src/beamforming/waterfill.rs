// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{signal_and_interference, PowerAllocation};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// One water-filling step: `p_k = max(0, μ − (σ² + I_k)/g_k)` with the water
/// level `μ` set so that the budget is spent exactly.
///
/// The level is found by sorting the floors `(σ² + I_k)/g_k` and activating
/// channels from the lowest floor up, which is exact; users with zero gain
/// are never active.
pub fn waterfill(diag_gains: &[f64], interference: &[f64], noise: f64, total_budget: f64) -> Result<PowerAllocation> {
    if diag_gains.len() != interference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains but {} interference terms",
            diag_gains.len(),
            interference.len()
        )));
    }
    if diag_gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument(
            "channel gains must be finite and non-negative".into(),
        ));
    }
    if diag_gains.iter().all(|&g| g == 0.0) {
        return Err(Error::InvalidArgument("all channel gains are zero".into()));
    }
    if !(total_budget >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "budget must be non-negative, got {total_budget}"
        )));
    }

    let floors: Vec<f64> = diag_gains
        .iter()
        .zip(interference)
        .map(|(&g, &i)| if g > 0.0 { (noise + i) / g } else { f64::INFINITY })
        .collect();
    let mut order: Vec<usize> = (0..floors.len()).filter(|&k| floors[k].is_finite()).collect();
    order.sort_by(|&a, &b| floors[a].total_cmp(&floors[b]).then(a.cmp(&b)));

    // Largest active set whose level sits above every member's floor.
    let mut level = floors[order[0]] + total_budget;
    let mut partial = 0.0;
    for (count, &k) in order.iter().enumerate() {
        partial += floors[k];
        let candidate = (total_budget + partial) / (count + 1) as f64;
        if candidate <= floors[k] {
            break;
        }
        level = candidate;
    }

    let p = floors.iter().map(|&f| (level - f).max(0.0)).collect();
    Ok(PowerAllocation { p, total_budget })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    pub max_iters: usize,
    /// Relative to the budget.
    pub tolerance: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tolerance: 1e-6,
        }
    }
}

/// Iterates water-filling with interference recomputed from the previous
/// allocation until the powers stop moving.
pub fn waterfill_fixed_point(
    b: &CMatrix,
    start: &PowerAllocation,
    noise: f64,
    opts: FixedPointOptions,
) -> Result<PowerAllocation> {
    let gains: Vec<f64> = (0..b.rows()).map(|k| b[(k, k)].norm_sqr()).collect();
    let mut current = start.clone();
    for _ in 0..opts.max_iters {
        let (_, with_noise) = signal_and_interference(b, &current.p, noise);
        let interference: Vec<f64> = with_noise.iter().map(|i| i - noise).collect();
        let next = waterfill(&gains, &interference, noise, start.total_budget)?;
        let moved = next
            .p
            .iter()
            .zip(&current.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        current = next;
        if moved <= opts.tolerance * start.total_budget {
            break;
        }
    }
    Ok(current)
}
