// SPDX-License-Identifier: Apache-2.0

//! Multi-user downlink through the SIM: rate evaluation and the precoding
//! schemes compared in the sum-rate experiment.
//!
//! Stream `m` is fed to antenna `m` and intended for user `m` (K = M), so the
//! end-to-end matrix `B = H G` carries the desired gains on its diagonal and
//! inter-user leakage off it.

mod gradient;
mod schemes;
mod waterfill;
mod wbf;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

pub use gradient::{sumrate_gradient, sumrate_value_and_gradient};
pub use schemes::{
    average_pa_scheme, best_of_codebook, codebook_scheme, joint_optimize, zf_baseline, zf_precoder, JointOptions,
    JointOutcome,
};
pub use waterfill::{waterfill, waterfill_fixed_point, FixedPointOptions};
pub use wbf::{optimize_wbf, optimize_wbf_from, WbfOptions, WbfOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Plain evaluation of a given configuration.
    Fixed,
    Joint,
    AveragePa,
    Codebook,
    ZeroForcing,
}

/// Per-stream transmit powers in mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
    pub total_budget: f64,
}

impl PowerAllocation {
    pub fn uniform(k: usize, total_budget: f64) -> Self {
        Self {
            p: vec![total_budget / k as f64; k],
            total_budget,
        }
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scheme: Scheme,
    pub sinr: Vec<f64>,
    /// bps/Hz.
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    pub iterations: usize,
}

impl RateReport {
    pub(crate) fn tagged(mut self, scheme: Scheme, iterations: usize) -> Self {
        self.scheme = scheme;
        self.iterations = iterations;
        self
    }
}

/// `B = H G`.
pub fn effective_matrix(h: &CMatrix, g: &CMatrix) -> Result<CMatrix> {
    h.matmul(g)
}

fn check_square(b: &CMatrix, pa: &PowerAllocation) -> Result<()> {
    if b.rows() != b.cols() || pa.p.len() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "effective matrix is {}x{} with {} powers; need K = M = powers",
            b.rows(),
            b.cols(),
            pa.p.len()
        )));
    }
    Ok(())
}

/// Desired power `p_k|B_kk|²` and interference-plus-noise for each user.
pub(crate) fn signal_and_interference(b: &CMatrix, p: &[f64], noise: f64) -> (Vec<f64>, Vec<f64>) {
    let k = b.rows();
    let mut signal = Vec::with_capacity(k);
    let mut interference = Vec::with_capacity(k);
    for u in 0..k {
        let row = b.row(u);
        let mut leak = 0.0;
        for (i, (z, pi)) in row.iter().zip(p).enumerate() {
            if i != u {
                leak += pi * z.norm_sqr();
            }
        }
        signal.push(p[u] * row[u].norm_sqr());
        interference.push(leak + noise);
    }
    (signal, interference)
}

/// SINR per user and the resulting rates, treating interference as noise.
pub fn sum_rate(b: &CMatrix, pa: &PowerAllocation, noise: f64) -> Result<RateReport> {
    check_square(b, pa)?;
    if !(noise > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {noise}"
        )));
    }
    Ok(rate_report(b, &pa.p, noise))
}

pub(crate) fn rate_report(b: &CMatrix, p: &[f64], noise: f64) -> RateReport {
    let (signal, interference) = signal_and_interference(b, p, noise);
    let sinr: Vec<f64> = signal.iter().zip(&interference).map(|(s, i)| s / i).collect();
    let per_user_rate: Vec<f64> = sinr.iter().map(|s| s.ln_1p() / LN_2).collect();
    let sum_rate = per_user_rate.iter().sum();
    RateReport {
        scheme: Scheme::Fixed,
        sinr,
        per_user_rate,
        sum_rate,
        iterations: 0,
    }
}

pub(crate) fn sum_rate_value(b: &CMatrix, p: &[f64], noise: f64) -> f64 {
    let (signal, interference) = signal_and_interference(b, p, noise);
    signal
        .iter()
        .zip(&interference)
        .map(|(s, i)| (s / i).ln_1p())
        .sum::<f64>()
        / LN_2
}
