// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::LN_2;

use super::{check_square, sum_rate_value, PowerAllocation};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::propagation::{CascadeTrace, PhaseState, TransferStack};

/// `∂R/∂conj(B)` for `R = Σ_k log2(1 + SINR_k)`.
///
/// With `T_k = Σ_i p_i|B_ki|² + σ²` and `I_k = T_k − p_k|B_kk|²`,
/// `R = Σ_k (ln T_k − ln I_k)/ln 2`, which gives
/// `B̄[k,i] = p_i B_ki (1/T_k − [i≠k]/I_k) / ln 2`.
fn rate_cotangent(b: &CMatrix, p: &[f64], noise: f64) -> CMatrix {
    let k = b.rows();
    let mut out = CMatrix::zeros(k, b.cols());
    for u in 0..k {
        let row = b.row(u);
        let total: f64 = row.iter().zip(p).map(|(z, pi)| pi * z.norm_sqr()).sum::<f64>() + noise;
        let interference = total - p[u] * row[u].norm_sqr();
        let orow = out.row_mut(u);
        for (i, (o, (z, pi))) in orow.iter_mut().zip(row.iter().zip(p)).enumerate() {
            let mut w = 1.0 / total;
            if i != u {
                w -= 1.0 / interference;
            }
            *o = z * (pi * w / LN_2);
        }
    }
    out
}

fn check_channel(h: &CMatrix, stack: &TransferStack) -> Result<()> {
    if h.cols() != stack.atoms_per_layer() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} columns but layers have {} atoms",
            h.cols(),
            stack.atoms_per_layer()
        )));
    }
    Ok(())
}

/// Sum-rate and its gradient with respect to every phase (layer-major).
pub fn sumrate_value_and_gradient(
    stack: &TransferStack,
    phases: &PhaseState,
    h: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
) -> Result<(f64, Vec<f64>)> {
    check_channel(h, stack)?;
    let trace = CascadeTrace::forward(stack, phases)?;
    let b = h.matmul(trace.response())?;
    check_square(&b, pa)?;
    let value = sum_rate_value(&b, &pa.p, noise);
    let b_bar = rate_cotangent(&b, &pa.p, noise);
    let g_bar = h.adjoint_matmul(&b_bar)?;
    Ok((value, trace.backward(stack, &g_bar)))
}

/// `∂ sum_rate / ∂θ_{l,n}` by reverse-mode differentiation of the cascade.
pub fn sumrate_gradient(
    stack: &TransferStack,
    phases: &PhaseState,
    h: &CMatrix,
    pa: &PowerAllocation,
    noise: f64,
) -> Result<Vec<f64>> {
    sumrate_value_and_gradient(stack, phases, h, pa, noise).map(|(_, g)| g)
}

/// Sum-rate at a phase configuration, without keeping the trace.
pub(crate) fn sumrate_at(
    stack: &TransferStack,
    phases: &PhaseState,
    h: &CMatrix,
    p: &[f64],
    noise: f64,
) -> Result<f64> {
    let g = crate::propagation::sim_response(stack, phases)?;
    let b = h.matmul(&g)?;
    Ok(sum_rate_value(&b, p, noise))
}
