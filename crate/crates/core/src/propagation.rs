// SPDX-License-Identifier: Apache-2.0

//! Diffraction between layers and the programmable end-to-end response.
//!
//! Every meta-atom re-radiates as a secondary point source; the coupling from
//! a source atom to a destination atom on the next layer is the
//! Rayleigh-Sommerfeld kernel
//!
//! ```text
//! w = (A cos χ / r) · (1/(2πr) − j/λ) · exp(j2πr/λ)
//! ```
//!
//! The cascade from antennas to the outermost layer is
//! `G = Φᴸ Wᴸ ⋯ Φ² W² Φ¹ W¹` with `Φˡ = diag(e^{jθ_l})`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SimConfig, SimGeometry, Vec3};
use crate::linalg::{adjoint_matmul_into, matmul_into, unit_phasors, CMatrix, C64};

/// Coupling coefficient from `src` to `dst`.
pub fn rs_coefficient(src: Vec3, dst: Vec3, normal: Vec3, atom_area: f64, wavelength: f64) -> Result<C64> {
    let delta = dst - src;
    let r = delta.norm();
    if r == 0.0 {
        return Err(Error::Geometry("source and destination coincide".into()));
    }
    let cos_chi = delta.dot(normal) / r;
    if cos_chi <= 0.0 {
        return Err(Error::Geometry(format!(
            "destination lies behind the source (cos χ = {cos_chi})"
        )));
    }
    let amplitude = atom_area * cos_chi / r;
    let radial = C64::new(1.0 / (TAU * r), -1.0 / wavelength);
    Ok(amplitude * radial * C64::from_polar(1.0, TAU * r / wavelength))
}

/// Fixed inter-layer matrices of one SIM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStack {
    /// `layers[0]` is `W¹` (N×M, antennas to layer 1); `layers[l]` for
    /// `l ≥ 1` is N×N, layer `l` to layer `l + 1` (zero-based).
    layers: Vec<CMatrix>,
    wavelength: f64,
}

impl TransferStack {
    pub fn from_layers(layers: Vec<CMatrix>, wavelength: f64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("a stack needs at least one layer".into()))?;
        let n = first.rows();
        for (l, w) in layers.iter().enumerate().skip(1) {
            if w.rows() != n || w.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} matrix is {}x{}, expected {n}x{n}",
                    l + 1,
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(Self { layers, wavelength })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn atoms_per_layer(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn num_antennas(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// One-based, matching `Wˡ`.
    pub fn w(&self, l: usize) -> &CMatrix {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> &[CMatrix] {
        &self.layers
    }
}

pub fn build_transfer_stack(geom: &SimGeometry, config: &SimConfig) -> Result<TransferStack> {
    let lambda = config.wavelength();
    let area = config.atom_area;
    let normal = geom.layer_normal;
    let mut layers = Vec::with_capacity(geom.num_layers());

    let first = &geom.layer_positions[0];
    let ants = &geom.antenna_positions;
    let mut w1 = CMatrix::zeros(first.len(), ants.len());
    for (n, &dst) in first.iter().enumerate() {
        for (m, &src) in ants.iter().enumerate() {
            w1[(n, m)] = rs_coefficient(src, dst, normal, area, lambda)?;
        }
    }
    layers.push(w1);

    for pair in geom.layer_positions.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let mut w = CMatrix::zeros(next.len(), prev.len());
        for (n, &dst) in next.iter().enumerate() {
            for (m, &src) in prev.iter().enumerate() {
                w[(n, m)] = rs_coefficient(src, dst, normal, area, lambda)?;
            }
        }
        layers.push(w);
    }
    TransferStack::from_layers(layers, lambda)
}

/// Programmable phase shifts, one per meta-atom, stored layer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    layers: usize,
    atoms: usize,
    theta: Vec<f64>,
}

impl PhaseState {
    pub fn zeros(layers: usize, atoms: usize) -> Self {
        Self {
            layers,
            atoms,
            theta: vec![0.0; layers * atoms],
        }
    }

    /// Entries are wrapped into `[0, 2π)`.
    pub fn from_vec(layers: usize, atoms: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layers * atoms {
            return Err(Error::DimensionMismatch(format!(
                "{} phases cannot fill {layers} layers of {atoms} atoms",
                theta.len()
            )));
        }
        if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite phase {bad}")));
        }
        Ok(Self {
            layers,
            atoms,
            theta: theta.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn random<R: Rng + ?Sized>(layers: usize, atoms: usize, rng: &mut R) -> Self {
        let theta = (0..layers * atoms).map(|_| rng.gen_range(0.0..TAU)).collect();
        Self { layers, atoms, theta }
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn atoms_per_layer(&self) -> usize {
        self.atoms
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// Zero-based layer index.
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.theta[l * self.atoms..(l + 1) * self.atoms]
    }

    /// `θ + step · direction`, wrapped.
    pub fn stepped(&self, direction: &[f64], step: f64) -> Self {
        debug_assert_eq!(direction.len(), self.theta.len());
        Self {
            layers: self.layers,
            atoms: self.atoms,
            theta: self
                .theta
                .iter()
                .zip(direction)
                .map(|(t, d)| wrap_phase(t + step * d))
                .collect(),
        }
    }

    /// Adds `offset` to every atom of zero-based layer `l`.
    pub fn with_layer_offset(&self, l: usize, offset: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.theta[l * self.atoms..(l + 1) * self.atoms] {
            *t = wrap_phase(*t + offset);
        }
        out
    }

    /// Text form: a header followed by one phase per line in row-major
    /// (layer, atom) order, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(32 + self.theta.len() * 25);
        s.push_str("# stacked-sim phase state v1\n");
        writeln!(s, "layers {}", self.layers).unwrap();
        writeln!(s, "atoms {}", self.atoms).unwrap();
        for t in &self.theta {
            writeln!(s, "{t:.16e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("phase file: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<usize> {
            let (no, line) = lines.next().ok_or_else(|| bad(format!("missing `{key}` header")))?;
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("line {no}: expected `{key} <count>`")))
        };
        let layers = header("layers")?;
        let atoms = header("atoms")?;
        let theta = lines
            .map(|(no, l)| l.parse::<f64>().map_err(|e| bad(format!("line {no}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(layers, atoms, theta)
    }
}

pub fn wrap_phase(t: f64) -> f64 {
    let w = t.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn check_dims(stack: &TransferStack, phases: &PhaseState) -> Result<()> {
    if stack.num_layers() != phases.num_layers() || stack.atoms_per_layer() != phases.atoms_per_layer() {
        return Err(Error::DimensionMismatch(format!(
            "stack is {}x{} (layers x atoms) but phases are {}x{}",
            stack.num_layers(),
            stack.atoms_per_layer(),
            phases.num_layers(),
            phases.atoms_per_layer()
        )));
    }
    Ok(())
}

/// End-to-end response `G` (N×M): rows index outer-layer atoms, columns
/// index antennas.
pub fn sim_response(stack: &TransferStack, phases: &PhaseState) -> Result<CMatrix> {
    Ok(CascadeTrace::forward(stack, phases)?.into_response())
}

/// Same product as [`sim_response`] but folded from the free-space side:
/// `((Φᴸ Wᴸ)(Φᴸ⁻¹ Wᴸ⁻¹)) ⋯ (Φ¹ W¹)`. Costs O(L N³); used to cross-check
/// the cascade.
pub fn sim_response_operator_product(stack: &TransferStack, phases: &PhaseState) -> Result<CMatrix> {
    check_dims(stack, phases)?;
    let layer_op = |l: usize| {
        let mut w = stack.w(l).clone();
        w.scale_rows(&unit_phasors(phases.layer(l - 1)));
        w
    };
    let mut acc = layer_op(stack.num_layers());
    for l in (1..stack.num_layers()).rev() {
        acc = acc.matmul(&layer_op(l))?;
    }
    Ok(acc)
}

/// Intermediate fields of one forward pass, kept for reverse-mode
/// differentiation with respect to the phases.
#[derive(Debug, Clone)]
pub struct CascadeTrace {
    phasors: Vec<Vec<C64>>,
    /// Field after the phase shift of each layer (N×M each); the last entry
    /// is `G`.
    fields: Vec<CMatrix>,
}

impl CascadeTrace {
    pub fn forward(stack: &TransferStack, phases: &PhaseState) -> Result<Self> {
        check_dims(stack, phases)?;
        let layers = stack.num_layers();
        let mut phasors = Vec::with_capacity(layers);
        let mut fields: Vec<CMatrix> = Vec::with_capacity(layers);
        for l in 0..layers {
            let ph = unit_phasors(phases.layer(l));
            let mut field = match fields.last() {
                None => stack.layers[0].clone(),
                Some(prev) => {
                    let w = &stack.layers[l];
                    let mut out = CMatrix::zeros(w.rows(), prev.cols());
                    matmul_into(w, prev, &mut out);
                    out
                }
            };
            field.scale_rows(&ph);
            phasors.push(ph);
            fields.push(field);
        }
        Ok(Self { phasors, fields })
    }

    pub fn response(&self) -> &CMatrix {
        self.fields.last().expect("at least one layer")
    }

    pub fn into_response(mut self) -> CMatrix {
        self.fields.pop().expect("at least one layer")
    }

    /// Gradient of a real objective `f(G)` with respect to every phase,
    /// given `∂f/∂conj(G)` (so that `df = 2 Re Σ conj(Ḡ) dG`). Returned
    /// layer-major like [`PhaseState`].
    pub fn backward(&self, stack: &TransferStack, g_bar: &CMatrix) -> Vec<f64> {
        let layers = self.fields.len();
        let n = stack.atoms_per_layer();
        let mut grad = vec![0.0; layers * n];
        let mut u_bar = g_bar.clone();
        let mut scratch = CMatrix::zeros(u_bar.rows(), u_bar.cols());
        for l in (0..layers).rev() {
            let field = &self.fields[l];
            for (i, g) in grad[l * n..(l + 1) * n].iter_mut().enumerate() {
                let s: C64 = u_bar.row(i).iter().zip(field.row(i)).map(|(ub, u)| ub.conj() * u).sum();
                *g = -2.0 * s.im;
            }
            if l == 0 {
                break;
            }
            // Ā = conj(Φ) Ū, then Ū_prev = Wᴴ Ā.
            let conj_ph: Vec<C64> = self.phasors[l].iter().map(|p| p.conj()).collect();
            u_bar.scale_rows(&conj_ph);
            adjoint_matmul_into(&stack.layers[l], &u_bar, &mut scratch);
            std::mem::swap(&mut u_bar, &mut scratch);
        }
        grad
    }
}

/// Snaps every phase to the nearest of `levels` uniformly spaced values
/// `2πk/levels`; exact ties go to the smaller `k`.
pub fn quantize_phases(phases: &PhaseState, levels: u32) -> Result<PhaseState> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "quantization needs at least 2 levels, got {levels}"
        )));
    }
    let step = TAU / levels as f64;
    let theta = phases
        .theta
        .iter()
        .map(|&t| {
            let x = wrap_phase(t) / step;
            let lower = x.floor();
            let k = if x - lower > 0.5 { lower + 1.0 } else { lower };
            (k as u32 % levels) as f64 * step
        })
        .collect();
    Ok(PhaseState {
        layers: phases.layers,
        atoms: phases.atoms,
        theta,
    })
}

/// Shortest angular distance between two phases.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d).min(PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sim_geometry, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 0.010_707;

    fn small_stack(layers: usize, atoms: usize, antennas: usize) -> TransferStack {
        let mut c = SimConfig::new(28e9, layers, atoms, antennas, antennas);
        c.num_antennas = antennas;
        let g = build_sim_geometry(&c).unwrap();
        build_transfer_stack(&g, &c).unwrap()
    }

    #[test]
    fn coaxial_coefficient_has_closed_form_modulus() {
        let gap = 5.0 * LAMBDA / 7.0;
        let area = (LAMBDA / 2.0).powi(2);
        let n = Vec3::new(0.0, 0.0, 1.0);
        let w = rs_coefficient(Vec3::default(), Vec3::new(0.0, 0.0, gap), n, area, LAMBDA).unwrap();
        let expected = area * ((1.0 / (TAU * gap)).powi(2) + 1.0 / LAMBDA.powi(2)).sqrt() / gap;
        assert!((w.norm() - expected).abs() < 1e-15 * expected.max(1.0));
    }

    #[test]
    fn coefficient_decays_with_distance_at_fixed_obliquity() {
        let area = (LAMBDA / 2.0).powi(2);
        let n = Vec3::new(0.0, 0.0, 1.0);
        let dir = Vec3::new(0.3, -0.2, 1.0);
        let dir = dir * (1.0 / dir.norm());
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let r = 0.002 * k as f64;
            let w = rs_coefficient(Vec3::default(), dir * r, n, area, LAMBDA).unwrap();
            assert!(w.norm() < last);
            last = w.norm();
        }
    }

    #[test]
    fn coefficient_matches_high_precision_reference() {
        // Reference evaluated with mpmath at 50 digits.
        let area = (LAMBDA / 2.0).powi(2);
        let w = rs_coefficient(
            Vec3::default(),
            Vec3::new(0.0, 0.0, 0.007_65),
            Vec3::new(0.0, 0.0, 1.0),
            area,
            LAMBDA,
        )
        .unwrap();
        let expected = C64::new(REF_RE, REF_IM);
        assert!((w - expected).norm() < 1e-14 * expected.norm());
    }

    #[allow(clippy::excessive_precision)]
    const REF_RE: f64 = -0.358_475_038_995_738_93;
    const REF_IM: f64 = 0.001_421_668_810_184_809_6;

    #[test]
    fn rejects_coincident_and_backward_pairs() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert!(rs_coefficient(Vec3::default(), Vec3::default(), n, 1.0, LAMBDA).is_err());
        assert!(rs_coefficient(Vec3::default(), Vec3::new(0.0, 0.0, -1.0), n, 1.0, LAMBDA).is_err());
        assert!(rs_coefficient(Vec3::default(), Vec3::new(1.0, 0.0, 0.0), n, 1.0, LAMBDA).is_err());
    }

    #[test]
    fn degenerate_stack_is_one_coefficient() {
        let mut c = SimConfig::new(28e9, 1, 1, 1, 1);
        c.num_antennas = 1;
        let g = build_sim_geometry(&c).unwrap();
        let s = build_transfer_stack(&g, &c).unwrap();
        assert_eq!(s.num_layers(), 1);
        assert_eq!((s.w(1).rows(), s.w(1).cols()), (1, 1));
        let direct = rs_coefficient(
            g.antenna_positions[0],
            g.layer_positions[0][0],
            g.layer_normal,
            c.atom_area,
            c.wavelength(),
        )
        .unwrap();
        assert_eq!(s.w(1)[(0, 0)], direct);
    }

    #[test]
    fn inter_layer_matrices_are_symmetric() {
        let s = small_stack(3, 16, 4);
        for l in 2..=3 {
            let w = s.w(l);
            let diff = w.max_abs_diff(&w.transpose());
            assert!(diff <= 1e-14 * w.max_abs());
        }
    }

    #[test]
    fn single_layer_zero_phase_response_is_w1() {
        let s = small_stack(1, 9, 4);
        let g = sim_response(&s, &PhaseState::zeros(1, 9)).unwrap();
        assert_eq!(&g, s.w(1));
    }

    #[test]
    fn layer_offset_multiplies_response_by_a_phasor() {
        let s = small_stack(3, 9, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PhaseState::random(3, 9, &mut rng);
        let g = sim_response(&s, &p).unwrap();
        let phi0 = 0.7;
        let g2 = sim_response(&s, &p.with_layer_offset(1, phi0)).unwrap();
        let mut rotated = g.clone();
        rotated.scale(C64::from_polar(1.0, phi0));
        assert!(g2.max_abs_diff(&rotated) <= 1e-12 * g.max_abs());
        for (a, b) in g.as_slice().iter().zip(g2.as_slice()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-12 * g.max_abs());
        }
    }

    #[test]
    fn two_layer_toy_matches_hand_expansion() {
        let c = |re, im| C64::new(re, im);
        let w1 = CMatrix::from_vec(2, 1, vec![c(1.0, 0.5), c(-0.25, 2.0)]).unwrap();
        let w2 = CMatrix::from_vec(2, 2, vec![c(0.5, 0.0), c(0.0, 1.0), c(1.0, -1.0), c(2.0, 0.0)]).unwrap();
        let stack = TransferStack::from_layers(vec![w1, w2], 1.0).unwrap();
        let phases = PhaseState::from_vec(2, 2, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]).unwrap();
        let g = sim_response(&stack, &phases).unwrap();
        // Φ¹W¹ = [1+0.5j, j(-0.25+2j)] = [1+0.5j, -2-0.25j]
        // W²Φ¹W¹ = [0.5(1+0.5j) + j(-2-0.25j), (1-j)(1+0.5j) + 2(-2-0.25j)]
        //        = [0.75-1.75j, -2.5-1j]
        // Φ² = diag(-1, -j) → [-0.75+1.75j, -1+2.5j]
        assert!((g[(0, 0)] - c(-0.75, 1.75)).norm() < 1e-14);
        assert!((g[(1, 0)] - c(-1.0, 2.5)).norm() < 1e-14);
    }

    #[test]
    fn fold_orders_agree() {
        let s = small_stack(4, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PhaseState::random(4, 16, &mut rng);
        let right = sim_response(&s, &p).unwrap();
        let left = sim_response_operator_product(&s, &p).unwrap();
        assert!(right.max_abs_diff(&left) <= 1e-10 * right.max_abs());
    }

    #[test]
    fn quantize_examples() {
        let q = |t: f64, levels| {
            quantize_phases(&PhaseState::from_vec(1, 1, vec![t]).unwrap(), levels)
                .unwrap()
                .as_slice()[0]
        };
        assert_eq!(q(0.1, 2), 0.0);
        assert_eq!(q(PI, 4), PI);
        assert_eq!(q(PI / 2.0, 2), 0.0); // tie → smaller k
        assert_eq!(q(TAU - 0.01, 4), 0.0);
        assert!(quantize_phases(&PhaseState::zeros(1, 1), 1).is_err());
    }

    #[test]
    fn quantization_error_is_bounded_on_a_fine_grid() {
        for levels in [2u32, 3, 4, 8, 16] {
            let theta: Vec<f64> = (0..20_000).map(|i| TAU * i as f64 / 20_000.0).collect();
            let p = PhaseState::from_vec(1, theta.len(), theta.clone()).unwrap();
            let q = quantize_phases(&p, levels).unwrap();
            let bound = PI / levels as f64 + 1e-12;
            for (t, tq) in theta.iter().zip(q.as_slice()) {
                assert!(circular_distance(*t, *tq) <= bound);
            }
        }
    }

    #[test]
    fn phase_text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PhaseState::random(3, 4, &mut rng);
        let back = PhaseState::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
        assert!(PhaseState::from_text("layers 2\natoms 2\n0.1\n").is_err());
        assert!(PhaseState::from_text("layers x\n").is_err());
    }
}
