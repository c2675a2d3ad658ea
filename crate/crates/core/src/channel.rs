// SPDX-License-Identifier: Apache-2.0

//! Wireless channels seen by the SIM.
//!
//! Downlink channels are spatially correlated Rayleigh fading over the
//! radiating aperture (outer SIM layer, or the bare antenna array for the
//! digital baseline), scaled by a log-distance path loss referenced to free
//! space at 1 m. The DOA uplink is a deterministic free-space spherical wave.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Scenario, Vec3};
use crate::linalg::{CMatrix, C64};
use crate::units::dbm_to_mw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// K×N (or K×M for the direct baseline).
    pub h: CMatrix,
    /// σ² in mW.
    pub noise_power: f64,
    pub per_user_pathloss: Vec<f64>,
}

/// Linear power gain at `distance` metres: free space up to the 1 m
/// reference, then `distance^-exponent`.
pub fn path_loss(distance: f64, exponent: f64, wavelength: f64) -> Result<f64> {
    if !(distance >= 1.0) {
        return Err(Error::BelowReferenceDistance { distance });
    }
    Ok((wavelength / (4.0 * PI)).powi(2) * distance.powf(-exponent))
}

#[derive(Debug, Clone)]
pub struct CorrelationModel {
    r: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl CorrelationModel {
    pub fn identity(n: usize) -> Self {
        Self {
            r: DMatrix::identity(n, n),
            sqrt: DMatrix::identity(n, n),
        }
    }

    /// Builds the model from a symmetric correlation matrix; eigenvalues
    /// below zero are clamped before taking the principal square root.
    pub fn from_matrix(r: DMatrix<f64>) -> Result<Self> {
        let n = r.nrows();
        if r.ncols() != n {
            return Err(Error::DimensionMismatch("correlation matrix must be square".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite correlation entry".into()));
        }
        let eig = SymmetricEigen::try_new(r.clone(), 1e-15, 10_000)
            .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
        let scale = eig.eigenvalues.amax().max(1.0);
        if let Some(bad) = eig.eigenvalues.iter().find(|&&e| e < -1e-8 * scale) {
            return Err(Error::Numerical(format!(
                "correlation matrix is not positive semidefinite (eigenvalue {bad})"
            )));
        }
        let roots = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
        let q = &eig.eigenvectors;
        let sqrt = q * DMatrix::from_diagonal(&roots) * q.transpose();
        Ok(Self { r, sqrt })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
}

/// `sin(πx)/(πx)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Isotropic-scattering correlation `R[i,j] = sinc(2‖uᵢ − uⱼ‖/λ)`.
pub fn spatial_correlation(positions: &[Vec3], wavelength: f64) -> Result<CorrelationModel> {
    let n = positions.len();
    let r = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            sinc(2.0 * positions[i].distance(positions[j]) / wavelength)
        }
    });
    CorrelationModel::from_matrix(r)
}

/// Draws one circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Row `k` is `√pathloss_k · (R^{1/2} z_k)ᵀ`, `z_k ~ CN(0, I)`.
pub fn sample_fading<R: Rng + ?Sized>(
    rng: &mut R,
    corr: &CorrelationModel,
    pathloss: &[f64],
    noise_power: f64,
) -> ChannelRealization {
    let n = corr.dim();
    let root = corr.sqrt();
    let mut h = CMatrix::zeros(pathloss.len(), n);
    for (k, &pl) in pathloss.iter().enumerate() {
        let z: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        let amp = pl.sqrt();
        let row = h.row_mut(k);
        for (i, out) in row.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, zj) in z.iter().enumerate() {
                acc += zj * root[(i, j)];
            }
            *out = acc * amp;
        }
    }
    ChannelRealization {
        h,
        noise_power,
        per_user_pathloss: pathloss.to_vec(),
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::default(), |acc, &p| acc + p);
    sum * (1.0 / points.len() as f64)
}

fn user_pathloss(aperture: &[Vec3], scenario: &Scenario, wavelength: f64) -> Result<Vec<f64>> {
    let users = scenario
        .user_positions()
        .ok_or_else(|| Error::InvalidArgument("fading channels need a multi-user scenario".into()))?;
    let c = centroid(aperture);
    users
        .iter()
        .map(|u| path_loss(c.distance(*u), scenario.path_loss_exponent, wavelength))
        .collect()
}

/// Correlated fading from an aperture (outer SIM layer) to the scenario's
/// users; path loss uses the distance from the aperture centroid.
pub fn aperture_channel<R: Rng + ?Sized>(
    rng: &mut R,
    aperture: &[Vec3],
    corr: &CorrelationModel,
    scenario: &Scenario,
    wavelength: f64,
) -> Result<ChannelRealization> {
    if corr.dim() != aperture.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation model is {}x{} but the aperture has {} elements",
            corr.dim(),
            corr.dim(),
            aperture.len()
        )));
    }
    let pl = user_pathloss(aperture, scenario, wavelength)?;
    Ok(sample_fading(rng, corr, &pl, dbm_to_mw(scenario.noise_power_dbm)))
}

/// Fading from the bare antenna array to the users (no SIM).
pub fn direct_channel<R: Rng + ?Sized>(
    rng: &mut R,
    antenna_positions: &[Vec3],
    scenario: &Scenario,
    wavelength: f64,
) -> Result<ChannelRealization> {
    let corr = spatial_correlation(antenna_positions, wavelength)?;
    aperture_channel(rng, antenna_positions, &corr, scenario, wavelength)
}

/// Free-space spherical wave from `target` to each outer-layer atom:
/// `λ/(4π d) · e^{−j2πd/λ}`.
pub fn los_uplink(target: Vec3, outer_layer: &[Vec3], wavelength: f64) -> Result<Vec<C64>> {
    outer_layer
        .iter()
        .map(|&p| {
            let d = target.distance(p);
            if !(d >= 1.0) {
                return Err(Error::BelowReferenceDistance { distance: d });
            }
            Ok(C64::from_polar(wavelength / (4.0 * PI * d), -TAU * d / wavelength))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sim_geometry, SimConfig, SPEED_OF_LIGHT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_loss_reference_and_ratio() {
        let lambda = 0.0107;
        let g1 = path_loss(1.0, 3.5, lambda).unwrap();
        assert_eq!(g1, (lambda / (4.0 * PI)).powi(2));
        for d in [1.0, 3.7, 50.0, 812.0] {
            let ratio = path_loss(2.0 * d, 3.5, lambda).unwrap() / path_loss(d, 3.5, lambda).unwrap();
            assert!((ratio - 2f64.powf(-3.5)).abs() < 1e-14);
        }
        assert!(path_loss(0.5, 3.5, lambda).is_err());
        assert!(path_loss(f64::NAN, 3.5, lambda).is_err());
    }

    #[test]
    fn path_loss_matches_db_arithmetic() {
        let lambda = SPEED_OF_LIGHT / 28e9;
        let reference_db = 20.0 * (lambda / (4.0 * PI)).log10();
        assert!((reference_db - -61.39).abs() < 0.01);
        let expected_db = reference_db - 35.0 * 50f64.log10();
        let got_db = 10.0 * path_loss(50.0, 3.5, lambda).unwrap().log10();
        assert!((got_db - expected_db).abs() < 1e-10);
    }

    #[test]
    fn sinc_kernel_values() {
        let lambda = 0.01;
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(lambda / 2.0, 0.0, 0.0),
            Vec3::new(lambda, 0.0, 0.0),
        ];
        let c = spatial_correlation(&pts, lambda).unwrap();
        let r = c.matrix();
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
        assert!(r[(0, 1)].abs() < 1e-15);
        assert!(r[(0, 2)].abs() < 1e-15);
        let back = c.sqrt() * c.sqrt();
        assert!((back - r).amax() < 1e-10);
    }

    #[test]
    fn square_root_reproduces_grid_correlation() {
        let cfg = SimConfig::new(28e9, 1, 49, 4, 4);
        let g = build_sim_geometry(&cfg).unwrap();
        let c = spatial_correlation(g.outer_layer(), cfg.wavelength()).unwrap();
        let back = c.sqrt() * c.sqrt();
        assert!((back - c.matrix()).amax() <= 1e-8);
        let eig = SymmetricEigen::new(c.matrix().clone());
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn zero_gain_rows_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = sample_fading(&mut rng, &CorrelationModel::identity(5), &[1.0, 0.0, 2.0], 1.0);
        assert!(ch.h.row(1).iter().all(|z| z.norm() == 0.0));
        assert!(ch.h.row(0).iter().any(|z| z.norm() > 0.0));
    }

    #[test]
    fn seeded_draws_repeat() {
        let corr = CorrelationModel::identity(4);
        let a = sample_fading(&mut ChaCha8Rng::seed_from_u64(9), &corr, &[1.0; 2], 1.0);
        let b = sample_fading(&mut ChaCha8Rng::seed_from_u64(9), &corr, &[1.0; 2], 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn identity_correlation_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let corr = CorrelationModel::identity(1);
        let pl = 3.0e-9;
        let draws = 10_000;
        let mut power = 0.0;
        let mut mean = C64::new(0.0, 0.0);
        for _ in 0..draws {
            let z = sample_fading(&mut rng, &corr, &[pl], 1.0).h[(0, 0)];
            power += z.norm_sqr();
            mean += z;
        }
        let power = power / draws as f64;
        assert!((power / pl - 1.0).abs() < 0.03, "mean power ratio {}", power / pl);
        assert!((mean / draws as f64).norm() < 0.05 * pl.sqrt());
    }

    #[test]
    fn uplink_symmetry_and_decay() {
        let lambda = 0.0107;
        let atoms = [Vec3::new(-0.01, 0.0, 10.0), Vec3::new(0.01, 0.0, 10.0)];
        let u = los_uplink(Vec3::new(0.0, 5.0, 0.0), &atoms, lambda).unwrap();
        assert_eq!(u[0], u[1]);

        let near = los_uplink(Vec3::new(0.0, 0.0, 3.0), &[Vec3::default()], lambda).unwrap()[0];
        let far = los_uplink(Vec3::new(0.0, 0.0, 6.0), &[Vec3::default()], lambda).unwrap()[0];
        assert!((far.norm() * 2.0 - near.norm()).abs() < 1e-15);
        assert!(los_uplink(Vec3::new(0.0, 0.0, 0.5), &[Vec3::default()], lambda).is_err());
    }

    #[test]
    fn boresight_uplink_has_grid_mirror_symmetry() {
        let cfg = SimConfig::new(28e9, 2, 25, 4, 4);
        let g = build_sim_geometry(&cfg).unwrap();
        let outer = g.outer_layer();
        let u = los_uplink(Vec3::new(0.0, 0.0, 0.0), outer, cfg.wavelength()).unwrap();
        let side = 5;
        for row in 0..side {
            for col in 0..side {
                let n = row * side + col;
                let mirror_x = row * side + (side - 1 - col);
                let mirror_y = (side - 1 - row) * side + col;
                let transpose = col * side + row;
                assert_eq!(u[n], u[mirror_x]);
                assert_eq!(u[n], u[mirror_y]);
                assert_eq!(u[n], u[transpose]);
            }
        }
    }
}
