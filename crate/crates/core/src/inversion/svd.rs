use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MeasurementVector, Method, ProfileEstimate};
use crate::error::{Error, Result};
use crate::geometry::SensingMatrix;

/// Gaussian prior `C_XX = prior_variance * I`; `f64::INFINITY` gives the
/// minimum-norm (pseudo-inverse) solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationSpec {
    pub prior_variance: f64,
    pub condition_threshold: f64,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        Self {
            prior_variance: 1e6,
            condition_threshold: 1e12,
        }
    }
}

/// Regularized least-squares profile
/// `x = (R^H R / s2 + I / tau)^-1 R^H g / s2`, evaluated in the equivalent
/// `N x N` form `x = tau R^H (tau R R^H + s2 I)^-1 g`, projected to power by
/// magnitude.
pub fn svd_estimate(g: &MeasurementVector, r: &SensingMatrix, prior: &RegularizationSpec) -> Result<ProfileEstimate> {
    g.check(r)?;
    let tau = prior.prior_variance;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("prior variance must be > 0, got {tau}")));
    }
    let n = r.rows();
    let s2 = g.noise_level;
    let outer = r.outer_gram();
    let m: DMatrix<Complex64> = if tau.is_finite() {
        outer * Complex64::new(tau, 0.0) + DMatrix::identity(n, n) * Complex64::new(s2, 0.0)
    } else {
        outer
    };
    let eig = m.symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= prior.condition_threshold) {
        return Err(Error::IllConditioned {
            condition,
            threshold: prior.condition_threshold,
        });
    }
    let gv = DVector::from_column_slice(&g.values);
    let v = &eig.eigenvectors;
    let mut proj = v.adjoint() * gv;
    for (p, &l) in proj.iter_mut().zip(eig.eigenvalues.iter()) {
        *p /= l;
    }
    let y = v * proj;
    let scale = if tau.is_finite() { tau } else { 1.0 };
    let x: Vec<Complex64> = r.adjoint_apply(y.as_slice()).into_iter().map(|v| v * scale).collect();
    let fit = r.apply(&x);
    let residual_norm = fit
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(ProfileEstimate {
        profile: x.iter().map(|v| v.norm()).collect(),
        method: Method::Svd,
        residual_norm,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sensing_matrix, AcquisitionGeometry, ElevationGrid};

    fn setup(samples: usize) -> (SensingMatrix, ElevationGrid) {
        let geometry = AcquisitionGeometry::from_arrays(
            0.031,
            600_000.0,
            &[-420.0, 130.0, -60.0, 310.0, 540.0],
            &[100.0, 150.0, 195.0, 240.0, 345.0],
        )
        .unwrap();
        let grid = ElevationGrid::uniform(-30.0, 150.0 / (samples - 1) as f64, samples).unwrap();
        (build_sensing_matrix(&geometry, &grid).unwrap(), grid)
    }

    #[test]
    fn zero_measurement_gives_zero_profile() {
        let (r, _) = setup(40);
        let g = MeasurementVector::new(vec![Complex64::new(0.0, 0.0); 5], 0.1).unwrap();
        let est = svd_estimate(&g, &r, &RegularizationSpec::default()).unwrap();
        assert!(est.profile.iter().all(|&v| v == 0.0));
        assert_eq!(est.residual_norm, 0.0);
    }

    #[test]
    fn pseudo_inverse_limit_matches_dense_oracle() {
        let (r, grid) = setup(61);
        let l0 = 37;
        let g = MeasurementVector::new(r.steering(grid.samples()[l0]), 0.0).unwrap();
        let prior = RegularizationSpec {
            prior_variance: f64::INFINITY,
            ..Default::default()
        };
        let est = svd_estimate(&g, &r, &prior).unwrap();
        assert_eq!(est.argmax(), l0);
        // Dense oracle: nalgebra pseudo-inverse of R.
        let pinv = r.to_dmatrix().pseudo_inverse(1e-12).unwrap();
        let x = pinv * DVector::from_column_slice(&g.values);
        for (a, b) in est.profile.iter().zip(x.iter()) {
            assert!((a - b.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_wavenumbers_are_ill_conditioned() {
        let geometry =
            AcquisitionGeometry::from_arrays(0.031, 600_000.0, &[0.0, 10.0, 20.0], &[100.0, 100.0, 250.0]).unwrap();
        let grid = ElevationGrid::uniform(0.0, 2.0, 30).unwrap();
        let r = build_sensing_matrix(&geometry, &grid).unwrap();
        let g = MeasurementVector::new(r.steering(10.0), 0.0).unwrap();
        let prior = RegularizationSpec {
            prior_variance: f64::INFINITY,
            ..Default::default()
        };
        assert!(matches!(svd_estimate(&g, &r, &prior), Err(Error::IllConditioned { .. })));
        assert!(svd_estimate(&g, &r, &RegularizationSpec { prior_variance: 0.0, ..prior }).is_err());
    }
}
