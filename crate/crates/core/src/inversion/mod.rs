//! Per-pixel elevation inversion: regularized least squares, sparse
//! (L1) recovery and model-order selection between zero, one and two
//! scatterers.

mod cs;
mod select;
mod svd;

pub use cs::{cs_estimate, cs_solve, default_lambda, objective, zero_threshold, CsConfig, CsDomain, CsSolution};
pub use select::{beamforming, select_model, SelectionConfig};
pub use svd::{svd_estimate, RegularizationSpec};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_sensing_matrix, geometry_hash, AcquisitionGeometry, ElevationGrid, SensingMatrix};
use crate::nonlocal::FilteredStack;
use crate::raster::Raster;

/// Filtered samples of one pixel and their noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<Complex64>,
    /// Variance of each complex sample around its expectation.
    pub noise_level: f64,
}

impl MeasurementVector {
    pub fn new(values: Vec<Complex64>, noise_level: f64) -> Result<Self> {
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite measurement".into()));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid noise level {noise_level}")));
        }
        Ok(Self { values, noise_level })
    }

    /// Measurement of pixel `(row, col)` of a filtered stack. The variance of
    /// a single-look interferogram sample is `I1 I2`; averaging reduces it by
    /// the pixel's ENL.
    pub fn from_filtered(filtered: &FilteredStack, row: usize, col: usize) -> Result<Self> {
        let values = filtered.stack.pixel_vector(row, col);
        let layers = filtered.stack.layers();
        let power: f64 = layers
            .iter()
            .map(|l| *l.master_intensity.get(row, col) as f64 * *l.slave_intensity.get(row, col) as f64)
            .sum::<f64>()
            / layers.len() as f64;
        let enl = (*filtered.enl.get(row, col) as f64).max(1.0);
        Self::new(values, power / enl)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    fn check(&self, r: &SensingMatrix) -> Result<()> {
        if self.values.len() != r.rows() {
            return Err(Error::Dimension(format!(
                "measurement has {} samples, matrix has {} rows",
                self.values.len(),
                r.rows()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// No scatterer retained.
    None,
    /// Beamforming peak refined by nonlinear least squares.
    Nls,
    Svd,
    Cs,
}

impl Method {
    pub fn code(self) -> u8 {
        match self {
            Method::None => 0,
            Method::Nls => 1,
            Method::Svd => 2,
            Method::Cs => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Method::None,
            1 => Method::Nls,
            2 => Method::Svd,
            3 => Method::Cs,
            _ => return None,
        })
    }
}

/// Power profile over the elevation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEstimate {
    pub profile: Vec<f64>,
    pub method: Method,
    pub residual_norm: f64,
    pub converged: bool,
}

impl ProfileEstimate {
    pub fn argmax(&self) -> usize {
        self.profile
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub elevation: f64,
    pub power: f64,
}

/// Discrete scatterers detected in one pixel, sorted by elevation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScattererSet {
    pub scatterers: Vec<Scatterer>,
    /// Information-criterion margin of the chosen order over the runner-up.
    pub score: f64,
    pub method: Method,
    pub converged: bool,
}

impl ScattererSet {
    pub fn empty() -> Self {
        Self {
            scatterers: Vec::new(),
            score: 0.0,
            method: Method::None,
            converged: true,
        }
    }

    pub fn order(&self) -> usize {
        self.scatterers.len()
    }

    pub fn lowest(&self) -> Option<&Scatterer> {
        self.scatterers.first()
    }

    pub fn highest(&self) -> Option<&Scatterer> {
        self.scatterers.last()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub pixels: usize,
    pub order_counts: [usize; 3],
    pub cs_runs: usize,
    pub not_converged: usize,
    /// `(row, col, message)` for pixels whose inversion failed; those
    /// pixels are reported as empty sets.
    pub pixel_errors: Vec<(usize, usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub scatterers: Raster<ScattererSet>,
    pub report: InversionReport,
}

/// Runs model selection on every pixel of a filtered stack.
pub fn invert_stack(
    filtered: &FilteredStack,
    geometry: &AcquisitionGeometry,
    grid: &ElevationGrid,
    config: &SelectionConfig,
) -> Result<InversionResult> {
    if filtered.stack.geometry() != geometry {
        return Err(Error::GeometryMismatch(
            "filtered stack was produced for a different acquisition geometry".into(),
        ));
    }
    let r = build_sensing_matrix(geometry, grid)?;
    if r.geometry_hash() != geometry_hash(geometry, grid) {
        return Err(Error::GeometryMismatch("sensing matrix hash mismatch".into()));
    }
    let (w, h) = (filtered.stack.width(), filtered.stack.height());
    let results: Vec<Result<ScattererSet>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            let g = MeasurementVector::from_filtered(filtered, row, col)?;
            select_model(&g, &r, grid, config)
        })
        .collect();

    let mut report = InversionReport {
        pixels: w * h,
        ..Default::default()
    };
    let mut sets = Vec::with_capacity(w * h);
    for (idx, res) in results.into_iter().enumerate() {
        let set = match res {
            Ok(set) => set,
            Err(e) => {
                report.pixel_errors.push((idx / w, idx % w, e.to_string()));
                ScattererSet::empty()
            }
        };
        report.order_counts[set.order().min(2)] += 1;
        if set.method == Method::Cs {
            report.cs_runs += 1;
        }
        if !set.converged {
            report.not_converged += 1;
        }
        sets.push(set);
    }
    if !report.pixel_errors.is_empty() {
        log::warn!("{} pixels failed inversion", report.pixel_errors.len());
    }
    Ok(InversionResult {
        scatterers: Raster::from_vec(w, h, sets)?,
        report,
    })
}
