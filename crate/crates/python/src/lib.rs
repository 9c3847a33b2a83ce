//! Python bindings: geometry, per-pixel simulation and inversion, robust
//! fusion, height comparison and the file-based pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tomosar::config::PipelineConfig;
use tomosar::geometry::{build_sensing_matrix, AcquisitionGeometry, ElevationGrid};
use tomosar::heightfusion::{robust_fuse_values, HeightFlag, LossKind, ObjectHeight, RobustLossSpec};
use tomosar::inversion::{
    beamforming, cs_solve, select_model, svd_estimate, CsConfig, MeasurementVector, RegularizationSpec,
    SelectionConfig,
};
use tomosar::pipeline::{parse_stages, run_pipeline};
use tomosar::simulator::{simulate_pixel, NoiseSpec, TruthScatterer};
use tomosar::validation::{compare_heights, ComparisonConfig, Provenance, ReferenceModel};

fn value_err(e: tomosar::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Multi-master bistatic acquisition geometry.
#[pyclass(name = "Geometry", frozen)]
struct PyGeometry {
    inner: AcquisitionGeometry,
}

#[pymethods]
impl PyGeometry {
    #[new]
    fn new(wavelength: f64, slant_range: f64, masters: Vec<f64>, baselines: Vec<f64>) -> PyResult<Self> {
        let inner = AcquisitionGeometry::from_arrays(wavelength, slant_range, &masters, &baselines).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn rayleigh_resolution(&self) -> PyResult<f64> {
        self.inner.rayleigh_resolution().map_err(value_err)
    }

    fn baseline_wavenumbers(&self) -> Vec<f64> {
        self.inner.baseline_wavenumbers()
    }

    /// Elevation samples covering `[min, max]`; the default spacing is 1/16
    /// of the Rayleigh resolution.
    #[pyo3(signature = (min, max, spacing=None))]
    fn grid(&self, min: f64, max: f64, spacing: Option<f64>) -> PyResult<Vec<f64>> {
        let grid = match spacing {
            Some(s) => ElevationGrid::covering(min, max, s),
            None => ElevationGrid::for_geometry(&self.inner, min, max),
        }
        .map_err(value_err)?;
        Ok(grid.samples().to_vec())
    }

    /// Multi-looked interferogram vector of one pixel. `scatterers` holds
    /// `(elevation, power)` distributed scatterers. Returns the values and
    /// their noise level.
    #[pyo3(signature = (scatterers, looks=1, snr_db=None, seed=0))]
    fn simulate_pixel(
        &self,
        scatterers: Vec<(f64, f64)>,
        looks: usize,
        snr_db: Option<f64>,
        seed: u64,
    ) -> PyResult<(Vec<Complex64>, f64)> {
        if looks == 0 {
            return Err(PyValueError::new_err("looks must be >= 1"));
        }
        let truth: Vec<TruthScatterer> = scatterers
            .iter()
            .map(|&(e, p)| TruthScatterer::distributed(e, p))
            .collect();
        let noise = NoiseSpec { snr_db }.noise_variance(truth.iter().map(|s| s.power).sum());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.inner.len();
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        let mut power = vec![(0.0, 0.0); n];
        for _ in 0..looks {
            for (k, (m, s)) in simulate_pixel(&truth, &self.inner, noise, &mut rng).into_iter().enumerate() {
                z[k] += s * m.conj();
                power[k].0 += m.norm_sqr();
                power[k].1 += s.norm_sqr();
            }
        }
        let l = looks as f64;
        let level = power.iter().map(|(a, b)| a * b / (l * l)).sum::<f64>() / n as f64 / l;
        Ok((z.into_iter().map(|v| v / l).collect(), level))
    }
}

fn setup(
    geometry: &PyGeometry,
    grid: Vec<f64>,
    values: Vec<Complex64>,
    noise_level: f64,
) -> PyResult<(MeasurementVector, ElevationGrid, tomosar::geometry::SensingMatrix)> {
    let grid = ElevationGrid::from_samples(grid).map_err(value_err)?;
    let r = build_sensing_matrix(&geometry.inner, &grid).map_err(value_err)?;
    let g = MeasurementVector::new(values, noise_level).map_err(value_err)?;
    Ok((g, grid, r))
}

/// Model selection between zero, one and two scatterers. Returns
/// `(scatterers, method)` with `(elevation, power)` tuples.
#[pyfunction]
#[pyo3(signature = (geometry, grid, values, noise_level, penalty=None))]
fn invert_pixel(
    geometry: &PyGeometry,
    grid: Vec<f64>,
    values: Vec<Complex64>,
    noise_level: f64,
    penalty: Option<f64>,
) -> PyResult<(Vec<(f64, f64)>, String)> {
    let (g, grid, r) = setup(geometry, grid, values, noise_level)?;
    let mut config = SelectionConfig::default();
    if let Some(p) = penalty {
        config.penalty = p;
    }
    let set = select_model(&g, &r, &grid, &config).map_err(value_err)?;
    let method = serde_json::to_value(set.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    Ok((set.scatterers.iter().map(|s| (s.elevation, s.power)).collect(), method))
}

/// Sparse nonnegative power profile; `lambda` defaults to the noise-derived
/// weight.
#[pyfunction]
#[pyo3(signature = (geometry, grid, values, noise_level, lambda_=None))]
fn cs_profile(
    geometry: &PyGeometry,
    grid: Vec<f64>,
    values: Vec<Complex64>,
    noise_level: f64,
    lambda_: Option<f64>,
) -> PyResult<Vec<f64>> {
    let (g, _, r) = setup(geometry, grid, values, noise_level)?;
    let config = CsConfig::default();
    let lambda = lambda_.unwrap_or_else(|| config.lambda_for(&g, &r));
    Ok(cs_solve(&g, &r, lambda, &config).map_err(value_err)?.estimate.profile)
}

/// Regularized least-squares profile magnitude.
#[pyfunction]
#[pyo3(signature = (geometry, grid, values, noise_level, prior_variance=1e6))]
fn svd_profile(
    geometry: &PyGeometry,
    grid: Vec<f64>,
    values: Vec<Complex64>,
    noise_level: f64,
    prior_variance: f64,
) -> PyResult<Vec<f64>> {
    let (g, _, r) = setup(geometry, grid, values, noise_level)?;
    let prior = RegularizationSpec {
        prior_variance,
        ..Default::default()
    };
    Ok(svd_estimate(&g, &r, &prior).map_err(value_err)?.profile)
}

#[pyfunction]
fn beamforming_profile(geometry: &PyGeometry, grid: Vec<f64>, values: Vec<Complex64>) -> PyResult<Vec<f64>> {
    let (g, _, r) = setup(geometry, grid, values, 0.0)?;
    Ok(beamforming(&g, &r))
}

/// M-estimate of a set of elevations or heights. Returns
/// `(estimate, robust_std, converged)`.
#[pyfunction]
#[pyo3(signature = (values, loss="huber", scale=1.0))]
fn robust_fuse(values: Vec<f64>, loss: &str, scale: f64) -> PyResult<(f64, f64, bool)> {
    let kind = match loss {
        "squared" => LossKind::Squared,
        "huber" => LossKind::Huber,
        "tukey" => LossKind::Tukey,
        other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    };
    let fit = robust_fuse_values(&values, &RobustLossSpec::new(kind, scale)).map_err(value_err)?;
    Ok((fit.estimate, fit.robust_std, fit.converged))
}

/// Compares `{id: height}` estimates with `{id: height}` reference heights.
#[pyfunction]
#[pyo3(signature = (estimates, reference, truncation=15.0))]
fn compare<'py>(
    py: Python<'py>,
    estimates: BTreeMap<u32, f64>,
    reference: BTreeMap<u32, f64>,
    truncation: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let objects: Vec<ObjectHeight> = estimates
        .iter()
        .map(|(&id, &h)| ObjectHeight {
            id,
            height: Some(h),
            count: 1,
            robust_std: 0.0,
            flag: HeightFlag::Ok,
        })
        .collect();
    let model = ReferenceModel::new(reference, None, Provenance::ExternalFile).map_err(value_err)?;
    let config = ComparisonConfig {
        truncation,
        ..Default::default()
    };
    let report = compare_heights(&objects, &model, &config).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("compared", report.compared)?;
    out.set_item("retained", report.retained)?;
    out.set_item("fraction_within_1m", report.fraction_within_1m)?;
    out.set_item("fraction_within_2m", report.fraction_within_2m)?;
    out.set_item("std", report.std)?;
    out.set_item("histogram", report.histogram.iter().map(|b| b.count).collect::<Vec<_>>())?;
    Ok(out)
}

/// Runs pipeline stages from a TOML config; returns per-stage seconds.
#[pyfunction]
#[pyo3(signature = (config_path, stages="all", out=None, workers=None))]
fn run(
    py: Python<'_>,
    config_path: PathBuf,
    stages: &str,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Vec<(String, f64)>> {
    let mut config = PipelineConfig::load(&config_path).map_err(value_err)?;
    if let Some(w) = workers {
        config.workers = w;
    }
    let out = out.unwrap_or_else(|| config.out.clone());
    let stages = parse_stages(stages).map_err(value_err)?;
    let summary = py
        .detach(|| run_pipeline(&config, &stages, &out))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(summary
        .stages
        .into_iter()
        .map(|(s, t)| (s.name().to_string(), t))
        .collect())
}

#[pymodule]
fn tomosar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_function(wrap_pyfunction!(invert_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(cs_profile, m)?)?;
    m.add_function(wrap_pyfunction!(svd_profile, m)?)?;
    m.add_function(wrap_pyfunction!(beamforming_profile, m)?)?;
    m.add_function(wrap_pyfunction!(robust_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
