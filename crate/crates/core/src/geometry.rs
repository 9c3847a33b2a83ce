//! Acquisition geometry, elevation grid and the steering (sensing) matrix.
//!
//! Sign convention: the elevation wavenumber of a cross-range position `b`
//! is `k = -4*pi*b / (wavelength * slant_range)` and a scatterer at
//! elevation `s` contributes `exp(-j*k*s)`. Inversion always runs on the
//! bistatic baselines, so row `n` of the sensing matrix is built from the
//! wavenumber of `delta_b[n]`, never from the absolute master position.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default cap on `N * L` for a single sensing matrix.
pub const DEFAULT_MAX_MATRIX_ENTRIES: usize = 1 << 24;

/// One bistatic acquisition: master phase center and effective baseline to
/// the slave phase center, both in meters along the elevation axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub master_position: f64,
    pub baseline: f64,
}

impl Acquisition {
    pub fn slave_position(&self) -> f64 {
        self.master_position + self.baseline
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct AcquisitionGeometry {
    wavelength: f64,
    slant_range: f64,
    acquisitions: Vec<Acquisition>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryRepr {
    wavelength: f64,
    slant_range: f64,
    acquisitions: Vec<Acquisition>,
}

impl TryFrom<GeometryRepr> for AcquisitionGeometry {
    type Error = Error;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        AcquisitionGeometry::new(r.wavelength, r.slant_range, r.acquisitions)
    }
}

impl From<AcquisitionGeometry> for GeometryRepr {
    fn from(g: AcquisitionGeometry) -> Self {
        GeometryRepr {
            wavelength: g.wavelength,
            slant_range: g.slant_range,
            acquisitions: g.acquisitions,
        }
    }
}

impl AcquisitionGeometry {
    pub fn new(wavelength: f64, slant_range: f64, acquisitions: Vec<Acquisition>) -> Result<Self> {
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::Geometry(format!("wavelength must be > 0, got {wavelength}")));
        }
        if !(slant_range.is_finite() && slant_range > 0.0) {
            return Err(Error::Geometry(format!("slant range must be > 0, got {slant_range}")));
        }
        if acquisitions.is_empty() {
            return Err(Error::Geometry("at least one acquisition is required".into()));
        }
        if acquisitions
            .iter()
            .any(|a| !a.master_position.is_finite() || !a.baseline.is_finite())
        {
            return Err(Error::Geometry("positions and baselines must be finite".into()));
        }
        if acquisitions.len() >= 2 {
            let first = acquisitions[0].baseline;
            if acquisitions.iter().all(|a| a.baseline == first) {
                return Err(Error::Geometry(
                    "all bistatic baselines are identical; the stack is rank-deficient".into(),
                ));
            }
        }
        Ok(Self {
            wavelength,
            slant_range,
            acquisitions,
        })
    }

    /// Convenience constructor from parallel arrays of master positions and
    /// baselines.
    pub fn from_arrays(
        wavelength: f64,
        slant_range: f64,
        master_positions: &[f64],
        baselines: &[f64],
    ) -> Result<Self> {
        if master_positions.len() != baselines.len() {
            return Err(Error::Geometry(format!(
                "{} master positions but {} baselines",
                master_positions.len(),
                baselines.len()
            )));
        }
        let acquisitions = master_positions
            .iter()
            .zip(baselines)
            .map(|(&m, &b)| Acquisition {
                master_position: m,
                baseline: b,
            })
            .collect();
        Self::new(wavelength, slant_range, acquisitions)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn slant_range(&self) -> f64 {
        self.slant_range
    }

    pub fn acquisitions(&self) -> &[Acquisition] {
        &self.acquisitions
    }

    pub fn len(&self) -> usize {
        self.acquisitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acquisitions.is_empty()
    }

    pub fn baselines(&self) -> Vec<f64> {
        self.acquisitions.iter().map(|a| a.baseline).collect()
    }

    /// Elevation wavenumber (rad/m) of a cross-range position.
    #[inline]
    pub fn elevation_wavenumber(&self, position: f64) -> f64 {
        -4.0 * PI * position / (self.wavelength * self.slant_range)
    }

    /// Wavenumbers of the bistatic baselines, one per acquisition.
    pub fn baseline_wavenumbers(&self) -> Vec<f64> {
        self.acquisitions
            .iter()
            .map(|a| self.elevation_wavenumber(a.baseline))
            .collect()
    }

    /// Classical elevation resolution `wavelength * r / (2 * span)`, where
    /// span is the extent of the bistatic baselines.
    pub fn rayleigh_resolution(&self) -> Result<f64> {
        if self.acquisitions.len() < 2 {
            return Err(Error::Geometry(
                "rayleigh resolution needs at least two acquisitions".into(),
            ));
        }
        let (lo, hi) = self
            .acquisitions
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a.baseline), hi.max(a.baseline))
            });
        let span = hi - lo;
        if span <= 0.0 {
            return Err(Error::DegenerateAperture);
        }
        Ok(self.wavelength * self.slant_range / (2.0 * span))
    }

    /// Same geometry with the bistatic baselines replaced by the absolute
    /// master positions. This is the mistake a single-master inversion makes
    /// on a multi-master stack; kept for demonstrating it.
    pub fn as_single_master(&self) -> Result<Self> {
        let acquisitions = self
            .acquisitions
            .iter()
            .map(|a| Acquisition {
                master_position: 0.0,
                baseline: a.master_position,
            })
            .collect();
        Self::new(self.wavelength, self.slant_range, acquisitions)
    }

    /// Same geometry with every master position shifted by `offset` meters;
    /// baselines unchanged.
    pub fn with_master_offset(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.acquisitions {
            a.master_position += offset;
        }
        out
    }
}

/// Free-function form of [`AcquisitionGeometry::elevation_wavenumber`].
pub fn elevation_wavenumber(geometry: &AcquisitionGeometry, position: f64) -> f64 {
    geometry.elevation_wavenumber(position)
}

/// Free-function form of [`AcquisitionGeometry::rayleigh_resolution`].
pub fn rayleigh_resolution(geometry: &AcquisitionGeometry) -> Result<f64> {
    geometry.rayleigh_resolution()
}

/// Uniformly spaced elevation samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct ElevationGrid {
    start: f64,
    spacing: f64,
    samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    start: f64,
    spacing: f64,
    count: usize,
}

impl TryFrom<GridRepr> for ElevationGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        ElevationGrid::uniform(r.start, r.spacing, r.count)
    }
}

impl From<ElevationGrid> for GridRepr {
    fn from(g: ElevationGrid) -> Self {
        GridRepr {
            start: g.start,
            spacing: g.spacing,
            count: g.samples.len(),
        }
    }
}

impl ElevationGrid {
    pub fn uniform(start: f64, spacing: f64, count: usize) -> Result<Self> {
        if !(start.is_finite() && spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Grid(format!(
                "need finite start and positive spacing, got start={start} spacing={spacing}"
            )));
        }
        if count == 0 {
            return Err(Error::Grid("grid must have at least one sample".into()));
        }
        let samples = (0..count).map(|l| start + spacing * l as f64).collect();
        Ok(Self {
            start,
            spacing,
            samples,
        })
    }

    /// Validates an explicit list of samples: strictly increasing, uniform
    /// spacing to 1e-9 relative tolerance.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Grid("grid must have at least one sample".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Grid("grid samples must be finite".into()));
        }
        if samples.len() == 1 {
            return Ok(Self {
                start: samples[0],
                spacing: 1.0,
                samples,
            });
        }
        let spacing = (samples[samples.len() - 1] - samples[0]) / (samples.len() - 1) as f64;
        for w in samples.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::Grid("samples must be strictly increasing".into()));
            }
            if ((d - spacing) / spacing).abs() > 1e-9 {
                return Err(Error::Grid(format!(
                    "non-uniform spacing: {d} vs mean {spacing}"
                )));
            }
        }
        Ok(Self {
            start: samples[0],
            spacing,
            samples,
        })
    }

    /// Grid covering `[min, max]` with the given spacing (the last sample is
    /// the largest one not exceeding `max` by more than half a step).
    pub fn covering(min: f64, max: f64, spacing: f64) -> Result<Self> {
        if !(max > min) {
            return Err(Error::Grid(format!("empty elevation range [{min}, {max}]")));
        }
        let count = ((max - min) / spacing + 0.5).floor() as usize + 1;
        Self::uniform(min, spacing, count)
    }

    /// Grid covering `[min, max]` at the default spacing of 1/16 Rayleigh
    /// resolution.
    pub fn for_geometry(geometry: &AcquisitionGeometry, min: f64, max: f64) -> Result<Self> {
        let spacing = geometry.rayleigh_resolution()? / 16.0;
        let grid = Self::covering(min, max, spacing)?;
        if grid.len() < geometry.len() {
            log::warn!(
                "elevation grid has {} samples for {} acquisitions (overdetermined)",
                grid.len(),
                geometry.len()
            );
        }
        Ok(grid)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn contains(&self, elevation: f64) -> bool {
        elevation >= self.start && elevation <= self.end()
    }

    /// Index of the sample nearest to `elevation`, clamped to the grid.
    pub fn nearest_index(&self, elevation: f64) -> usize {
        let i = ((elevation - self.start) / self.spacing).round();
        i.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            start: self.start + offset,
            spacing: self.spacing,
            samples: self.samples.iter().map(|s| s + offset).collect(),
        }
    }
}

/// Content hash binding a sensing matrix to its geometry and grid.
pub fn geometry_hash(geometry: &AcquisitionGeometry, grid: &ElevationGrid) -> String {
    let mut h = Sha256::new();
    h.update(geometry.wavelength.to_le_bytes());
    h.update(geometry.slant_range.to_le_bytes());
    h.update((geometry.acquisitions.len() as u64).to_le_bytes());
    for a in &geometry.acquisitions {
        h.update(a.baseline.to_le_bytes());
    }
    h.update((grid.len() as u64).to_le_bytes());
    for s in &grid.samples {
        h.update(s.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `N x L` steering matrix with `R[n][l] = exp(-j * dk_n * s_l)`.
#[derive(Clone, Debug)]
pub struct SensingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
    wavenumbers: Vec<f64>,
    elevations: Vec<f64>,
    geometry_hash: String,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Baseline wavenumbers `dk_n` the rows were built from.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn geometry_hash(&self) -> &str {
        &self.geometry_hash
    }

    /// Steering vector for an arbitrary (off-grid) elevation.
    pub fn steering(&self, elevation: f64) -> Vec<Complex64> {
        self.wavenumbers
            .iter()
            .map(|&k| Complex64::from_polar(1.0, -k * elevation))
            .collect()
    }

    /// `R x` for a complex vector.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|n| {
                self.row(n)
                    .iter()
                    .zip(x)
                    .fold(Complex64::new(0.0, 0.0), |acc, (r, v)| acc + r * v)
            })
            .collect()
    }

    /// `R x` for a real vector.
    pub fn apply_real(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|n| {
                self.row(n)
                    .iter()
                    .zip(x)
                    .fold(Complex64::new(0.0, 0.0), |acc, (r, &v)| acc + r * v)
            })
            .collect()
    }

    /// `R^H y`.
    pub fn adjoint_apply(&self, y: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (n, yn) in y.iter().enumerate() {
            for (o, r) in out.iter_mut().zip(self.row(n)) {
                *o += r.conj() * yn;
            }
        }
        out
    }

    /// Gram matrix `R^H R` (L x L, row-major).
    pub fn gram(&self) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.cols * self.cols];
        for n in 0..self.rows {
            let row = self.row(n);
            for i in 0..self.cols {
                let ri = row[i].conj();
                for j in 0..self.cols {
                    g[i * self.cols + j] += ri * row[j];
                }
            }
        }
        g
    }

    /// `R R^H` (N x N) as a nalgebra matrix.
    pub fn outer_gram(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_fn(self.rows, self.rows, |a, b| {
            self.row(a)
                .iter()
                .zip(self.row(b))
                .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y.conj())
        })
    }

    /// Largest eigenvalue of `R^H R` (equal to that of `R R^H`).
    pub fn spectral_norm_sq(&self) -> f64 {
        let eig = self.outer_gram().symmetric_eigenvalues();
        eig.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }
}

/// Builds the sensing matrix with the default size cap.
pub fn build_sensing_matrix(
    geometry: &AcquisitionGeometry,
    grid: &ElevationGrid,
) -> Result<SensingMatrix> {
    build_sensing_matrix_capped(geometry, grid, DEFAULT_MAX_MATRIX_ENTRIES)
}

pub fn build_sensing_matrix_capped(
    geometry: &AcquisitionGeometry,
    grid: &ElevationGrid,
    max_entries: usize,
) -> Result<SensingMatrix> {
    let rows = geometry.len();
    let cols = grid.len();
    if rows.checked_mul(cols).is_none_or(|n| n > max_entries) {
        return Err(Error::Sizing {
            rows,
            cols,
            cap: max_entries,
        });
    }
    let wavenumbers = geometry.baseline_wavenumbers();
    let mut entries = Vec::with_capacity(rows * cols);
    for &k in &wavenumbers {
        for &s in grid.samples() {
            entries.push(Complex64::from_polar(1.0, -k * s));
        }
    }
    Ok(SensingMatrix {
        rows,
        cols,
        entries,
        wavenumbers,
        elevations: grid.samples().to_vec(),
        geometry_hash: geometry_hash(geometry, grid),
    })
}
