//! Synthetic urban scenes and bistatic stack simulation.
//!
//! Every acquisition yields a master image sampled at `b_n` and a slave image
//! sampled at `b_n + db_n`. Distributed scatterers draw a fresh circular
//! Gaussian reflectivity for every acquisition pair (shared by master and
//! slave of that pair); point scatterers keep one deterministic reflectivity
//! for the whole stack. Each pixel owns an independent ChaCha stream derived
//! from `(seed, pixel index)`, so the output does not depend on scheduling.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AcquisitionGeometry;
use crate::raster::Raster;
use crate::stack::{InterferogramStack, PixelSpacing, StackLayer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScattererKind {
    /// Speckled scatterer, new reflectivity draw per acquisition pair.
    Distributed,
    /// Coherent scatterer. `phase = None` draws the phase once from the
    /// pixel stream.
    Point { phase: Option<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthScatterer {
    pub elevation: f64,
    pub power: f64,
    pub kind: ScattererKind,
}

impl TruthScatterer {
    pub fn distributed(elevation: f64, power: f64) -> Self {
        Self {
            elevation,
            power,
            kind: ScattererKind::Distributed,
        }
    }

    pub fn point(elevation: f64, power: f64, phase: Option<f64>) -> Self {
        Self {
            elevation,
            power,
            kind: ScattererKind::Point { phase },
        }
    }
}

/// A scatterer with a realized complex reflectivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reflector {
    pub elevation: f64,
    pub reflectivity: Complex64,
}

/// Elevation spectrum `Gamma(k) = sum_i a_i exp(-j k s_i)` sampled at the
/// wavenumber of a cross-range position.
pub fn sample_spectrum(
    reflectors: &[Reflector],
    position: f64,
    geometry: &AcquisitionGeometry,
) -> Complex64 {
    let k = geometry.elevation_wavenumber(position);
    reflectors
        .iter()
        .map(|r| r.reflectivity * Complex64::from_polar(1.0, -k * r.elevation))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingTruth {
    pub id: u32,
    pub height: f64,
    pub roof_elevation: f64,
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug)]
pub struct Scene {
    scatterers: Raster<Vec<TruthScatterer>>,
    footprints: Option<Raster<u32>>,
    buildings: Vec<BuildingTruth>,
    elevation_bounds: (f64, f64),
}

impl Scene {
    pub fn new(
        scatterers: Raster<Vec<TruthScatterer>>,
        footprints: Option<Raster<u32>>,
        buildings: Vec<BuildingTruth>,
        elevation_bounds: (f64, f64),
    ) -> Result<Self> {
        let scene = Self {
            scatterers,
            footprints,
            buildings,
            elevation_bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Scene where every pixel holds the same scatterers.
    pub fn homogeneous(
        width: usize,
        height: usize,
        scatterers: Vec<TruthScatterer>,
        elevation_bounds: (f64, f64),
    ) -> Result<Self> {
        Self::new(
            Raster::filled(width, height, scatterers),
            None,
            Vec::new(),
            elevation_bounds,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.scatterers.is_empty() {
            return Err(Error::Scene("scene has no pixels".into()));
        }
        for s in self.scatterers.data().iter().flatten() {
            if !(s.power >= 0.0 && s.power.is_finite()) {
                return Err(Error::Scene(format!("invalid scatterer power {}", s.power)));
            }
            if !s.elevation.is_finite() {
                return Err(Error::Scene("non-finite elevation".into()));
            }
        }
        if let Some(fp) = &self.footprints {
            if !fp.same_shape(&self.scatterers) {
                return Err(Error::Scene("footprint raster does not match scene size".into()));
            }
            check_connected(fp)?;
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.scatterers.width()
    }

    pub fn height(&self) -> usize {
        self.scatterers.height()
    }

    pub fn scatterers(&self) -> &Raster<Vec<TruthScatterer>> {
        &self.scatterers
    }

    pub fn footprints(&self) -> Option<&Raster<u32>> {
        self.footprints.as_ref()
    }

    pub fn buildings(&self) -> &[BuildingTruth] {
        &self.buildings
    }

    pub fn elevation_bounds(&self) -> (f64, f64) {
        self.elevation_bounds
    }

    pub fn mean_power(&self) -> f64 {
        let total: f64 = self
            .scatterers
            .data()
            .iter()
            .map(|v| v.iter().map(|s| s.power).sum::<f64>())
            .sum();
        total / self.scatterers.len() as f64
    }
}

/// Each nonzero footprint id must form a single 4-connected component.
fn check_connected(labels: &Raster<u32>) -> Result<()> {
    let (w, h) = (labels.width(), labels.height());
    let mut seen = vec![false; w * h];
    let mut components: BTreeMap<u32, usize> = BTreeMap::new();
    for start in 0..w * h {
        let id = labels.data()[start];
        if id == 0 || seen[start] {
            continue;
        }
        *components.entry(id).or_default() += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            let mut push = |rr: usize, cc: usize| {
                let q = rr * w + cc;
                if !seen[q] && labels.data()[q] == id {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < h {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < w {
                push(r, c + 1);
            }
        }
    }
    match components.iter().find(|(_, &n)| n > 1) {
        Some((id, n)) => Err(Error::Scene(format!(
            "footprint {id} splits into {n} components"
        ))),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingSpec {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
    pub height: f64,
}

/// Random building placement parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBuildings {
    pub count: usize,
    pub min_height: f64,
    pub max_height: f64,
    pub min_rows: usize,
    pub max_rows: usize,
    pub min_cols: usize,
    pub max_cols: usize,
    /// Minimum number of ground pixels between two footprints.
    pub gap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub buildings: Vec<BuildingSpec>,
    #[serde(default)]
    pub random_buildings: Option<RandomBuildings>,
    /// Width in pixels of the K = 2 band along the near-range facade
    /// (the footprint side with the smallest column index).
    #[serde(default = "default_layover_width")]
    pub layover_width: usize,
    #[serde(default = "default_ground_power")]
    pub ground_power: f64,
    #[serde(default = "default_roof_power")]
    pub roof_power: f64,
    #[serde(default = "default_incidence")]
    pub incidence_angle_deg: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

fn default_layover_width() -> usize {
    3
}
fn default_ground_power() -> f64 {
    1.0
}
fn default_roof_power() -> f64 {
    1.5
}
fn default_incidence() -> f64 {
    40.0
}

impl SceneSpec {
    pub fn empty(width: usize, height: usize, elevation_min: f64, elevation_max: f64) -> Self {
        Self {
            width,
            height,
            buildings: Vec::new(),
            random_buildings: None,
            layover_width: default_layover_width(),
            ground_power: default_ground_power(),
            roof_power: default_roof_power(),
            incidence_angle_deg: default_incidence(),
            elevation_min,
            elevation_max,
        }
    }
}

/// Elevation of a point `height` meters above the ground reference.
pub fn height_to_elevation(height: f64, incidence_angle_deg: f64) -> f64 {
    height / incidence_angle_deg.to_radians().sin()
}

/// Height of a point at `elevation` above the ground reference.
pub fn elevation_to_height(elevation: f64, incidence_angle_deg: f64) -> f64 {
    elevation * incidence_angle_deg.to_radians().sin()
}

fn overlaps(a: &BuildingSpec, b: &BuildingSpec, gap: usize) -> bool {
    let a_r1 = a.row + a.rows + gap;
    let a_c1 = a.col + a.cols + gap;
    let b_r1 = b.row + b.rows + gap;
    let b_c1 = b.col + b.cols + gap;
    a.row < b_r1 && b.row < a_r1 && a.col < b_c1 && b.col < a_c1
}

/// Ground plane plus rectangular buildings. Interior roof pixels carry one
/// roof scatterer, the near-range facade band carries ground + roof
/// (layover), all other pixels carry ground at elevation 0.
pub fn make_urban_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::SceneSpec("scene dimensions must be positive".into()));
    }
    if !(spec.incidence_angle_deg > 0.0 && spec.incidence_angle_deg < 90.0) {
        return Err(Error::SceneSpec("incidence angle must be in (0, 90) degrees".into()));
    }
    if spec.ground_power < 0.0 || spec.roof_power < 0.0 {
        return Err(Error::SceneSpec("powers must be nonnegative".into()));
    }
    let mut placed: Vec<BuildingSpec> = Vec::new();
    for b in &spec.buildings {
        if b.rows == 0 || b.cols == 0 || b.row + b.rows > spec.height || b.col + b.cols > spec.width
        {
            return Err(Error::SceneSpec(format!("building {b:?} is outside the scene")));
        }
        if !(b.height > 0.0) {
            return Err(Error::SceneSpec(format!("building height must be > 0, got {}", b.height)));
        }
        if placed.iter().any(|p| overlaps(p, b, 0)) {
            return Err(Error::SceneSpec(format!("building {b:?} overlaps another footprint")));
        }
        placed.push(*b);
    }
    if let Some(rnd) = &spec.random_buildings {
        place_random(spec, rnd, seed, &mut placed)?;
    }

    let mut labels = Raster::filled(spec.width, spec.height, 0u32);
    let ground = TruthScatterer::distributed(0.0, spec.ground_power);
    let mut scatterers = Raster::filled(spec.width, spec.height, vec![ground]);
    let mut truth = Vec::with_capacity(placed.len());
    for (i, b) in placed.iter().enumerate() {
        let id = i as u32 + 1;
        let roof_elevation = height_to_elevation(b.height, spec.incidence_angle_deg);
        if roof_elevation > spec.elevation_max {
            return Err(Error::SceneSpec(format!(
                "building of {} m maps to elevation {roof_elevation:.2} m beyond {}",
                b.height, spec.elevation_max
            )));
        }
        let roof = TruthScatterer::distributed(roof_elevation, spec.roof_power);
        for r in b.row..b.row + b.rows {
            for c in b.col..b.col + b.cols {
                *labels.get_mut(r, c) = id;
                *scatterers.get_mut(r, c) = if c < b.col + spec.layover_width {
                    vec![ground, roof]
                } else {
                    vec![roof]
                };
            }
        }
        truth.push(BuildingTruth {
            id,
            height: b.height,
            roof_elevation,
            row: b.row,
            col: b.col,
            rows: b.rows,
            cols: b.cols,
        });
    }
    Scene::new(
        scatterers,
        Some(labels),
        truth,
        (spec.elevation_min, spec.elevation_max),
    )
}

fn place_random(
    spec: &SceneSpec,
    rnd: &RandomBuildings,
    seed: u64,
    placed: &mut Vec<BuildingSpec>,
) -> Result<()> {
    if rnd.min_rows == 0 || rnd.min_cols == 0 || rnd.min_rows > rnd.max_rows || rnd.min_cols > rnd.max_cols {
        return Err(Error::SceneSpec("invalid random building size range".into()));
    }
    if !(rnd.min_height > 0.0 && rnd.min_height <= rnd.max_height) {
        return Err(Error::SceneSpec("invalid random building height range".into()));
    }
    // A separate stream from the speckle streams used by the stack simulator.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let margin = rnd.gap;
    let mut attempts = 0usize;
    let target = placed.len() + rnd.count;
    while placed.len() < target {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::SceneSpec(format!(
                "could only place {} of {} buildings",
                placed.len(),
                target
            )));
        }
        let rows = rng.random_range(rnd.min_rows..=rnd.max_rows);
        let cols = rng.random_range(rnd.min_cols..=rnd.max_cols);
        if rows + 2 * margin > spec.height || cols + 2 * margin > spec.width {
            continue;
        }
        let row = rng.random_range(margin..=spec.height - rows - margin);
        let col = rng.random_range(margin..=spec.width - cols - margin);
        let height = rng.random_range(rnd.min_height..=rnd.max_height);
        let b = BuildingSpec {
            row,
            col,
            rows,
            cols,
            height,
        };
        if placed.iter().any(|p| overlaps(p, &b, rnd.gap)) {
            continue;
        }
        placed.push(b);
    }
    Ok(())
}

/// Additive noise configuration. `snr_db = None` simulates noise-free data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub snr_db: Option<f64>,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { snr_db: None }
    }

    pub fn snr_db(db: f64) -> Self {
        Self { snr_db: Some(db) }
    }

    /// Noise variance for a pixel of the given total signal power.
    pub fn noise_variance(&self, signal_power: f64) -> f64 {
        match self.snr_db {
            None => 0.0,
            Some(db) => signal_power / 10f64.powf(db / 10.0),
        }
    }
}

/// Single-look master and slave images of one acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImagePair {
    pub master: Raster<Complex32>,
    pub slave: Raster<Complex32>,
}

/// RNG stream for one pixel.
pub fn pixel_rng(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel_index);
    rng
}

/// Circular complex Gaussian sample with `E|z|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Simulates the master/slave samples of one pixel for every acquisition.
pub fn simulate_pixel<R: Rng + ?Sized>(
    scatterers: &[TruthScatterer],
    geometry: &AcquisitionGeometry,
    noise_variance: f64,
    rng: &mut R,
) -> Vec<(Complex64, Complex64)> {
    let coherent: Vec<Option<Complex64>> = scatterers
        .iter()
        .map(|s| match s.kind {
            ScattererKind::Point { phase } => {
                let phi = phase.unwrap_or_else(|| rng.random::<f64>() * 2.0 * PI);
                Some(Complex64::from_polar(s.power.sqrt(), phi))
            }
            ScattererKind::Distributed => None,
        })
        .collect();
    let mut reflectors = Vec::with_capacity(scatterers.len());
    geometry
        .acquisitions()
        .iter()
        .map(|acq| {
            reflectors.clear();
            for (s, c) in scatterers.iter().zip(&coherent) {
                let reflectivity = match c {
                    Some(a) => *a,
                    None => complex_gaussian(rng, s.power),
                };
                reflectors.push(Reflector {
                    elevation: s.elevation,
                    reflectivity,
                });
            }
            let mut master = sample_spectrum(&reflectors, acq.master_position, geometry);
            let mut slave = sample_spectrum(&reflectors, acq.slave_position(), geometry);
            if noise_variance > 0.0 {
                master += complex_gaussian(rng, noise_variance);
                slave += complex_gaussian(rng, noise_variance);
            }
            (master, slave)
        })
        .collect()
}

/// Simulates all master/slave pairs and the single-look interferogram stack.
pub fn simulate_stack(
    scene: &Scene,
    geometry: &AcquisitionGeometry,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(Vec<ComplexImagePair>, InterferogramStack)> {
    simulate_stack_with_spacing(scene, geometry, noise, seed, PixelSpacing::default())
}

pub fn simulate_stack_with_spacing(
    scene: &Scene,
    geometry: &AcquisitionGeometry,
    noise: &NoiseSpec,
    seed: u64,
    pixel_spacing: PixelSpacing,
) -> Result<(Vec<ComplexImagePair>, InterferogramStack)> {
    let (lo, hi) = scene.elevation_bounds();
    if let Some(s) = scene
        .scatterers()
        .data()
        .iter()
        .flatten()
        .find(|s| s.elevation < lo || s.elevation > hi)
    {
        return Err(Error::Scene(format!(
            "scatterer elevation {} outside [{lo}, {hi}]",
            s.elevation
        )));
    }
    let (w, h) = (scene.width(), scene.height());
    let n_acq = geometry.len();
    let fallback_power = match scene.mean_power() {
        p if p > 0.0 => p,
        _ => 1.0,
    };

    let pixels: Vec<Vec<(Complex64, Complex64)>> = scene
        .scatterers()
        .data()
        .par_iter()
        .enumerate()
        .map(|(idx, scat)| {
            let power: f64 = scat.iter().map(|s| s.power).sum();
            let reference = if power > 0.0 { power } else { fallback_power };
            let mut rng = pixel_rng(seed, idx as u64);
            simulate_pixel(scat, geometry, noise.noise_variance(reference), &mut rng)
        })
        .collect();

    let mut pairs: Vec<ComplexImagePair> = (0..n_acq)
        .map(|_| ComplexImagePair {
            master: Raster::filled(w, h, Complex32::new(0.0, 0.0)),
            slave: Raster::filled(w, h, Complex32::new(0.0, 0.0)),
        })
        .collect();
    let mut layers: Vec<StackLayer> = (0..n_acq).map(|_| StackLayer::zeros(w, h)).collect();
    for (idx, samples) in pixels.iter().enumerate() {
        for (n, &(m, s)) in samples.iter().enumerate() {
            pairs[n].master.data_mut()[idx] = to_c32(m);
            pairs[n].slave.data_mut()[idx] = to_c32(s);
            let layer = &mut layers[n];
            layer.interferogram.data_mut()[idx] = to_c32(s * m.conj());
            layer.master_intensity.data_mut()[idx] = m.norm_sqr() as f32;
            layer.slave_intensity.data_mut()[idx] = s.norm_sqr() as f32;
        }
    }
    let stack = InterferogramStack::new(geometry.clone(), pixel_spacing, layers)?;
    Ok((pairs, stack))
}

#[inline]
fn to_c32(z: Complex64) -> Complex32 {
    Complex32::new(z.re as f32, z.im as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geometry() -> AcquisitionGeometry {
        AcquisitionGeometry::from_arrays(
            0.031,
            600_000.0,
            &[-420.0, 130.0, -60.0, 310.0, 540.0],
            &[100.0, 150.0, 195.0, 240.0, 345.0],
        )
        .unwrap()
    }

    #[test]
    fn single_point_has_constant_magnitude() {
        let g = geometry();
        let r = [Reflector {
            elevation: 23.0,
            reflectivity: Complex64::from_polar(1.0, 0.4),
        }];
        for b in [-500.0, -3.0, 0.0, 77.0, 1200.0] {
            assert_relative_eq!(sample_spectrum(&r, b, &g).norm(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn symmetric_pair_is_cosine_with_null() {
        let g = geometry();
        let s0 = 12.5;
        let pair = [
            Reflector {
                elevation: -s0,
                reflectivity: Complex64::new(1.0, 0.0),
            },
            Reflector {
                elevation: s0,
                reflectivity: Complex64::new(1.0, 0.0),
            },
        ];
        for b in [-300.0, -10.0, 0.0, 55.0, 410.0] {
            let k = g.elevation_wavenumber(b);
            let v = sample_spectrum(&pair, b, &g);
            assert!((v - Complex64::new(2.0 * (s0 * k).cos(), 0.0)).norm() < 1e-13);
        }
        let null = g.wavelength() * g.slant_range() / (8.0 * s0);
        assert!(sample_spectrum(&pair, null, &g).norm() < 1e-12);
    }

    #[test]
    fn zero_noise_point_at_origin_has_zero_phase() {
        let g = geometry();
        let scene =
            Scene::homogeneous(4, 3, vec![TruthScatterer::point(0.0, 2.0, None)], (-10.0, 10.0))
                .unwrap();
        let (_, stack) = simulate_stack(&scene, &g, &NoiseSpec::noiseless(), 5).unwrap();
        for layer in stack.layers() {
            for z in layer.interferogram.data() {
                assert!(z.im.abs() <= 1e-6 * z.re.abs());
                assert!(z.re > 0.0);
            }
        }
    }

    #[test]
    fn zero_noise_point_phase_is_minus_dk_s0() {
        let g = geometry();
        let s0 = 17.0;
        let scene =
            Scene::homogeneous(2, 2, vec![TruthScatterer::point(s0, 1.0, None)], (-50.0, 50.0))
                .unwrap();
        let (_, stack) = simulate_stack(&scene, &g, &NoiseSpec::noiseless(), 9).unwrap();
        for (layer, dk) in stack.layers().iter().zip(g.baseline_wavenumbers()) {
            let z = layer.interferogram.get(1, 1);
            let measured = Complex64::new(z.re as f64, z.im as f64);
            let expected = Complex64::from_polar(1.0, -dk * s0);
            assert!((measured / measured.norm() - expected).norm() < 1e-6);
        }
    }

    #[test]
    fn single_look_cauchy_schwarz_equality() {
        let g = geometry();
        let scene = Scene::homogeneous(
            8,
            8,
            vec![
                TruthScatterer::distributed(0.0, 1.0),
                TruthScatterer::distributed(30.0, 0.5),
            ],
            (-50.0, 50.0),
        )
        .unwrap();
        let (_, stack) = simulate_stack(&scene, &g, &NoiseSpec::snr_db(3.0), 1).unwrap();
        for layer in stack.layers() {
            for ((z, &i1), &i2) in layer
                .interferogram
                .data()
                .iter()
                .zip(layer.master_intensity.data())
                .zip(layer.slave_intensity.data())
            {
                let mag = (z.re as f64).hypot(z.im as f64);
                let bound = (i1 as f64 * i2 as f64).sqrt();
                // Equal up to f32 storage rounding.
                assert_relative_eq!(mag, bound, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let g = geometry();
        let spec = SceneSpec {
            buildings: vec![BuildingSpec {
                row: 2,
                col: 3,
                rows: 5,
                cols: 6,
                height: 20.0,
            }],
            ..SceneSpec::empty(16, 12, -30.0, 120.0)
        };
        let scene = make_urban_scene(&spec, 3).unwrap();
        let a = simulate_stack(&scene, &g, &NoiseSpec::snr_db(3.0), 11).unwrap();
        let b = simulate_stack(&scene, &g, &NoiseSpec::snr_db(3.0), 11).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        let c = simulate_stack(&scene, &g, &NoiseSpec::snr_db(3.0), 12).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn empty_spec_is_all_ground() {
        let scene = make_urban_scene(&SceneSpec::empty(7, 5, -30.0, 120.0), 0).unwrap();
        for px in scene.scatterers().data() {
            assert_eq!(px.len(), 1);
            assert_eq!(px[0].elevation, 0.0);
        }
        assert!(scene.footprints().unwrap().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn one_building_component_and_layover_band() {
        let spec = SceneSpec {
            buildings: vec![BuildingSpec {
                row: 4,
                col: 6,
                rows: 10,
                cols: 10,
                height: 20.0,
            }],
            layover_width: 3,
            ..SceneSpec::empty(30, 30, -30.0, 120.0)
        };
        let scene = make_urban_scene(&spec, 0).unwrap();
        let labels = scene.footprints().unwrap();
        assert_eq!(labels.data().iter().filter(|&&l| l == 1).count(), 100);
        let k2 = scene.scatterers().data().iter().filter(|v| v.len() == 2).count();
        assert_eq!(k2, 3 * 10);
        // Band sits on the near-range (lowest column) side.
        assert_eq!(scene.scatterers().get(4, 6).len(), 2);
        assert_eq!(scene.scatterers().get(4, 8).len(), 2);
        assert_eq!(scene.scatterers().get(4, 9).len(), 1);
        let roof = scene.scatterers().get(8, 12)[0].elevation;
        assert_relative_eq!(roof * 40f64.to_radians().sin(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn overlapping_buildings_are_rejected() {
        let b = BuildingSpec {
            row: 0,
            col: 0,
            rows: 5,
            cols: 5,
            height: 10.0,
        };
        let spec = SceneSpec {
            buildings: vec![b, BuildingSpec { row: 4, col: 4, ..b }],
            ..SceneSpec::empty(20, 20, -30.0, 120.0)
        };
        assert!(matches!(make_urban_scene(&spec, 0), Err(Error::SceneSpec(_))));
    }

    #[test]
    fn random_buildings_respect_gap_and_count() {
        let spec = SceneSpec {
            random_buildings: Some(RandomBuildings {
                count: 12,
                min_height: 5.0,
                max_height: 60.0,
                min_rows: 4,
                max_rows: 8,
                min_cols: 6,
                max_cols: 14,
                gap: 4,
            }),
            ..SceneSpec::empty(96, 96, -30.0, 120.0)
        };
        let scene = make_urban_scene(&spec, 42).unwrap();
        assert_eq!(scene.buildings().len(), 12);
        let again = make_urban_scene(&spec, 42).unwrap();
        assert_eq!(scene.buildings(), again.buildings());
        for b in scene.buildings() {
            assert!((5.0..=60.0).contains(&b.height));
        }
    }

    #[test]
    fn disconnected_footprint_is_rejected() {
        let mut labels = Raster::filled(5, 5, 0u32);
        *labels.get_mut(0, 0) = 1;
        *labels.get_mut(4, 4) = 1;
        let scat = Raster::filled(5, 5, vec![TruthScatterer::distributed(0.0, 1.0)]);
        assert!(Scene::new(scat, Some(labels), vec![], (-1.0, 1.0)).is_err());
    }

    #[test]
    fn out_of_range_elevation_is_a_scene_error() {
        let scene = Scene::homogeneous(2, 2, vec![TruthScatterer::distributed(200.0, 1.0)], (-30.0, 120.0))
            .unwrap();
        let err = simulate_stack(&scene, &geometry(), &NoiseSpec::noiseless(), 0).unwrap_err();
        assert!(matches!(err, Error::Scene(_)));
    }

    #[test]
    fn pixel_streams_do_not_depend_on_scheduling() {
        // The same pixel simulated standalone matches its value in the stack.
        let g = geometry();
        let scat = vec![TruthScatterer::distributed(10.0, 1.0)];
        let scene = Scene::homogeneous(5, 4, scat.clone(), (-30.0, 120.0)).unwrap();
        let (pairs, _) = simulate_stack(&scene, &g, &NoiseSpec::snr_db(0.0), 77).unwrap();
        let idx = 13u64;
        let mut rng = pixel_rng(77, idx);
        let alone = simulate_pixel(&scat, &g, NoiseSpec::snr_db(0.0).noise_variance(1.0), &mut rng);
        for (n, (m, _)) in alone.iter().enumerate() {
            let stored = pairs[n].master.data()[idx as usize];
            assert_eq!(stored, to_c32(*m));
        }
    }
}
