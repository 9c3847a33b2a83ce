#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use tomosar::geometry::{AcquisitionGeometry, ElevationGrid};
use tomosar::inversion::MeasurementVector;
use tomosar::simulator::{simulate_pixel, NoiseSpec, TruthScatterer};

pub const WAVELENGTH: f64 = 0.031;
pub const SLANT_RANGE: f64 = 600_000.0;
pub const MASTERS: [f64; 5] = [-420.0, 130.0, -60.0, 310.0, 540.0];
pub const BASELINES: [f64; 5] = [100.0, 150.0, 195.0, 240.0, 345.0];

pub fn geometry() -> AcquisitionGeometry {
    AcquisitionGeometry::from_arrays(WAVELENGTH, SLANT_RANGE, &MASTERS, &BASELINES).unwrap()
}

pub fn grid() -> ElevationGrid {
    ElevationGrid::for_geometry(&geometry(), -30.0, 120.0).unwrap()
}

/// Boxcar average of `looks` independent single-look samples of one pixel,
/// with the noise level a filter with that ENL would report.
pub fn multilook<R: Rng>(
    scatterers: &[TruthScatterer],
    geometry: &AcquisitionGeometry,
    noise: &NoiseSpec,
    looks: usize,
    rng: &mut R,
) -> MeasurementVector {
    let n = geometry.len();
    let total: f64 = scatterers.iter().map(|s| s.power).sum();
    let nv = noise.noise_variance(total);
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut i1 = vec![0.0; n];
    let mut i2 = vec![0.0; n];
    for _ in 0..looks {
        for (k, (m, s)) in simulate_pixel(scatterers, geometry, nv, rng).into_iter().enumerate() {
            z[k] += s * m.conj();
            i1[k] += m.norm_sqr();
            i2[k] += s.norm_sqr();
        }
    }
    let l = looks as f64;
    let values: Vec<Complex64> = z.iter().map(|v| v / l).collect();
    let power = i1.iter().zip(&i2).map(|(a, b)| a * b / (l * l)).sum::<f64>() / n as f64;
    MeasurementVector::new(values, power / l).unwrap()
}

pub struct ContaminationOutcome {
    pub clean_huber: f64,
    pub dirty_huber: f64,
    pub clean_mean: f64,
    pub dirty_mean: f64,
    /// Grid-search minimizer of the Huber objective over the contaminated
    /// roof elevations.
    pub oracle_roof: f64,
    pub fused_roof: f64,
}

/// One 12 x 12 building on flat ground with 1 m elevation noise; 20% of the
/// roof pixels are pushed 30 m (in height) upward.
pub fn contamination_experiment(seed: u64) -> ContaminationOutcome {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use tomosar::heightfusion::{fuse_objects, robust_fuse_values, FusionConfig, LossKind};
    use tomosar::inversion::{Method, Scatterer, ScattererSet};
    use tomosar::raster::Raster;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let spacing = grid().spacing();
    let config = FusionConfig::default();
    let sin_inc = config.incidence_angle_deg.to_radians().sin();
    let roof = 20.0 / sin_inc;
    let outlier = 30.0 / sin_inc;
    let (w, h) = (40, 40);
    let inside = |r: usize, c: usize| (14..26).contains(&r) && (14..26).contains(&c);
    let footprints = Raster::from_fn(w, h, |r, c| u32::from(inside(r, c)));
    let mut clean = Vec::new();
    let mut dirty = Vec::new();
    let mut roof_values = Vec::new();
    let mut k = 0usize;
    for r in 0..h {
        for c in 0..w {
            let e = if inside(r, c) { roof } else { 0.0 } + noise.sample(&mut rng);
            let bad = inside(r, c) && k % 5 == 0;
            if inside(r, c) {
                k += 1;
            }
            let d = if bad { e + outlier } else { e };
            if inside(r, c) {
                roof_values.push(d);
            }
            let one = |elevation: f64| ScattererSet {
                scatterers: vec![Scatterer { elevation, power: 1.0 }],
                score: 1.0,
                method: Method::Nls,
                converged: true,
            };
            clean.push(one(e));
            dirty.push(one(d));
        }
    }
    let clean = Raster::from_vec(w, h, clean).unwrap();
    let dirty = Raster::from_vec(w, h, dirty).unwrap();
    let mean_cfg = FusionConfig {
        loss: LossKind::Squared,
        ..config.clone()
    };
    let height = |s: &Raster<ScattererSet>, cfg: &FusionConfig| {
        fuse_objects(s, &footprints, cfg, spacing).unwrap()[0].height.unwrap()
    };
    let loss = config.loss_spec(spacing);
    let fused_roof = robust_fuse_values(&roof_values, &loss).unwrap().estimate;
    let oracle_roof = (0..=100_000)
        .map(|i| roof - 10.0 + i as f64 * 1e-3 * 0.5)
        .min_by(|a, b| loss.objective(&roof_values, *a).total_cmp(&loss.objective(&roof_values, *b)))
        .unwrap();
    ContaminationOutcome {
        clean_huber: height(&clean, &config),
        dirty_huber: height(&dirty, &config),
        clean_mean: height(&clean, &mean_cfg),
        dirty_mean: height(&dirty, &mean_cfg),
        oracle_roof,
        fused_roof,
    }
}
