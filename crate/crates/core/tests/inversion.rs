mod common;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tomosar::geometry::{build_sensing_matrix, ElevationGrid};
use tomosar::inversion::*;
use tomosar::simulator::{complex_gaussian, NoiseSpec, TruthScatterer};

#[test]
fn svd_estimate_matches_gradient_descent_oracle() {
    let grid = ElevationGrid::uniform(-20.0, 5.0, 24).unwrap();
    let r = build_sensing_matrix(&common::geometry(), &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<Complex64> = (0..5).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    let g = MeasurementVector::new(values, 0.3).unwrap();
    let prior = RegularizationSpec {
        prior_variance: 0.8,
        ..Default::default()
    };
    let est = svd_estimate(&g, &r, &prior).unwrap();

    // Oracle: plain gradient descent on ||Rx - g||^2 / s2 + ||x||^2 / tau.
    let a = r.to_dmatrix();
    let gv = DVector::from_column_slice(&g.values);
    let (s2, tau) = (g.noise_level, prior.prior_variance);
    let lip = 2.0 * (r.spectral_norm_sq() / s2 + 1.0 / tau);
    let mut x = DVector::<Complex64>::zeros(grid.len());
    for _ in 0..200_000 {
        let grad = a.adjoint() * (&a * &x - &gv) * Complex64::new(2.0 / s2, 0.0) + &x * Complex64::new(2.0 / tau, 0.0);
        x -= grad * Complex64::new(1.0 / lip, 0.0);
    }
    for (p, xo) in est.profile.iter().zip(x.iter()) {
        assert!((p - xo.norm()).abs() < 1e-8, "{p} vs {}", xo.norm());
    }
}

#[test]
fn pure_noise_is_rejected_at_default_penalty() {
    let geometry = common::geometry();
    let grid = common::grid();
    let r = build_sensing_matrix(&geometry, &grid).unwrap();
    let cfg = SelectionConfig::default();
    let mut empty = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..5).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let g = MeasurementVector::new(values, 1.0).unwrap();
        if select_model(&g, &r, &grid, &cfg).unwrap().order() == 0 {
            empty += 1;
        }
    }
    println!("K=0 rate on pure noise: {}", empty as f64 / 1000.0);
    assert!(empty >= 950, "{empty}");
}

#[test]
fn layover_pixels_are_detected_as_two_scatterers() {
    let geometry = common::geometry();
    let grid = common::grid();
    let r = build_sensing_matrix(&geometry, &grid).unwrap();
    let rayleigh = geometry.rayleigh_resolution().unwrap();
    let (ground, roof) = (0.0, 1.5 * rayleigh);
    let truth = [
        TruthScatterer::distributed(ground, 1.0),
        TruthScatterer::distributed(roof, 1.5),
    ];
    let cfg = SelectionConfig::default();
    let mut detected = 0;
    let mut accurate = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let g = common::multilook(&truth, &geometry, &NoiseSpec::snr_db(6.0), 50, &mut rng);
        let set = select_model(&g, &r, &grid, &cfg).unwrap();
        if set.order() == 2 {
            detected += 1;
            let e = &set.scatterers;
            if (e[0].elevation - ground).abs() < rayleigh / 4.0 && (e[1].elevation - roof).abs() < rayleigh / 4.0 {
                accurate += 1;
            }
        }
    }
    println!("K=2 detection rate: {} (accurate {})", detected as f64 / 200.0, accurate);
    assert!(detected >= 180, "{detected}");
}

#[test]
fn noiseless_point_pairs_round_trip() {
    let geometry = common::geometry();
    let grid = common::grid();
    let r = build_sensing_matrix(&geometry, &grid).unwrap();
    let rayleigh = geometry.rayleigh_resolution().unwrap();
    let cfg = SelectionConfig::default();
    for (s1, sep) in [(-10.0, 1.0), (3.3, 1.4), (20.0, 2.2)] {
        let s2 = s1 + sep * rayleigh;
        let mut values = r.steering(s1);
        for (v, w) in values.iter_mut().zip(r.steering(s2)) {
            *v += w * 0.8;
        }
        let g = MeasurementVector::new(values, 0.0).unwrap();
        let set = select_model(&g, &r, &grid, &cfg).unwrap();
        assert_eq!(set.order(), 2, "{s1} {sep}");
        assert!((set.scatterers[0].elevation - s1).abs() < grid.spacing());
        assert!((set.scatterers[1].elevation - s2).abs() < grid.spacing());
    }
}

#[test]
fn wrong_single_master_model_fails_the_round_trip() {
    // One coherent point scatterer, no averaging: the multi-master model
    // recovers it, treating master positions as baselines does not.
    let geometry = common::geometry();
    let grid = common::grid();
    let r = build_sensing_matrix(&geometry, &grid).unwrap();
    let wrong = geometry.as_single_master().unwrap();
    let r_wrong = build_sensing_matrix(&wrong, &grid).unwrap();
    let cfg = SelectionConfig::default();
    let mut wrong_hits = 0;
    for (i, s0) in [-14.0, 7.5, 33.0, 58.0, 90.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let truth = [TruthScatterer::point(s0, 1.0, None)];
        let single = common::multilook(&truth, &geometry, &NoiseSpec::noiseless(), 1, &mut rng);
        let g = MeasurementVector::new(single.values, 0.0).unwrap();
        let set = select_model(&g, &r, &grid, &cfg).unwrap();
        assert_eq!(set.order(), 1);
        assert!((set.scatterers[0].elevation - s0).abs() < grid.spacing());
        let bad = select_model(&g, &r_wrong, &grid, &cfg).unwrap();
        if bad.order() == 1 && (bad.scatterers[0].elevation - s0).abs() < grid.spacing() {
            wrong_hits += 1;
        }
    }
    assert_eq!(wrong_hits, 0);
}
