use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomosar::heightfusion::{HeightFlag, ObjectHeight};
use tomosar::validation::{
    compare_heights, coregister, ComparisonConfig, Point3, Provenance, ReferenceModel, RegistrationConfig,
};
use tomosar::Error;

/// Rooftop-like cloud: ground points plus a few raised blocks.
fn cloud(seed: u64, n: usize) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..80.0);
            let y: f64 = rng.random_range(0.0..80.0);
            let block = ((x / 20.0) as usize + 2 * (y / 20.0) as usize) % 3;
            Point3::new(x, y, block as f64 * 9.0 + rng.random_range(-0.1..0.1))
        })
        .collect()
}

fn shift_error(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn identical_sets_register_at_zero() {
    let p = cloud(1, 1500);
    let reg = coregister(&p, &p, &RegistrationConfig::default()).unwrap();
    assert!(shift_error(reg.shift, [0.0; 3]) < 1e-9);
}

#[test]
fn recovers_a_synthetic_shift() {
    let p = cloud(2, 1500);
    for truth in [[3.0, -2.0, 1.0], [-4.3, 2.6, -0.7]] {
        let reference: Vec<Point3> = p.iter().map(|q| q.shifted(truth)).collect();
        let reg = coregister(&p, &reference, &RegistrationConfig::default()).unwrap();
        assert!(shift_error(reg.shift, truth) < 0.1, "{:?} vs {truth:?}", reg.shift);
    }
}

#[test]
fn outliers_barely_move_the_shift() {
    let p = cloud(3, 1500);
    let truth = [3.0, -2.0, 1.0];
    let reference: Vec<Point3> = p.iter().map(|q| q.shifted(truth)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut noisy = p.clone();
    for _ in 0..150 {
        noisy.push(Point3::new(
            rng.random_range(0.0..80.0),
            rng.random_range(0.0..80.0),
            rng.random_range(-30.0..60.0),
        ));
    }
    let reg = coregister(&noisy, &reference, &RegistrationConfig::default()).unwrap();
    assert!(shift_error(reg.shift, truth) < 0.3);
}

#[test]
fn registration_is_idempotent() {
    let p = cloud(5, 1200);
    let reference: Vec<Point3> = p.iter().map(|q| q.shifted([1.7, 0.4, -2.2])).collect();
    let cfg = RegistrationConfig::default();
    let reg = coregister(&p, &reference, &cfg).unwrap();
    let moved: Vec<Point3> = p.iter().map(|q| q.shifted(reg.shift)).collect();
    let again = coregister(&moved, &reference, &cfg).unwrap();
    assert!(shift_error(again.shift, [0.0; 3]) < 1e-3);
}

#[test]
fn disjoint_sets_fail_to_register() {
    let p = cloud(6, 500);
    let far: Vec<Point3> = p.iter().map(|q| q.shifted([500.0, 0.0, 0.0])).collect();
    assert!(matches!(
        coregister(&p, &far, &RegistrationConfig::default()),
        Err(Error::Registration(_))
    ));
    assert!(matches!(
        coregister(&p[..5], &p, &RegistrationConfig::default()),
        Err(Error::Registration(_))
    ));
}

fn objects(heights: &[f64]) -> Vec<ObjectHeight> {
    heights
        .iter()
        .enumerate()
        .map(|(i, &h)| ObjectHeight {
            id: i as u32 + 1,
            height: Some(h),
            count: 1,
            robust_std: 0.0,
            flag: HeightFlag::Ok,
        })
        .collect()
}

fn model(heights: &[f64]) -> ReferenceModel {
    ReferenceModel::new(
        heights.iter().enumerate().map(|(i, &h)| (i as u32 + 1, h)).collect(),
        None,
        Provenance::SimulatorTruth,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn report_totals_are_consistent(
        pairs in proptest::collection::vec((0.0f64..60.0, -25.0f64..25.0), 1..80),
    ) {
        let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let est: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let rep = compare_heights(&objects(&est), &model(&truth), &ComparisonConfig::default()).unwrap();
        prop_assert_eq!(rep.retained + rep.dropped, rep.compared);
        prop_assert_eq!(rep.histogram.iter().map(|b| b.count).sum::<usize>(), rep.retained);
        prop_assert!((0.0..=1.0).contains(&rep.fraction_within_1m));
        prop_assert!(rep.fraction_within_1m <= rep.fraction_within_2m);
    }

    #[test]
    fn scaling_with_zero_differences_is_invariant(h in proptest::collection::vec(1.0f64..60.0, 1..40)) {
        let a = compare_heights(&objects(&h), &model(&h), &ComparisonConfig::default()).unwrap();
        let doubled: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        let b = compare_heights(&objects(&doubled), &model(&doubled), &ComparisonConfig::default()).unwrap();
        prop_assert_eq!(a.fraction_within_1m, b.fraction_within_1m);
        prop_assert_eq!(a.std, b.std);
        prop_assert_eq!(a.histogram, b.histogram);
    }
}
