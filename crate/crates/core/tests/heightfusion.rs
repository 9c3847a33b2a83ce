mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomosar::heightfusion::{robust_fuse_values, FusionConfig, LossKind, RobustLossSpec};

#[test]
fn contamination_shifts_huber_little_and_mean_a_lot() {
    for seed in 0..5 {
        let out = common::contamination_experiment(seed);
        assert!((out.dirty_huber - out.clean_huber).abs() < 1.0, "seed {seed}");
        assert!((out.dirty_mean - out.clean_mean).abs() >= 4.0, "seed {seed}");
        assert!((out.fused_roof - out.oracle_roof).abs() < 1e-3, "seed {seed}");
    }
}

#[test]
fn breakdown_up_to_a_quarter_contamination() {
    let spacing = common::grid().spacing();
    let loss = FusionConfig::default().loss_spec(spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..500 {
        let n = rng.random_range(8..80);
        let bad = rng.random_range(0..=n / 4);
        let clean: Vec<f64> = (0..n).map(|_| 12.0 + rng.random_range(-1.0..1.0)).collect();
        let clean_mean = clean.iter().sum::<f64>() / n as f64;
        let mut values = clean.clone();
        for v in values.iter_mut().take(bad) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            *v += sign * rng.random_range(20.0..500.0);
        }
        let fit = robust_fuse_values(&values, &loss).unwrap();
        assert!(
            (fit.estimate - clean_mean).abs() <= 3.0 * loss.scale,
            "trial {trial}: {} vs {clean_mean}",
            fit.estimate
        );
    }
}

#[test]
fn tukey_matches_grid_search_near_the_median() {
    let loss = RobustLossSpec::new(LossKind::Tukey, 3.0);
    let values = [4.0, 4.5, 5.2, 5.0, 4.8, 30.0, -12.0];
    let fit = robust_fuse_values(&values, &loss).unwrap();
    let best = (0..=20_000)
        .map(|i| i as f64 * 5e-4)
        .min_by(|a, b| loss.objective(&values, *a).total_cmp(&loss.objective(&values, *b)))
        .unwrap();
    assert!((fit.estimate - best).abs() < 1e-3);
}
