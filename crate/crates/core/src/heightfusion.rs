//! Robust per-object height estimation from per-pixel scatterer elevations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::ScattererSet;
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Huber,
    Tukey,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustLossSpec {
    pub kind: LossKind,
    pub scale: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl RobustLossSpec {
    pub fn new(kind: LossKind, scale: f64) -> Self {
        Self {
            kind,
            scale,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss scale must be > 0, got {}", self.scale)));
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("loss needs max_iterations >= 1 and tolerance > 0".into()));
        }
        Ok(())
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, LossKind::Tukey)
    }

    /// `rho(x)`.
    pub fn rho(&self, x: f64) -> f64 {
        let c = self.scale;
        let a = x.abs();
        match self.kind {
            LossKind::Squared => x * x,
            LossKind::Huber => {
                if a <= c {
                    0.5 * x * x
                } else {
                    c * a - 0.5 * c * c
                }
            }
            LossKind::Tukey => {
                let c2 = c * c / 6.0;
                if a <= c {
                    let u = 1.0 - (x / c).powi(2);
                    c2 * (1.0 - u * u * u)
                } else {
                    c2
                }
            }
        }
    }

    /// IRLS weight `w(x) = rho'(x) / x`.
    pub fn weight(&self, x: f64) -> f64 {
        let c = self.scale;
        let a = x.abs();
        match self.kind {
            LossKind::Squared => 2.0,
            LossKind::Huber => {
                if a <= c {
                    1.0
                } else {
                    c / a
                }
            }
            LossKind::Tukey => {
                if a <= c {
                    let u = 1.0 - (x / c).powi(2);
                    u * u
                } else {
                    0.0
                }
            }
        }
    }

    pub fn objective(&self, samples: &[f64], s: f64) -> f64 {
        samples.iter().map(|&x| self.rho(x - s)).sum()
    }
}

/// One elevation sample contributing to an object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightSample {
    pub row: usize,
    pub col: usize,
    pub elevation: f64,
    /// Final IRLS weight.
    pub weight: f64,
    pub order: usize,
}

impl HeightSample {
    pub fn new(row: usize, col: usize, elevation: f64, order: usize) -> Self {
        Self {
            row,
            col,
            elevation,
            weight: 1.0,
            order,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustFit {
    pub estimate: f64,
    pub count: usize,
    /// `1.4826 * median |x_i - estimate|`.
    pub robust_std: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Iteratively reweighted averaging `s <- sum w_i x_i / sum w_i`, started
/// at the median. Updates the sample weights in place.
pub fn robust_fuse(samples: &mut [HeightSample], loss: &RobustLossSpec) -> Result<RobustFit> {
    loss.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("robust fusion needs at least one sample".into()));
    }
    if samples.iter().any(|s| !s.elevation.is_finite()) {
        return Err(Error::InvalidArgument("non-finite elevation sample".into()));
    }
    let values: Vec<f64> = samples.iter().map(|s| s.elevation).collect();
    let start = median(&values);
    let mut s = start;
    let mut history = vec![loss.objective(&values, s)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < loss.max_iterations {
        iterations += 1;
        let (mut sw, mut swx) = (0.0, 0.0);
        for &x in &values {
            let w = loss.weight(x - s);
            sw += w;
            swx += w * x;
        }
        if sw <= 0.0 {
            s = start;
            history.push(loss.objective(&values, s));
            break;
        }
        let next = swx / sw;
        let step = (next - s).abs();
        s = next;
        let f = loss.objective(&values, s);
        if loss.is_convex() {
            let prev = *history.last().unwrap_or(&f);
            if f > prev + 1e-12 * prev.abs().max(1.0) {
                return Err(Error::Internal(format!(
                    "IRLS objective increased from {prev} to {f}"
                )));
            }
        }
        history.push(f);
        if step < loss.tolerance {
            converged = true;
            break;
        }
    }
    for (sample, &x) in samples.iter_mut().zip(&values) {
        sample.weight = loss.weight(x - s);
    }
    let residuals: Vec<f64> = values.iter().map(|x| (x - s).abs()).collect();
    Ok(RobustFit {
        estimate: s,
        count: values.len(),
        robust_std: 1.4826 * median(&residuals),
        converged,
        iterations,
        objective_history: history,
    })
}

/// Convenience wrapper over plain values.
pub fn robust_fuse_values(values: &[f64], loss: &RobustLossSpec) -> Result<RobustFit> {
    let mut samples: Vec<HeightSample> = values.iter().map(|&v| HeightSample::new(0, 0, v, 1)).collect();
    robust_fuse(&mut samples, loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightFlag {
    Ok,
    NotConverged,
    NoEstimate,
}

impl HeightFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            HeightFlag::Ok => "ok",
            HeightFlag::NotConverged => "not_converged",
            HeightFlag::NoEstimate => "no_estimate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => HeightFlag::Ok,
            "not_converged" => HeightFlag::NotConverged,
            "no_estimate" => HeightFlag::NoEstimate,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectHeight {
    pub id: u32,
    /// Height above local ground in meters; `None` when no member pixel has a
    /// scatterer.
    pub height: Option<f64>,
    pub count: usize,
    pub robust_std: f64,
    pub flag: HeightFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub loss: LossKind,
    /// Loss scale in elevation meters; `None` means twice the grid spacing.
    pub scale: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub incidence_angle_deg: f64,
    /// Chebyshev distance band (pixels) around a footprint whose ground
    /// pixels give the local ground elevation.
    pub ring_inner: usize,
    pub ring_outer: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Huber,
            scale: None,
            max_iterations: 100,
            tolerance: 1e-6,
            incidence_angle_deg: 40.0,
            ring_inner: 2,
            ring_outer: 6,
        }
    }
}

impl FusionConfig {
    pub fn loss_spec(&self, grid_spacing: f64) -> RobustLossSpec {
        RobustLossSpec {
            kind: self.loss,
            scale: self.scale.unwrap_or(2.0 * grid_spacing),
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.incidence_angle_deg > 0.0 && self.incidence_angle_deg < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "incidence angle must be in (0, 90) degrees, got {}",
                self.incidence_angle_deg
            )));
        }
        if self.ring_inner > self.ring_outer {
            return Err(Error::InvalidArgument("ring_inner exceeds ring_outer".into()));
        }
        Ok(())
    }
}

struct Member {
    row: usize,
    col: usize,
}

/// Per-object heights: robust fusion of the topmost elevation of every member
/// pixel, minus the robustly fused lowest elevations of ground pixels in a
/// ring around the footprint, projected by `sin(incidence)`.
pub fn fuse_objects(
    scatterers: &Raster<ScattererSet>,
    footprints: &Raster<u32>,
    config: &FusionConfig,
    grid_spacing: f64,
) -> Result<Vec<ObjectHeight>> {
    config.validate()?;
    if !scatterers.same_shape(footprints) {
        return Err(Error::Dimension("footprint raster does not match scatterer raster".into()));
    }
    let loss = config.loss_spec(grid_spacing);
    loss.validate()?;
    let sin_inc = config.incidence_angle_deg.to_radians().sin();
    let (w, h) = (footprints.width(), footprints.height());

    let mut objects: BTreeMap<u32, Vec<Member>> = BTreeMap::new();
    for row in 0..h {
        for col in 0..w {
            let id = *footprints.get(row, col);
            if id != 0 {
                objects.entry(id).or_default().push(Member { row, col });
            }
        }
    }

    let lowest = |row: usize, col: usize| scatterers.get(row, col).lowest().map(|s| s.elevation);
    let global_ground: Vec<f64> = (0..h)
        .flat_map(|row| (0..w).map(move |col| (row, col)))
        .filter(|&(row, col)| *footprints.get(row, col) == 0)
        .filter_map(|(row, col)| lowest(row, col))
        .collect();
    let global_ground = if global_ground.is_empty() {
        0.0
    } else {
        robust_fuse_values(&global_ground, &loss)?.estimate
    };

    let list: Vec<(u32, Vec<Member>)> = objects.into_iter().collect();
    list.par_iter()
        .map(|(id, members)| {
            let mut samples: Vec<HeightSample> = members
                .iter()
                .filter_map(|m| {
                    let set = scatterers.get(m.row, m.col);
                    set.highest()
                        .map(|s| HeightSample::new(m.row, m.col, s.elevation, set.order()))
                })
                .collect();
            if samples.is_empty() {
                return Ok(ObjectHeight {
                    id: *id,
                    height: None,
                    count: 0,
                    robust_std: 0.0,
                    flag: HeightFlag::NoEstimate,
                });
            }
            let roof = robust_fuse(&mut samples, &loss)?;
            let ground = ring_ground(members, footprints, config, &lowest)
                .map(|v| robust_fuse_values(&v, &loss).map(|f| f.estimate))
                .transpose()?
                .unwrap_or(global_ground);
            Ok(ObjectHeight {
                id: *id,
                height: Some((roof.estimate - ground) * sin_inc),
                count: roof.count,
                robust_std: roof.robust_std * sin_inc,
                flag: if roof.converged {
                    HeightFlag::Ok
                } else {
                    HeightFlag::NotConverged
                },
            })
        })
        .collect()
}

/// Lowest elevations of unlabeled pixels in the ring around an object.
fn ring_ground(
    members: &[Member],
    footprints: &Raster<u32>,
    config: &FusionConfig,
    lowest: &impl Fn(usize, usize) -> Option<f64>,
) -> Option<Vec<f64>> {
    let (w, h) = (footprints.width() as isize, footprints.height() as isize);
    let outer = config.ring_outer as isize;
    let (mut r0, mut r1, mut c0, mut c1) = (isize::MAX, isize::MIN, isize::MAX, isize::MIN);
    for m in members {
        r0 = r0.min(m.row as isize);
        r1 = r1.max(m.row as isize);
        c0 = c0.min(m.col as isize);
        c1 = c1.max(m.col as isize);
    }
    // Chebyshev distance to the nearest member pixel, within the bounding box
    // grown by the outer ring radius.
    let bw = (c1 - c0 + 1 + 2 * outer) as usize;
    let bh = (r1 - r0 + 1 + 2 * outer) as usize;
    let mut dist = vec![usize::MAX; bw * bh];
    for m in members {
        let (mr, mc) = (m.row as isize - r0 + outer, m.col as isize - c0 + outer);
        for dr in -outer..=outer {
            for dc in -outer..=outer {
                let (rr, cc) = (mr + dr, mc + dc);
                let idx = rr as usize * bw + cc as usize;
                let d = dr.unsigned_abs().max(dc.unsigned_abs());
                dist[idx] = dist[idx].min(d);
            }
        }
    }
    let mut values = Vec::new();
    for (idx, &d) in dist.iter().enumerate() {
        if d < config.ring_inner.max(1) || d > config.ring_outer {
            continue;
        }
        let row = (idx / bw) as isize + r0 - outer;
        let col = (idx % bw) as isize + c0 - outer;
        if row < 0 || col < 0 || row >= h || col >= w {
            continue;
        }
        let (row, col) = (row as usize, col as usize);
        if *footprints.get(row, col) != 0 {
            continue;
        }
        if let Some(e) = lowest(row, col) {
            values.push(e);
        }
    }
    (!values.is_empty()).then_some(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::{Method, Scatterer};
    use proptest::prelude::*;

    fn set(elevations: &[f64]) -> ScattererSet {
        ScattererSet {
            scatterers: elevations
                .iter()
                .map(|&e| Scatterer {
                    elevation: e,
                    power: 1.0,
                })
                .collect(),
            score: 1.0,
            method: Method::Nls,
            converged: true,
        }
    }

    #[test]
    fn squared_loss_is_the_mean() {
        let v = [1.0, 2.0, 7.5, -3.25, 11.0];
        let fit = robust_fuse_values(&v, &RobustLossSpec::new(LossKind::Squared, 1.0)).unwrap();
        let mean = v.iter().sum::<f64>() / 5.0;
        assert!((fit.estimate - mean).abs() < 1e-12);
        assert!(fit.converged);
        assert!(fit.iterations <= 2);
    }

    #[test]
    fn huber_resists_one_gross_outlier() {
        let v = [10.0, 10.0, 10.0, 10.0, 100.0];
        let loss = RobustLossSpec::new(LossKind::Huber, 1.0);
        let fit = robust_fuse_values(&v, &loss).unwrap();
        // Stationarity: 4 (s - 10) = 1 with the outlier clipped at the scale.
        assert!((fit.estimate - 10.25).abs() < 1e-6);
        // Oracle: 1-D grid search of the objective.
        let best = (0..=200_000)
            .map(|i| i as f64 * 1e-3)
            .min_by(|a, b| loss.objective(&v, *a).total_cmp(&loss.objective(&v, *b)))
            .unwrap();
        assert!((fit.estimate - best).abs() < 1e-3);
    }

    #[test]
    fn single_sample_is_returned_exactly() {
        for kind in [LossKind::Squared, LossKind::Huber, LossKind::Tukey] {
            let fit = robust_fuse_values(&[4.321], &RobustLossSpec::new(kind, 0.5)).unwrap();
            assert_eq!(fit.estimate, 4.321);
        }
    }

    #[test]
    fn tukey_zero_weights_fall_back_to_median() {
        // Median 0 sits in the gap; every sample is beyond the scale.
        let v = [-10.0, -10.0, 10.0, 10.0];
        let fit = robust_fuse_values(&v, &RobustLossSpec::new(LossKind::Tukey, 1.0)).unwrap();
        assert_eq!(fit.estimate, 0.0);
        assert!(!fit.converged);
    }

    #[test]
    fn objective_descends_for_convex_losses() {
        let v = [1.0, 1.5, 2.0, 2.2, 40.0, -25.0, 1.8];
        for kind in [LossKind::Squared, LossKind::Huber] {
            let fit = robust_fuse_values(&v, &RobustLossSpec::new(kind, 0.7)).unwrap();
            assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn empty_object_has_no_estimate() {
        let mut fp = Raster::filled(8, 8, 0u32);
        for r in 2..5 {
            for c in 2..5 {
                *fp.get_mut(r, c) = 7;
            }
        }
        let sc = Raster::from_fn(8, 8, |r, c| {
            if (2..5).contains(&r) && (2..5).contains(&c) {
                ScattererSet::empty()
            } else {
                set(&[0.0])
            }
        });
        let out = fuse_objects(&sc, &fp, &FusionConfig::default(), 2.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].flag, HeightFlag::NoEstimate);
        assert_eq!(out[0].height, None);
    }

    #[test]
    fn noiseless_block_height() {
        let mut fp = Raster::filled(30, 30, 0u32);
        let roof = 31.0;
        let sc = Raster::from_fn(30, 30, |r, c| {
            if (10..20).contains(&r) && (10..20).contains(&c) {
                if c < 13 {
                    set(&[0.0, roof])
                } else {
                    set(&[roof])
                }
            } else {
                set(&[0.0])
            }
        });
        for r in 10..20 {
            for c in 10..20 {
                *fp.get_mut(r, c) = 1;
            }
        }
        let out = fuse_objects(&sc, &fp, &FusionConfig::default(), 2.0).unwrap();
        let expected = roof * 40f64.to_radians().sin();
        assert!((out[0].height.unwrap() - expected).abs() < 1e-9);
        assert_eq!(out[0].count, 100);
    }

    proptest! {
        #[test]
        fn translation_equivariance(
            v in proptest::collection::vec(-50.0f64..50.0, 1..30),
            shift in -100.0f64..100.0,
        ) {
            let loss = RobustLossSpec::new(LossKind::Huber, 2.0);
            let a = robust_fuse_values(&v, &loss).unwrap().estimate;
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let b = robust_fuse_values(&shifted, &loss).unwrap().estimate;
            prop_assert!((b - a - shift).abs() < 1e-6);
        }
    }
}
