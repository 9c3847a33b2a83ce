//! Comparison of fused object heights against a reference height model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightfusion::ObjectHeight;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn shifted(self, t: [f64; 3]) -> Self {
        Self::new(self.x + t[0], self.y + t[1], self.z + t[2])
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SimulatorTruth,
    ExternalFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub heights: BTreeMap<u32, f64>,
    #[serde(default)]
    pub points: Option<Vec<Point3>>,
    pub provenance: Provenance,
}

impl ReferenceModel {
    pub fn new(heights: BTreeMap<u32, f64>, points: Option<Vec<Point3>>, provenance: Provenance) -> Result<Self> {
        if let Some((id, h)) = heights.iter().find(|(_, h)| !h.is_finite()) {
            return Err(Error::InvalidArgument(format!("reference height of object {id} is {h}")));
        }
        if points.as_ref().is_some_and(|p| p.iter().any(|p| !p.is_finite())) {
            return Err(Error::InvalidArgument("non-finite reference point".into()));
        }
        Ok(Self {
            heights,
            points,
            provenance,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Search half-width of the horizontal shift (m).
    pub max_shift_xy: f64,
    /// Search half-width of the vertical shift (m).
    pub max_shift_z: f64,
    pub coarse_step: f64,
    pub huber_scale: f64,
    /// Correspondences farther than this are treated as unmatched (m).
    pub max_distance: f64,
    /// Minimum fraction of matched points at the best coarse shift.
    pub min_overlap: f64,
    /// Points used by the coarse search (deterministic stride subsample).
    pub coarse_points: usize,
    /// Points used by the refinement.
    pub refine_points: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_shift_xy: 10.0,
            max_shift_z: 10.0,
            coarse_step: 2.0,
            huber_scale: 1.0,
            max_distance: 3.0,
            min_overlap: 0.1,
            coarse_points: 500,
            refine_points: 20_000,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.coarse_step,
            self.huber_scale,
            self.max_distance,
            self.tolerance,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(self.max_shift_xy >= 0.0 && self.max_shift_z >= 0.0)
            || !(0.0..=1.0).contains(&self.min_overlap)
            || self.coarse_points == 0
            || self.refine_points == 0
        {
            return Err(Error::InvalidArgument(format!("invalid registration config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Translation that maps the estimated points onto the reference.
    pub shift: [f64; 3],
    /// Fraction of estimated points with a reference neighbour within the
    /// correspondence distance after the shift.
    pub overlap: f64,
    pub iterations: usize,
}

/// Dense cell grid (CSR layout) over the reference points for bounded
/// nearest-neighbour queries.
struct NeighborIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    starts: Vec<usize>,
    members: Vec<usize>,
}

const MAX_CELLS: usize = 1 << 26;

impl<'a> NeighborIndex<'a> {
    fn new(points: &'a [Point3], cell: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for (k, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / cell).floor() as usize + 1);
        let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let total = match total {
            Some(t) if t <= MAX_CELLS => t,
            _ => {
                return Err(Error::Registration(format!(
                    "reference extent needs {dims:?} cells of {cell} m"
                )))
            }
        };
        let mut index = Self {
            points,
            cell,
            origin: lo,
            dims,
            starts: vec![0; total + 1],
            members: vec![0; points.len()],
        };
        let cells: Vec<usize> = points
            .iter()
            .map(|p| index.cell_of(p).expect("reference point inside its own bounds"))
            .collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for i in 0..total {
            index.starts[i + 1] += index.starts[i];
        }
        let mut fill = index.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            index.members[fill[c]] = i;
            fill[c] += 1;
        }
        Ok(index)
    }

    fn coords(&self, q: &Point3) -> [i64; 3] {
        let v = [q.x, q.y, q.z];
        [0, 1, 2].map(|k| ((v[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    fn flat(&self, c: [i64; 3]) -> Option<usize> {
        if (0..3).any(|k| c[k] < 0 || c[k] >= self.dims[k] as i64) {
            return None;
        }
        Some((c[2] as usize * self.dims[1] + c[1] as usize) * self.dims[0] + c[0] as usize)
    }

    fn cell_of(&self, q: &Point3) -> Option<usize> {
        self.flat(self.coords(q))
    }

    /// Nearest reference point within one cell size; members are visited in
    /// index order so ties resolve to the lowest index.
    fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        let c = self.coords(q);
        let mut best: Option<(usize, f64)> = None;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(cell) = self.flat([c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &i in &self.members[self.starts[cell]..self.starts[cell + 1]] {
                        let p = &self.points[i];
                        let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2);
                        if best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        best.filter(|&(_, d2)| d2 <= self.cell * self.cell)
            .map(|(i, d2)| (i, d2.sqrt()))
    }
}

fn huber(d: f64, c: f64) -> f64 {
    if d <= c {
        0.5 * d * d
    } else {
        c * d - 0.5 * c * c
    }
}

/// Robust cost of a shift and the matched fraction.
fn shift_cost(points: &[Point3], index: &NeighborIndex, t: [f64; 3], config: &RegistrationConfig) -> (f64, f64) {
    let mut cost = 0.0;
    let mut matched = 0usize;
    for p in points {
        let d = match index.nearest(&p.shifted(t)) {
            Some((_, d)) => {
                matched += 1;
                d
            }
            None => config.max_distance,
        };
        cost += huber(d, config.huber_scale);
    }
    (cost, matched as f64 / points.len() as f64)
}

fn axis_steps(half_width: f64, step: f64) -> Vec<f64> {
    let n = (half_width / step).floor() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

/// Rigid translation minimizing the Huber point-to-nearest-reference
/// distance: exhaustive coarse search, a finer local search, then
/// reweighted point-to-point refinement.
pub fn coregister(estimated: &[Point3], reference: &[Point3], config: &RegistrationConfig) -> Result<Registration> {
    config.validate()?;
    if estimated.len() < 10 || reference.len() < 10 {
        return Err(Error::Registration(format!(
            "need at least 10 points in each set, got {} and {}",
            estimated.len(),
            reference.len()
        )));
    }
    if estimated.iter().chain(reference).any(|p| !p.is_finite()) {
        return Err(Error::Registration("non-finite point".into()));
    }
    let index = NeighborIndex::new(reference, config.max_distance)?;
    let subsample = |n: usize| -> Vec<Point3> {
        estimated.iter().step_by(estimated.len().div_ceil(n)).copied().collect()
    };
    let subset = subsample(config.coarse_points);
    let refine = subsample(config.refine_points);

    let search = |center: [f64; 3], xy: &[f64], z: &[f64]| {
        let mut best = (f64::INFINITY, 0.0, center);
        for &dx in xy {
            for &dy in xy {
                for &dz in z {
                    let t = [center[0] + dx, center[1] + dy, center[2] + dz];
                    let (cost, overlap) = shift_cost(&subset, &index, t, config);
                    if cost < best.0 {
                        best = (cost, overlap, t);
                    }
                }
            }
        }
        best
    };
    let step = config.coarse_step;
    let (_, overlap, mut t) = search(
        [0.0; 3],
        &axis_steps(config.max_shift_xy, step),
        &axis_steps(config.max_shift_z, step),
    );
    if overlap < config.min_overlap {
        return Err(Error::Registration(format!(
            "only {:.1}% of points overlap within the search bounds",
            100.0 * overlap
        )));
    }
    let fine = axis_steps(step, step / 4.0);
    t = search(t, &fine, &fine).2;

    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let (mut sw, mut acc) = (0.0, [0.0; 3]);
        for p in &refine {
            let q = p.shifted(t);
            if let Some((i, d)) = index.nearest(&q) {
                let w = if d <= config.huber_scale { 1.0 } else { config.huber_scale / d };
                let r = &reference[i];
                acc[0] += w * (r.x - q.x);
                acc[1] += w * (r.y - q.y);
                acc[2] += w * (r.z - q.z);
                sw += w;
            }
        }
        if sw == 0.0 {
            break;
        }
        let delta = acc.map(|a| a / sw);
        for (ti, di) in t.iter_mut().zip(delta) {
            *ti += di;
        }
        if delta.iter().map(|d| d * d).sum::<f64>().sqrt() < config.tolerance {
            break;
        }
    }
    let (_, overlap) = shift_cost(&refine, &index, t, config);
    if overlap < config.min_overlap {
        return Err(Error::Registration(format!(
            "refined shift leaves only {:.1}% overlap",
            100.0 * overlap
        )));
    }
    Ok(Registration {
        shift: t,
        overlap,
        iterations,
    })
}

/// Whether the within-1 m / 2 m fractions count all compared objects or
/// only those surviving truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionBasis {
    #[default]
    PreTruncation,
    PostTruncation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub truncation: f64,
    pub bin_width: f64,
    pub fraction_basis: FractionBasis,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            truncation: 15.0,
            bin_width: 0.5,
            fraction_basis: FractionBasis::PreTruncation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDifference {
    pub id: u32,
    pub estimate: f64,
    pub reference: f64,
    pub difference: f64,
    pub retained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub differences: Vec<ObjectDifference>,
    pub truncation: f64,
    pub bin_width: f64,
    pub fraction_basis: FractionBasis,
    pub compared: usize,
    pub retained: usize,
    pub dropped: usize,
    pub within_1m: usize,
    pub within_2m: usize,
    pub fraction_within_1m: f64,
    pub fraction_within_2m: f64,
    pub mean: f64,
    /// Sample standard deviation of retained differences.
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
    /// Objects present on only one side of the join or without an estimate.
    pub unmatched: Vec<u32>,
    #[serde(default)]
    pub registration: Option<Registration>,
}

/// Empty histogram bins covering `[-truncation, truncation]`.
pub fn histogram_bins(truncation: f64, bin_width: f64) -> Vec<HistogramBin> {
    let n = ((2.0 * truncation / bin_width).ceil() as usize).max(1);
    (0..n)
        .map(|i| HistogramBin {
            lower: -truncation + i as f64 * bin_width,
            upper: (-truncation + (i + 1) as f64 * bin_width).min(truncation),
            count: 0,
        })
        .collect()
}

/// Joins estimates and reference by object id and summarizes
/// `estimate - reference`.
pub fn compare_heights(
    estimates: &[ObjectHeight],
    reference: &ReferenceModel,
    config: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if !(config.truncation > 0.0 && config.bin_width > 0.0) {
        return Err(Error::InvalidArgument("truncation and bin width must be > 0".into()));
    }
    let mut unmatched = Vec::new();
    let mut differences = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for est in estimates {
        seen.insert(est.id);
        match (est.height, reference.heights.get(&est.id)) {
            (Some(h), Some(&r)) => {
                let d = h - r;
                differences.push(ObjectDifference {
                    id: est.id,
                    estimate: h,
                    reference: r,
                    difference: d,
                    retained: d.abs() <= config.truncation,
                });
            }
            _ => unmatched.push(est.id),
        }
    }
    unmatched.extend(reference.heights.keys().filter(|id| !seen.contains(id)));
    unmatched.sort_unstable();
    if differences.is_empty() {
        return Err(Error::Report("no object could be joined with the reference".into()));
    }
    differences.sort_by_key(|d| d.id);

    let kept: Vec<f64> = differences.iter().filter(|d| d.retained).map(|d| d.difference).collect();
    let basis: Vec<f64> = match config.fraction_basis {
        FractionBasis::PreTruncation => differences.iter().map(|d| d.difference).collect(),
        FractionBasis::PostTruncation => kept.clone(),
    };
    let within_1m = basis.iter().filter(|d| d.abs() <= 1.0).count();
    let within_2m = basis.iter().filter(|d| d.abs() <= 2.0).count();
    let frac = |k: usize| if basis.is_empty() { 0.0 } else { k as f64 / basis.len() as f64 };
    let mean = if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    let std = if kept.len() < 2 {
        0.0
    } else {
        (kept.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (kept.len() - 1) as f64).sqrt()
    };
    let mut histogram = histogram_bins(config.truncation, config.bin_width);
    let last = histogram.len() - 1;
    for d in &kept {
        let i = ((d + config.truncation) / config.bin_width).floor() as usize;
        histogram[i.min(last)].count += 1;
    }
    Ok(ComparisonReport {
        compared: differences.len(),
        retained: kept.len(),
        dropped: differences.len() - kept.len(),
        within_1m,
        within_2m,
        fraction_within_1m: frac(within_1m),
        fraction_within_2m: frac(within_2m),
        mean,
        std,
        histogram,
        unmatched,
        truncation: config.truncation,
        bin_width: config.bin_width,
        fraction_basis: config.fraction_basis,
        differences,
        registration: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightfusion::HeightFlag;

    fn est(id: u32, h: f64) -> ObjectHeight {
        ObjectHeight {
            id,
            height: Some(h),
            count: 10,
            robust_std: 0.0,
            flag: HeightFlag::Ok,
        }
    }

    fn reference(pairs: &[(u32, f64)]) -> ReferenceModel {
        ReferenceModel::new(pairs.iter().copied().collect(), None, Provenance::SimulatorTruth).unwrap()
    }

    #[test]
    fn identical_heights() {
        let e = [est(1, 5.0), est(2, 17.0), est(3, 40.0)];
        let rep = compare_heights(&e, &reference(&[(1, 5.0), (2, 17.0), (3, 40.0)]), &Default::default()).unwrap();
        assert_eq!(rep.fraction_within_1m, 1.0);
        assert_eq!(rep.std, 0.0);
        assert_eq!(rep.histogram.len(), 60);
        assert_eq!(rep.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn tiny_hand_case() {
        let e = [est(1, 10.5), est(2, 11.5), est(3, 30.0)];
        let rep = compare_heights(&e, &reference(&[(1, 10.0), (2, 10.0), (3, 10.0)]), &Default::default()).unwrap();
        assert!((rep.fraction_within_1m - 1.0 / 3.0).abs() < 1e-12);
        assert!((rep.fraction_within_2m - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((rep.retained, rep.dropped, rep.compared), (2, 1, 3));
        assert!((rep.std - 0.5f64.sqrt()).abs() < 1e-12);

        let post = ComparisonConfig {
            fraction_basis: FractionBasis::PostTruncation,
            ..Default::default()
        };
        let rep = compare_heights(&e, &reference(&[(1, 10.0), (2, 10.0), (3, 10.0)]), &post).unwrap();
        assert!((rep.fraction_within_1m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_join_is_an_error() {
        let e = [est(4, 1.0)];
        assert!(matches!(
            compare_heights(&e, &reference(&[(1, 1.0)]), &Default::default()),
            Err(Error::Report(_))
        ));
    }

    #[test]
    fn unmatched_ids_are_listed() {
        let mut none = est(2, 0.0);
        none.height = None;
        let e = [est(1, 1.0), none];
        let rep = compare_heights(&e, &reference(&[(1, 1.0), (2, 3.0), (5, 2.0)]), &Default::default()).unwrap();
        assert_eq!(rep.unmatched, vec![2, 5]);
    }

    #[test]
    fn boundary_difference_lands_in_last_bin() {
        let rep = compare_heights(&[est(1, 25.0)], &reference(&[(1, 10.0)]), &Default::default()).unwrap();
        assert_eq!(rep.retained, 1);
        assert_eq!(rep.histogram.last().unwrap().count, 1);
    }
}
