use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cs::{cs_solve, CsConfig};
use super::{MeasurementVector, Method, Scatterer, ScattererSet};
use crate::error::{Error, Result};
use crate::geometry::{ElevationGrid, SensingMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Largest model order considered (at most 2).
    pub max_order: usize,
    /// Multiplier of the `params * ln(2N)` complexity term.
    pub penalty: f64,
    /// Smallest separation (grid cells) of the two-scatterer scan.
    pub min_separation_cells: usize,
    /// Sparse-profile clusters below this fraction of the strongest one are
    /// ignored.
    pub peak_fraction: f64,
    /// Lower bound on the noise variance relative to the mean sample power,
    /// so noiseless inputs stay well defined.
    pub noise_floor: f64,
    pub cs: CsConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_order: 2,
            penalty: 2.5,
            min_separation_cells: 4,
            peak_fraction: 0.05,
            noise_floor: 1e-10,
            cs: CsConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order > 2 {
            return Err(Error::InvalidArgument(format!(
                "model order is capped at 2, got {}",
                self.max_order
            )));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::InvalidArgument("penalty must be >= 0".into()));
        }
        if self.min_separation_cells == 0 {
            return Err(Error::InvalidArgument("min_separation_cells must be >= 1".into()));
        }
        self.cs.validate()
    }
}

/// Matched-filter amplitude `|r(s_l)^H g| / N` over the grid.
pub fn beamforming(g: &MeasurementVector, r: &SensingMatrix) -> Vec<f64> {
    let n = r.rows() as f64;
    r.adjoint_apply(&g.values).iter().map(|v| v.norm() / n).collect()
}

/// Real nonnegative fit of `g` by one or two steering vectors.
struct Fitter<'a> {
    g: &'a [Complex64],
    k: &'a [f64],
    energy: f64,
}

impl Fitter<'_> {
    fn n(&self) -> f64 {
        self.k.len() as f64
    }

    /// `Re(r(s)^H g)`.
    fn corr(&self, s: f64) -> f64 {
        self.k
            .iter()
            .zip(self.g)
            .map(|(&k, g)| (Complex64::from_polar(1.0, k * s) * g).re)
            .sum()
    }

    /// `Re(r(s1)^H r(s2))`.
    fn cross(&self, s1: f64, s2: f64) -> f64 {
        self.k.iter().map(|&k| (k * (s1 - s2)).cos()).sum()
    }

    fn one(&self, s: f64) -> (f64, f64) {
        let a = (self.corr(s) / self.n()).max(0.0);
        (self.energy - a * a * self.n(), a)
    }

    fn two(&self, s1: f64, s2: f64) -> Option<(f64, f64, f64)> {
        let (b1, b2) = (self.corr(s1), self.corr(s2));
        solve_pair(self.n(), self.cross(s1, s2), b1, b2).map(|(a1, a2)| (self.energy - a1 * b1 - a2 * b2, a1, a2))
    }
}

/// Both-positive solution of `[[n, c], [c, n]] a = b`.
fn solve_pair(n: f64, c: f64, b1: f64, b2: f64) -> Option<(f64, f64)> {
    let det = n * n - c * c;
    if det <= 1e-12 * n * n {
        return None;
    }
    let a1 = (n * b1 - c * b2) / det;
    let a2 = (n * b2 - c * b1) / det;
    (a1 > 0.0 && a2 > 0.0).then_some((a1, a2))
}

/// Golden-section minimization of `f` on `[lo, hi]`.
fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

struct PairFit {
    s: (f64, f64),
    a: (f64, f64),
    rss: f64,
}

/// Coordinate-wise continuous refinement of a two-scatterer fit within one
/// grid cell of the seeds.
fn refine_pair(fit: &Fitter, seed: (f64, f64), dx: f64, bounds: (f64, f64)) -> Option<PairFit> {
    let (mut s1, mut s2) = seed;
    let (rss, a1, a2) = fit.two(s1, s2)?;
    let mut best = PairFit {
        s: (s1, s2),
        a: (a1, a2),
        rss,
    };
    let cost = |x: f64, y: f64| fit.two(x, y).map_or(f64::INFINITY, |v| v.0);
    for _ in 0..4 {
        let (x, _) = golden_min((s1 - dx).max(bounds.0), (s1 + dx).min(bounds.1), |x| cost(x, s2));
        s1 = x;
        let (y, _) = golden_min((s2 - dx).max(bounds.0), (s2 + dx).min(bounds.1), |y| cost(s1, y));
        s2 = y;
        if let Some((rss, a1, a2)) = fit.two(s1, s2) {
            if rss < best.rss {
                best = PairFit {
                    s: (s1, s2),
                    a: (a1, a2),
                    rss,
                };
            }
        }
    }
    Some(best)
}

/// Contiguous positive runs of a profile: `(power, centroid elevation)`.
fn clusters(profile: &[f64], elevations: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < profile.len() {
        if profile[i] > 0.0 {
            let start = i;
            while i < profile.len() && profile[i] > 0.0 {
                i += 1;
            }
            let power: f64 = profile[start..i].iter().sum();
            let centroid = profile[start..i]
                .iter()
                .zip(&elevations[start..i])
                .map(|(p, s)| p * s)
                .sum::<f64>()
                / power;
            out.push((power, centroid));
        } else {
            i += 1;
        }
    }
    out
}

fn make_set(mut scatterers: Vec<Scatterer>, score: f64, method: Method, converged: bool) -> ScattererSet {
    scatterers.sort_by(|a, b| a.elevation.total_cmp(&b.elevation));
    ScattererSet {
        scatterers,
        score,
        method,
        converged,
    }
}

/// Chooses between zero, one and two scatterers with an information
/// criterion on beamforming/NLS fits, then refines two-scatterer pixels with
/// the L1 estimator.
pub fn select_model(
    g: &MeasurementVector,
    r: &SensingMatrix,
    grid: &ElevationGrid,
    config: &SelectionConfig,
) -> Result<ScattererSet> {
    g.check(r)?;
    config.validate()?;
    if grid.samples() != r.elevations() {
        return Err(Error::GeometryMismatch("grid does not match sensing matrix".into()));
    }
    let n = r.rows();
    let energy = g.norm_sqr();
    if energy == 0.0 || config.max_order == 0 {
        return Ok(ScattererSet::empty());
    }
    let fit = Fitter {
        g: &g.values,
        k: r.wavenumbers(),
        energy,
    };
    let sigma2 = g
        .noise_level
        .max(config.noise_floor * energy / n as f64)
        .max(f64::MIN_POSITIVE);
    let per_param = config.penalty * (2.0 * n as f64).ln();
    let ic = |rss: f64, order: usize| 2.0 * rss.max(0.0) / sigma2 + per_param * (2 * order) as f64;

    let elev = grid.samples();
    let dx = grid.spacing();
    let bounds = (grid.start(), grid.end());
    let b: Vec<f64> = elev.iter().map(|&s| fit.corr(s)).collect();

    // K = 1: best grid cell, then continuous refinement.
    let l1 = (0..elev.len()).fold(0, |best, i| if b[i] > b[best] { i } else { best });
    let mut ics = vec![ic(energy, 0)];
    let mut one = None;
    if b[l1] > 0.0 {
        let (s, _) = golden_min(
            (elev[l1] - dx).max(bounds.0),
            (elev[l1] + dx).min(bounds.1),
            |s| fit.one(s).0,
        );
        let (rss, a) = fit.one(s);
        let (rss, s, a) = if rss <= fit.one(elev[l1]).0 {
            (rss, s, a)
        } else {
            let (rss, a) = fit.one(elev[l1]);
            (rss, elev[l1], a)
        };
        ics.push(ic(rss, 1));
        one = Some(Scatterer { elevation: s, power: a });
    }

    // K = 2: exhaustive grid pairs, then continuous refinement.
    let mut two = None;
    if config.max_order >= 2 && one.is_some() {
        let lags: Vec<f64> = (0..elev.len()).map(|d| fit.cross(0.0, d as f64 * dx)).collect();
        let nf = n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..elev.len() {
            for j in i + config.min_separation_cells..elev.len() {
                if let Some((a1, a2)) = solve_pair(nf, lags[j - i], b[i], b[j]) {
                    let rss = energy - a1 * b[i] - a2 * b[j];
                    if best.is_none_or(|(r0, _, _)| rss < r0) {
                        best = Some((rss, i, j));
                    }
                }
            }
        }
        if let Some((_, i, j)) = best {
            if let Some(p) = refine_pair(&fit, (elev[i], elev[j]), dx, bounds) {
                two = Some(p);
            }
        }
    }
    if let Some(p) = &two {
        ics.push(ic(p.rss, 2));
    }

    let order = (0..ics.len()).fold(0, |best, k| if ics[k] < ics[best] { k } else { best });
    let runner_up = (0..ics.len())
        .filter(|&k| k != order)
        .map(|k| ics[k])
        .fold(f64::INFINITY, f64::min);
    let score = if runner_up.is_finite() { runner_up - ics[order] } else { 0.0 };
    let one_set = |score: f64| make_set(vec![one.unwrap()], score, Method::Nls, true);

    match order {
        0 => Ok(ScattererSet {
            score,
            ..ScattererSet::empty()
        }),
        1 => Ok(one_set(score)),
        _ => {
            let lambda = config.cs.lambda_for(g, r);
            let sol = cs_solve(g, r, lambda, &config.cs)?;
            let mut peaks = clusters(&sol.estimate.profile, elev);
            let strongest = peaks.iter().map(|p| p.0).fold(0.0, f64::max);
            peaks.retain(|p| p.0 >= config.peak_fraction * strongest);
            peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
            peaks.truncate(2);
            if peaks.len() < 2 || (peaks[0].1 - peaks[1].1).abs() < dx {
                // The sparse profile does not support two scatterers.
                let mut set = one_set(ics[1] - ics[0]);
                set.converged = sol.estimate.converged;
                return Ok(set);
            }
            let seeds = if peaks[0].1 < peaks[1].1 {
                (peaks[0].1, peaks[1].1)
            } else {
                (peaks[1].1, peaks[0].1)
            };
            let scatterers = match refine_pair(&fit, seeds, dx, bounds) {
                Some(p) if (p.s.0 - p.s.1).abs() >= dx => vec![
                    Scatterer {
                        elevation: p.s.0,
                        power: p.a.0,
                    },
                    Scatterer {
                        elevation: p.s.1,
                        power: p.a.1,
                    },
                ],
                _ => peaks
                    .iter()
                    .map(|&(power, elevation)| Scatterer { elevation, power })
                    .collect(),
            };
            Ok(make_set(scatterers, score, Method::Cs, sol.estimate.converged))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sensing_matrix, AcquisitionGeometry};

    fn setup() -> (SensingMatrix, ElevationGrid) {
        let geometry = AcquisitionGeometry::from_arrays(
            0.031,
            600_000.0,
            &[-420.0, 130.0, -60.0, 310.0, 540.0],
            &[100.0, 150.0, 195.0, 240.0, 345.0],
        )
        .unwrap();
        let grid = ElevationGrid::for_geometry(&geometry, -30.0, 120.0).unwrap();
        (build_sensing_matrix(&geometry, &grid).unwrap(), grid)
    }

    #[test]
    fn zero_signal_gives_empty_set() {
        let (r, grid) = setup();
        let g = MeasurementVector::new(vec![Complex64::new(0.0, 0.0); 5], 0.0).unwrap();
        assert_eq!(select_model(&g, &r, &grid, &SelectionConfig::default()).unwrap().order(), 0);
    }

    #[test]
    fn noiseless_single_scatterer_is_order_one() {
        let (r, grid) = setup();
        for s0 in [-12.3, 0.0, 41.7, 97.0] {
            let values: Vec<Complex64> = r.steering(s0).iter().map(|v| v * 2.0).collect();
            let g = MeasurementVector::new(values, 0.0).unwrap();
            let set = select_model(&g, &r, &grid, &SelectionConfig::default()).unwrap();
            assert_eq!(set.order(), 1, "s0 = {s0}");
            assert!((set.scatterers[0].elevation - s0).abs() < grid.spacing());
            assert!((set.scatterers[0].power - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_pair_is_order_two() {
        let (r, grid) = setup();
        let mut values = r.steering(5.0);
        for (v, w) in values.iter_mut().zip(r.steering(62.0)) {
            *v += w * 1.5;
        }
        let g = MeasurementVector::new(values, 0.0).unwrap();
        let set = select_model(&g, &r, &grid, &SelectionConfig::default()).unwrap();
        assert_eq!(set.order(), 2);
        assert_eq!(set.method, Method::Cs);
        assert!((set.scatterers[0].elevation - 5.0).abs() < grid.spacing());
        assert!((set.scatterers[1].elevation - 62.0).abs() < grid.spacing());
    }

    #[test]
    fn order_above_two_is_rejected() {
        let (r, grid) = setup();
        let g = MeasurementVector::new(r.steering(0.0), 0.0).unwrap();
        let cfg = SelectionConfig {
            max_order: 3,
            ..Default::default()
        };
        assert!(select_model(&g, &r, &grid, &cfg).is_err());
    }
}
