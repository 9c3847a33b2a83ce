//! Patch-based non-local filtering with a weighted maximum-likelihood
//! estimate per pixel.
//!
//! Pixel dissimilarity for one layer compares the triples `(I1, I2, phi)`:
//!
//! ```text
//! delta(a, b) = glr(I1a, I1b) + glr(I2a, I2b) + beta * (1 - cos(phi_a - phi_b))
//! glr(x, y)   = ln((x + y)^2 / (4 x y))
//! ```
//!
//! `glr` is the generalized likelihood ratio for two exponential (single-look
//! intensity) samples sharing a mean; the phase term is the von Mises
//! deviation of the two interferometric phases. Summing `delta` over a
//! `(2p+1)^2` patch (mirror padded) and over all layers gives the patch
//! dissimilarity, so one weight map drives every layer.
//!
//! Near region boundaries a centered patch straddles the edge and finds few
//! matches. Both patches are therefore shifted jointly by up to
//! `shift_radius` pixels and the smallest dissimilarity is kept; every
//! shifted patch still contains `c` and `s` at the same relative position.
//!
//! Weights are `exp(-max(D - D_ref, 0) / h)` where `D_ref` is the
//! `reference_rank`-th smallest candidate dissimilarity, so the best matches
//! all get weight 1 and the center pixel gets that maximum as self-weight.
//! Referencing a single best match instead makes the look count collapse
//! wherever one candidate happens to match unusually well.
//!
//! Under the single-look complex Gaussian pair model the weighted likelihood
//! is maximized by weighted sample means, so the filtered interferogram and
//! intensities are plain weighted averages.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{mirror, Raster};
use crate::stack::{InterferogramStack, StackLayer};


const INTENSITY_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Joint shift applied to both patches before comparison; the smallest
    /// dissimilarity over all shifts is used.
    pub shift_radius: usize,
    /// Candidates whose dissimilarity is at most the `reference_rank`-th
    /// smallest in the search window all receive weight 1.
    pub reference_rank: usize,
    /// Weight `beta` of the phase term relative to the two intensity terms.
    pub phase_weight: f64,
    /// Bandwidth per unit of patch-dissimilarity standard scale; the kernel
    /// bandwidth is `bandwidth * sqrt((2p+1)^2 * N)`.
    pub bandwidth: f64,
    pub iterations: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 10,
            shift_radius: 3,
            reference_rank: DEFAULT_REFERENCE_RANK,
            phase_weight: DEFAULT_PHASE_WEIGHT,
            bandwidth: DEFAULT_BANDWIDTH,
            iterations: 1,
        }
    }
}

/// Calibrated on homogeneous speckle (see `tests/nonlocal_calibration.rs`).
pub const DEFAULT_REFERENCE_RANK: usize = 8;
pub const DEFAULT_PHASE_WEIGHT: f64 = 1.0;
pub const DEFAULT_BANDWIDTH: f64 = 0.6;

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "filter bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("filter iterations must be >= 1".into()));
        }
        if !(self.phase_weight.is_finite() && self.phase_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "phase weight must be >= 0, got {}",
                self.phase_weight
            )));
        }
        if self.reference_rank == 0 {
            return Err(Error::InvalidArgument("reference rank must be >= 1".into()));
        }
        if self.search_radius == 0 {
            return Err(Error::InvalidArgument("search radius must be >= 1".into()));
        }
        Ok(())
    }

    /// Kernel bandwidth `h` for a stack with `layers` layers.
    pub fn kernel_bandwidth(&self, layers: usize) -> f64 {
        let side = (2 * self.patch_radius + 1) as f64;
        self.bandwidth * (side * side * layers as f64).sqrt()
    }
}

/// Per-pixel parameter triple estimated by the filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams {
    /// Interferometric phase in `(-pi, pi]`.
    pub phase: f64,
    /// Mean of the two filtered intensities.
    pub mean_intensity: f64,
    /// Weighted variance of the interferogram samples around their mean.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub center: (usize, usize),
    pub search_radius: usize,
    pub patch_radius: usize,
    /// `(row, col, weight)` for every in-bounds candidate, center included.
    pub weights: Vec<(usize, usize, f64)>,
}

impl WeightMap {
    pub fn total(&self) -> f64 {
        self.weights.iter().map(|w| w.2).sum()
    }

    pub fn self_weight(&self) -> f64 {
        self.weights
            .iter()
            .find(|w| (w.0, w.1) == self.center)
            .map(|w| w.2)
            .unwrap_or(0.0)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.2).fold(0.0, f64::max)
    }

    /// Equivalent number of looks `(sum w)^2 / sum w^2`.
    pub fn enl(&self) -> f64 {
        let s: f64 = self.total();
        let s2: f64 = self.weights.iter().map(|w| w.2 * w.2).sum();
        s * s / s2
    }
}

/// Filtered stack plus per-pixel ENL and interferogram variance.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredStack {
    pub stack: InterferogramStack,
    pub variance: Vec<Raster<f32>>,
    pub enl: Raster<f32>,
}

impl FilteredStack {
    pub fn params(&self, layer: usize, row: usize, col: usize) -> FilterParams {
        let l = &self.stack.layers()[layer];
        let z = l.interferogram.get(row, col);
        FilterParams {
            phase: (z.im as f64).atan2(z.re as f64),
            mean_intensity: 0.5
                * (*l.master_intensity.get(row, col) as f64 + *l.slave_intensity.get(row, col) as f64),
            variance: *self.variance[layer].get(row, col) as f64,
        }
    }
}

/// Per-pixel features used by the dissimilarity.
struct Features {
    phase_weight: f64,
    width: usize,
    height: usize,
    /// Per layer: (I1, I2, ln I1, ln I2, unit phasor).
    layers: Vec<LayerFeatures>,
}

struct LayerFeatures {
    i1: Vec<f64>,
    i2: Vec<f64>,
    ln1: Vec<f64>,
    ln2: Vec<f64>,
    phasor: Vec<Complex64>,
}

impl Features {
    fn new(stack: &InterferogramStack, phase_weight: f64) -> Self {
        let layers = stack.layers().iter().map(LayerFeatures::new).collect();
        Self {
            phase_weight,
            width: stack.width(),
            height: stack.height(),
            layers,
        }
    }

    #[inline]
    fn delta(&self, a: usize, b: usize) -> f64 {
        self.layers.iter().map(|l| l.delta(a, b, self.phase_weight)).sum()
    }
}

impl LayerFeatures {
    fn new(layer: &StackLayer) -> Self {
        let i1: Vec<f64> = layer.master_intensity.data().iter().map(|&v| v as f64).collect();
        let i2: Vec<f64> = layer.slave_intensity.data().iter().map(|&v| v as f64).collect();
        let ln1 = i1.iter().map(|v| v.max(INTENSITY_FLOOR).ln()).collect();
        let ln2 = i2.iter().map(|v| v.max(INTENSITY_FLOOR).ln()).collect();
        let phasor = layer
            .interferogram
            .data()
            .iter()
            .map(|z| {
                let z = Complex64::new(z.re as f64, z.im as f64);
                let m = z.norm();
                if m > 0.0 {
                    z / m
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
            .collect();
        Self {
            i1,
            i2,
            ln1,
            ln2,
            phasor,
        }
    }

    #[inline]
    fn delta(&self, a: usize, b: usize, phase_weight: f64) -> f64 {
        glr(self.i1[a], self.i1[b], self.ln1[a], self.ln1[b])
            + glr(self.i2[a], self.i2[b], self.ln2[a], self.ln2[b])
            + 0.5 * phase_weight * (self.phasor[a] - self.phasor[b]).norm_sqr()
    }
}

#[inline]
fn glr(x: f64, y: f64, lnx: f64, lny: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let s = (x + y).max(INTENSITY_FLOOR);
    (2.0 * s.ln() - lnx - lny - 2.0 * std::f64::consts::LN_2).max(0.0)
}

fn check_pixel(stack: &InterferogramStack, p: (usize, usize)) -> Result<()> {
    if p.0 >= stack.height() || p.1 >= stack.width() {
        return Err(Error::InvalidArgument(format!(
            "pixel {p:?} outside {}x{} image",
            stack.height(),
            stack.width()
        )));
    }
    Ok(())
}

fn patch_sum(f: &Features, layer: Option<usize>, c: (isize, isize), s: (isize, isize), p: usize) -> f64 {
    let p = p as isize;
    let mut sum = 0.0;
    for dr in -p..=p {
        let rc = mirror(c.0 + dr, f.height);
        let rs = mirror(s.0 + dr, f.height);
        for dc in -p..=p {
            let a = rc * f.width + mirror(c.1 + dc, f.width);
            let b = rs * f.width + mirror(s.1 + dc, f.width);
            sum += match layer {
                Some(n) => f.layers[n].delta(a, b, f.phase_weight),
                None => f.delta(a, b),
            };
        }
    }
    sum
}

fn signed(p: (usize, usize)) -> (isize, isize) {
    (p.0 as isize, p.1 as isize)
}

/// Smallest all-layer patch dissimilarity over joint shifts `q` of both
/// patches with `|q| <= shift` (Chebyshev) and `c + q` inside the image.
/// Every shifted patch still contains `c` and `s` at the same relative
/// position, so the pair itself always takes part in the comparison.
fn shifted_dissimilarity(f: &Features, c: (usize, usize), s: (usize, usize), p: usize, shift: usize) -> f64 {
    let q = shift as isize;
    let mut best = f64::INFINITY;
    for dr in -q..=q {
        for dc in -q..=q {
            let cr = c.0 as isize + dr;
            let cc = c.1 as isize + dc;
            if cr < 0 || cc < 0 || cr >= f.height as isize || cc >= f.width as isize {
                continue;
            }
            let d = patch_sum(f, None, (cr, cc), (s.0 as isize + dr, s.1 as isize + dc), p);
            best = best.min(d);
        }
    }
    best
}

/// Patch dissimilarity of one layer between pixels `c` and `s`
/// (`(row, col)` coordinates).
pub fn patch_similarity(
    stack: &InterferogramStack,
    layer: usize,
    c: (usize, usize),
    s: (usize, usize),
    patch_radius: usize,
) -> Result<f64> {
    check_pixel(stack, c)?;
    check_pixel(stack, s)?;
    if layer >= stack.len() {
        return Err(Error::InvalidArgument(format!("layer {layer} out of range")));
    }
    let f = Features::new(stack, DEFAULT_PHASE_WEIGHT);
    Ok(patch_sum(&f, Some(layer), signed(c), signed(s), patch_radius))
}

/// Patch dissimilarity summed over all layers.
pub fn patch_dissimilarity(
    stack: &InterferogramStack,
    c: (usize, usize),
    s: (usize, usize),
    patch_radius: usize,
) -> Result<f64> {
    check_pixel(stack, c)?;
    check_pixel(stack, s)?;
    let f = Features::new(stack, DEFAULT_PHASE_WEIGHT);
    Ok(patch_sum(&f, None, signed(c), signed(s), patch_radius))
}

/// Weight map of pixel `c` over its search window, using the default
/// phase weight and patch shifts up to the patch radius.
pub fn compute_weights(
    stack: &InterferogramStack,
    c: (usize, usize),
    search_radius: usize,
    patch_radius: usize,
    h: f64,
) -> Result<WeightMap> {
    let config = FilterConfig {
        patch_radius,
        search_radius,
        shift_radius: patch_radius,
        ..FilterConfig::default()
    };
    weights_with(stack, c, &config, h)
}

/// Weight map of pixel `c` under a full filter configuration; this is the
/// map the fast filter applies.
pub fn compute_weights_for(stack: &InterferogramStack, c: (usize, usize), config: &FilterConfig) -> Result<WeightMap> {
    config.validate()?;
    weights_with(stack, c, config, config.kernel_bandwidth(stack.len()))
}

fn weights_with(stack: &InterferogramStack, c: (usize, usize), config: &FilterConfig, h: f64) -> Result<WeightMap> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {h}")));
    }
    check_pixel(stack, c)?;
    let f = Features::new(stack, config.phase_weight);
    let (search_radius, patch_radius, shift_radius) =
        (config.search_radius, config.patch_radius, config.shift_radius);
    let r = search_radius as isize;
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            let (row, col) = (c.0 as isize + dr, c.1 as isize + dc);
            if row < 0 || col < 0 || row >= f.height as isize || col >= f.width as isize {
                continue;
            }
            let s = (row as usize, col as usize);
            if s == c {
                continue;
            }
            cands.push((s.0, s.1, shifted_dissimilarity(&f, c, s, patch_radius, shift_radius)));
        }
    }
    let mut sorted: Vec<f64> = cands.iter().map(|x| x.2).collect();
    sorted.sort_by(f64::total_cmp);
    let reference = sorted
        .get(config.reference_rank.min(sorted.len()).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);
    let mut weights: Vec<(usize, usize, f64)> = cands
        .into_iter()
        .map(|(row, col, d)| (row, col, kernel(d, reference, h)))
        .collect();
    weights.push((c.0, c.1, 1.0));
    weights.sort_by_key(|w| (w.0, w.1));
    Ok(WeightMap {
        center: c,
        search_radius,
        patch_radius,
        weights,
    })
}

/// Weighted ML estimate of one layer at the weight map's center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WmleEstimate {
    pub interferogram: Complex64,
    pub master_intensity: f64,
    pub slave_intensity: f64,
    pub params: FilterParams,
}

pub fn wmle_estimate(stack: &InterferogramStack, layer: usize, weights: &WeightMap) -> Result<WmleEstimate> {
    let l = stack
        .layers()
        .get(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} out of range")))?;
    let mut acc = Accum::default();
    for &(row, col, w) in &weights.weights {
        let z = l.interferogram.get(row, col);
        acc.add(
            w,
            Complex64::new(z.re as f64, z.im as f64),
            *l.master_intensity.get(row, col) as f64,
            *l.slave_intensity.get(row, col) as f64,
        );
    }
    acc.finish()
}

#[derive(Clone, Copy, Default)]
struct Accum {
    w: f64,
    z: Complex64,
    i1: f64,
    i2: f64,
    zz: f64,
}

impl Accum {
    #[inline]
    fn add(&mut self, w: f64, z: Complex64, i1: f64, i2: f64) {
        self.w += w;
        self.z += z * w;
        self.i1 += w * i1;
        self.i2 += w * i2;
        self.zz += w * z.norm_sqr();
    }

    fn finish(&self) -> Result<WmleEstimate> {
        if !(self.w > 0.0) {
            return Err(Error::Internal("all filter weights are zero".into()));
        }
        let i1 = self.i1 / self.w;
        let i2 = self.i2 / self.w;
        let mut z = self.z / self.w;
        let bound = (i1 * i2).sqrt();
        let mag = z.norm();
        if mag > bound {
            z *= bound / mag;
        }
        let variance = (self.zz / self.w - z.norm_sqr()).max(0.0);
        Ok(WmleEstimate {
            interferogram: z,
            master_intensity: i1,
            slave_intensity: i2,
            params: FilterParams {
                phase: z.im.atan2(z.re),
                mean_intensity: 0.5 * (i1 + i2),
                variance,
            },
        })
    }
}

/// Non-local WMLE filter over the whole stack.
///
/// With `iterations > 1`, later passes compute similarities on the previous
/// output while still averaging the original single-look samples.
pub fn wmle_filter(stack: &InterferogramStack, config: &FilterConfig) -> Result<FilteredStack> {
    config.validate()?;
    let h = config.kernel_bandwidth(stack.len());
    let mut guide = Features::new(stack, config.phase_weight);
    let mut out = None;
    for _ in 0..config.iterations {
        let filtered = filter_pass(stack, &guide, config, h)?;
        guide = Features::new(&filtered.stack, config.phase_weight);
        out = Some(filtered);
    }
    out.ok_or_else(|| Error::Internal("no filter pass ran".into()))
}

/// In-place moving minimum over a `(2q+1)^2` window clipped to the image.
fn min_filter(data: &mut [f64], scratch: &mut [f64], w: usize, h: usize, q: usize) {
    scratch.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let line = &data[row * w..(row + 1) * w];
        for (col, o) in out.iter_mut().enumerate() {
            let lo = col.saturating_sub(q);
            let hi = (col + q).min(w - 1);
            *o = line[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    });
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let lo = row.saturating_sub(q);
        let hi = (row + q).min(h - 1);
        for (col, o) in out.iter_mut().enumerate() {
            *o = (lo..=hi).map(|r| scratch[r * w + col]).fold(f64::INFINITY, f64::min);
        }
    });
}

#[inline]
fn kernel(d: f64, reference: f64, h: f64) -> f64 {
    (-(d - reference).max(0.0) / h).exp()
}

/// Computes the shifted patch dissimilarity image for every search offset
/// and hands it to `visit(dr, dc, dissimilarity)`, where entry `c` is the
/// dissimilarity between `c` and `c + (dr, dc)`.
fn for_each_offset(guide: &Features, config: &FilterConfig, mut visit: impl FnMut(isize, isize, &[f64])) {
    let (w, ht) = (guide.width, guide.height);
    let p = config.patch_radius as isize;
    let r = config.search_radius as isize;
    let ew = w + 2 * p as usize;
    let eh = ht + 2 * p as usize;
    let side = (2 * p + 1) as usize;
    let mut dpix = vec![0.0f64; ew * eh];
    let mut hsum = vec![0.0f64; w * eh];
    let mut dpatch = vec![0.0f64; w * ht];
    let mut scratch = vec![0.0f64; w * ht];
    for dr in -r..=r {
        for dc in -r..=r {
            if dr == 0 && dc == 0 {
                continue;
            }
            // Per-pixel dissimilarity on the mirror padded domain.
            dpix.par_chunks_mut(ew).enumerate().for_each(|(er, line)| {
                let y = er as isize - p;
                let ra = mirror(y, ht) * w;
                let rb = mirror(y + dr, ht) * w;
                for (ec, v) in line.iter_mut().enumerate() {
                    let x = ec as isize - p;
                    *v = guide.delta(ra + mirror(x, w), rb + mirror(x + dc, w));
                }
            });
            hsum.par_chunks_mut(w).enumerate().for_each(|(er, out)| {
                let line = &dpix[er * ew..(er + 1) * ew];
                for (col, o) in out.iter_mut().enumerate() {
                    *o = line[col..col + side].iter().sum();
                }
            });
            dpatch.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
                for (col, o) in out.iter_mut().enumerate() {
                    *o = (0..side).map(|k| hsum[(row + k) * w + col]).sum();
                }
            });
            if config.shift_radius > 0 {
                min_filter(&mut dpatch, &mut scratch, w, ht, config.shift_radius);
            }
            visit(dr, dc, &dpatch);
        }
    }
}

#[inline]
fn in_bounds(row: usize, col: usize, dr: isize, dc: isize, w: usize, h: usize) -> Option<usize> {
    let r = row as isize + dr;
    let c = col as isize + dc;
    (r >= 0 && c >= 0 && r < h as isize && c < w as isize).then(|| r as usize * w + c as usize)
}

fn filter_pass(
    stack: &InterferogramStack,
    guide: &Features,
    config: &FilterConfig,
    h: f64,
) -> Result<FilteredStack> {
    let (w, ht) = (stack.width(), stack.height());
    let n_layers = stack.len();
    let k = config.reference_rank;

    // Pass 1: k smallest candidate dissimilarities per pixel.
    let mut smallest: Vec<Vec<f64>> = vec![Vec::with_capacity(k + 1); w * ht];
    for_each_offset(guide, config, |dr, dc, d| {
        smallest.par_chunks_mut(w).enumerate().for_each(|(row, line)| {
            for (col, best) in line.iter_mut().enumerate() {
                if in_bounds(row, col, dr, dc, w, ht).is_none() {
                    continue;
                }
                let v = d[row * w + col];
                if best.len() == k && v >= best[k - 1] {
                    continue;
                }
                let pos = best.partition_point(|&x| x <= v);
                best.insert(pos, v);
                best.truncate(k);
            }
        });
    });
    let reference: Vec<f64> = smallest
        .iter()
        .map(|b| b.last().copied().unwrap_or(0.0))
        .collect();
    drop(smallest);

    // Pass 2: weighted sums.
    let samples: Vec<Vec<(Complex64, f64, f64)>> = stack
        .layers()
        .iter()
        .map(|l| {
            l.interferogram
                .data()
                .iter()
                .zip(l.master_intensity.data())
                .zip(l.slave_intensity.data())
                .map(|((z, &a), &b)| (Complex64::new(z.re as f64, z.im as f64), a as f64, b as f64))
                .collect()
        })
        .collect();
    // Self weight equals the maximum weight, 1.
    let mut acc: Vec<(f64, Vec<Accum>)> = (0..w * ht)
        .map(|idx| {
            let layers = samples
                .iter()
                .map(|smp| {
                    let mut a = Accum::default();
                    let (z, i1, i2) = smp[idx];
                    a.add(1.0, z, i1, i2);
                    a
                })
                .collect();
            (1.0, layers)
        })
        .collect();
    for_each_offset(guide, config, |dr, dc, d| {
        acc.par_chunks_mut(w).enumerate().for_each(|(row, line)| {
            for (col, (w2, layers)) in line.iter_mut().enumerate() {
                let Some(sidx) = in_bounds(row, col, dr, dc, w, ht) else {
                    continue;
                };
                let idx = row * w + col;
                let wt = kernel(d[idx], reference[idx], h);
                *w2 += wt * wt;
                for (a, smp) in layers.iter_mut().zip(&samples) {
                    let (z, i1, i2) = smp[sidx];
                    a.add(wt, z, i1, i2);
                }
            }
        });
    });

    let mut layers: Vec<StackLayer> = (0..n_layers).map(|_| StackLayer::zeros(w, ht)).collect();
    let mut variance: Vec<Raster<f32>> = (0..n_layers).map(|_| Raster::filled(w, ht, 0.0)).collect();
    let mut enl = Raster::filled(w, ht, 0.0f32);
    for (idx, (w2, accs)) in acc.iter().enumerate() {
        let total = accs[0].w;
        enl.data_mut()[idx] = (total * total / w2) as f32;
        for (n, a) in accs.iter().enumerate() {
            let es = a.finish()?;
            layers[n].interferogram.data_mut()[idx] =
                Complex32::new(es.interferogram.re as f32, es.interferogram.im as f32);
            layers[n].master_intensity.data_mut()[idx] = es.master_intensity as f32;
            layers[n].slave_intensity.data_mut()[idx] = es.slave_intensity as f32;
            variance[n].data_mut()[idx] = es.params.variance as f32;
        }
    }
    let stack = InterferogramStack::new(stack.geometry().clone(), stack.pixel_spacing(), layers)?;
    Ok(FilteredStack {
        stack,
        variance,
        enl,
    })
}
