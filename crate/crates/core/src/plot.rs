//! Deterministic SVG rendering of the height-difference histogram and of
//! per-pixel height rasters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_bands, read_json, write_atomic};
use crate::raster::Raster;
use crate::validation::{histogram_bins, ComparisonReport};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Histogram,
    HeightRaster,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "histogram" => Some(Self::Histogram),
            "height-raster" => Some(Self::HeightRaster),
            _ => None,
        }
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
}

/// "Nice" tick step for a range.
fn tick_step(range: f64, target: usize) -> f64 {
    let raw = range / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if m * mag >= raw {
            return m * mag;
        }
    }
    10.0 * mag
}

/// Histogram of retained differences with the truncation bounds marked.
pub fn histogram_svg(report: &ComparisonReport) -> String {
    let t = report.truncation;
    let bins = if report.histogram.is_empty() {
        histogram_bins(t, report.bin_width)
    } else {
        report.histogram.clone()
    };
    let max_count = bins.iter().map(|b| b.count).max().unwrap_or(0);
    let y_max = (max_count.max(1)) as f64;
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let lo = -t * 1.1;
    let hi = t * 1.1;
    let sx = |v: f64| x0 + (v - lo) / (hi - lo) * (x1 - x0);
    let sy = |c: f64| y0 - c / y_max * (y0 - y1);

    let mut s = String::new();
    header(&mut s, WIDTH, HEIGHT);
    for b in bins.iter().filter(|b| b.count > 0) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a78b5" stroke="#22446e" stroke-width="0.5"/>"##,
            sx(b.lower),
            sy(b.count as f64),
            sx(b.upper) - sx(b.lower),
            y0 - sy(b.count as f64)
        );
    }
    // Axes and ticks.
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let step = tick_step(hi - lo, 8);
    let mut v = (lo / step).ceil() * step;
    while v <= hi + 1e-9 {
        let x = sx(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            format_tick(v)
        );
        v += step;
    }
    let ystep = tick_step(y_max, 5).max(1.0);
    let mut c = 0.0;
    while c <= y_max + 1e-9 {
        let y = sy(c);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            format_tick(c)
        );
        c += ystep;
    }
    for bound in [-t, t] {
        let x = sx(bound);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#c0392b" stroke-dasharray="6,4"/>"##
        );
        let _ = writeln!(
            s,
            r##"<text x="{x:.2}" y="{:.2}" text-anchor="middle" fill="#c0392b">{} m</text>"##,
            y1 - 8.0,
            format_tick(bound)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">height difference (m)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">objects</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle">n = {}, std = {:.2} m, within 1 m: {:.1}%, within 2 m: {:.1}%</text>"#,
        (x0 + x1) / 2.0,
        report.retained,
        report.std,
        100.0 * report.fraction_within_1m,
        100.0 * report.fraction_within_2m
    );
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Color ramp (dark blue to yellow) quantized to 32 levels; NaN pixels stay
/// white.
fn ramp(level: usize, levels: usize) -> (u8, u8, u8) {
    let t = level as f64 / (levels - 1).max(1) as f64;
    let stops = [(0.0, (38, 28, 110)), (0.5, (33, 145, 140)), (1.0, (250, 230, 35))];
    let (a, b) = if t <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let u = (t - a.0) / (b.0 - a.0);
    let mix = |x: u8, y: u8| (x as f64 + u * (y as f64 - x as f64)).round() as u8;
    (mix(a.1 .0, b.1 .0), mix(a.1 .1, b.1 .1), mix(a.1 .2, b.1 .2))
}

/// Per-pixel heights as runs of equally colored cells plus a color bar.
pub fn height_raster_svg(raster: &Raster<f32>) -> String {
    const LEVELS: usize = 32;
    let (w, h) = (raster.width(), raster.height());
    let finite = raster.data().iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo <= hi { (lo as f64, (hi as f64).max(lo as f64 + 1e-6)) } else { (0.0, 1.0) };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT - 80.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let cell = (plot_w / w.max(1) as f64).min(plot_h / h.max(1) as f64);
    let level = |v: f32| -> Option<usize> {
        v.is_finite()
            .then(|| (((v as f64 - lo) / (hi - lo)) * (LEVELS - 1) as f64).round().clamp(0.0, (LEVELS - 1) as f64) as usize)
    };

    let mut s = String::new();
    header(&mut s, WIDTH, HEIGHT);
    for row in 0..h {
        let mut col = 0;
        while col < w {
            let lv = level(*raster.get(row, col));
            let mut end = col + 1;
            while end < w && level(*raster.get(row, end)) == lv {
                end += 1;
            }
            if let Some(lv) = lv {
                let (r, g, b) = ramp(lv, LEVELS);
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
                    MARGIN_LEFT + col as f64 * cell,
                    MARGIN_TOP + row as f64 * cell,
                    (end - col) as f64 * cell,
                    cell
                );
            }
            col = end;
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#,
        w as f64 * cell,
        h as f64 * cell
    );
    let bar_x = MARGIN_LEFT + w as f64 * cell + 30.0;
    let bar_h = plot_h / LEVELS as f64;
    for lv in 0..LEVELS {
        let (r, g, b) = ramp(lv, LEVELS);
        let _ = writeln!(
            s,
            r##"<rect x="{bar_x:.3}" y="{:.3}" width="20" height="{:.3}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            MARGIN_TOP + (LEVELS - 1 - lv) as f64 * bar_h,
            bar_h
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}">{:.1} m</text>"#,
        bar_x + 25.0,
        MARGIN_TOP + 10.0,
        hi
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}">{:.1} m</text>"#,
        bar_x + 25.0,
        MARGIN_TOP + plot_h,
        lo
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle">height of topmost scatterer ({w} x {h} px)</text>"#,
        WIDTH / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Renders a report (`histogram`) or the first band of a float raster
/// artifact (`height-raster`) to `output`.
pub fn plot_file(input: &Path, kind: PlotKind, output: &Path) -> Result<()> {
    let svg = match kind {
        PlotKind::Histogram => {
            let report: ComparisonReport = read_json(input)?;
            histogram_svg(&report)
        }
        PlotKind::HeightRaster => {
            let bands = read_bands(&input.with_extension(""))?;
            let (_, raster) = bands.into_iter().next().ok_or_else(|| Error::Format {
                path: input.to_path_buf(),
                message: "raster has no bands".into(),
            })?;
            height_raster_svg(&raster)
        }
    };
    write_atomic(output, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{FractionBasis, HistogramBin};

    fn report(bins: Vec<HistogramBin>) -> ComparisonReport {
        ComparisonReport {
            differences: Vec::new(),
            truncation: 15.0,
            bin_width: 0.5,
            fraction_basis: FractionBasis::PreTruncation,
            compared: 0,
            retained: 0,
            dropped: 0,
            within_1m: 0,
            within_2m: 0,
            fraction_within_1m: 0.0,
            fraction_within_2m: 0.0,
            mean: 0.0,
            std: 0.0,
            histogram: bins,
            unmatched: Vec::new(),
            registration: None,
        }
    }

    #[test]
    fn empty_histogram_renders_axes_only() {
        let svg = histogram_svg(&report(Vec::new()));
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("#4a78b5"));
        assert!(svg.contains("-15 m") && svg.contains(">15 m"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut bins = histogram_bins(15.0, 0.5);
        bins[29].count = 4;
        bins[31].count = 2;
        let r = report(bins);
        assert_eq!(histogram_svg(&r), histogram_svg(&r));
        assert_eq!(histogram_svg(&r).matches("#4a78b5").count(), 2);
        let raster = Raster::from_fn(10, 6, |r, c| if r == c { f32::NAN } else { (r * c) as f32 });
        assert_eq!(height_raster_svg(&raster), height_raster_svg(&raster));
    }
}
