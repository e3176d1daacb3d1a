//! Panel builders: turn residuals or raw data into plot primitives.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diag;
use crate::error::{Error, Result};
use crate::lme::ResidualSet;
use crate::rng;
use crate::special::{normal_pdf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    FannedLines,
    Boxplots,
    ScatterSmooth,
    Qq,
    ReScatter,
    DotPlot,
}

/// Five-number summary drawn as a vertical box at `position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub position: f64,
    pub width: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
    /// Fill intensity in [0, 1] for shaded designs.
    pub fill: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Primitive {
    Points { xy: Vec<[f64; 2]> },
    Segments { lines: Vec<[[f64; 2]; 2]> },
    Box(BoxSummary),
    /// Closed polygon, drawn shaded.
    Band { polygon: Vec<[f64; 2]> },
    Path { xy: Vec<[f64; 2]> },
}

impl Primitive {
    fn for_each_point(&self, f: &mut impl FnMut(f64, f64)) {
        match self {
            Primitive::Points { xy } | Primitive::Band { polygon: xy } | Primitive::Path { xy } => {
                xy.iter().for_each(|p| f(p[0], p[1]))
            }
            Primitive::Segments { lines } => lines.iter().flatten().for_each(|p| f(p[0], p[1])),
            Primitive::Box(b) => {
                for x in [b.position - b.width / 2.0, b.position + b.width / 2.0] {
                    f(x, b.lower_whisker);
                    f(x, b.upper_whisker);
                }
                b.outliers.iter().for_each(|&y| f(b.position, y));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Bounds {
    pub fn union(self, o: Bounds) -> Bounds {
        Bounds {
            x: [self.x[0].min(o.x[0]), self.x[1].max(o.x[1])],
            y: [self.y[0].min(o.y[0]), self.y[1].max(o.y[1])],
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x[0]..=self.x[1]).contains(&x) && (self.y[0]..=self.y[1]).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    pub kind: DesignKind,
    pub primitives: Vec<Primitive>,
}

impl PanelData {
    /// Tight bounding box of every coordinate, or `None` for an empty panel.
    pub fn bounds(&self) -> Option<Bounds> {
        let mut b: Option<Bounds> = None;
        for p in &self.primitives {
            p.for_each_point(&mut |x, y| {
                let pt = Bounds { x: [x, x], y: [y, y] };
                b = Some(b.map_or(pt, |b| b.union(pt)));
            });
        }
        b
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        for p in &self.primitives {
            p.for_each_point(&mut |x, y| ok &= x.is_finite() && y.is_finite());
        }
        ok
    }
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("{what} has non-finite values")));
    }
    Ok(())
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} x values vs {b} y values")));
    }
    Ok(())
}

/// One OLS line per group over that group's x range. Groups whose x is
/// constant are skipped; the second value is how many were.
pub fn panel_fanned_lines(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(PanelData, usize)> {
    same_len(xs.len(), ys.len())?;
    let mut lines = Vec::new();
    let mut skipped = 0;
    for (x, y) in xs.iter().zip(ys) {
        same_len(x.len(), y.len())?;
        ensure_finite(x, "x")?;
        ensure_finite(y, "y")?;
        let n = x.len() as f64;
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if x.len() < 2 || hi - lo <= 0.0 {
            skipped += 1;
            continue;
        }
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let at = |v: f64| my + slope * (v - mx);
        lines.push([[lo, at(lo)], [hi, at(hi)]]);
    }
    Ok((
        PanelData {
            kind: DesignKind::FannedLines,
            primitives: vec![Primitive::Segments { lines }],
        },
        skipped,
    ))
}

/// Sample quantile by linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxOrder {
    /// Order of first appearance.
    #[default]
    AsIs,
    /// Ascending interquartile range, ties by label.
    ByIqr,
}

pub const MIN_BOX_SIZE: usize = 5;

fn box_summary(sorted: &[f64]) -> BoxSummary {
    let q1 = quantile_sorted(sorted, 0.25);
    let median = quantile_sorted(sorted, 0.5);
    let q3 = quantile_sorted(sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |v: &&f64| **v >= lo_fence && **v <= hi_fence;
    BoxSummary {
        position: 0.0,
        width: 0.6,
        lower_whisker: *sorted.iter().find(inside).unwrap_or(&q1),
        q1,
        median,
        q3,
        upper_whisker: *sorted.iter().rev().find(inside).unwrap_or(&q3),
        outliers: sorted.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
        fill: None,
    }
}

/// Side-by-side box plots of `values` split by `labels`. Levels with fewer
/// than five values are dropped. With `fill_ramp` boxes are shaded from
/// light to dark in display order.
pub fn panel_boxplots(values: &[f64], labels: &[String], order: BoxOrder, fill_ramp: bool) -> Result<PanelData> {
    same_len(labels.len(), values.len())?;
    ensure_finite(values, "values")?;
    let mut first_seen: Vec<&str> = Vec::new();
    let mut by_level: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (l, &v) in labels.iter().zip(values) {
        let e = by_level.entry(l.as_str()).or_insert_with(|| {
            first_seen.push(l.as_str());
            Vec::new()
        });
        e.push(v);
    }
    let mut boxes: Vec<(&str, BoxSummary)> = first_seen
        .into_iter()
        .filter_map(|l| {
            let mut v = by_level.remove(l).unwrap();
            if v.len() < MIN_BOX_SIZE {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some((l, box_summary(&v)))
        })
        .collect();
    if boxes.is_empty() {
        return Err(Error::SampleTooSmall {
            needed: MIN_BOX_SIZE,
            got: by_level.values().map(Vec::len).max().unwrap_or(0),
        });
    }
    if order == BoxOrder::ByIqr {
        boxes.sort_by(|a, b| (a.1.q3 - a.1.q1).total_cmp(&(b.1.q3 - b.1.q1)).then(a.0.cmp(b.0)));
    }
    let n = boxes.len();
    let primitives = boxes
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut b))| {
            b.position = (i + 1) as f64;
            if fill_ramp {
                b.fill = Some(if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 });
            }
            Primitive::Box(b)
        })
        .collect();
    Ok(PanelData {
        kind: DesignKind::Boxplots,
        primitives,
    })
}

pub const SMOOTH_SPAN: f64 = 0.75;
pub const SMOOTH_GRID: usize = 80;

/// Local-linear fit at `x0` with tricube weights over the nearest
/// ⌊span·n⌋ points.
pub fn local_linear(x: &[f64], y: &[f64], x0: f64, span: f64) -> f64 {
    let n = x.len();
    let k = ((span * n as f64).floor() as usize).clamp(2, n);
    let mut dist: Vec<f64> = x.iter().map(|v| (v - x0).abs()).collect();
    dist.sort_by(f64::total_cmp);
    let mut h = dist[k - 1];
    if h <= 0.0 {
        h = dist.iter().copied().find(|&d| d > 0.0).unwrap_or(1.0);
    }
    // A hair wider so the k-th neighbour keeps a positive weight.
    let h = h * (1.0 + 1e-10);
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let u = (xi - x0).abs() / h;
        if u >= 1.0 {
            continue;
        }
        let w = (1.0 - u.powi(3)).powi(3);
        let dx = xi - x0;
        sw += w;
        swx += w * dx;
        swy += w * yi;
        swxx += w * dx * dx;
        swxy += w * dx * yi;
    }
    let det = sw * swxx - swx * swx;
    if det.abs() <= 1e-12 * sw * swxx.max(f64::MIN_POSITIVE) {
        return swy / sw;
    }
    (swxx * swy - swx * swxy) / det
}

/// Points plus a local-linear smoother on an even 80-point grid.
pub fn panel_scatter_smooth(x: &[f64], y: &[f64]) -> Result<PanelData> {
    same_len(x.len(), y.len())?;
    if x.len() < 10 {
        return Err(Error::SampleTooSmall { needed: 10, got: x.len() });
    }
    ensure_finite(x, "x")?;
    ensure_finite(y, "y")?;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("x is constant".into()));
    }
    let path = (0..SMOOTH_GRID)
        .map(|i| {
            let g = lo + (hi - lo) * i as f64 / (SMOOTH_GRID - 1) as f64;
            [g, local_linear(x, y, g, SMOOTH_SPAN)]
        })
        .collect();
    Ok(PanelData {
        kind: DesignKind::ScatterSmooth,
        primitives: vec![
            Primitive::Points {
                xy: x.iter().zip(y).map(|(&a, &b)| [a, b]).collect(),
            },
            Primitive::Path { xy: path },
        ],
    })
}

/// Normal Q-Q geometry shared by the panel builder and the discrepancy score.
#[derive(Debug, Clone, PartialEq)]
pub struct QqGeometry {
    pub theoretical: Vec<f64>,
    pub sample: Vec<f64>,
    pub intercept: f64,
    pub slope: f64,
    pub half_width: Vec<f64>,
}

pub fn qq_geometry(sample: &[f64], band_level: f64) -> Result<QqGeometry> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::SampleTooSmall { needed: 8, got: n });
    }
    if !(band_level > 0.0 && band_level < 1.0) {
        return Err(Error::InvalidParams(format!("band level must be in (0, 1), got {band_level}")));
    }
    ensure_finite(sample, "sample")?;
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = s.iter().sum::<f64>() / nf;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 1e-14 * mean.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("sample is constant".into()));
    }
    let probs: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / nf).collect();
    let theoretical: Vec<f64> = probs.iter().map(|&p| normal_quantile(p)).collect();
    // Line through the quartiles of both coordinate sets, each taken with
    // the same interpolation rule, so a sample equal to its theoretical
    // quantiles sits exactly on the line.
    let (t1, t3) = (quantile_sorted(&theoretical, 0.25), quantile_sorted(&theoretical, 0.75));
    let (s1, s3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    let slope = (s3 - s1) / (t3 - t1);
    let intercept = s1 - slope * t1;
    let zc = normal_quantile((1.0 + band_level) / 2.0);
    let half_width = probs
        .iter()
        .zip(&theoretical)
        .map(|(&p, &z)| zc * sd / normal_pdf(z) * (p * (1.0 - p) / nf).sqrt())
        .collect();
    Ok(QqGeometry {
        theoretical,
        sample: s,
        intercept,
        slope,
        half_width,
    })
}

pub fn panel_qq(sample: &[f64], band_level: f64) -> Result<PanelData> {
    let g = qq_geometry(sample, band_level)?;
    let line = |z: f64| g.intercept + g.slope * z;
    let upper = g.theoretical.iter().zip(&g.half_width).map(|(&z, &w)| [z, line(z) + w]);
    let lower = g.theoretical.iter().zip(&g.half_width).rev().map(|(&z, &w)| [z, line(z) - w]);
    let (z0, z1) = (g.theoretical[0], *g.theoretical.last().unwrap());
    Ok(PanelData {
        kind: DesignKind::Qq,
        primitives: vec![
            Primitive::Band {
                polygon: upper.chain(lower).collect(),
            },
            Primitive::Path {
                xy: vec![[z0, line(z0)], [z1, line(z1)]],
            },
            Primitive::Points {
                xy: g.theoretical.iter().zip(&g.sample).map(|(&a, &b)| [a, b]).collect(),
            },
        ],
    })
}

/// Predicted random effects, first component against second, with the
/// least-squares line (omitted when either component is constant).
pub fn panel_re_scatter(residuals: &ResidualSet) -> Result<PanelData> {
    let fit = match diag::re_correlation(residuals) {
        Ok(c) => Some(c),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let xy: Vec<[f64; 2]> = residuals.level2.iter().map(|b| [b[0], b[1]]).collect();
    let mut primitives = vec![Primitive::Points { xy: xy.clone() }];
    if let Some(c) = fit {
        let (lo, hi) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[0]), b.max(p[0])));
        primitives.push(Primitive::Path {
            xy: vec![[lo, c.intercept + c.slope * lo], [hi, c.intercept + c.slope * hi]],
        });
    }
    Ok(PanelData {
        kind: DesignKind::ReScatter,
        primitives,
    })
}

/// Jittered dot plot of `values` by level (first-appearance order).
pub fn panel_dotplot(values: &[f64], labels: &[String], seed: u64) -> Result<PanelData> {
    same_len(labels.len(), values.len())?;
    ensure_finite(values, "values")?;
    let mut position: BTreeMap<&str, usize> = BTreeMap::new();
    let mut r = rng::stream(seed, 0);
    let xy = labels
        .iter()
        .zip(values)
        .map(|(l, &v)| {
            let next = position.len() + 1;
            let pos = *position.entry(l.as_str()).or_insert(next);
            [pos as f64 + r.random_range(-0.25..0.25), v]
        })
        .collect();
    Ok(PanelData {
        kind: DesignKind::DotPlot,
        primitives: vec![Primitive::Points { xy }],
    })
}
