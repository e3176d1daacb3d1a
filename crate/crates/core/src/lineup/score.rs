//! Design-appropriate "how much does this panel stand out" scores, computed
//! from what is drawn. Used by simulated observers.

use std::collections::BTreeMap;

use rand::Rng;

use super::{DesignKind, Lineup, PanelData, Primitive};
use crate::rng;

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return 0.0;
    }
    v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n / (m2 * m2)
}

fn points(panel: &PanelData) -> &[[f64; 2]] {
    panel
        .primitives
        .iter()
        .find_map(|p| match p {
            Primitive::Points { xy } => Some(xy.as_slice()),
            _ => None,
        })
        .unwrap_or(&[])
}

fn path(panel: &PanelData) -> &[[f64; 2]] {
    panel
        .primitives
        .iter()
        .find_map(|p| match p {
            Primitive::Path { xy } => Some(xy.as_slice()),
            _ => None,
        })
        .unwrap_or(&[])
}

/// Larger means "looks less like the others should". The scale is only
/// comparable between panels of the same lineup.
///
/// - Q-Q: kurtosis of the plotted sample, i.e. how strongly the tails bend
///   away from the line
/// - box plots: coefficient of variation of box heights
/// - fanned lines: spread of slopes
/// - scatter + smoother: largest smoother excursion over the point SD
/// - random-effect scatter: |correlation|
/// - dot plot: spread of level means over the point SD
pub fn discrepancy(panel: &PanelData) -> f64 {
    match panel.kind {
        DesignKind::Qq => {
            let ys: Vec<f64> = points(panel).iter().map(|p| p[1]).collect();
            kurtosis(&ys)
        }
        DesignKind::Boxplots => {
            let heights: Vec<f64> = panel
                .primitives
                .iter()
                .filter_map(|p| match p {
                    Primitive::Box(b) => Some(b.q3 - b.q1),
                    _ => None,
                })
                .collect();
            let mean = heights.iter().sum::<f64>() / heights.len().max(1) as f64;
            if mean > 0.0 { sd(&heights) / mean } else { 0.0 }
        }
        DesignKind::FannedLines => {
            let slopes: Vec<f64> = panel
                .primitives
                .iter()
                .flat_map(|p| match p {
                    Primitive::Segments { lines } => lines.clone(),
                    _ => vec![],
                })
                .map(|[a, b]| (b[1] - a[1]) / (b[0] - a[0]))
                .collect();
            sd(&slopes)
        }
        DesignKind::ScatterSmooth => {
            let s = sd(&points(panel).iter().map(|p| p[1]).collect::<Vec<_>>());
            let mean = points(panel).iter().map(|p| p[1]).sum::<f64>() / points(panel).len().max(1) as f64;
            let excursion = path(panel).iter().map(|p| (p[1] - mean).abs()).fold(0.0, f64::max);
            if s > 0.0 { excursion / s } else { 0.0 }
        }
        DesignKind::ReScatter => {
            let pts = points(panel);
            let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
            let (sx, sy) = (sd(&xs), sd(&ys));
            if sx == 0.0 || sy == 0.0 {
                return 0.0;
            }
            let n = pts.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
            let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
            (cov / (sx * sy)).abs()
        }
        DesignKind::DotPlot => {
            let pts = points(panel);
            let mut by_level: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
            for p in pts {
                by_level.entry(p[0].round() as i64).or_default().push(p[1]);
            }
            let means: Vec<f64> = by_level.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let s = sd(&pts.iter().map(|p| p[1]).collect::<Vec<_>>());
            if s > 0.0 { sd(&means) / s } else { 0.0 }
        }
    }
}

/// 1-based index of the panel with the largest [`discrepancy`]; the first
/// one wins ties.
pub fn top_panel(panels: &[PanelData]) -> usize {
    panels
        .iter()
        .map(discrepancy)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc })
        .0
        + 1
}

/// Picks (1-based) of `k` simulated observers. Each independently picks the
/// panel with the largest [`discrepancy`] with probability `accuracy`, and
/// otherwise a panel uniformly at random.
pub fn observer_picks(lineup: &Lineup, k: usize, accuracy: f64, seed: u64) -> Vec<usize> {
    let best = top_panel(&lineup.panels);
    let accuracy = accuracy.clamp(0.0, 1.0);
    let m = lineup.m();
    let mut r = rng::stream(seed, 0);
    (0..k)
        .map(|_| if r.random::<f64>() < accuracy { best } else { r.random_range(1..=m) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineup::{panel_boxplots, panel_qq, BoxOrder};

    #[test]
    fn outlier_raises_qq_score() {
        let base: Vec<f64> = (1..=40).map(|i| crate::special::normal_quantile((i as f64 - 0.5) / 40.0)).collect();
        let calm = discrepancy(&panel_qq(&base, 0.95).unwrap());
        let mut wild = base.clone();
        wild[39] = 12.0;
        assert!(discrepancy(&panel_qq(&wild, 0.95).unwrap()) > calm + 1.0);
        assert!(calm > 2.0 && calm < 3.0);
    }

    #[test]
    fn unequal_spread_raises_box_score() {
        let labels: Vec<String> = (0..40).map(|i| format!("g{}", i / 10)).collect();
        let even: Vec<f64> = (0..40).map(|i| (i % 10) as f64).collect();
        let uneven: Vec<f64> = (0..40).map(|i| (i % 10) as f64 * (1 + i / 10) as f64).collect();
        let a = discrepancy(&panel_boxplots(&even, &labels, BoxOrder::ByIqr, false).unwrap());
        let b = discrepancy(&panel_boxplots(&uneven, &labels, BoxOrder::ByIqr, false).unwrap());
        assert_eq!(a, 0.0);
        assert!(b > 0.3);
    }
}
