//! Numeric diagnostics: the H test for heteroscedastic level-1 errors,
//! Anderson–Darling normality, random-effect correlation, χ² tails.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDesign;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lme::{FittedLME, ResidualSet};
use crate::pboot::{self, BootstrapConfig, BootstrapDistribution};
use crate::special;

/// Default minimum group size for the H test.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 10;

fn check_df(df: f64) -> Result<()> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::InvalidParams(format!("degrees of freedom must be positive, got {df}")));
    }
    Ok(())
}

/// P(χ²_df ≥ x).
pub fn chisq_sf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(x >= 0.0) {
        return Err(Error::InvalidParams(format!("chi-square argument must be >= 0, got {x}")));
    }
    Ok(special::gamma_q(df / 2.0, x / 2.0))
}

/// P(χ²_df ≤ x).
pub fn chisq_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(x >= 0.0) {
        return Err(Error::InvalidParams(format!("chi-square argument must be >= 0, got {x}")));
    }
    Ok(special::gamma_p(df / 2.0, x / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDispersion {
    pub label: String,
    pub n: usize,
    /// Rank of the group's own design matrix.
    pub rank: usize,
    /// Residual variance of the group's separate OLS fit.
    pub s2: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub groups: Vec<GroupDispersion>,
    /// Groups left out, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Standardized log-dispersion d_i of each eligible group.
///
/// A group is eligible when n_i ≥ `min_size`, n_i − r_i ≥ 1 and its OLS
/// residual variance is positive. Columns constant within a group reduce
/// that group's rank r_i.
pub fn group_dispersion(design: &GroupedDesign, min_size: usize) -> Result<Dispersion> {
    let mut eligible = Vec::new();
    let mut excluded = Vec::new();
    for grp in &design.groups {
        let n = grp.n();
        if n < min_size {
            excluded.push((grp.label.clone(), format!("{n} rows < minimum {min_size}")));
            continue;
        }
        let (res, rank) = linalg::ols_residual(&grp.x, &grp.y);
        if n <= rank {
            excluded.push((grp.label.clone(), format!("no residual degrees of freedom (n={n}, rank={rank})")));
            continue;
        }
        let rss = res.norm_squared();
        if rss <= (1e-12 * grp.y.norm()).powi(2) || rss == 0.0 {
            log::warn!("group `{}` is fitted exactly; excluded from the H statistic", grp.label);
            excluded.push((grp.label.clone(), "exact fit (zero residual variance)".into()));
            continue;
        }
        eligible.push(GroupDispersion {
            label: grp.label.clone(),
            n,
            rank,
            s2: rss / (n - rank) as f64,
            d: 0.0,
        });
    }
    if eligible.len() < 2 {
        return Err(Error::TooFewGroups {
            found: eligible.len(),
            needed: 2,
        });
    }
    let (num, den) = eligible.iter().fold((0.0, 0.0), |(a, b), g| {
        let w = (g.n - g.rank) as f64;
        (a + w * g.s2.ln(), b + w)
    });
    let pooled = num / den;
    for g in &mut eligible {
        let w = (g.n - g.rank) as f64;
        g.d = (g.s2.ln() - pooled) / (2.0 / w).sqrt();
    }
    Ok(Dispersion {
        groups: eligible,
        excluded,
    })
}

/// H = Σ d_i².
pub fn h_statistic(design: &GroupedDesign, min_size: usize) -> Result<f64> {
    Ok(group_dispersion(design, min_size)?.groups.iter().map(|g| g.d * g.d).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HTestResult {
    pub min_group_size: usize,
    pub g_star: usize,
    pub groups: Vec<GroupDispersion>,
    pub h: f64,
    pub df: usize,
    pub p_naive: f64,
    pub p_bootstrap: Option<f64>,
    pub bootstrap_replicates: Option<usize>,
}

pub enum HTestMode<'a> {
    ChiSquare,
    /// Reference distribution from parametric-bootstrap responses of `fitted`;
    /// the same eligibility filter is applied to every replicate.
    Bootstrap {
        fitted: &'a FittedLME,
        config: BootstrapConfig,
    },
}

pub fn h_test(design: &GroupedDesign, min_size: usize, mode: HTestMode<'_>) -> Result<HTestResult> {
    let disp = group_dispersion(design, min_size)?;
    let h: f64 = disp.groups.iter().map(|g| g.d * g.d).sum();
    let df = disp.groups.len() - 1;
    let p_naive = chisq_sf(h, df as f64)?;
    let (p_bootstrap, bootstrap_replicates) = match mode {
        HTestMode::ChiSquare => (None, None),
        HTestMode::Bootstrap { fitted, config } => {
            let dist = h_bootstrap(design, min_size, fitted, &config)?;
            (Some(dist.p_value), Some(config.replicates))
        }
    };
    Ok(HTestResult {
        min_group_size: min_size,
        g_star: disp.groups.len(),
        groups: disp.groups,
        h,
        df,
        p_naive,
        p_bootstrap,
        bootstrap_replicates,
    })
}

/// Bootstrap distribution of H. Refitting is not needed (H only uses the
/// response), so `config.refit` is ignored.
pub fn h_bootstrap(
    design: &GroupedDesign,
    min_size: usize,
    fitted: &FittedLME,
    config: &BootstrapConfig,
) -> Result<BootstrapDistribution> {
    let cfg = BootstrapConfig {
        refit: false,
        ..config.clone()
    };
    pboot::bootstrap_statistic(
        fitted,
        design,
        |ctx| h_statistic(ctx.design, min_size).ok(),
        &cfg,
    )
}

/// Runs the H test for each minimum group size, skipping sizes that leave
/// fewer than two eligible groups.
pub fn h_sweep(
    design: &GroupedDesign,
    min_sizes: impl IntoIterator<Item = usize>,
    bootstrap: Option<(&FittedLME, &BootstrapConfig)>,
) -> Result<Vec<HTestResult>> {
    let mut out = Vec::new();
    for m in min_sizes {
        let mode = match bootstrap {
            None => HTestMode::ChiSquare,
            Some((fitted, cfg)) => HTestMode::Bootstrap {
                fitted,
                config: cfg.clone(),
            },
        };
        match h_test(design, m, mode) {
            Ok(r) => out.push(r),
            Err(Error::TooFewGroups { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn fmt_opt(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned text table: min size, H, df, naive p, bootstrap p.
pub fn h_table_text(rows: &[HTestResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>9} {:>9} {:>5} {:>9} {:>11}", "min size", "H", "df", "naive p", "bootstrap p");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>9} {:>9.1} {:>5} {:>9.4} {:>11}",
            r.min_group_size,
            r.h,
            r.df,
            r.p_naive,
            fmt_opt(r.p_bootstrap)
        );
    }
    s
}

pub fn h_table_csv(rows: &[HTestResult]) -> String {
    let mut s = String::from("min_group_size,H,df,p_naive,p_bootstrap\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.min_group_size,
            r.h,
            r.df,
            r.p_naive,
            r.p_bootstrap.map_or_else(String::new, |v| v.to_string())
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ADTestResult {
    /// A² before the small-sample adjustment.
    pub a2: f64,
    /// A²(1 + 0.75/n + 2.25/n²).
    pub a2_adjusted: f64,
    pub p: f64,
    pub n: usize,
}

/// Anderson–Darling test of normality with mean and variance estimated.
pub fn anderson_darling(sample: &[f64]) -> Result<ADTestResult> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::SampleTooSmall { needed: 8, got: n });
    }
    let mut x = sample.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("sample has non-finite values".into()));
    }
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) || var.sqrt() <= 1e-14 * mean.abs() {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let sd = var.sqrt();
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    // ln Φ(z) and ln(1 − Φ(z)) = ln Φ(−z), both from erfc to keep the tails accurate.
    let ln_cdf = |t: f64| (0.5 * special::erfc(-t / std::f64::consts::SQRT_2)).ln();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (ln_cdf(z[i]) + ln_cdf(-z[n - 1 - i])))
        .sum();
    let a2 = -nf - s / nf;
    let adj = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if adj >= 0.6 {
        (1.2937 - 5.709 * adj + 0.0186 * adj * adj).exp()
    } else if adj >= 0.34 {
        (0.9177 - 4.279 * adj - 1.38 * adj * adj).exp()
    } else if adj >= 0.2 {
        1.0 - (-8.318 + 42.796 * adj - 59.938 * adj * adj).exp()
    } else {
        1.0 - (-13.436 + 101.14 * adj - 223.73 * adj * adj).exp()
    };
    // The exponential branch turns upward past A² ≈ 153.
    let p = if adj > 153.0 { f64::MIN_POSITIVE } else { p };
    Ok(ADTestResult {
        a2,
        a2_adjusted: adj,
        p: p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReCorrelation {
    /// Sample correlation matrix of the predicted random effects.
    pub correlation: DMatrix<f64>,
    /// Least-squares line of component 2 on component 1.
    pub slope: f64,
    pub intercept: f64,
}

/// Correlation between predicted random effects, with the fitted line of
/// the second component on the first.
pub fn re_correlation(residuals: &ResidualSet) -> Result<ReCorrelation> {
    let g = residuals.level2.len();
    let q = residuals.level2.first().map_or(0, |b| b.len());
    if q < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 random effects, have {q}")));
    }
    if g < 3 {
        return Err(Error::SampleTooSmall { needed: 3, got: g });
    }
    let cols: Vec<Vec<f64>> = (0..q).map(|k| residuals.level2_component(k)).collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / g as f64).collect();
    let cov = DMatrix::from_fn(q, q, |a, b| {
        cols[a]
            .iter()
            .zip(&cols[b])
            .map(|(x, y)| (x - means[a]) * (y - means[b]))
            .sum::<f64>()
    });
    if (0..q).any(|k| !(cov[(k, k)] > 0.0)) {
        return Err(Error::Degenerate("a random-effect component has zero variance".into()));
    }
    let correlation = DMatrix::from_fn(q, q, |a, b| {
        if a == b {
            1.0
        } else {
            cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()
        }
    });
    let slope = cov[(0, 1)] / cov[(0, 0)];
    Ok(ReCorrelation {
        correlation,
        slope,
        intercept: means[1] - slope * means[0],
    })
}
