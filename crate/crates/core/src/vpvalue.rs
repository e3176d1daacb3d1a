//! Visual p-values: how surprising is it that x of K observers picked the
//! data panel out of m, if all panels are exchangeable?
//!
//! All K observers look at the same lineup, so their picks share the same
//! panel "signals": each panel gets u_j ~ U[0,1] and every observer picks
//! panel j with probability u_j/Σu. The data-panel count is then
//! Binomial(K, u_1/Σu) given the signals.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::special::ln_gamma;

pub const DEFAULT_REPS: usize = 1_000_000;
pub const DEFAULT_COMBINED_REPS: usize = 100_000;
pub const MIN_REPS: usize = 100_000;

/// Replicates per random stream. Fixed so the answer does not depend on
/// the number of threads.
const BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PMethod {
    VisualMc { reps: usize },
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualPValue {
    pub x: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub p: f64,
    pub method: PMethod,
    pub mc_se: Option<f64>,
}

impl VisualPValue {
    pub fn significance(&self) -> &'static str {
        significance_code(self.p)
    }
}

/// Significance code with cut points 0.001, 0.01, 0.05, 0.1.
pub fn significance_code(p: f64) -> &'static str {
    if p <= 0.001 {
        "***"
    } else if p <= 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else if p <= 0.1 {
        "."
    } else {
        ""
    }
}

fn check_counts(x: usize, k: usize, m: usize) -> Result<()> {
    if x > k {
        return Err(Error::InvalidCounts(format!("x = {x} exceeds K = {k}")));
    }
    if m < 2 {
        return Err(Error::InvalidCounts(format!("lineup needs at least 2 panels, got {m}")));
    }
    Ok(())
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::InvalidCounts(format!("need at least {MIN_REPS} simulation runs, got {reps}")));
    }
    Ok(())
}

/// Simulated distribution of a pick count; thresholds are read off one
/// shared simulation, so p is monotone in x.
#[derive(Debug, Clone, PartialEq)]
pub struct TailDistribution {
    /// `counts[y]` = number of runs with exactly y data picks.
    pub counts: Vec<u64>,
    pub reps: usize,
}

impl TailDistribution {
    fn exceed(&self, x: usize) -> u64 {
        self.counts.iter().skip(x).sum()
    }

    /// Monte Carlo P(Y ≥ x), as (1 + #{Y ≥ x}) / (1 + reps) so that it is
    /// never zero; P(Y ≥ 0) is exactly 1.
    pub fn p_at_least(&self, x: usize) -> f64 {
        (1 + self.exceed(x)) as f64 / (1 + self.reps) as f64
    }

    pub fn mc_se(&self, x: usize) -> f64 {
        let p = self.exceed(x) as f64 / self.reps as f64;
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }
}

fn simulate_tail<F>(max: usize, reps: usize, seed: u64, draw: F) -> TailDistribution
where
    F: Fn(&mut rng::StreamRng) -> usize + Sync,
{
    let blocks = reps.div_ceil(BLOCK);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut hist = vec![0u64; max + 1];
            let mut r = rng::stream(seed, b as u64);
            let n = BLOCK.min(reps - b * BLOCK);
            for _ in 0..n {
                hist[draw(&mut r)] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; max + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    TailDistribution { counts, reps }
}

fn draw_count<R: Rng>(r: &mut R, k: usize, data_signal: f64, null_panels: usize) -> usize {
    let null: f64 = (0..null_panels).map(|_| r.random::<f64>()).sum();
    let total = data_signal + null;
    let p = if total > 0.0 { data_signal / total } else { 0.0 };
    Binomial::new(k as u64, p).expect("probability in [0, 1]").sample(r) as usize
}

/// Distribution of the data-panel count for K evaluations of one lineup.
pub fn visual_tail(k: usize, m: usize, reps: usize, seed: u64) -> Result<TailDistribution> {
    check_counts(0, k, m)?;
    check_reps(reps)?;
    Ok(simulate_tail(k, reps, seed, |r| {
        let u1: f64 = r.random();
        draw_count(r, k, u1, m - 1)
    }))
}

pub fn visual_pvalue_mc(x: usize, k: usize, m: usize, reps: usize, seed: u64) -> Result<VisualPValue> {
    check_counts(x, k, m)?;
    let tail = visual_tail(k, m, reps, seed)?;
    Ok(VisualPValue {
        x,
        k,
        m,
        p: tail.p_at_least(x),
        method: PMethod::VisualMc { reps },
        mc_se: Some(tail.mc_se(x)),
    })
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact upper tail of Binomial(K, 1/m) at x.
pub fn binomial_pvalue(x: usize, k: usize, m: usize) -> Result<VisualPValue> {
    check_counts(x, k, m)?;
    let p = if x == 0 {
        1.0
    } else {
        let q = 1.0 / m as f64;
        let (lq, l1q) = (q.ln(), (1.0 - q).ln());
        (x..=k)
            .map(|j| (ln_choose(k, j) + j as f64 * lq + (k - j) as f64 * l1q).exp())
            .sum::<f64>()
            .min(1.0)
    };
    Ok(VisualPValue {
        x,
        k,
        m,
        p,
        method: PMethod::Binomial,
        mc_se: None,
    })
}

/// How replicate lineups of the same data relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationModel {
    /// Replicates show the same data plot with fresh null plots: the data
    /// panel's signal is drawn once per run, null signals per replicate.
    #[default]
    SharedDataSignal,
    /// Every replicate lineup is simulated independently.
    Independent,
}

/// Distribution of the total data picks over several replicate lineups.
pub fn combined_tail(
    k_list: &[usize],
    m: usize,
    reps: usize,
    seed: u64,
    model: CombinationModel,
) -> Result<TailDistribution> {
    if k_list.is_empty() {
        return Err(Error::InvalidCounts("no replicate lineups given".into()));
    }
    check_counts(0, 0, m)?;
    check_reps(reps)?;
    let total: usize = k_list.iter().sum();
    Ok(simulate_tail(total, reps, seed, |r| {
        let shared: f64 = r.random();
        k_list
            .iter()
            .map(|&k| {
                let u1 = match model {
                    CombinationModel::SharedDataSignal => shared,
                    CombinationModel::Independent => r.random(),
                };
                draw_count(r, k, u1, m - 1)
            })
            .sum()
    }))
}

pub fn combined_pvalue(
    x_total: usize,
    k_list: &[usize],
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<VisualPValue> {
    combined_pvalue_with(x_total, k_list, m, reps, seed, CombinationModel::default())
}

pub fn combined_pvalue_with(
    x_total: usize,
    k_list: &[usize],
    m: usize,
    reps: usize,
    seed: u64,
    model: CombinationModel,
) -> Result<VisualPValue> {
    let total: usize = k_list.iter().sum();
    check_counts(x_total, total, m)?;
    let tail = combined_tail(k_list, m, reps, seed, model)?;
    Ok(VisualPValue {
        x: x_total,
        k: total,
        m,
        p: tail.p_at_least(x_total),
        method: PMethod::VisualMc { reps },
        mc_se: Some(tail.mc_se(x_total)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Outlier,
    Spread,
    Trend,
    Asymmetry,
    Other(String),
}

impl Reason {
    pub const TAGS: [&'static str; 5] = ["outlier", "spread", "trend", "asymmetry", "other"];

    pub fn tag(&self) -> &'static str {
        match self {
            Reason::Outlier => "outlier",
            Reason::Spread => "spread",
            Reason::Trend => "trend",
            Reason::Asymmetry => "asymmetry",
            Reason::Other(_) => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub observer_id: String,
    /// 1-based panel number.
    pub panel_index: usize,
    #[serde(default)]
    pub reasons: Vec<Reason>,
    pub confidence: u8,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub lineup_id: String,
    pub m: usize,
    pub picks: Vec<Pick>,
}

impl EvaluationSet {
    pub fn new(lineup_id: impl Into<String>, m: usize) -> Self {
        Self {
            lineup_id: lineup_id.into(),
            m,
            picks: Vec::new(),
        }
    }

    pub fn validate_pick(&self, pick: &Pick) -> Result<()> {
        if !(1..=self.m).contains(&pick.panel_index) {
            return Err(Error::InvalidCounts(format!(
                "panel {} outside 1..={}",
                pick.panel_index, self.m
            )));
        }
        if !(1..=5).contains(&pick.confidence) {
            return Err(Error::InvalidCounts(format!("confidence {} outside 1..=5", pick.confidence)));
        }
        Ok(())
    }

    pub fn push(&mut self, pick: Pick) -> Result<()> {
        self.validate_pick(&pick)?;
        self.picks.push(pick);
        Ok(())
    }

    /// Number of picks of the (1-based) answer panel.
    pub fn data_picks(&self, answer_index: usize) -> usize {
        self.picks.iter().filter(|p| p.panel_index == answer_index).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonShare {
    pub reason: String,
    pub data_picks: usize,
    pub picks: usize,
    pub percent: f64,
}

/// Share of data-panel picks among the picks citing each reason. Reasons
/// nobody cited are left out; all free-text reasons count as "other".
pub fn reason_breakdown(evals: &EvaluationSet, answer_index: usize) -> Vec<ReasonShare> {
    Reason::TAGS
        .iter()
        .filter_map(|&tag| {
            let citing: Vec<&Pick> = evals
                .picks
                .iter()
                .filter(|p| p.reasons.iter().any(|r| r.tag() == tag))
                .collect();
            if citing.is_empty() {
                return None;
            }
            let hits = citing.iter().filter(|p| p.panel_index == answer_index).count();
            Some(ReasonShare {
                reason: tag.to_string(),
                data_picks: hits,
                picks: citing.len(),
                percent: 100.0 * hits as f64 / citing.len() as f64,
            })
        })
        .collect()
}
