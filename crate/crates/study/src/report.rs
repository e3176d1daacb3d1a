use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use lineup_core::lineup::AnswerKey;
use lineup_core::rng;
use lineup_core::vpvalue::{
    combined_pvalue, reason_breakdown, significance_code, visual_pvalue_mc, EvaluationSet, Pick, Reason, ReasonShare,
};

use crate::error::{Result, StudyError};
use crate::store::{Manifest, PickRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub design: String,
    pub replicate: u32,
    pub lineup_id: String,
    pub x: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// `"x/K"`.
    pub ratio: String,
    pub p: f64,
    pub significance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design: String,
    pub x: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub combined_p: f64,
    pub significance: String,
    pub reasons: Vec<ReasonShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: String,
    pub mc_reps: usize,
    pub rows: Vec<ReplicateRow>,
    pub designs: Vec<DesignSummary>,
}

pub(crate) fn answer_map(answers: &[AnswerKey]) -> BTreeMap<&str, usize> {
    answers.iter().map(|a| (a.lineup_id.as_str(), a.answer_index)).collect()
}

/// The report depends only on the manifest, the answers and the pick log
/// (in log order), so replaying a log always gives the same report.
pub fn build_report(manifest: &Manifest, answers: &[AnswerKey], picks: &[PickRecord]) -> Result<StudyReport> {
    let cfg = &manifest.config;
    let answers = answer_map(answers);
    let mut evals: BTreeMap<&str, EvaluationSet> = manifest
        .lineups
        .iter()
        .map(|l| (l.lineup_id.as_str(), EvaluationSet::new(l.lineup_id.clone(), l.m)))
        .collect();
    for p in picks {
        let set = evals
            .get_mut(p.lineup_id.as_str())
            .ok_or_else(|| StudyError::LineupNotFound(p.lineup_id.clone()))?;
        set.push(Pick {
            observer_id: p.observer_id.clone(),
            panel_index: p.panel_index,
            reasons: p.reasons.clone(),
            confidence: p.confidence,
            duration_seconds: p.duration_seconds,
        })?;
    }

    let row_seed = rng::derive_seed(cfg.report_seed, 0);
    let design_seed = rng::derive_seed(cfg.report_seed, 1);
    let mut rows = Vec::new();
    for (i, l) in manifest.lineups.iter().enumerate() {
        let answer = *answers
            .get(l.lineup_id.as_str())
            .ok_or_else(|| StudyError::LineupNotFound(l.lineup_id.clone()))?;
        let set = &evals[l.lineup_id.as_str()];
        let (x, k) = (set.data_picks(answer), set.picks.len());
        let p = visual_pvalue_mc(x, k, l.m, cfg.report_reps, rng::derive_seed(row_seed, i as u64))?.p;
        rows.push(ReplicateRow {
            design: l.design.clone(),
            replicate: l.replicate,
            lineup_id: l.lineup_id.clone(),
            x,
            k,
            ratio: format!("{x}/{k}"),
            p,
            significance: significance_code(p).to_string(),
        });
    }

    let mut designs = Vec::new();
    for (j, d) in cfg.designs.iter().enumerate() {
        let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.design == d.name).collect();
        let x: usize = mine.iter().map(|r| r.x).sum();
        let ks: Vec<usize> = mine.iter().map(|r| r.k).collect();
        let combined = combined_pvalue(x, &ks, d.m, cfg.report_reps, rng::derive_seed(design_seed, j as u64))?.p;

        let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &mine {
            for share in reason_breakdown(&evals[r.lineup_id.as_str()], answers[r.lineup_id.as_str()]) {
                let tag = Reason::TAGS.iter().find(|t| **t == share.reason).copied().unwrap_or("other");
                let e = tally.entry(tag).or_default();
                e.0 += share.data_picks;
                e.1 += share.picks;
            }
        }
        let reasons = Reason::TAGS
            .iter()
            .filter_map(|t| {
                tally.get(t).map(|&(data_picks, picks)| ReasonShare {
                    reason: t.to_string(),
                    data_picks,
                    picks,
                    percent: 100.0 * data_picks as f64 / picks as f64,
                })
            })
            .collect();
        designs.push(DesignSummary {
            design: d.name.clone(),
            x,
            k: ks.iter().sum(),
            combined_p: combined,
            significance: significance_code(combined).to_string(),
            reasons,
        });
    }
    Ok(StudyReport {
        study_id: cfg.study_id.clone(),
        mc_reps: cfg.report_reps,
        rows,
        designs,
    })
}

impl StudyReport {
    /// Fixed-width text table: one line per lineup, then one per design.
    pub fn to_text(&self) -> String {
        let mut out = format!("study {}\n\n", self.study_id);
        out.push_str(&format!("{:<24} {:>4} {:>9} {:>10}  sig\n", "design", "rep", "x/K", "p"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>4} {:>9} {:>10.4}  {}\n",
                r.design, r.replicate, r.ratio, r.p, r.significance
            ));
        }
        out.push_str(&format!("\n{:<24} {:>9} {:>10}  sig  reasons (% data picks)\n", "design", "x/K", "combined"));
        for d in &self.designs {
            let reasons: Vec<String> = d
                .reasons
                .iter()
                .map(|s| format!("{} {:.0}% of {}", s.reason, s.percent, s.picks))
                .collect();
            out.push_str(&format!(
                "{:<24} {:>9} {:>10.4}  {:<3}  {}\n",
                d.design,
                format!("{}/{}", d.x, d.k),
                d.combined_p,
                d.significance,
                reasons.join(", ")
            ));
        }
        out
    }
}
