//! Whole lineups from a fitted model: the data panel from the observed
//! response, null panels from parametric-bootstrap refits.

use serde::{Deserialize, Serialize};

use super::panels::*;
use super::{build_lineup, Lineup, DEFAULT_M};
use crate::data::GroupedDesign;
use crate::error::{Error, Result};
use crate::lme::{self, FittedLME, ResidualSet};
use crate::pboot::{self, BootstrapConfig, NullModelKind};
use crate::rng;

/// What to plot. Covariates are fixed-effect columns of the design; label
/// vectors are per observation in group order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "plot")]
pub enum PlotSpec {
    /// Per-group OLS lines of the response on a covariate.
    FannedLines { covariate: usize },
    /// Level-1 residuals split by a discrete variable.
    FactorBoxes {
        labels: Vec<String>,
        order: BoxOrder,
        fill_ramp: bool,
    },
    /// Level-1 residuals by group, ordered by IQR.
    Cyclone,
    /// Level-1 residuals against a covariate with a smoother.
    ResidualSmooth { covariate: usize },
    QqLevel1 { band_level: f64 },
    QqLevel2 { component: usize, band_level: f64 },
    ReScatter,
    DotPlot { labels: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct LineupRequest {
    pub id: String,
    pub plot: PlotSpec,
    pub null: NullModelKind,
    pub m: usize,
    pub seed: u64,
    pub replicate: u32,
    pub parallel: bool,
}

impl LineupRequest {
    pub fn new(id: impl Into<String>, plot: PlotSpec, null: NullModelKind, seed: u64) -> Self {
        Self {
            id: id.into(),
            plot,
            null,
            m: DEFAULT_M,
            seed,
            replicate: 0,
            parallel: true,
        }
    }
}

fn covariate_by_group(design: &GroupedDesign, c: usize) -> Result<Vec<Vec<f64>>> {
    if c >= design.p() {
        return Err(Error::TermIndex {
            index: c,
            len: design.p(),
        });
    }
    Ok(design.groups.iter().map(|g| g.x.column(c).iter().copied().collect()).collect())
}

fn check_labels(design: &GroupedDesign, labels: &[String]) -> Result<()> {
    if labels.len() != design.n_total() {
        return Err(Error::Dimension(format!(
            "{} labels for {} observations",
            labels.len(),
            design.n_total()
        )));
    }
    Ok(())
}

fn panel(plot: &PlotSpec, design: &GroupedDesign, res: &ResidualSet, seed: u64) -> Result<PanelData> {
    match plot {
        PlotSpec::FannedLines { covariate } => {
            let xs = covariate_by_group(design, *covariate)?;
            let ys: Vec<Vec<f64>> = design.groups.iter().map(|g| g.y.iter().copied().collect()).collect();
            Ok(panel_fanned_lines(&xs, &ys)?.0)
        }
        PlotSpec::FactorBoxes {
            labels,
            order,
            fill_ramp,
        } => {
            check_labels(design, labels)?;
            panel_boxplots(&res.level1_flat(), labels, *order, *fill_ramp)
        }
        PlotSpec::Cyclone => {
            let labels: Vec<String> = design
                .groups
                .iter()
                .flat_map(|g| std::iter::repeat_n(g.label.clone(), g.n()))
                .collect();
            panel_boxplots(&res.level1_flat(), &labels, BoxOrder::ByIqr, false)
        }
        PlotSpec::ResidualSmooth { covariate } => {
            let x: Vec<f64> = covariate_by_group(design, *covariate)?.concat();
            panel_scatter_smooth(&x, &res.level1_flat())
        }
        PlotSpec::QqLevel1 { band_level } => panel_qq(&res.level1_flat(), *band_level),
        PlotSpec::QqLevel2 { component, band_level } => {
            if *component >= design.q() {
                return Err(Error::TermIndex {
                    index: *component,
                    len: design.q(),
                });
            }
            panel_qq(&res.level2_component(*component), *band_level)
        }
        PlotSpec::ReScatter => panel_re_scatter(res),
        PlotSpec::DotPlot { labels } => {
            check_labels(design, labels)?;
            panel_dotplot(&res.level1_flat(), labels, seed)
        }
    }
}

/// Builds a lineup for `fitted` (the model under scrutiny, fitted to
/// `design`). Null panels come from m − 1 responses simulated from the
/// requested null model, each refitted with the proposed model.
pub fn make_lineup(design: &GroupedDesign, fitted: &FittedLME, req: &LineupRequest) -> Result<Lineup> {
    if req.m < 2 {
        return Err(Error::NullCount {
            expected: req.m.saturating_sub(1),
            got: 0,
        });
    }
    let observed = lme::residuals(design, fitted)?;
    let data = panel(&req.plot, design, &observed, rng::derive_seed(req.seed, 3))?;
    let mut cfg = BootstrapConfig::new(req.m - 1, rng::derive_seed(req.seed, 1));
    cfg.parallel = req.parallel;
    let run = pboot::bootstrap_refit(fitted, design, req.null, &cfg)?;
    let nulls = run
        .replicates
        .iter()
        .enumerate()
        .map(|(k, rep)| {
            let star = design.with_response(rep.y.clone())?;
            panel(&req.plot, &star, &rep.residuals, rng::derive_seed(req.seed, 4 + k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(build_lineup(req.id.clone(), data, nulls, req.m, rng::derive_seed(req.seed, 2))?.with_replicate(req.replicate))
}
