//! Lineups: the data panel hidden at a random position among null panels,
//! with shared axes and a sealed answer.

mod designs;
mod panels;
mod score;
mod svg;

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use designs::{make_lineup, LineupRequest, PlotSpec};
pub use panels::{
    local_linear, panel_boxplots, panel_dotplot, panel_fanned_lines, panel_qq, panel_re_scatter,
    panel_scatter_smooth, qq_geometry, quantile_sorted, BoxOrder, BoxSummary, Bounds, DesignKind,
    PanelData, Primitive, QqGeometry, MIN_BOX_SIZE, SMOOTH_GRID, SMOOTH_SPAN,
};
pub use score::{discrepancy, observer_picks, top_panel};
pub use svg::{render_svg, RenderOptions};

pub const DEFAULT_M: usize = 20;
/// Fraction of the data range added on each side of the shared axes.
const AXIS_PAD: f64 = 0.04;

/// The data panel's 1-based position. Its `Debug` output does not show the
/// value, so a lineup can be logged without unblinding anyone.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SealedAnswer(usize);

impl fmt::Debug for SealedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealedAnswer(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealEvent {
    pub lineup_id: String,
    pub unix_time: u64,
}

#[derive(Debug, Clone)]
pub struct Lineup {
    pub id: String,
    pub replicate: u32,
    pub seed: u64,
    pub kind: DesignKind,
    pub panels: Vec<PanelData>,
    pub axes: Bounds,
    answer: SealedAnswer,
    audit: Vec<RevealEvent>,
}

/// Everything about a lineup that may be stored next to its SVG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineupMeta {
    pub id: String,
    pub replicate: u32,
    pub seed: u64,
    pub kind: DesignKind,
    pub m: usize,
    pub axes: Bounds,
}

/// Entry of the separate answers file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub lineup_id: String,
    pub answer_index: usize,
}

fn padded(lo: f64, hi: f64) -> [f64; 2] {
    let w = hi - lo;
    if w > 0.0 {
        [lo - AXIS_PAD * w, hi + AXIS_PAD * w]
    } else {
        [lo - 0.5, hi + 0.5]
    }
}

/// Places `data` at a uniformly drawn position among `nulls`.
///
/// `m` is the intended lineup size; `nulls` must hold exactly m − 1 panels
/// of the data panel's kind.
pub fn build_lineup(
    id: impl Into<String>,
    data: PanelData,
    nulls: Vec<PanelData>,
    m: usize,
    seed: u64,
) -> Result<Lineup> {
    if m < 2 || nulls.len() != m - 1 {
        return Err(Error::NullCount {
            expected: m.saturating_sub(1),
            got: nulls.len(),
        });
    }
    if nulls.iter().any(|p| p.kind != data.kind) {
        return Err(Error::MixedKinds);
    }
    if !data.is_finite() || nulls.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParams("panel coordinates must be finite".into()));
    }
    let answer = rng::stream(seed, 0).random_range(1..=m);
    let kind = data.kind;
    let mut panels = nulls;
    panels.insert(answer - 1, data);
    let tight = panels
        .iter()
        .filter_map(PanelData::bounds)
        .reduce(Bounds::union)
        .unwrap_or(Bounds { x: [0.0, 1.0], y: [0.0, 1.0] });
    Ok(Lineup {
        id: id.into(),
        replicate: 0,
        seed,
        kind,
        panels,
        axes: Bounds {
            x: padded(tight.x[0], tight.x[1]),
            y: padded(tight.y[0], tight.y[1]),
        },
        answer: SealedAnswer(answer),
        audit: Vec::new(),
    })
}

impl Lineup {
    pub fn m(&self) -> usize {
        self.panels.len()
    }

    pub fn with_replicate(mut self, replicate: u32) -> Self {
        self.replicate = replicate;
        self
    }

    pub fn meta(&self) -> LineupMeta {
        LineupMeta {
            id: self.id.clone(),
            replicate: self.replicate,
            seed: self.seed,
            kind: self.kind,
            m: self.m(),
            axes: self.axes,
        }
    }

    /// The answer, for writing to the separate answers file. Does not count
    /// as a reveal.
    pub fn answer_key(&self) -> AnswerKey {
        AnswerKey {
            lineup_id: self.id.clone(),
            answer_index: self.answer.0,
        }
    }

    /// Unseals the answer. The first reveal is recorded in the audit log;
    /// later calls return the same index.
    pub fn reveal(&mut self, confirm: bool) -> Result<usize> {
        if !confirm {
            return Err(Error::RevealNotConfirmed);
        }
        if self.audit.is_empty() {
            let unix_time = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            log::info!("lineup {} revealed", self.id);
            self.audit.push(RevealEvent {
                lineup_id: self.id.clone(),
                unix_time,
            });
        }
        Ok(self.answer.0)
    }

    pub fn revealed(&self) -> bool {
        !self.audit.is_empty()
    }

    pub fn audit_log(&self) -> &[RevealEvent] {
        &self.audit
    }
}
