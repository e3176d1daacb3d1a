use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use lineup_core::data::{build_design, load_csv, GroupedDesign, ModelSpec};
use lineup_core::lineup::{PlotSpec, DEFAULT_M};
use lineup_core::pboot::NullModelKind;
use lineup_core::synth::{synth_dataset, SynthKind};
use lineup_core::vpvalue::MIN_REPS;

use crate::error::{Result, StudyError};

/// Where a data panel comes from. Lineups built from the same source are
/// dependent: an observer is shown at most one of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    /// A synthetic dataset with its generating model; the optional fields
    /// override the kind's defaults.
    Synthetic {
        kind: SynthKind,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        groups: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hetero: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        re_df: Option<f64>,
    },
    Csv { path: PathBuf, model: ModelSpec },
}

impl DataSource {
    pub fn synthetic(kind: SynthKind, seed: u64) -> Self {
        DataSource::Synthetic {
            kind,
            seed,
            groups: None,
            group_size: None,
            hetero: None,
            re_df: None,
        }
    }

    pub fn load(&self) -> Result<GroupedDesign> {
        match self {
            DataSource::Synthetic {
                kind,
                seed,
                groups,
                group_size,
                hetero,
                re_df,
            } => {
                let mut p = kind.default_params();
                p.groups = groups.unwrap_or(p.groups);
                p.group_size = group_size.unwrap_or(p.group_size);
                p.hetero = hetero.unwrap_or(p.hetero);
                p.re_df = re_df.or(p.re_df);
                let ds = synth_dataset(*kind, &p, *seed)?;
                Ok(build_design(&kind.true_spec(), &ds)?)
            }
            DataSource::Csv { path, model } => {
                let ds = load_csv(path, &model.schema())?;
                Ok(build_design(model, &ds)?)
            }
        }
    }
}

fn default_null() -> NullModelKind {
    NullModelKind::SameModel
}

fn default_replicates() -> u32 {
    5
}

fn default_m() -> usize {
    DEFAULT_M
}

fn default_session_cap() -> usize {
    10
}

fn default_reps() -> usize {
    MIN_REPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub name: String,
    /// Key into [`StudyConfig::sources`].
    pub data: String,
    pub plot: PlotSpec,
    #[serde(default = "default_null")]
    pub null: NullModelKind,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    #[serde(default = "default_m")]
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub sources: BTreeMap<String, DataSource>,
    pub designs: Vec<DesignConfig>,
    #[serde(default = "default_session_cap")]
    pub session_cap: usize,
    #[serde(default)]
    pub report_seed: u64,
    #[serde(default = "default_reps")]
    pub report_reps: usize,
}

/// Ids end up in file names and URLs.
pub(crate) fn check_id(what: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StudyError::Invalid(format!(
            "{what} `{id}` must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        check_id("study id", &self.study_id)?;
        if self.designs.is_empty() {
            return Err(StudyError::Invalid("a study needs at least one design".into()));
        }
        if self.session_cap == 0 {
            return Err(StudyError::Invalid("session cap must be positive".into()));
        }
        if self.report_reps < MIN_REPS {
            return Err(StudyError::Invalid(format!("report_reps must be at least {MIN_REPS}")));
        }
        let mut names = BTreeSet::new();
        for d in &self.designs {
            check_id("design name", &d.name)?;
            if !names.insert(d.name.as_str()) {
                return Err(StudyError::Invalid(format!("duplicate design name `{}`", d.name)));
            }
            if !self.sources.contains_key(&d.data) {
                return Err(StudyError::Invalid(format!(
                    "design `{}` refers to unknown data source `{}`",
                    d.name, d.data
                )));
            }
            if d.replicates == 0 {
                return Err(StudyError::Invalid(format!("design `{}` needs at least one replicate", d.name)));
            }
            if d.m < 2 {
                return Err(StudyError::Invalid(format!("design `{}` needs m >= 2", d.name)));
            }
        }
        Ok(())
    }

    pub fn lineup_count(&self) -> usize {
        self.designs.iter().map(|d| d.replicates as usize).sum()
    }
}

pub fn lineup_id(design: &str, replicate: u32) -> String {
    format!("{design}-r{replicate}")
}

/// Three designs on two synthetic sources: a Q-Q lineup of random slopes
/// drawn from a t₃ distribution and a residual-smoother lineup on the same
/// data (so the two are dependent), plus a cyclone lineup of
/// heteroscedastic longitudinal data.
pub fn demo_config(study_id: &str, replicates: u32) -> StudyConfig {
    let mut sources = BTreeMap::new();
    sources.insert(
        "radon".to_string(),
        DataSource::Synthetic {
            kind: SynthKind::RadonLike,
            seed: 11,
            groups: None,
            group_size: None,
            hetero: None,
            re_df: Some(3.0),
        },
    );
    sources.insert(
        "longitudinal".to_string(),
        DataSource::Synthetic {
            kind: SynthKind::LongitudinalLike,
            seed: 12,
            groups: None,
            group_size: None,
            hetero: Some(0.6),
            re_df: None,
        },
    );
    let design = |name: &str, data: &str, plot: PlotSpec, seed: u64| DesignConfig {
        name: name.into(),
        data: data.into(),
        plot,
        null: NullModelKind::SameModel,
        replicates,
        m: DEFAULT_M,
        seed,
    };
    StudyConfig {
        study_id: study_id.into(),
        sources,
        designs: vec![
            design(
                "slopes-qq",
                "radon",
                PlotSpec::QqLevel2 {
                    component: 1,
                    band_level: 0.95,
                },
                101,
            ),
            design("radon-smooth", "radon", PlotSpec::ResidualSmooth { covariate: 2 }, 102),
            design("cyclone", "longitudinal", PlotSpec::Cyclone, 103),
        ],
        session_cap: default_session_cap(),
        report_seed: 1,
        report_reps: MIN_REPS,
    }
}
