//! On-disk layout of a study:
//!
//! ```text
//! <root>/studies/<id>/manifest.json
//! <root>/studies/<id>/lineups/<lineup>.svg
//! <root>/studies/<id>/lineups/<lineup>.panels.json
//! <root>/studies/<id>/picks.ndjson      append-only
//! <root>/studies/<id>/served.ndjson     append-only
//! <root>/studies/<id>/reveals.ndjson    append-only
//! <root>/studies/<id>/sealed/answers.json
//! ```
//!
//! Everything outside `sealed/` is safe to serve. The answers file is read
//! only by reveal and report.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lineup_core::lineup::{AnswerKey, LineupMeta, PanelData};
use lineup_core::vpvalue::Reason;

use crate::config::StudyConfig;
use crate::error::{IoContext, Result, StudyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLineup {
    pub lineup_id: String,
    pub design: String,
    /// Data-source key; lineups sharing it are dependent.
    pub source: String,
    pub replicate: u32,
    pub m: usize,
    pub meta: LineupMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: StudyConfig,
    pub created_unix: u64,
    pub lineups: Vec<ManifestLineup>,
}

impl Manifest {
    pub fn lineup(&self, id: &str) -> Option<&ManifestLineup> {
        self.lineups.iter().find(|l| l.lineup_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickRecord {
    pub study_id: String,
    pub lineup_id: String,
    pub observer_id: String,
    pub panel_index: usize,
    pub reasons: Vec<Reason>,
    pub confidence: u8,
    pub duration_seconds: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedRecord {
    pub observer_id: String,
    pub lineup_id: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealRecord {
    pub observer_id: String,
    pub lineup_id: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Log {
    Picks,
    Served,
    Reveals,
}

impl Log {
    fn file_name(self) -> &'static str {
        match self {
            Log::Picks => "picks.ndjson",
            Log::Served => "served.ndjson",
            Log::Reveals => "reveals.ndjson",
        }
    }
}

/// Everything needed to write a new study directory.
pub struct GeneratedStudy {
    pub manifest: Manifest,
    pub svgs: Vec<(String, String)>,
    pub panels: Vec<(String, Vec<PanelData>)>,
    pub answers: Vec<AnswerKey>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| StudyError::Json {
        path: path.into(),
        source,
    })?;
    fs::write(path, text).at(path)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|source| StudyError::Json {
        path: path.into(),
        source,
    })
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let studies = root.join("studies");
        fs::create_dir_all(&studies).at(&studies)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn study_dir(&self, id: &str) -> PathBuf {
        self.root.join("studies").join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.study_dir(id).join("manifest.json").is_file()
    }

    pub fn study_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("studies");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).at(&dir)? {
            let entry = entry.at(&dir)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && self.exists(&name) {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Writes into a hidden staging directory and renames it into place,
    /// so a half-written study is never visible.
    pub fn write_new(&self, study: &GeneratedStudy) -> Result<()> {
        let id = &study.manifest.config.study_id;
        let target = self.study_dir(id);
        if target.exists() {
            return Err(StudyError::DuplicateStudy(id.clone()));
        }
        let staging = self.root.join("studies").join(format!(".staging-{id}-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).at(&staging)?;
        }
        let lineups = staging.join("lineups");
        let sealed = staging.join("sealed");
        fs::create_dir_all(&lineups).at(&lineups)?;
        fs::create_dir_all(&sealed).at(&sealed)?;
        for (lid, svg) in &study.svgs {
            let p = lineups.join(format!("{lid}.svg"));
            fs::write(&p, svg).at(&p)?;
        }
        for (lid, panels) in &study.panels {
            write_json(&lineups.join(format!("{lid}.panels.json")), panels)?;
        }
        write_json(&sealed.join("answers.json"), &study.answers)?;
        for log in [Log::Picks, Log::Served, Log::Reveals] {
            let p = staging.join(log.file_name());
            File::create(&p).at(&p)?;
        }
        write_json(&staging.join("manifest.json"), &study.manifest)?;
        fs::rename(&staging, &target).at(&target)
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest> {
        if !self.exists(id) {
            return Err(StudyError::StudyNotFound(id.into()));
        }
        read_json(&self.study_dir(id).join("manifest.json"))
    }

    pub fn svg(&self, id: &str, lineup: &str) -> Result<String> {
        let p = self.study_dir(id).join("lineups").join(format!("{lineup}.svg"));
        fs::read_to_string(&p).at(&p)
    }

    pub fn panels(&self, id: &str, lineup: &str) -> Result<Vec<PanelData>> {
        read_json(&self.study_dir(id).join("lineups").join(format!("{lineup}.panels.json")))
    }

    pub fn answers(&self, id: &str) -> Result<Vec<AnswerKey>> {
        read_json(&self.study_dir(id).join("sealed").join("answers.json"))
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append<T: Serialize>(&self, id: &str, log: Log, record: &T) -> Result<()> {
        let p = self.study_dir(id).join(log.file_name());
        let mut line = serde_json::to_string(record).map_err(|source| StudyError::Json {
            path: p.clone(),
            source,
        })?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&p).at(&p)?;
        f.write_all(line.as_bytes()).at(&p)?;
        f.sync_data().at(&p)
    }

    /// Reads a log. An unterminated, unparsable last line (an interrupted
    /// append) is skipped; anything else malformed is an error.
    pub fn read_log<T: DeserializeOwned>(&self, id: &str, log: Log) -> Result<Vec<T>> {
        let p = self.study_dir(id).join(log.file_name());
        let mut reader = BufReader::new(File::open(&p).at(&p)?);
        let mut out = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).at(&p)? == 0 {
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(v) => out.push(v),
                Err(e) if !line.ends_with('\n') => {
                    log::warn!("{}: ignoring truncated last record: {e}", p.display());
                }
                Err(source) => return Err(StudyError::Json { path: p, source }),
            }
        }
        Ok(out)
    }
}
