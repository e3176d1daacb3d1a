use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use lineup_core::lineup::PanelData;
use lineup_core::rng;
use lineup_core::vpvalue::{significance_code, visual_pvalue_mc, Reason};

use crate::config::StudyConfig;
use crate::error::{Result, StudyError};
use crate::generate::{generate_study, unix_now};
use crate::report::{answer_map, build_report, StudyReport};
use crate::store::{Log, Manifest, PickRecord, RevealRecord, ServedRecord, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub lineups: usize,
}

/// Response of `next`: a lineup to evaluate, or the signal that this
/// observer has nothing left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextLineup {
    Lineup { lineup_id: String, svg: String },
    Done { done: bool, served: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickSubmission {
    pub observer: String,
    pub panel: usize,
    #[serde(default)]
    pub reasons: Vec<String>,
    #[serde(default)]
    pub other_text: Option<String>,
    pub confidence: u8,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickAck {
    pub lineup_id: String,
    /// Evaluations of this lineup so far, including this one.
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealRequest {
    pub observer: String,
    #[serde(default)]
    pub confirm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealResponse {
    pub lineup_id: String,
    pub answer_index: usize,
    pub picked: usize,
    pub correct: bool,
    pub x: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: f64,
    pub significance: String,
}

struct StudyState {
    manifest: Manifest,
    picks: Vec<PickRecord>,
    /// Observer → lineups served, in order.
    served: HashMap<String, Vec<String>>,
    /// (observer, lineup) pairs already answered.
    answered: HashSet<(String, String)>,
    counts: HashMap<String, usize>,
}

impl StudyState {
    fn load(store: &Store, id: &str) -> Result<Self> {
        let manifest = store.manifest(id)?;
        let picks: Vec<PickRecord> = store.read_log(id, Log::Picks)?;
        let served_log: Vec<ServedRecord> = store.read_log(id, Log::Served)?;
        let mut served: HashMap<String, Vec<String>> = HashMap::new();
        for s in served_log {
            served.entry(s.observer_id).or_default().push(s.lineup_id);
        }
        let mut answered = HashSet::new();
        let mut counts = HashMap::new();
        for p in &picks {
            answered.insert((p.observer_id.clone(), p.lineup_id.clone()));
            *counts.entry(p.lineup_id.clone()).or_default() += 1;
        }
        Ok(Self {
            manifest,
            picks,
            served,
            answered,
            counts,
        })
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn check_observer(observer: &str) -> Result<()> {
    if observer.is_empty() || observer.len() > 128 || observer.chars().any(char::is_control) {
        return Err(StudyError::Invalid("observer token must be 1-128 printable characters".into()));
    }
    Ok(())
}

fn parse_reasons(tags: &[String], other_text: Option<&str>) -> Result<Vec<Reason>> {
    let other = other_text.map(str::trim).filter(|t| !t.is_empty());
    let mut out: Vec<Reason> = Vec::new();
    for t in tags {
        let r = match t.to_ascii_lowercase().as_str() {
            "outlier" => Reason::Outlier,
            "spread" => Reason::Spread,
            "trend" => Reason::Trend,
            "asymmetry" => Reason::Asymmetry,
            "other" => Reason::Other(other.unwrap_or_default().to_string()),
            _ => return Err(StudyError::Invalid(format!("unknown reason `{t}`"))),
        };
        if !out.contains(&r) {
            out.push(r);
        }
    }
    if let Some(text) = other {
        if !out.iter().any(|r| matches!(r, Reason::Other(_))) {
            out.push(Reason::Other(text.to_string()));
        }
    }
    Ok(out)
}

/// All studies under one data directory. Reads share the per-study lock
/// with writes, which serializes every append to a study's logs.
pub struct StudyService {
    store: Store,
    studies: RwLock<BTreeMap<String, Arc<Mutex<StudyState>>>>,
}

impl StudyService {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let store = Store::open(data_dir)?;
        let mut studies = BTreeMap::new();
        for id in store.study_ids()? {
            let state = StudyState::load(&store, &id)?;
            log::info!("loaded study `{id}`: {} picks", state.picks.len());
            studies.insert(id, Arc::new(Mutex::new(state)));
        }
        Ok(Self {
            store,
            studies: RwLock::new(studies),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.studies.read().expect("study map poisoned").keys().cloned().collect()
    }

    fn study(&self, id: &str) -> Result<Arc<Mutex<StudyState>>> {
        self.studies
            .read()
            .expect("study map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| StudyError::StudyNotFound(id.into()))
    }

    fn lock(state: &Mutex<StudyState>) -> MutexGuard<'_, StudyState> {
        state.lock().expect("study state poisoned")
    }

    /// Generates every lineup up front (the slow part, done without holding
    /// any lock) and then persists the study.
    pub fn create_study(&self, config: StudyConfig) -> Result<StudySummary> {
        config.validate()?;
        let id = config.study_id.clone();
        if self.study(&id).is_ok() || self.store.exists(&id) {
            return Err(StudyError::DuplicateStudy(id));
        }
        let generated = generate_study(&config)?;
        let mut map = self.studies.write().expect("study map poisoned");
        if map.contains_key(&id) {
            return Err(StudyError::DuplicateStudy(id));
        }
        self.store.write_new(&generated)?;
        let state = StudyState::load(&self.store, &id)?;
        let summary = StudySummary {
            study_id: id.clone(),
            lineups: state.manifest.lineups.len(),
        };
        map.insert(id, Arc::new(Mutex::new(state)));
        Ok(summary)
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest> {
        let study = self.study(id)?;
        let manifest = Self::lock(&study).manifest.clone();
        Ok(manifest)
    }

    /// Serves a lineup whose data source this observer has not seen yet,
    /// preferring the least-evaluated ones and choosing at random among
    /// ties.
    pub fn next_lineup(&self, id: &str, observer: &str) -> Result<NextLineup> {
        check_observer(observer)?;
        let study = self.study(id)?;
        let mut st = Self::lock(&study);
        let served = st.served.get(observer).map(Vec::as_slice).unwrap_or(&[]);
        let n_served = served.len();
        if n_served >= st.manifest.config.session_cap {
            return Ok(NextLineup::Done {
                done: true,
                served: n_served,
            });
        }
        let seen: HashSet<&str> = served
            .iter()
            .filter_map(|lid| st.manifest.lineup(lid))
            .map(|l| l.source.as_str())
            .collect();
        let eligible: Vec<&str> = st
            .manifest
            .lineups
            .iter()
            .filter(|l| !seen.contains(l.source.as_str()))
            .map(|l| l.lineup_id.as_str())
            .collect();
        let count = |lid: &str| st.counts.get(lid).copied().unwrap_or(0);
        let Some(fewest) = eligible.iter().map(|l| count(l)).min() else {
            return Ok(NextLineup::Done {
                done: true,
                served: n_served,
            });
        };
        let candidates: Vec<&str> = eligible.into_iter().filter(|l| count(l) == fewest).collect();
        let seed = fnv1a(&format!("{id}\u{0}{observer}"));
        let pick = rng::stream(seed, n_served as u64).random_range(0..candidates.len());
        let lineup_id = candidates[pick].to_string();

        let svg = self.store.svg(id, &lineup_id)?;
        self.store.append(
            id,
            Log::Served,
            &ServedRecord {
                observer_id: observer.into(),
                lineup_id: lineup_id.clone(),
                timestamp: unix_now(),
            },
        )?;
        st.served.entry(observer.into()).or_default().push(lineup_id.clone());
        Ok(NextLineup::Lineup { lineup_id, svg })
    }

    pub fn submit_pick(&self, id: &str, lineup_id: &str, sub: &PickSubmission) -> Result<PickAck> {
        check_observer(&sub.observer)?;
        let study = self.study(id)?;
        let mut st = Self::lock(&study);
        let m = st
            .manifest
            .lineup(lineup_id)
            .ok_or_else(|| StudyError::LineupNotFound(lineup_id.into()))?
            .m;
        if !(1..=m).contains(&sub.panel) {
            return Err(StudyError::Invalid(format!("panel {} outside 1..={m}", sub.panel)));
        }
        if !(1..=5).contains(&sub.confidence) {
            return Err(StudyError::Invalid(format!("confidence {} outside 1..=5", sub.confidence)));
        }
        if !(sub.duration_s.is_finite() && sub.duration_s >= 0.0) {
            return Err(StudyError::Invalid("duration must be a nonnegative number of seconds".into()));
        }
        let reasons = parse_reasons(&sub.reasons, sub.other_text.as_deref())?;
        let was_served = st
            .served
            .get(&sub.observer)
            .is_some_and(|s| s.iter().any(|l| l == lineup_id));
        if !was_served {
            return Err(StudyError::NotServed {
                observer: sub.observer.clone(),
                lineup: lineup_id.into(),
            });
        }
        let key = (sub.observer.clone(), lineup_id.to_string());
        if st.answered.contains(&key) {
            return Err(StudyError::DuplicatePick {
                observer: key.0,
                lineup: key.1,
            });
        }
        let record = PickRecord {
            study_id: id.into(),
            lineup_id: lineup_id.into(),
            observer_id: sub.observer.clone(),
            panel_index: sub.panel,
            reasons,
            confidence: sub.confidence,
            duration_seconds: sub.duration_s,
            timestamp: unix_now(),
        };
        self.store.append(id, Log::Picks, &record)?;
        st.picks.push(record);
        st.answered.insert(key);
        let k = st.counts.entry(lineup_id.into()).or_default();
        *k += 1;
        Ok(PickAck {
            lineup_id: lineup_id.into(),
            k: *k,
        })
    }

    /// Shows the answer to an observer who has already committed a pick.
    pub fn reveal(&self, id: &str, lineup_id: &str, req: &RevealRequest) -> Result<RevealResponse> {
        check_observer(&req.observer)?;
        if !req.confirm {
            return Err(StudyError::RevealNotConfirmed);
        }
        let study = self.study(id)?;
        let st = Self::lock(&study);
        let l = st
            .manifest
            .lineup(lineup_id)
            .ok_or_else(|| StudyError::LineupNotFound(lineup_id.into()))?;
        let (m, cfg) = (l.m, &st.manifest.config);
        let mine = st
            .picks
            .iter()
            .find(|p| p.lineup_id == lineup_id && p.observer_id == req.observer)
            .ok_or_else(|| StudyError::RevealBeforePick(lineup_id.into()))?;
        let answers = self.store.answers(id)?;
        let answer = *answer_map(&answers)
            .get(lineup_id)
            .ok_or_else(|| StudyError::LineupNotFound(lineup_id.into()))?;
        let on_lineup: Vec<&PickRecord> = st.picks.iter().filter(|p| p.lineup_id == lineup_id).collect();
        let x = on_lineup.iter().filter(|p| p.panel_index == answer).count();
        let k = on_lineup.len();
        let p = visual_pvalue_mc(x, k, m, cfg.report_reps, rng::derive_seed(cfg.report_seed, fnv1a(lineup_id)))?.p;
        self.store.append(
            id,
            Log::Reveals,
            &RevealRecord {
                observer_id: req.observer.clone(),
                lineup_id: lineup_id.into(),
                timestamp: unix_now(),
            },
        )?;
        Ok(RevealResponse {
            lineup_id: lineup_id.into(),
            answer_index: answer,
            picked: mine.panel_index,
            correct: mine.panel_index == answer,
            x,
            k,
            p,
            significance: significance_code(p).to_string(),
        })
    }

    /// Report over the picks logged when the call starts.
    pub fn report(&self, id: &str) -> Result<StudyReport> {
        let (manifest, picks) = {
            let study = self.study(id)?;
            let st = Self::lock(&study);
            (st.manifest.clone(), st.picks.clone())
        };
        build_report(&manifest, &self.store.answers(id)?, &picks)
    }

    /// Panel geometry exactly as rendered; used by simulated observers.
    pub fn panels(&self, id: &str, lineup_id: &str) -> Result<Vec<PanelData>> {
        let study = self.study(id)?;
        if Self::lock(&study).manifest.lineup(lineup_id).is_none() {
            return Err(StudyError::LineupNotFound(lineup_id.into()));
        }
        self.store.panels(id, lineup_id)
    }
}

/// Rebuilds a report straight from the files of a study.
pub fn report_from_disk(store: &Store, id: &str) -> Result<StudyReport> {
    let manifest = store.manifest(id)?;
    let picks: Vec<PickRecord> = store.read_log(id, Log::Picks)?;
    build_report(&manifest, &store.answers(id)?, &picks)
}
