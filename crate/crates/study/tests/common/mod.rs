#![allow(dead_code)]

use std::collections::BTreeMap;

use lineup_core::lineup::PlotSpec;
use lineup_core::pboot::NullModelKind;
use lineup_core::synth::SynthKind;
use lineup_study::{DataSource, DesignConfig, StudyConfig};

pub fn design(name: &str, data: &str, plot: PlotSpec, replicates: u32, seed: u64) -> DesignConfig {
    DesignConfig {
        name: name.into(),
        data: data.into(),
        plot,
        null: NullModelKind::SameModel,
        replicates,
        m: 20,
        seed,
    }
}

/// Small, fast study: `sources` independent one-way datasets, one Q-Q
/// design with `replicates` lineups on each.
pub fn small_config(id: &str, sources: usize, replicates: u32) -> StudyConfig {
    let mut map = BTreeMap::new();
    let mut designs = Vec::new();
    for s in 0..sources {
        let key = format!("d{s}");
        map.insert(key.clone(), DataSource::synthetic(SynthKind::BalancedOneway, s as u64));
        designs.push(design(
            &format!("qq{s}"),
            &key,
            PlotSpec::QqLevel1 { band_level: 0.95 },
            replicates,
            100 + s as u64,
        ));
    }
    StudyConfig {
        study_id: id.into(),
        sources: map,
        designs,
        session_cap: 10,
        report_seed: 3,
        report_reps: 100_000,
    }
}
