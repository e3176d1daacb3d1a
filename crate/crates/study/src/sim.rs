//! Synthetic observers for end-to-end runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use lineup_core::lineup::top_panel;
use lineup_core::rng;
use lineup_core::vpvalue::Reason;

use crate::error::Result;
use crate::service::{NextLineup, PickSubmission, StudyService};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub observers: usize,
    pub picks: usize,
}

/// Runs `observers` sessions to completion. Each observer picks the panel
/// with the largest discrepancy score with probability `accuracy` and a
/// uniformly random panel otherwise, then cites one reason at random.
pub fn simulate_observers(
    service: &StudyService,
    study_id: &str,
    observers: usize,
    accuracy: f64,
    seed: u64,
) -> Result<SimSummary> {
    let accuracy = accuracy.clamp(0.0, 1.0);
    let mut picks = 0;
    for o in 0..observers {
        let observer = format!("sim-{seed}-{o:05}");
        let mut r = rng::stream(seed, o as u64);
        while let NextLineup::Lineup { lineup_id, .. } = service.next_lineup(study_id, &observer)? {
            let panels = service.panels(study_id, &lineup_id)?;
            let panel = if r.random::<f64>() < accuracy {
                top_panel(&panels)
            } else {
                r.random_range(1..=panels.len())
            };
            let reason = Reason::TAGS[r.random_range(0..4)];
            service.submit_pick(
                study_id,
                &lineup_id,
                &PickSubmission {
                    observer: observer.clone(),
                    panel,
                    reasons: vec![reason.to_string()],
                    other_text: None,
                    confidence: r.random_range(1..=5),
                    duration_s: r.random_range(5.0..90.0),
                },
            )?;
            picks += 1;
        }
    }
    Ok(SimSummary { observers, picks })
}
