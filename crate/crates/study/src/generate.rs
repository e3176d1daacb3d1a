use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use lineup_core::lineup::{make_lineup, render_svg, LineupRequest, RenderOptions};
use lineup_core::lme::{self, FitOptions, Method};
use lineup_core::rng;

use crate::config::{lineup_id, StudyConfig};
use crate::error::Result;
use crate::store::{GeneratedStudy, Manifest, ManifestLineup};

pub(crate) fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

const GRID_COLS: usize = 5;

/// Fits each data source once and builds `replicates` lineups per design.
/// Replicates share the data panel and differ in their null panels and
/// answer position.
pub fn generate_study(config: &StudyConfig) -> Result<GeneratedStudy> {
    config.validate()?;
    let mut fitted = BTreeMap::new();
    for d in &config.designs {
        if fitted.contains_key(&d.data) {
            continue;
        }
        let design = config.sources[&d.data].load()?;
        let fit = lme::fit(&design, Method::Reml, &FitOptions::default())?;
        log::info!("source `{}`: {} groups, {} rows", d.data, design.g(), design.n_total());
        fitted.insert(d.data.clone(), (design, fit));
    }

    let mut lineups = Vec::new();
    let mut svgs = Vec::new();
    let mut panels = Vec::new();
    let mut answers = Vec::new();
    for d in &config.designs {
        let (design, fit) = &fitted[&d.data];
        let opts = RenderOptions {
            rows: d.m.div_ceil(GRID_COLS),
            cols: GRID_COLS.min(d.m),
            ..RenderOptions::default()
        };
        for r in 1..=d.replicates {
            let id = lineup_id(&d.name, r);
            let mut req = LineupRequest::new(id.clone(), d.plot.clone(), d.null, rng::derive_seed(d.seed, r as u64));
            req.m = d.m;
            req.replicate = r;
            let lineup = make_lineup(design, fit, &req)?;
            svgs.push((id.clone(), render_svg(&lineup, &opts)?));
            answers.push(lineup.answer_key());
            lineups.push(ManifestLineup {
                lineup_id: id.clone(),
                design: d.name.clone(),
                source: d.data.clone(),
                replicate: r,
                m: d.m,
                meta: lineup.meta(),
            });
            panels.push((id, lineup.panels));
        }
    }
    Ok(GeneratedStudy {
        manifest: Manifest {
            config: config.clone(),
            created_unix: unix_now() as u64,
            lineups,
        },
        svgs,
        panels,
        answers,
    })
}
