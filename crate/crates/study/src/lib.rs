//! Lineup studies: pre-generated lineups with sealed answers, served to
//! observers under an exposure constraint, an append-only pick log, and
//! reports of visual p-values per lineup and per design.

pub mod config;
pub mod error;
mod generate;
pub mod http;
pub mod report;
pub mod service;
pub mod sim;
pub mod store;

pub use config::{demo_config, DataSource, DesignConfig, StudyConfig};
pub use error::{Result, StudyError};
pub use generate::generate_study;
pub use report::{build_report, StudyReport};
pub use service::{report_from_disk, NextLineup, PickAck, PickSubmission, RevealRequest, RevealResponse, StudyService};
pub use sim::{simulate_observers, SimSummary};
