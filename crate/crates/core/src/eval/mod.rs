//! Episode records, trajectory metrics, protocols and reports.

pub mod aggregate;
pub mod io;
pub mod metrics;
pub mod protocol;
pub mod record;
pub mod report;
pub mod svg;
pub mod workspace;

pub use aggregate::{aggregate, speedup_summary, AggregateRow, SpeedupRow};
pub use metrics::{action_jerk, latent_monotonicity, monotonicity_fraction};
pub use protocol::{matched_tasks, run_protocol, Arm, Controller, Protocol, ProtocolOutput, ProtocolSpec, TaskSource};
pub use record::{EpisodeRecord, Timing};
pub use workspace::{IdmVariant, TrainSettings, Workspace, BASE_SEED, HELD_OUT_FRACTION};
