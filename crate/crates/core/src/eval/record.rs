//! Per-episode measurement record shared by every controller.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{EnvId, GoalTask};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Wall-clock measurements of one episode. Kept out of the deterministic
/// record and written to a separate sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms_total: f64,
    pub wall_ms_per_plan_call: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub env_id: EnvId,
    pub method: String,
    pub config_hash: String,
    /// Protocol and sweep point the episode belongs to (`""` outside a
    /// protocol run).
    pub protocol: String,
    pub variant: String,
    /// Protocol seed the task list was drawn with.
    pub seed: u64,
    /// Position of the task in the protocol's task list.
    pub task_index: usize,
    pub task: GoalTask,
    pub success: bool,
    pub steps_taken: usize,
    /// Executed raw environment actions, `[steps_taken][act_dim]`.
    pub raw_actions: Vec<Vec<f32>>,
    /// `||z_t - z_goal||` after every environment step, starting at the
    /// initial observation (`steps_taken + 1` entries).
    pub latent_goal_distances: Vec<f64>,
    pub plan_calls: u64,
    pub predictor_calls: u64,
    pub model_forwards: u64,
    #[serde(skip)]
    pub timing: Timing,
}

impl EpisodeRecord {
    pub fn new(env_id: EnvId, method: &str, task: GoalTask) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            env_id,
            method: method.to_string(),
            config_hash: String::new(),
            protocol: String::new(),
            variant: String::new(),
            seed: 0,
            task_index: 0,
            task,
            success: false,
            steps_taken: 0,
            raw_actions: Vec::new(),
            latent_goal_distances: Vec::new(),
            plan_calls: 0,
            predictor_calls: 0,
            model_forwards: 0,
            timing: Timing::default(),
        }
    }

    /// Record one executed action and the resulting latent distance.
    pub(crate) fn push_step(&mut self, action: Vec<f32>, distance: f64) {
        self.raw_actions.push(action);
        self.latent_goal_distances.push(distance);
        self.steps_taken += 1;
    }
}

/// Times consecutive control calls.
pub(crate) struct Stopwatch {
    episode_start: Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self { episode_start: Instant::now() }
    }

    pub(crate) fn time<R>(timing: &mut Timing, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        timing.wall_ms_per_plan_call.push(t0.elapsed().as_secs_f64() * 1e3);
        r
    }

    pub(crate) fn finish(self, timing: &mut Timing) {
        timing.wall_ms_total = self.episode_start.elapsed().as_secs_f64() * 1e3;
    }
}

pub(crate) fn latent_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}
