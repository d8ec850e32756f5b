//! Four deterministic toy environments with scripted experts.
//!
//! States are stored as `f32` vectors and the observation is the full state.
//! Transitions compute in `f64` and round the result to `f32`, so replaying
//! a stored action sequence reproduces the stored observations exactly.

pub mod dataset;
mod point_mass;
mod push_block;
mod reacher;
mod two_room;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

pub use dataset::{collect_dataset, CollectConfig, DemoDataset, Episode, GoalTask};
pub use push_block::{BLOCK_RADIUS, PUSHER_RADIUS};
pub use reacher::{LINK_LENGTHS, Q1_LIMIT, Q2_RANGE};
pub use two_room::{wall_segments, AGENT_RADIUS, DOOR_Y, WALL_X};

/// Success threshold shared by all environments (closed comparison).
pub const SUCCESS_RADIUS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    TwoRoom,
    PushBlock,
    Reacher,
    PointMass,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [EnvId::TwoRoom, EnvId::PushBlock, EnvId::Reacher, EnvId::PointMass];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::TwoRoom => "two_room",
            EnvId::PushBlock => "push_block",
            EnvId::Reacher => "reacher",
            EnvId::PointMass => "point_mass",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvId::TwoRoom | EnvId::PointMass => 2,
            EnvId::PushBlock | EnvId::Reacher => 4,
        }
    }

    pub fn act_dim(self) -> usize {
        2
    }

    /// Default per-coordinate action bound.
    pub fn default_bound(self) -> f64 {
        match self {
            EnvId::TwoRoom => 0.03,
            EnvId::PushBlock => 0.03,
            EnvId::Reacher => 0.08,
            EnvId::PointMass => 0.05,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        EnvId::ALL
            .into_iter()
            .find(|e| e.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown environment {s:?}")))
    }
}

/// Box-shaped action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionSpec {
    pub fn symmetric(dim: usize, bound: f64) -> Result<Self> {
        ensure!(dim > 0 && bound > 0.0, "action spec needs positive dim and bound");
        Ok(Self { low: vec![-bound; dim], high: vec![bound; dim] })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(self.low.iter().zip(&self.high)).map(|(&x, (&lo, &hi))| x.clamp(lo, hi)).collect()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.low[i] + self.high[i])
    }

    pub fn half_range(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    /// Map an environment action to normalized coordinates in [-1, 1].
    pub fn normalize(&self, a: &[f32]) -> Vec<f32> {
        a.iter().enumerate().map(|(i, &x)| ((x as f64 - self.center(i)) / self.half_range(i)) as f32).collect()
    }

    /// Inverse of [`ActionSpec::normalize`] (no clipping).
    pub fn denormalize(&self, u: &[f32]) -> Vec<f32> {
        u.iter().enumerate().map(|(i, &x)| (x as f64 * self.half_range(i) + self.center(i)) as f32).collect()
    }
}

/// An environment instance: its kind plus the action bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub id: EnvId,
    pub bound: f64,
}

impl Env {
    pub fn new(id: EnvId) -> Self {
        Self { id, bound: id.default_bound() }
    }

    pub fn with_bound(id: EnvId, bound: f64) -> Result<Self> {
        ensure!(bound > 0.0 && bound.is_finite(), "action bound must be positive");
        Ok(Self { id, bound })
    }

    pub fn obs_dim(&self) -> usize {
        self.id.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.id.act_dim()
    }

    pub fn action_spec(&self) -> ActionSpec {
        ActionSpec::symmetric(self.act_dim(), self.bound).expect("valid bound")
    }

    fn check_state(&self, s: &[f32]) -> Result<()> {
        ensure!(s.len() == self.obs_dim(), "{} state has {} entries, expected {}", self.id, s.len(), self.obs_dim());
        ensure!(s.iter().all(|x| x.is_finite()), "{} state is not finite", self.id);
        Ok(())
    }

    /// Apply one clipped action. The returned vector is both the next state
    /// and its observation.
    pub fn step(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        self.check_state(state)?;
        ensure!(action.len() == self.act_dim(), "action has {} entries, expected {}", action.len(), self.act_dim());
        ensure!(action.iter().all(|x| x.is_finite()), "non-finite action {action:?}");
        let s: Vec<f64> = state.iter().map(|&x| x as f64).collect();
        let a = self.action_spec().clip(&action.iter().map(|&x| x as f64).collect::<Vec<_>>());
        Ok(match self.id {
            EnvId::PointMass => point_mass::step(&s, &a),
            EnvId::TwoRoom => two_room::step(&s, &a),
            EnvId::Reacher => reacher::step(&s, &a),
            EnvId::PushBlock => push_block::step(&s, &a),
        })
    }

    /// [`Self::step`] in double precision without rounding the result to
    /// observation precision (finite-difference Jacobians).
    pub fn step_f64(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        ensure!(state.len() == self.obs_dim() && action.len() == self.act_dim(), "{} step dims", self.id);
        ensure!(state.iter().chain(action).all(|x| x.is_finite()), "{} step input is not finite", self.id);
        let a = self.action_spec().clip(action);
        Ok(match self.id {
            EnvId::PointMass => point_mass::step_exact(state, &a),
            EnvId::TwoRoom => two_room::step_exact(state, &a),
            EnvId::Reacher => reacher::step_exact(state, &a),
            EnvId::PushBlock => push_block::step_exact(state, &a),
        })
    }

    /// Coordinates the success predicate compares: position for TwoRoom and
    /// PointMass, fingertip for Reacher, block center for PushBlock.
    pub fn task_point(&self, obs: &[f32]) -> [f64; 2] {
        match self.id {
            EnvId::PointMass | EnvId::TwoRoom => [obs[0] as f64, obs[1] as f64],
            EnvId::Reacher | EnvId::PushBlock => [obs[2] as f64, obs[3] as f64],
        }
    }

    pub fn task_distance(&self, obs: &[f32], goal: &[f32]) -> f64 {
        let (p, g) = (self.task_point(obs), self.task_point(goal));
        (p[0] - g[0]).hypot(p[1] - g[1])
    }

    pub fn success(&self, obs: &[f32], goal: &[f32]) -> Result<bool> {
        self.check_state(obs)?;
        self.check_state(goal)?;
        // Compared at observation precision so a distance of exactly 0.05
        // between stored observations counts as success.
        Ok(self.task_distance(obs, goal) as f32 <= SUCCESS_RADIUS as f32)
    }

    /// Scripted expert action at full speed.
    pub fn expert_action(&self, state: &[f32], goal: &[f32]) -> Result<Vec<f32>> {
        self.expert_action_scaled(state, goal, 1.0)
    }

    /// Scripted expert action with the speed limit scaled by `speed` in (0, 1].
    pub fn expert_action_scaled(&self, state: &[f32], goal: &[f32], speed: f64) -> Result<Vec<f32>> {
        self.check_state(state)?;
        self.check_state(goal)?;
        ensure!(speed > 0.0 && speed <= 1.0, "expert speed {speed} outside (0, 1]");
        let s: Vec<f64> = state.iter().map(|&x| x as f64).collect();
        let g: Vec<f64> = goal.iter().map(|&x| x as f64).collect();
        let v = self.bound * speed;
        let a = match self.id {
            EnvId::PointMass => point_mass::expert(&s, &g, v),
            EnvId::TwoRoom => two_room::expert(&s, &g, v),
            EnvId::Reacher => reacher::expert(&s, &g, v),
            EnvId::PushBlock => push_block::expert(&s, &g, v),
        };
        Ok(a.iter().map(|&x| x as f32).collect())
    }

    /// Random start state and goal state for a fresh task.
    pub fn sample_task(&self, rng: &mut Rng) -> (Vec<f32>, Vec<f32>) {
        let (s, g) = match self.id {
            EnvId::PointMass => point_mass::sample_task(rng),
            EnvId::TwoRoom => two_room::sample_task(rng),
            EnvId::Reacher => reacher::sample_task(rng),
            EnvId::PushBlock => push_block::sample_task(rng),
        };
        (to_f32(&s), to_f32(&g))
    }

    /// Whether a state is inside the valid state space.
    pub fn is_valid_state(&self, s: &[f32]) -> bool {
        if self.check_state(s).is_err() {
            return false;
        }
        let s: Vec<f64> = s.iter().map(|&x| x as f64).collect();
        match self.id {
            EnvId::PointMass => point_mass::valid(&s),
            EnvId::TwoRoom => two_room::valid(&s),
            EnvId::Reacher => reacher::valid(&s),
            EnvId::PushBlock => push_block::valid(&s),
        }
    }
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub(crate) fn clip_vec(v: [f64; 2], bound: f64) -> [f64; 2] {
    [v[0].clamp(-bound, bound), v[1].clamp(-bound, bound)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_names_round_trip() {
        for e in EnvId::ALL {
            assert_eq!(e.name().parse::<EnvId>().unwrap(), e);
        }
        assert_eq!("TwoRoom".parse::<EnvId>().unwrap(), EnvId::TwoRoom);
        assert!("cartpole".parse::<EnvId>().is_err());
    }

    #[test]
    fn success_rules() {
        let env = Env::new(EnvId::PointMass);
        assert!(env.success(&[0.3, 0.3], &[0.3, 0.3]).unwrap());
        assert!(!env.success(&[0.1, 0.3], &[0.3, 0.3]).unwrap());
        assert!(env.success(&[0.05, 0.0], &[0.0, 0.0]).unwrap());
        assert!(!env.success(&[0.0501, 0.0], &[0.0, 0.0]).unwrap());
        assert!(Env::new(EnvId::Reacher).success(&[0.0, 1.0], &[0.0, 1.0, 0.0, 0.0]).is_err());
        let pb = Env::new(EnvId::PushBlock);
        // pusher positions differ, block centers coincide
        assert!(pb.success(&[0.1, 0.1, 0.5, 0.5], &[0.9, 0.9, 0.5, 0.5]).unwrap());
    }

    #[test]
    fn action_normalization_round_trips() {
        let spec = ActionSpec::symmetric(2, 0.05).unwrap();
        let a = [0.05f32, -0.025];
        let u = spec.normalize(&a);
        assert!((u[0] - 1.0).abs() < 1e-6 && (u[1] + 0.5).abs() < 1e-6);
        let back = spec.denormalize(&u);
        assert!((back[0] - a[0]).abs() < 1e-8 && (back[1] - a[1]).abs() < 1e-8);
    }

    #[test]
    fn non_finite_action_rejected() {
        for e in EnvId::ALL {
            let env = Env::new(e);
            let mut rng = crate::rng::SeedStream::new(0).rng();
            let (s, _) = env.sample_task(&mut rng);
            assert!(env.step(&s, &[f32::NAN, 0.0]).is_err());
            assert!(env.step(&s, &[0.0]).is_err());
        }
    }
}
