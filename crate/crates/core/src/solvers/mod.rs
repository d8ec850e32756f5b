//! Test-time planners over a frozen latent model: CEM, MPPI, iCEM and a
//! first-order gradient solver, plus the receding-horizon executor.
//!
//! Every planner searches over action sequences `[horizon, act_dim]` in
//! normalized action coordinates (`[-1, 1]` per dimension) and scores a
//! candidate by the squared distance between its terminal latent and the
//! goal latent.

mod execute;
mod gradient;
pub mod noise;
mod sampling;

use std::cell::Cell;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::Rng;

pub use execute::receding_horizon_execute;
pub use sampling::mppi_weights;

/// Planning horizon and how much of each plan is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub horizon: usize,
    /// Planned actions committed per plan call.
    pub receding_horizon: usize,
    /// Raw environment steps each planned action is repeated for.
    pub action_block: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { horizon: 5, receding_horizon: 5, action_block: 5 }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.horizon >= 1 && self.receding_horizon >= 1 && self.action_block >= 1,
            "plan config entries must be at least 1: {self:?}"
        );
        ensure!(self.receding_horizon <= self.horizon, "receding horizon {} exceeds horizon {}", self.receding_horizon, self.horizon);
        Ok(())
    }

    /// Raw environment steps executed per plan call.
    pub fn committed_steps(&self) -> usize {
        self.receding_horizon * self.action_block
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cem,
    Mppi,
    Icem,
    Gradient,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Cem, SolverKind::Mppi, SolverKind::Icem, SolverKind::Gradient];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cem => "cem",
            SolverKind::Mppi => "mppi",
            SolverKind::Icem => "icem",
            SolverKind::Gradient => "gradient",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown solver {s:?}")))
    }
}

/// What iCEM returns after its last iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcemReturn {
    /// Mean of the final elite set.
    EliteMean,
    /// Mean of the distribution the final population was drawn from.
    DistributionMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub num_samples: usize,
    /// Refinement iterations (SGD steps for the gradient solver).
    pub n_steps: usize,
    pub topk: usize,
    /// Initial per-dimension variance of the sampling distribution.
    pub var_scale: f64,
    pub temperature: f64,
    pub noise_beta: f64,
    pub elite_keep: usize,
    /// Largest fraction of an iCEM population taken by reused elites.
    pub keep_fraction: f64,
    pub icem_return: IcemReturn,
    pub lr: f64,
    /// Std of Gaussian noise added after each gradient step.
    pub action_noise: f64,
    pub seed: u64,
}

impl SolverConfig {
    /// Library defaults for a solver kind.
    pub fn defaults(kind: SolverKind) -> Self {
        Self {
            kind,
            num_samples: if kind == SolverKind::Gradient { 2 } else { 300 },
            n_steps: 30,
            topk: 30,
            var_scale: 1.0,
            temperature: 0.5,
            noise_beta: 2.0,
            elite_keep: 5,
            keep_fraction: 0.1,
            icem_return: IcemReturn::EliteMean,
            lr: 1.0,
            action_noise: 0.0,
            seed: 0,
        }
    }

    pub fn cem(num_samples: usize, n_steps: usize) -> Self {
        Self { num_samples, n_steps, topk: 30.min(num_samples), ..Self::defaults(SolverKind::Cem) }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_samples >= 1 && self.n_steps >= 1, "num_samples and n_steps must be at least 1");
        ensure!(self.var_scale > 0.0 && self.var_scale.is_finite(), "var_scale must be positive");
        match self.kind {
            SolverKind::Cem | SolverKind::Icem => {
                ensure!(self.topk >= 1 && self.topk <= self.num_samples, "topk {} must be in [1, num_samples {}]", self.topk, self.num_samples);
            }
            SolverKind::Mppi => ensure!(self.temperature > 0.0, "temperature must be positive"),
            SolverKind::Gradient => {
                ensure!(self.lr >= 0.0 && self.lr.is_finite(), "lr must be non-negative");
                ensure!(self.action_noise >= 0.0, "action_noise must be non-negative");
            }
        }
        if self.kind == SolverKind::Icem {
            ensure!((0.0..=1.0).contains(&self.keep_fraction), "keep_fraction outside [0, 1]");
            ensure!(self.noise_beta >= 0.0, "noise_beta must be non-negative");
        }
        Ok(())
    }

    /// Rollouts one plan call performs.
    pub fn rollouts_per_plan(&self) -> u64 {
        (self.num_samples * self.n_steps) as u64
    }

    /// Short stable hash of the configuration, used to tag records.
    pub fn config_hash(&self, plan: &PlanConfig) -> String {
        let text = serde_json::to_string(&(self, plan)).expect("serializable");
        use sha2::Digest;
        let mut h = sha2::Sha256::new();
        h.update(text.as_bytes());
        crate::nn::params::hex_digest(h)[..12].to_string()
    }
}

/// Optional replacements for [`SolverConfig`] fields, applied to every
/// planner a protocol runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOverrides {
    pub num_samples: Option<usize>,
    pub n_steps: Option<usize>,
    pub topk: Option<usize>,
    pub var_scale: Option<f64>,
    pub temperature: Option<f64>,
    pub noise_beta: Option<f64>,
    pub lr: Option<f64>,
    pub action_noise: Option<f64>,
}

impl SolverOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, mut c: SolverConfig) -> SolverConfig {
        if let Some(v) = self.num_samples {
            c.num_samples = v;
        }
        if let Some(v) = self.n_steps {
            c.n_steps = v;
        }
        if let Some(v) = self.topk {
            c.topk = v;
        }
        if let Some(v) = self.var_scale {
            c.var_scale = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.noise_beta {
            c.noise_beta = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.action_noise {
            c.action_noise = v;
        }
        c
    }
}

/// Compute spent by one plan call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    pub rollouts: u64,
    pub predictor_calls: u64,
    pub wall_clock_ms: f64,
}

/// Per-iteration bookkeeping of a plan call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlanTrace {
    /// Lowest cost in each iteration's population.
    pub best_cost: Vec<f64>,
    /// Every evaluated population, only when requested.
    pub populations: Vec<Array3<f32>>,
}

impl PlanTrace {
    /// Best cost seen up to and including each iteration.
    pub fn running_best(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.best_cost
            .iter()
            .map(|&c| {
                best = best.min(c);
                best
            })
            .collect()
    }
}

pub struct PlanOutput {
    /// `[horizon, act_dim]` in normalized action units.
    pub actions: Array2<f32>,
    pub cost: PlanCost,
    pub trace: PlanTrace,
}

/// One-step latent dynamics a planner can query.
pub trait LatentDynamics {
    fn latent_dim(&self) -> usize;
    fn act_dim(&self) -> usize;

    /// Batched one-step prediction; one predictor call per row.
    fn predict(&self, z: ArrayView2<f32>, u: ArrayView2<f32>) -> Result<Array2<f32>>;

    /// Terminal costs of `seqs: [n, horizon, act_dim]` rolled out from `z0`,
    /// and the gradient of `terminal_cost / latent_dim` with respect to every
    /// action. Costs `n * horizon` predictor calls.
    fn cost_grad(&self, z0: ArrayView1<f32>, seqs: ArrayView3<f32>, goal: ArrayView1<f32>) -> Result<(Vec<f64>, Array3<f32>)>;
}

/// A latent model that can also embed raw observations; what the
/// receding-horizon executor drives.
pub trait LatentModel: LatentDynamics {
    fn encode_obs(&self, obs: &[f32]) -> Result<Array1<f32>>;

    /// Raw environment steps one predictor call spans.
    fn frameskip(&self) -> usize;
}

/// Squared Euclidean distance, accumulated in `f64`.
pub fn terminal_cost(z: ArrayView1<f32>, goal: ArrayView1<f32>) -> f64 {
    z.iter().zip(goal).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum()
}

/// Roll every sequence out from `z0`; returns the terminal latents `[n, d]`.
pub fn rollout(dynamics: &dyn LatentDynamics, z0: ArrayView1<f32>, seqs: ArrayView3<f32>) -> Result<Array2<f32>> {
    let (n, h, a) = seqs.dim();
    ensure!(z0.len() == dynamics.latent_dim() && a == dynamics.act_dim(), "rollout dims");
    let mut z = z0.broadcast((n, z0.len())).expect("broadcast").to_owned();
    for t in 0..h {
        let u = seqs.slice(s![.., t, ..]).to_owned();
        z = dynamics.predict(z.view(), u.view())?;
    }
    Ok(z)
}

pub fn rollout_costs(dynamics: &dyn LatentDynamics, z0: ArrayView1<f32>, seqs: ArrayView3<f32>, goal: ArrayView1<f32>) -> Result<Vec<f64>> {
    let zt = rollout(dynamics, z0, seqs)?;
    Ok(zt.axis_iter(Axis(0)).map(|r| terminal_cost(r, goal)).collect())
}

/// Instrumentation wrapper counting every predictor row that passes through.
pub struct Counted<'a> {
    inner: &'a dyn LatentDynamics,
    calls: Cell<u64>,
}

impl<'a> Counted<'a> {
    pub fn new(inner: &'a dyn LatentDynamics) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }
}

impl LatentDynamics for Counted<'_> {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn act_dim(&self) -> usize {
        self.inner.act_dim()
    }

    fn predict(&self, z: ArrayView2<f32>, u: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.calls.set(self.calls.get() + z.nrows() as u64);
        self.inner.predict(z, u)
    }

    fn cost_grad(&self, z0: ArrayView1<f32>, seqs: ArrayView3<f32>, goal: ArrayView1<f32>) -> Result<(Vec<f64>, Array3<f32>)> {
        let (n, h, _) = seqs.dim();
        self.calls.set(self.calls.get() + (n * h) as u64);
        self.inner.cost_grad(z0, seqs, goal)
    }
}

/// Exact integrator `z' = z + gain * u` with `latent_dim == act_dim`; the
/// analytic test problem for every planner. As a [`LatentModel`] it embeds
/// observations by identity, which makes it the true model of PointMass
/// away from the walls (`gain = frameskip * bound`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearIntegrator {
    pub dim: usize,
    pub gain: f32,
    pub frameskip: usize,
}

impl LinearIntegrator {
    pub fn new(dim: usize, gain: f32) -> Self {
        Self { dim, gain, frameskip: 1 }
    }
}

impl LatentModel for LinearIntegrator {
    fn encode_obs(&self, obs: &[f32]) -> Result<Array1<f32>> {
        ensure!(obs.len() == self.dim, "observation width {} vs {}", obs.len(), self.dim);
        Ok(Array1::from(obs.to_vec()))
    }

    fn frameskip(&self) -> usize {
        self.frameskip
    }
}

impl LatentDynamics for LinearIntegrator {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn act_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, z: ArrayView2<f32>, u: ArrayView2<f32>) -> Result<Array2<f32>> {
        ensure!(z.dim() == u.dim() && z.ncols() == self.dim, "integrator dims");
        Ok(&z + &(&u * self.gain))
    }

    fn cost_grad(&self, z0: ArrayView1<f32>, seqs: ArrayView3<f32>, goal: ArrayView1<f32>) -> Result<(Vec<f64>, Array3<f32>)> {
        let zt = rollout(self, z0, seqs)?;
        let costs = zt.axis_iter(Axis(0)).map(|r| terminal_cost(r, goal)).collect();
        let err = &zt - &goal;
        let mut g = Array3::zeros(seqs.dim());
        let scale = 2.0 * self.gain / self.dim as f32;
        for t in 0..seqs.dim().1 {
            g.slice_mut(s![.., t, ..]).assign(&(&err * scale));
        }
        Ok((costs, g))
    }
}

/// Run the configured solver once from `z0` toward `goal`.
pub fn plan(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    plan_cfg: &PlanConfig,
    cfg: &SolverConfig,
    rng: &mut Rng,
) -> Result<PlanOutput> {
    plan_inner(dynamics, z0, goal, plan_cfg, cfg, rng, false)
}

/// As [`plan`], additionally keeping every evaluated population in the trace.
pub fn plan_traced(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    plan_cfg: &PlanConfig,
    cfg: &SolverConfig,
    rng: &mut Rng,
) -> Result<PlanOutput> {
    plan_inner(dynamics, z0, goal, plan_cfg, cfg, rng, true)
}

fn plan_inner(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    plan_cfg: &PlanConfig,
    cfg: &SolverConfig,
    rng: &mut Rng,
    keep_populations: bool,
) -> Result<PlanOutput> {
    plan_cfg.validate()?;
    cfg.validate()?;
    ensure!(z0.len() == dynamics.latent_dim() && goal.len() == dynamics.latent_dim(), "latent dims do not match the model");
    let counted = Counted::new(dynamics);
    let t0 = Instant::now();
    let mut trace = PlanTrace::default();
    let (actions, rollouts) = {
        let mut sink = keep_populations.then_some(&mut trace.populations);
        match cfg.kind {
            SolverKind::Cem => sampling::cem(&counted, z0, goal, plan_cfg.horizon, cfg, rng, &mut trace.best_cost, sink.as_deref_mut())?,
            SolverKind::Mppi => sampling::mppi(&counted, z0, goal, plan_cfg.horizon, cfg, rng, &mut trace.best_cost, sink.as_deref_mut())?,
            SolverKind::Icem => sampling::icem(&counted, z0, goal, plan_cfg.horizon, cfg, rng, &mut trace.best_cost, sink.as_deref_mut())?,
            SolverKind::Gradient => gradient::solve(&counted, z0, goal, plan_cfg.horizon, cfg, rng, &mut trace.best_cost)?,
        }
    };
    let cost = PlanCost { rollouts, predictor_calls: counted.calls(), wall_clock_ms: t0.elapsed().as_secs_f64() * 1e3 };
    Ok(PlanOutput { actions, cost, trace })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn terminal_cost_hand_values() {
        let a = array![1.0f32, 0.0];
        assert_eq!(terminal_cost(a.view(), a.view()), 0.0);
        assert_eq!(terminal_cost(a.view(), array![-1.0f32, 0.0].view()), 4.0);
    }

    #[test]
    fn integrator_gradient_matches_rollout_differences() {
        let dyn_ = LinearIntegrator::new(2, 0.7);
        let z0 = array![0.1f32, -0.2];
        let goal = array![0.5f32, 0.3];
        let seqs = Array3::from_shape_fn((1, 3, 2), |(_, t, j)| 0.1 * (t as f32 + 1.0) * if j == 0 { 1.0 } else { -1.0 });
        let (_, g) = dyn_.cost_grad(z0.view(), seqs.view(), goal.view()).unwrap();
        let eps = 1e-3f32;
        for t in 0..3 {
            for j in 0..2 {
                let mut p = seqs.clone();
                p[[0, t, j]] += eps;
                let mut m = seqs.clone();
                m[[0, t, j]] -= eps;
                let cp = rollout_costs(&dyn_, z0.view(), p.view(), goal.view()).unwrap()[0];
                let cm = rollout_costs(&dyn_, z0.view(), m.view(), goal.view()).unwrap()[0];
                let num = (cp - cm) / (2.0 * eps as f64) / 2.0;
                assert!((num - g[[0, t, j]] as f64).abs() < 1e-3, "{num} vs {}", g[[0, t, j]]);
            }
        }
    }

    #[test]
    fn counted_wrapper_counts_rows() {
        let dyn_ = LinearIntegrator::new(2, 1.0);
        let c = Counted::new(&dyn_);
        let seqs = Array3::zeros((7, 4, 2));
        rollout(&c, Array1::zeros(2).view(), seqs.view()).unwrap();
        assert_eq!(c.calls(), 28);
    }

    #[test]
    fn configs_validate() {
        assert!(SolverConfig { topk: 301, ..SolverConfig::defaults(SolverKind::Cem) }.validate().is_err());
        assert!(SolverConfig { temperature: 0.0, ..SolverConfig::defaults(SolverKind::Mppi) }.validate().is_err());
        assert!(PlanConfig { receding_horizon: 6, ..PlanConfig::default() }.validate().is_err());
        for k in SolverKind::ALL {
            SolverConfig::defaults(k).validate().unwrap();
        }
        assert_eq!(PlanConfig::default().committed_steps(), 25);
        let _ = SeedStream::new(0);
    }
}
