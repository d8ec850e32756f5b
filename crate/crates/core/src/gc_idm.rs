//! Goal-conditioned inverse dynamics: `a = f(z_t, z_goal, h)`.
//!
//! A `LayerNorm/GELU` MLP reads the concatenated current and goal latents.
//! The remaining horizon `h` is normalized to `[0, 1]`, encoded
//! sinusoidally, passed through a small MLP to a conditioning vector `c`,
//! and injected by a zero-initialized AdaLN modulation of the final backbone
//! features right before the linear action head.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{DemoDataset, Env, GoalTask};
use crate::error::{ensure, Error, Result};
use crate::eval::record::{latent_distance, EpisodeRecord, Stopwatch};
use crate::nn::checkpoint;
use crate::nn::layers::{concat_cols, gelu, gelu_grad, sinusoidal_batch, AdaLnCache, DenseStackCache};
use crate::nn::{AdaLnZero, AdamWConfig, CosineSchedule, DenseStack, Grads, Init, Linear, Mode, OptimState, ParamSet, Params, Real};
use crate::rng::{Rng, SeedStream};
use crate::solvers::LatentModel;
use crate::world_model::{meta_f64, meta_u64, WorldModelBundle};

pub const CHECKPOINT_KIND: &str = "gc_idm";

/// How the input-noise augmentation picks its scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Every batch uses `noise_sigma`.
    Fixed,
    /// Every batch draws its scale from `U[0, noise_sigma]`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcIdmConfig {
    pub h_max: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Width of the sinusoidal horizon encoding.
    pub embed_dim: usize,
    /// Width of the horizon MLP and of the conditioning vector.
    pub cond_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub noise_sigma: f64,
    pub noise_mode: NoiseMode,
    pub log_every: u64,
}

impl Default for GcIdmConfig {
    fn default() -> Self {
        Self {
            h_max: 50,
            hidden: 512,
            layers: 3,
            dropout: 0.1,
            embed_dim: 64,
            cond_dim: 128,
            batch_size: 1024,
            epochs: 50,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            noise_sigma: 0.0,
            noise_mode: NoiseMode::Fixed,
            log_every: 25,
        }
    }
}

impl GcIdmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.h_max >= 1, "h_max must be at least 1");
        ensure!(self.hidden >= 1 && self.layers >= 1 && self.embed_dim >= 2 && self.cond_dim >= 1, "network sizes must be positive");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)");
        ensure!(self.batch_size >= 1 && self.epochs >= 1, "batch size and epochs must be positive");
        ensure!(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(), "noise sigma must be non-negative");
        Ok(())
    }
}

/// `min(steps_remaining, h_max) / h_max`.
pub fn normalize_horizon(steps_remaining: usize, h_max: usize) -> Result<f64> {
    ensure!(steps_remaining >= 1, "steps remaining must be at least 1, got {steps_remaining}");
    ensure!(h_max >= 1, "h_max must be at least 1");
    Ok(steps_remaining.min(h_max) as f64 / h_max as f64)
}

/// Layer structure of the controller; parameters live in a [`Params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GcIdmNet {
    pub backbone: DenseStack,
    pub embed_in: Linear,
    pub embed_out: Linear,
    pub adaln: AdaLnZero,
    pub head: Linear,
    pub h_max: usize,
    pub embed_dim: usize,
}

pub struct GcIdmCache<T> {
    stack: DenseStackCache<T>,
    features: Array2<T>,
    encoding: Array2<T>,
    pre: Array2<T>,
    hidden_c: Array2<T>,
    c: Array2<T>,
    adaln: AdaLnCache<T>,
    modulated: Array2<T>,
}

impl GcIdmNet {
    pub fn new<T: Real>(p: &mut Params<T>, d: usize, act_dim: usize, cfg: &GcIdmConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let widths = vec![cfg.hidden; cfg.layers];
        Ok(Self {
            backbone: DenseStack::new(p, "backbone", 2 * d, &widths, cfg.dropout, rng)?,
            embed_in: Linear::new(p, "horizon.in", cfg.embed_dim, cfg.cond_dim, Init::Kaiming, rng)?,
            embed_out: Linear::new(p, "horizon.out", cfg.cond_dim, cfg.cond_dim, Init::Kaiming, rng)?,
            adaln: AdaLnZero::new(p, "adaln", cfg.cond_dim, cfg.hidden, rng)?,
            head: Linear::new(p, "head", cfg.hidden, act_dim, Init::Normal(0.01), rng)?,
            h_max: cfg.h_max,
            embed_dim: cfg.embed_dim,
        })
    }

    pub fn bind<T: Real>(p: &Params<T>, layers: usize, dropout: f64, h_max: usize, embed_dim: usize) -> Result<Self> {
        Ok(Self {
            backbone: DenseStack::bind(p, "backbone", layers, dropout)?,
            embed_in: Linear::bind(p, "horizon.in")?,
            embed_out: Linear::bind(p, "horizon.out")?,
            adaln: AdaLnZero::bind(p, "adaln")?,
            head: Linear::bind(p, "head")?,
            h_max,
            embed_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.backbone.in_dim() / 2
    }

    pub fn act_dim(&self) -> usize {
        self.head.out_dim
    }

    fn encode_horizons<T: Real>(&self, h: &[usize]) -> Result<Array2<T>> {
        let fracs = h.iter().map(|&s| normalize_horizon(s, self.h_max)).collect::<Result<Vec<_>>>()?;
        sinusoidal_batch(&fracs, self.embed_dim)
    }

    /// Training-mode forward; `h` holds integer steps remaining per row.
    pub fn forward<T: Real>(
        &self,
        p: &Params<T>,
        z: ArrayView2<T>,
        z_goal: ArrayView2<T>,
        h: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<T>, GcIdmCache<T>)> {
        ensure!(z.dim() == z_goal.dim(), "current and goal latents differ in shape");
        ensure!(h.len() == z.nrows(), "one horizon per row required");
        let x = concat_cols(z, z_goal);
        let (features, stack) = self.backbone.forward(p, x.view(), mode)?;
        let encoding = self.encode_horizons(h)?;
        let pre = self.embed_in.forward(p, encoding.view())?;
        let hidden_c = pre.mapv(gelu);
        let c = self.embed_out.forward(p, hidden_c.view())?;
        let (modulated, adaln) = self.adaln.forward(p, features.view(), c.view())?;
        let y = self.head.forward(p, modulated.view())?;
        Ok((y, GcIdmCache { stack, features, encoding, pre, hidden_c, c, adaln, modulated }))
    }

    pub fn forward_eval<T: Real>(&self, p: &Params<T>, z: ArrayView2<T>, z_goal: ArrayView2<T>, h: &[usize]) -> Result<Array2<T>> {
        Ok(self.forward(p, z, z_goal, h, &mut Mode::Eval)?.0)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the concatenated input `[z, z_goal]`.
    pub fn backward<T: Real>(&self, p: &Params<T>, cache: &GcIdmCache<T>, dy: ArrayView2<T>, mut grads: Option<&mut Grads<T>>) -> Array2<T> {
        let dmod = self.head.backward(p, cache.modulated.view(), dy, grads.as_deref_mut());
        let (dfeat, dc) = self.adaln.backward(p, &cache.adaln, cache.features.view(), cache.c.view(), dmod.view(), grads.as_deref_mut());
        let mut dpre = self.embed_out.backward(p, cache.hidden_c.view(), dc.view(), grads.as_deref_mut());
        Zip::from(&mut dpre).and(&cache.pre).for_each(|g, &x| *g = *g * gelu_grad(x));
        self.embed_in.backward(p, cache.encoding.view(), dpre.view(), grads.as_deref_mut());
        self.backbone.backward(p, &cache.stack, dfeat.view(), grads)
    }
}

/// A trained (or freshly initialized) controller.
#[derive(Clone, Debug, PartialEq)]
pub struct GcIdmModel {
    pub params: Params<f32>,
    pub net: GcIdmNet,
    pub config: GcIdmConfig,
}

impl GcIdmModel {
    pub fn init(d: usize, act_dim: usize, cfg: &GcIdmConfig, seed: &SeedStream) -> Result<Self> {
        let mut rng = seed.derive("gc_idm.init").rng();
        let mut params = Params::new();
        let net = GcIdmNet::new(&mut params, d, act_dim, cfg, &mut rng)?;
        Ok(Self { params, net, config: cfg.clone() })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.latent_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.act_dim()
    }

    pub fn h_max(&self) -> usize {
        self.net.h_max
    }

    /// Batch inference (dropout off), normalized actions.
    pub fn forward(&self, z: ArrayView2<f32>, z_goal: ArrayView2<f32>, h: &[usize]) -> Result<Array2<f32>> {
        ensure!(z.ncols() == self.latent_dim(), "latent width {} vs {}", z.ncols(), self.latent_dim());
        self.net.forward_eval(&self.params, z, z_goal, h)
    }

    /// One action for one query.
    pub fn act(&self, z: &[f32], z_goal: &[f32], steps_remaining: usize) -> Result<Vec<f32>> {
        let zv = ArrayView2::from_shape((1, z.len()), z).map_err(|e| crate::error::contract(e.to_string()))?;
        let gv = ArrayView2::from_shape((1, z_goal.len()), z_goal).map_err(|e| crate::error::contract(e.to_string()))?;
        Ok(self.forward(zv, gv, &[steps_remaining])?.row(0).to_vec())
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        let c = &self.config;
        let mut m = BTreeMap::new();
        m.insert("d".into(), Value::from(self.latent_dim()));
        m.insert("act_dim".into(), Value::from(self.act_dim()));
        m.insert("H_max".into(), Value::from(c.h_max));
        m.insert("hidden".into(), Value::from(c.hidden));
        m.insert("layers".into(), Value::from(c.layers));
        m.insert("sigma".into(), Value::from(c.noise_sigma));
        m.insert("config".into(), serde_json::to_value(c).expect("serializable"));
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::to_bytes(CHECKPOINT_KIND, &self.meta(), &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.meta(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load_kind::<f32>(path, CHECKPOINT_KIND)?;
        let config: GcIdmConfig = ck
            .meta
            .get("config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Format { kind: "checkpoint", msg: "missing gc_idm config".into() })?;
        let net = GcIdmNet::bind(&ck.params, config.layers, config.dropout, config.h_max, config.embed_dim)?;
        let d = meta_u64(&ck.meta, "d")? as usize;
        let _ = meta_f64(&ck.meta, "sigma")?;
        if net.latent_dim() != d || net.act_dim() != meta_u64(&ck.meta, "act_dim")? as usize {
            return Err(Error::Format { kind: "checkpoint", msg: "gc_idm shapes disagree with metadata".into() });
        }
        Ok(Self { params: ck.params, net, config })
    }
}

/// A batch of `(z_t, z_goal, h, a_t)` training triples; actions normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct IdmBatch {
    pub z: Array2<f32>,
    pub z_goal: Array2<f32>,
    pub h: Vec<usize>,
    pub actions: Array2<f32>,
    /// `(episode, t)` of every row.
    pub index: Vec<(usize, usize)>,
}

/// Draws training triples from embedded episodes.
///
/// The horizon is drawn first, uniformly from `1..=min(H_max, longest
/// episode)`, then `(episode, t)` uniformly among all positions with a
/// frame `h` steps ahead in the same episode. The `h` marginal is exactly
/// uniform and, given `h`, every valid pair is equally likely.
pub struct TripleSampler {
    latents: Vec<Array2<f32>>,
    actions: Vec<Array2<f32>>,
    h_eff: usize,
    /// `cum[h - 1][e]`: valid start positions for horizon `h` in episodes `< e`.
    cum: Vec<Vec<u64>>,
}

impl TripleSampler {
    /// Embed every frame of `ds` with the frozen encoder.
    pub fn new(ds: &DemoDataset, bundle: &WorldModelBundle, h_max: usize) -> Result<Self> {
        let spec = ds.env.action_spec();
        let mut latents = Vec::with_capacity(ds.episodes.len());
        let mut actions = Vec::with_capacity(ds.episodes.len());
        for ep in &ds.episodes {
            latents.push(bundle.encode(ep.observations.view())?);
            let mut a = ep.actions.clone();
            for mut row in a.rows_mut() {
                let n = spec.normalize(row.as_slice().expect("contiguous"));
                row.assign(&ndarray::ArrayView1::from(&n[..]));
            }
            actions.push(a);
        }
        Self::from_parts(latents, actions, h_max)
    }

    /// `latents[e]: [L_e + 1, d]`, `actions[e]: [L_e, act_dim]` (normalized).
    pub fn from_parts(latents: Vec<Array2<f32>>, actions: Vec<Array2<f32>>, h_max: usize) -> Result<Self> {
        ensure!(!latents.is_empty(), "empty dataset");
        ensure!(latents.len() == actions.len(), "latent and action episode counts differ");
        ensure!(h_max >= 1, "h_max must be at least 1");
        for (z, a) in latents.iter().zip(&actions) {
            ensure!(z.nrows() == a.nrows() + 1, "episode needs one more frame than actions");
        }
        let longest = actions.iter().map(|a| a.nrows()).max().unwrap_or(0);
        ensure!(longest >= 1, "no episode has a transition");
        let h_eff = h_max.min(longest);
        let cum = (1..=h_eff)
            .map(|h| {
                let mut acc = 0u64;
                let mut v = Vec::with_capacity(actions.len() + 1);
                v.push(0);
                for a in &actions {
                    acc += (a.nrows() + 1).saturating_sub(h) as u64;
                    v.push(acc);
                }
                v
            })
            .collect();
        Ok(Self { latents, actions, h_eff, cum })
    }

    /// Largest horizon that can be drawn.
    pub fn h_effective(&self) -> usize {
        self.h_eff
    }

    pub fn num_transitions(&self) -> usize {
        self.actions.iter().map(|a| a.nrows()).sum()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents[0].ncols()
    }

    pub fn act_dim(&self) -> usize {
        self.actions[0].ncols()
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> IdmBatch {
        let (d, a) = (self.latent_dim(), self.act_dim());
        let mut out = IdmBatch {
            z: Array2::zeros((batch, d)),
            z_goal: Array2::zeros((batch, d)),
            h: Vec::with_capacity(batch),
            actions: Array2::zeros((batch, a)),
            index: Vec::with_capacity(batch),
        };
        for i in 0..batch {
            let h = rng.random_range(1..=self.h_eff);
            let cum = &self.cum[h - 1];
            let r = rng.random_range(0..cum[cum.len() - 1]);
            let e = cum.partition_point(|&c| c <= r) - 1;
            let t = (r - cum[e]) as usize;
            out.z.row_mut(i).assign(&self.latents[e].row(t));
            out.z_goal.row_mut(i).assign(&self.latents[e].row(t + h));
            out.actions.row_mut(i).assign(&self.actions[e].row(t));
            out.h.push(h);
            out.index.push((e, t));
        }
        out
    }
}

pub(crate) fn add_noise(x: &mut Array2<f32>, sigma: f64, rng: &mut Rng) {
    if sigma > 0.0 {
        x.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + (sigma * e) as f32
        });
    }
}

/// Noise scale for one batch.
pub(crate) fn batch_sigma(mode: NoiseMode, sigma: f64, rng: &mut Rng) -> f64 {
    match mode {
        NoiseMode::Fixed => sigma,
        NoiseMode::Uniform if sigma > 0.0 => rng.random_range(0.0..=sigma),
        NoiseMode::Uniform => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmCurveRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<IdmCurveRow>,
    /// MSE on a fixed probe batch before and after training (dropout off).
    pub init_mse: f64,
    pub final_mse: f64,
    pub steps: u64,
}

fn mse(pred: ArrayView2<f32>, target: ArrayView2<f32>) -> f64 {
    Zip::from(pred).and(target).fold(0.0, |acc, &p, &t| acc + ((p - t) as f64).powi(2)) / pred.len().max(1) as f64
}

/// Optimizer steps for `epochs` passes over `transitions` at `batch`.
pub fn steps_for(epochs: usize, transitions: usize, batch: usize) -> u64 {
    (epochs * transitions.div_ceil(batch)).max(1) as u64
}

/// Train on batches produced by `source`, for `steps` AdamW steps.
pub fn train_gc_idm_from(
    d: usize,
    act_dim: usize,
    cfg: &GcIdmConfig,
    steps: u64,
    source: &mut dyn FnMut(usize, &mut Rng) -> IdmBatch,
    seed: &SeedStream,
) -> Result<(GcIdmModel, TrainReport)> {
    let mut model = GcIdmModel::init(d, act_dim, cfg, seed)?;
    let mut batch_rng = seed.derive("gc_idm.batches").rng();
    let mut noise_rng = seed.derive("gc_idm.noise").rng();
    let mut drop_rng = seed.derive("gc_idm.dropout").rng();
    let probe = source(cfg.batch_size.min(4096), &mut seed.derive("gc_idm.probe").rng());
    let init_mse = mse(model.forward(probe.z.view(), probe.z_goal.view(), &probe.h)?.view(), probe.actions.view());
    let mut ps = ParamSet::new(std::mem::take(&mut model.params));
    let opt_cfg = AdamWConfig::new(CosineSchedule::to_hundredth(cfg.lr, steps), cfg.weight_decay, Some(cfg.clip_norm));
    let mut opt = OptimState::new(opt_cfg, &ps)?;
    let mut curve = Vec::new();
    for step in 0..steps {
        let mut b = source(cfg.batch_size, &mut batch_rng);
        let sigma = batch_sigma(cfg.noise_mode, cfg.noise_sigma, &mut noise_rng);
        add_noise(&mut b.z, sigma, &mut noise_rng);
        add_noise(&mut b.z_goal, sigma, &mut noise_rng);
        ps.zero_grad();
        let (y, cache) = model.net.forward(&ps.params, b.z.view(), b.z_goal.view(), &b.h, &mut Mode::Train(&mut drop_rng))?;
        let err = &y - &b.actions;
        let loss = err.iter().map(|&e| (e as f64).powi(2)).sum::<f64>() / err.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NumericalAbort { step, what: format!("gc_idm loss is {loss}") });
        }
        let dy = &err * (2.0 / err.len() as f32);
        model.net.backward(&ps.params, &cache, dy.view(), Some(&mut ps.grads));
        let info = opt.step(&mut ps)?;
        if step % cfg.log_every.max(1) == 0 || step + 1 == steps {
            curve.push(IdmCurveRow { step, loss, lr: info.lr });
        }
    }
    ps.params.check_finite()?;
    model.params = ps.params;
    let final_mse = mse(model.forward(probe.z.view(), probe.z_goal.view(), &probe.h)?.view(), probe.actions.view());
    Ok((model, TrainReport { curve, init_mse, final_mse, steps }))
}

/// Train on a demonstration dataset through a frozen world-model encoder.
pub fn train_gc_idm(ds: &DemoDataset, bundle: &WorldModelBundle, cfg: &GcIdmConfig, seed: &SeedStream) -> Result<(GcIdmModel, TrainReport)> {
    cfg.validate()?;
    let before = bundle.checksum();
    let sampler = TripleSampler::new(ds, bundle, cfg.h_max)?;
    let steps = steps_for(cfg.epochs, sampler.num_transitions(), cfg.batch_size);
    let out = train_gc_idm_from(sampler.latent_dim(), sampler.act_dim(), cfg, steps, &mut |n, rng| sampler.sample(n, rng), seed)?;
    ensure!(bundle.checksum() == before, "world model parameters changed during controller training");
    Ok(out)
}

pub fn write_idm_curve_csv(path: &Path, curve: &[IdmCurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in curve {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    checkpoint::write_atomic(path, &bytes)
}

/// Closed-loop goal reaching: encode the goal once, then every step encode
/// the current observation, query the controller with the remaining budget
/// and apply the action.
pub fn closed_loop_control(env: &Env, task: &GoalTask, encoder: &dyn LatentModel, model: &GcIdmModel) -> Result<EpisodeRecord> {
    run_controller(env, task, encoder, model, 1, &mut |_, _| {})
}

/// As [`closed_loop_control`], but the controller only re-encodes every
/// `commit_window` steps and holds its action in between. `perturb` may
/// modify each executed raw action (noise injection); it receives the step
/// index.
pub fn run_controller(
    env: &Env,
    task: &GoalTask,
    encoder: &dyn LatentModel,
    model: &GcIdmModel,
    commit_window: usize,
    perturb: &mut dyn FnMut(usize, &mut Vec<f32>),
) -> Result<EpisodeRecord> {
    ensure!(task.budget >= 1, "budget must be at least 1");
    ensure!(commit_window >= 1, "commit window must be at least 1");
    let spec = env.action_spec();
    let mut rec = EpisodeRecord::new(env.id, "gc_idm", task.clone());
    rec.config_hash = config_hash(&model.config);
    let watch = Stopwatch::start();
    let z_goal = encoder.encode_obs(&task.goal_obs)?;
    let goal = z_goal.as_slice().expect("contiguous");
    let mut obs = task.start_obs.clone();
    let z0 = encoder.encode_obs(&obs)?;
    rec.latent_goal_distances.push(latent_distance(z0.as_slice().expect("contiguous"), goal));
    rec.success = env.success(&obs, &task.goal_obs)?;
    let mut held = Vec::new();
    while !rec.success && rec.steps_taken < task.budget {
        let t = rec.steps_taken;
        if t % commit_window == 0 {
            let u = Stopwatch::time(&mut rec.timing, || -> Result<Vec<f32>> {
                let z = encoder.encode_obs(&obs)?;
                model.act(z.as_slice().expect("contiguous"), goal, task.budget - t)
            })?;
            rec.plan_calls += 1;
            rec.model_forwards += 1;
            let clipped: Vec<f32> = u.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
            held = spec.denormalize(&clipped);
        }
        let mut a = held.clone();
        perturb(t, &mut a);
        obs = env.step(&obs, &a)?;
        let z = encoder.encode_obs(&obs)?;
        rec.push_step(a, latent_distance(z.as_slice().expect("contiguous"), goal));
        rec.success = env.success(&obs, &task.goal_obs)?;
    }
    watch.finish(&mut rec.timing);
    Ok(rec)
}

pub fn config_hash(cfg: &GcIdmConfig) -> String {
    use sha2::Digest;
    let mut h = sha2::Sha256::new();
    h.update(serde_json::to_string(cfg).expect("serializable").as_bytes());
    crate::nn::params::hex_digest(h)[..12].to_string()
}

/// Clip a normalized action batch into the action box.
pub fn clip_unit(mut u: Array2<f32>) -> Array2<f32> {
    u.mapv_inplace(|x| x.clamp(-1.0, 1.0));
    u
}
