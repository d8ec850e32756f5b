//! Pairwise inverse model `a_t = f(z_t, z_{t+1})` and planning by decoding
//! a linearly interpolated latent path.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{DemoDataset, Env, GoalTask};
use crate::error::{ensure, Error, Result};
use crate::eval::record::{latent_distance, EpisodeRecord, Stopwatch};
use crate::gc_idm::{add_noise, batch_sigma, steps_for, IdmCurveRow, NoiseMode, TripleSampler};
use crate::nn::layers::concat_cols;
use crate::nn::{checkpoint, AdamWConfig, CosineSchedule, Init, Mlp, Mode, OptimState, ParamSet, Params};
use crate::rng::{Rng, SeedStream};
use crate::solvers::{terminal_cost, Counted, LatentDynamics, LatentModel};
use crate::world_model::{meta_f64, WorldModelBundle};

pub const CHECKPOINT_KIND: &str = "pairwise_idm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairwiseConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub noise_mode: NoiseMode,
    pub log_every: u64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            layers: 3,
            dropout: 0.0,
            batch_size: 1024,
            epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            noise_mode: NoiseMode::Fixed,
            log_every: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseIdmModel {
    pub params: Params<f32>,
    pub net: Mlp,
    pub train_sigma: f64,
    pub config: PairwiseConfig,
}

impl PairwiseIdmModel {
    pub fn init(d: usize, act_dim: usize, cfg: &PairwiseConfig, train_sigma: f64, seed: &SeedStream) -> Result<Self> {
        ensure!(cfg.layers >= 1 && cfg.hidden >= 1, "network sizes must be positive");
        let mut rng = seed.derive("pairwise.init").rng();
        let mut params = Params::new();
        let net = Mlp::new(&mut params, "pairwise", 2 * d, &vec![cfg.hidden; cfg.layers], act_dim, cfg.dropout, Init::Normal(0.01), &mut rng)?;
        Ok(Self { params, net, train_sigma, config: cfg.clone() })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.in_dim() / 2
    }

    pub fn act_dim(&self) -> usize {
        self.net.out_dim()
    }

    /// Normalized actions for consecutive latent pairs.
    pub fn decode(&self, z: ArrayView2<f32>, z_next: ArrayView2<f32>) -> Result<Array2<f32>> {
        ensure!(z.dim() == z_next.dim() && z.ncols() == self.latent_dim(), "pairwise decode dims");
        self.net.forward_eval(&self.params, concat_cols(z, z_next).view())
    }

    /// Decode every consecutive pair of a path `[H + 1, d]` into `[H, act_dim]`.
    pub fn decode_path(&self, path: ArrayView2<f32>) -> Result<Array2<f32>> {
        let h = path.nrows();
        ensure!(h >= 2, "a path needs at least two points");
        self.decode(path.slice(s![..h - 1, ..]), path.slice(s![1.., ..]))
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("d".into(), Value::from(self.latent_dim()));
        m.insert("act_dim".into(), Value::from(self.act_dim()));
        m.insert("train_sigma".into(), Value::from(self.train_sigma));
        m.insert("config".into(), serde_json::to_value(&self.config).expect("serializable"));
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
        let config: PairwiseConfig = ck
            .meta
            .get("config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Format { kind: "checkpoint", msg: "missing pairwise config".into() })?;
        let net = Mlp::bind(&ck.params, "pairwise", config.layers, config.dropout)?;
        Ok(Self { train_sigma: meta_f64(&ck.meta, "train_sigma")?, params: ck.params, net, config })
    }
}

/// Train on consecutive `(z_t, z_{t+1}, a_t)` pairs with Gaussian input
/// noise of scale `sigma` on both latents (training only).
pub fn train_pairwise(
    ds: &DemoDataset,
    bundle: &WorldModelBundle,
    sigma: f64,
    cfg: &PairwiseConfig,
    seed: &SeedStream,
) -> Result<(PairwiseIdmModel, Vec<IdmCurveRow>)> {
    let sampler = TripleSampler::new(ds, bundle, 1)?;
    let steps = steps_for(cfg.epochs, sampler.num_transitions(), cfg.batch_size);
    train_pairwise_from(&sampler, sigma, cfg, steps, seed)
}

pub fn train_pairwise_from(
    sampler: &TripleSampler,
    sigma: f64,
    cfg: &PairwiseConfig,
    steps: u64,
    seed: &SeedStream,
) -> Result<(PairwiseIdmModel, Vec<IdmCurveRow>)> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be non-negative");
    let mut model = PairwiseIdmModel::init(sampler.latent_dim(), sampler.act_dim(), cfg, sigma, seed)?;
    let mut batch_rng = seed.derive("pairwise.batches").rng();
    let mut noise_rng = seed.derive("pairwise.noise").rng();
    let mut drop_rng = seed.derive("pairwise.dropout").rng();
    let mut ps = ParamSet::new(std::mem::take(&mut model.params));
    let opt_cfg = AdamWConfig::new(CosineSchedule::to_hundredth(cfg.lr, steps), cfg.weight_decay, Some(cfg.clip_norm));
    let mut opt = OptimState::new(opt_cfg, &ps)?;
    let mut curve = Vec::new();
    for step in 0..steps {
        let mut b = sampler.sample(cfg.batch_size, &mut batch_rng);
        let sd = batch_sigma(cfg.noise_mode, sigma, &mut noise_rng);
        add_noise(&mut b.z, sd, &mut noise_rng);
        add_noise(&mut b.z_goal, sd, &mut noise_rng);
        ps.zero_grad();
        let x = concat_cols(b.z.view(), b.z_goal.view());
        let (y, cache) = model.net.forward(&ps.params, x.view(), &mut Mode::Train(&mut drop_rng))?;
        let err = &y - &b.actions;
        let loss = err.iter().map(|&e| (e as f64).powi(2)).sum::<f64>() / err.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NumericalAbort { step, what: format!("pairwise loss is {loss}") });
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
    Ok((model, curve))
}

/// Decoding quality on ground-truth pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub mse: f64,
    pub cosine_sim: f64,
    /// `1 - SSE/SST` per action dimension, averaged.
    pub r2: f64,
}

/// Regression metrics of `pred` against `target`, both `[n, act_dim]`.
pub fn regression_metrics(pred: ArrayView2<f32>, target: ArrayView2<f32>) -> OracleMetrics {
    let p = pred.mapv(|x| x as f64);
    let t = target.mapv(|x| x as f64);
    let n = p.nrows().max(1) as f64;
    let mse = (&p - &t).mapv(|e| e * e).mean().unwrap_or(0.0);
    let mut cos = 0.0;
    for (a, b) in p.rows().into_iter().zip(t.rows()) {
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        cos += if na > 0.0 && nb > 0.0 { a.dot(&b) / (na * nb) } else if na == nb { 1.0 } else { 0.0 };
    }
    let mut r2 = 0.0;
    for j in 0..p.ncols() {
        let (pc, tc) = (p.column(j), t.column(j));
        let mean = tc.mean().unwrap_or(0.0);
        let sse: f64 = pc.iter().zip(tc).map(|(a, b)| (a - b).powi(2)).sum();
        let sst: f64 = tc.iter().map(|b| (b - mean).powi(2)).sum();
        r2 += if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { 0.0 };
    }
    OracleMetrics { mse, cosine_sim: cos / n, r2: r2 / p.ncols().max(1) as f64 }
}

/// Metrics on every consecutive pair of `ds`, with Gaussian noise of scale
/// `test_sigma` added to both latents.
pub fn oracle_eval(model: &PairwiseIdmModel, ds: &DemoDataset, bundle: &WorldModelBundle, test_sigma: f64, rng: &mut Rng) -> Result<OracleMetrics> {
    let spec = ds.env.action_spec();
    let mut z = Vec::new();
    let mut zn = Vec::new();
    let mut acts = Vec::new();
    for ep in &ds.episodes {
        let lat = bundle.encode(ep.observations.view())?;
        z.push(lat.slice(s![..ep.len(), ..]).to_owned());
        zn.push(lat.slice(s![1.., ..]).to_owned());
        let mut a = ep.actions.clone();
        for mut row in a.rows_mut() {
            let u = spec.normalize(row.as_slice().expect("contiguous"));
            row.assign(&ArrayView1::from(&u[..]));
        }
        acts.push(a);
    }
    let cat = |v: &[Array2<f32>]| ndarray::concatenate(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("same width");
    let (mut z, mut zn, acts) = (cat(&z), cat(&zn), cat(&acts));
    add_noise(&mut z, test_sigma, rng);
    add_noise(&mut zn, test_sigma, rng);
    let pred = model.decode(z.view(), zn.view())?;
    Ok(regression_metrics(pred.view(), acts.view()))
}

/// `z_i = (1 - i/H) z_start + (i/H) z_goal` for `i = 0..=H`.
pub fn lerp_plan(z_start: ArrayView1<f32>, z_goal: ArrayView1<f32>, h: usize) -> Result<Array2<f32>> {
    ensure!(h >= 1, "lerp horizon must be at least 1");
    ensure!(z_start.len() == z_goal.len(), "endpoint dims differ");
    let mut path = Array2::zeros((h + 1, z_start.len()));
    for i in 0..=h {
        let row = if i == 0 {
            z_start.to_owned()
        } else if i == h {
            z_goal.to_owned()
        } else {
            let a = i as f32 / h as f32;
            &z_start * (1.0 - a) + &z_goal * a
        };
        path.row_mut(i).assign(&row);
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Refinement rounds.
    pub k: usize,
    pub n_candidates: usize,
    /// Std of the Gaussian perturbation of interior path points for every
    /// candidate after the first.
    pub perturb_sigma: f64,
    /// Score the selected plan by a predictor rollout even when there is
    /// nothing to choose between.
    pub score: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { k: 0, n_candidates: 1, perturb_sigma: 0.1, score: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedPlan {
    /// `[H, act_dim]`, normalized.
    pub actions: Array2<f32>,
    /// Squared terminal-latent distance of the selected plan under the
    /// predictor, when scored.
    pub score: Option<f64>,
    pub predictor_calls: u64,
    /// Index of the selected option; 0 is the unrefined lerp decoding.
    pub selected: usize,
}

/// Roll raw-step actions through a model whose one step spans `frameskip`
/// raw steps: each block of `frameskip` actions enters as its mean. Returns
/// the latents at raw steps `0, frameskip, 2 frameskip, ...`.
fn block_rollout(dynamics: &dyn LatentDynamics, frameskip: usize, z0: ArrayView1<f32>, actions: ArrayView2<f32>) -> Result<Array2<f32>> {
    let blocks = actions.nrows() / frameskip;
    let seq: Array3<f32> = Array3::from_shape_fn((1, blocks, actions.ncols()), |(_, b, j)| {
        actions.slice(s![b * frameskip..(b + 1) * frameskip, j]).mean().unwrap_or(0.0)
    });
    let mut out = Array2::zeros((blocks + 1, z0.len()));
    out.row_mut(0).assign(&z0);
    let mut z = z0.insert_axis(Axis(0)).to_owned();
    for b in 0..blocks {
        z = dynamics.predict(z.view(), seq.slice(s![.., b, ..]))?;
        out.row_mut(b + 1).assign(&z.row(0));
    }
    Ok(out)
}

/// Latent path at raw-step resolution from block-boundary latents, linear
/// within each block.
fn densify(boundaries: ArrayView2<f32>, frameskip: usize) -> Array2<f32> {
    let blocks = boundaries.nrows() - 1;
    let mut path = Array2::zeros((blocks * frameskip + 1, boundaries.ncols()));
    for b in 0..blocks {
        for i in 0..frameskip {
            let a = i as f32 / frameskip as f32;
            let row = &boundaries.row(b) * (1.0 - a) + &boundaries.row(b + 1) * a;
            path.row_mut(b * frameskip + i).assign(&row);
        }
    }
    path.row_mut(blocks * frameskip).assign(&boundaries.row(blocks));
    path
}

/// Decode `path`, then `k` times replace it by the predictor rollout of its
/// own decoding (anchored at the first point) and decode again.
/// One dynamics step spans `fs` raw steps.
pub fn refine_rounds(path: ArrayView2<f32>, model: &PairwiseIdmModel, dynamics: &dyn LatentDynamics, fs: usize, k: usize) -> Result<Array2<f32>> {
    let h = path.nrows().saturating_sub(1);
    ensure!(h >= 1 && h % fs == 0, "path length {h} must be a positive multiple of frameskip {fs}");
    let mut actions = model.decode_path(path)?;
    for _ in 0..k {
        let clipped = actions.mapv(|x| x.clamp(-1.0, 1.0));
        let boundaries = block_rollout(dynamics, fs, path.row(0), clipped.view())?;
        actions = model.decode_path(densify(boundaries.view(), fs).view())?;
    }
    Ok(actions)
}

/// Decode a latent path into actions, optionally refining it `k` times by
/// replacing the path with the predictor rollout of its own decoding, over
/// several perturbed candidates. The unrefined decoding of the original
/// path always competes in the final selection. The path length minus one
/// must be a multiple of the model frameskip.
pub fn refine_path(
    path: ArrayView2<f32>,
    model: &PairwiseIdmModel,
    dynamics: &dyn LatentModel,
    cfg: &RefineConfig,
    rng: &mut Rng,
) -> Result<RefinedPlan> {
    ensure!(cfg.n_candidates >= 1, "need at least one candidate");
    let h = path.nrows().saturating_sub(1);
    let fs = dynamics.frameskip();
    ensure!(h >= 1 && h % fs == 0, "path length {h} must be a positive multiple of frameskip {fs}");
    let counted = Counted::new(dynamics);
    let z0 = path.row(0);
    let goal = path.row(h);
    let mut options = vec![model.decode_path(path)?];
    for c in 0..cfg.n_candidates {
        let mut p = path.to_owned();
        if c > 0 {
            for mut row in p.slice_mut(s![1..h, ..]).rows_mut() {
                row.mapv_inplace(|x| {
                    let e: f64 = StandardNormal.sample(rng);
                    x + (cfg.perturb_sigma * e) as f32
                });
            }
        }
        let actions = refine_rounds(p.view(), model, &counted, fs, cfg.k)?;
        if c > 0 || cfg.k > 0 {
            options.push(actions);
        }
    }
    let must_score = options.len() > 1 || cfg.score;
    let (selected, score) = if must_score {
        let mut best = (0, f64::INFINITY);
        for (i, a) in options.iter().enumerate() {
            let clipped = a.mapv(|x| x.clamp(-1.0, 1.0));
            let zs = block_rollout(&counted, fs, z0, clipped.view())?;
            let cost = terminal_cost(zs.row(zs.nrows() - 1), goal);
            if cost < best.1 {
                best = (i, cost);
            }
        }
        (best.0, Some(best.1))
    } else {
        (0, None)
    };
    let actions = options.swap_remove(selected).mapv(|x| x.clamp(-1.0, 1.0));
    Ok(RefinedPlan { actions, score, predictor_calls: counted.calls(), selected })
}

/// Open-loop pairwise planning: lerp from the encoded start to the encoded
/// goal over `budget` raw steps (rounded down to a multiple of the
/// frameskip), decode, optionally refine, then execute the whole sequence
/// without re-encoding, stopping at success.
pub fn pairwise_episode(
    env: &Env,
    task: &GoalTask,
    model: &PairwiseIdmModel,
    dynamics: &dyn LatentModel,
    cfg: &RefineConfig,
    stream: &SeedStream,
) -> Result<EpisodeRecord> {
    let fs = dynamics.frameskip();
    let h = task.budget / fs * fs;
    ensure!(h >= 1, "budget {} shorter than one frameskip block", task.budget);
    let spec = env.action_spec();
    let mut rec = EpisodeRecord::new(env.id, "pairwise_lerp", task.clone());
    rec.config_hash = {
        use sha2::Digest;
        let mut hs = sha2::Sha256::new();
        hs.update(serde_json::to_string(&(cfg, &model.config, model.train_sigma)).expect("serializable").as_bytes());
        crate::nn::params::hex_digest(hs)[..12].to_string()
    };
    let watch = Stopwatch::start();
    let z_goal = dynamics.encode_obs(&task.goal_obs)?;
    let goal = z_goal.as_slice().expect("contiguous");
    let mut obs = task.start_obs.clone();
    let z0 = dynamics.encode_obs(&obs)?;
    rec.latent_goal_distances.push(latent_distance(z0.as_slice().expect("contiguous"), goal));
    rec.success = env.success(&obs, &task.goal_obs)?;
    if rec.success {
        watch.finish(&mut rec.timing);
        return Ok(rec);
    }
    let mut rng = stream.rng();
    let plan = Stopwatch::time(&mut rec.timing, || -> Result<RefinedPlan> {
        let path = lerp_plan(z0.view(), z_goal.view(), h)?;
        refine_path(path.view(), model, dynamics, cfg, &mut rng)
    })?;
    rec.plan_calls = 1;
    rec.predictor_calls = plan.predictor_calls;
    rec.model_forwards = h as u64 * (1 + cfg.n_candidates as u64 * (1 + cfg.k as u64));
    for u in plan.actions.rows() {
        let a = spec.denormalize(u.as_slice().expect("contiguous"));
        obs = env.step(&obs, &a)?;
        let z = dynamics.encode_obs(&obs)?;
        rec.push_step(a, latent_distance(z.as_slice().expect("contiguous"), goal));
        if env.success(&obs, &task.goal_obs)? {
            rec.success = true;
            break;
        }
    }
    watch.finish(&mut rec.timing);
    Ok(rec)
}

/// Held-out consecutive pairs of a linear system for quick checks:
/// latents are states, `z' = z + gain * u`.
pub fn integrator_pairs(n_episodes: usize, len: usize, gain: f32, rng: &mut Rng) -> (Vec<Array2<f32>>, Vec<Array2<f32>>) {
    use rand::Rng as _;
    let mut zs = Vec::with_capacity(n_episodes);
    let mut us = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut z = Array2::zeros((len + 1, 2));
        let u = Array2::from_shape_fn((len, 2), |_| rng.random_range(-1.0f32..1.0));
        z.row_mut(0).assign(&Array1::from(vec![rng.random_range(0.0f32..1.0), rng.random_range(0.0f32..1.0)]));
        for t in 0..len {
            let next = &z.row(t) + &(&u.row(t) * gain);
            z.row_mut(t + 1).assign(&next);
        }
        zs.push(z);
        us.push(u);
    }
    (zs, us)
}
