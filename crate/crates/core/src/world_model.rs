//! Latent world model: an MLP encoder `z = enc(o)` and a residual MLP
//! predictor `z' = z + pred(z, u)`, trained jointly on one-step latent
//! prediction plus an isotropy penalty on the embeddings.
//!
//! The predictor consumes actions in normalized coordinates
//! (`u = a / bound`), the space every planner searches in.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{ActionSpec, DemoDataset, Env, EnvId};
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint;
use crate::nn::layers::{concat_cols, Mlp, Mode};
use crate::nn::{AdamWConfig, CosineSchedule, Init, OptimState, ParamSet, Params, Real};
use crate::rng::SeedStream;
use crate::solvers::{terminal_cost, LatentDynamics, LatentModel};

pub const CHECKPOINT_KIND: &str = "world_model";

static PREDICTOR_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of single-row predictor evaluations so far.
pub fn global_predictor_calls() -> u64 {
    PREDICTOR_CALLS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Weight of the isotropy penalty (applied as `lambda * sigreg / d`).
    pub lambda: f64,
    pub frameskip: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Block gradients through the target embedding of the prediction loss.
    pub stop_grad_target: bool,
    /// Training-curve sampling interval in steps.
    pub log_every: u64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 256,
            layers: 2,
            lambda: 1.0,
            frameskip: 5,
            batch_size: 256,
            steps: 4000,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            stop_grad_target: true,
            log_every: 50,
        }
    }
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub pred_loss: f64,
    pub sigreg: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelBundle {
    pub params: Params<f32>,
    pub encoder: Mlp,
    pub predictor: Mlp,
    pub env: Env,
    pub d: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lambda: f64,
    pub frameskip: usize,
    /// Per-dimension observation standardization applied before encoding.
    pub obs_mean: Vec<f32>,
    pub obs_std: Vec<f32>,
}

/// Second-order isotropy penalty `||mean(Z)||^2 + ||Cov(Z) - I||_F^2` with the
/// unbiased covariance.
pub fn sigreg<T: Real>(z: ArrayView2<T>) -> Result<T> {
    Ok(sigreg_with_grad(z, false)?.0)
}

/// Penalty and, when requested, its gradient with respect to `z`.
pub fn sigreg_with_grad<T: Real>(z: ArrayView2<T>, want_grad: bool) -> Result<(T, Option<Array2<T>>)> {
    let n = z.nrows();
    ensure!(n >= 2, "sigreg needs at least two samples, got {n}");
    let d = z.ncols();
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let zc = &z - &mean;
    let nm1 = T::from_usize(n - 1).expect("count");
    let mut c = zc.t().dot(&zc) / nm1;
    for i in 0..d {
        c[[i, i]] -= T::one();
    }
    let pen = mean.dot(&mean) + c.iter().map(|&x| x * x).sum::<T>();
    if !want_grad {
        return Ok((pen, None));
    }
    let nt = T::from_usize(n).expect("count");
    let mut g = zc.dot(&c) * (T::lit(4.0) / nm1);
    g += &(&mean * (T::lit(2.0) / nt));
    Ok((pen, Some(g)))
}

fn json_vec(v: &[f32]) -> Value {
    Value::from(v.iter().map(|&x| x as f64).collect::<Vec<_>>())
}

fn meta_vec(meta: &BTreeMap<String, Value>, key: &str) -> Result<Vec<f32>> {
    meta.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).map(|x| x as f32).collect())
        .ok_or_else(|| Error::Format { kind: "checkpoint", msg: format!("missing meta field {key}") })
}

pub(crate) fn meta_u64(meta: &BTreeMap<String, Value>, key: &str) -> Result<u64> {
    meta.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Format { kind: "checkpoint", msg: format!("missing meta field {key}") })
}

pub(crate) fn meta_f64(meta: &BTreeMap<String, Value>, key: &str) -> Result<f64> {
    meta.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Format { kind: "checkpoint", msg: format!("missing meta field {key}") })
}

impl WorldModelBundle {
    /// Fresh, untrained bundle.
    pub fn init(env: Env, cfg: &WorldModelConfig, obs_mean: Vec<f32>, obs_std: Vec<f32>, seed: &SeedStream) -> Result<Self> {
        ensure!(cfg.latent_dim >= 1 && cfg.hidden >= 1 && cfg.layers >= 1, "world model sizes must be positive");
        ensure!(cfg.lambda >= 0.0, "lambda must be non-negative");
        ensure!(cfg.frameskip >= 1, "frameskip must be at least 1");
        ensure!(obs_mean.len() == env.obs_dim() && obs_std.len() == env.obs_dim(), "normalizer width");
        let mut rng = seed.derive("world_model.init").rng();
        let mut params = Params::new();
        let widths = vec![cfg.hidden; cfg.layers];
        let encoder = Mlp::new(&mut params, "encoder", env.obs_dim(), &widths, cfg.latent_dim, 0.0, Init::Kaiming, &mut rng)?;
        let predictor = Mlp::new(
            &mut params,
            "predictor",
            cfg.latent_dim + env.act_dim(),
            &widths,
            cfg.latent_dim,
            0.0,
            Init::Normal(0.01),
            &mut rng,
        )?;
        Ok(Self {
            params,
            encoder,
            predictor,
            env,
            d: cfg.latent_dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
            lambda: cfg.lambda,
            frameskip: cfg.frameskip,
            obs_mean,
            obs_std,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    pub fn action_spec(&self) -> ActionSpec {
        self.env.action_spec()
    }

    fn standardize(&self, obs: ArrayView2<f32>) -> Array2<f32> {
        let mean = ArrayView1::from(&self.obs_mean[..]);
        let std = ArrayView1::from(&self.obs_std[..]);
        (&obs - &mean) / &std
    }

    /// Batch encode `[n, obs_dim] -> [n, d]`.
    pub fn encode(&self, obs: ArrayView2<f32>) -> Result<Array2<f32>> {
        ensure!(obs.ncols() == self.obs_dim(), "observation width {} vs {}", obs.ncols(), self.obs_dim());
        self.encoder.forward_eval(&self.params, self.standardize(obs).view())
    }

    pub fn encode_one(&self, obs: &[f32]) -> Result<Array1<f32>> {
        let z = self.encode(ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| crate::error::contract(e.to_string()))?)?;
        Ok(z.row(0).to_owned())
    }

    /// One-step prediction for a batch of latents and normalized actions.
    /// Counts one predictor call per row.
    pub fn predict(&self, z: ArrayView2<f32>, u: ArrayView2<f32>) -> Result<Array2<f32>> {
        ensure!(z.ncols() == self.d && u.ncols() == self.act_dim(), "predict dims: z {} u {}", z.ncols(), u.ncols());
        ensure!(z.nrows() == u.nrows(), "predict batch mismatch");
        PREDICTOR_CALLS.fetch_add(z.nrows() as u64, Ordering::Relaxed);
        let delta = self.predictor.forward_eval(&self.params, concat_cols(z, u).view())?;
        Ok(&z + &delta)
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn encoder_checksum(&self) -> String {
        let mut enc = Params::new();
        for (name, v) in self.params.iter().filter(|(n, _)| n.starts_with("encoder.")) {
            enc.add(name, v.clone()).expect("unique names");
        }
        enc.checksum()
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("env".into(), Value::from(self.env.id.name()));
        m.insert("action_bound".into(), Value::from(self.env.bound));
        m.insert("d".into(), Value::from(self.d));
        m.insert("act_dim".into(), Value::from(self.act_dim()));
        m.insert("obs_dim".into(), Value::from(self.obs_dim()));
        m.insert("hidden".into(), Value::from(self.hidden));
        m.insert("layers".into(), Value::from(self.layers));
        m.insert("lambda".into(), Value::from(self.lambda));
        m.insert("frameskip".into(), Value::from(self.frameskip));
        m.insert("obs_mean".into(), json_vec(&self.obs_mean));
        m.insert("obs_std".into(), json_vec(&self.obs_std));
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.meta(), &self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::to_bytes(CHECKPOINT_KIND, &self.meta(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load_kind::<f32>(path, CHECKPOINT_KIND)?;
        let m = &ck.meta;
        let id: EnvId = m.get("env").and_then(Value::as_str).unwrap_or_default().parse()?;
        let env = Env::with_bound(id, meta_f64(m, "action_bound")?)?;
        let layers = meta_u64(m, "layers")? as usize;
        let encoder = Mlp::bind(&ck.params, "encoder", layers, 0.0)?;
        let predictor = Mlp::bind(&ck.params, "predictor", layers, 0.0)?;
        let d = meta_u64(m, "d")? as usize;
        if encoder.in_dim() != env.obs_dim() || encoder.out_dim() != d || predictor.in_dim() != d + env.act_dim() {
            return Err(Error::Format { kind: "checkpoint", msg: "world model shapes disagree with metadata".into() });
        }
        Ok(Self {
            encoder,
            predictor,
            env,
            d,
            hidden: meta_u64(m, "hidden")? as usize,
            layers,
            lambda: meta_f64(m, "lambda")?,
            frameskip: meta_u64(m, "frameskip")? as usize,
            obs_mean: meta_vec(m, "obs_mean")?,
            obs_std: meta_vec(m, "obs_std")?,
            params: ck.params,
        })
    }
}

/// Roll the residual predictor `z' = z + mlp([z, u])` over `seqs: [n, H,
/// act_dim]` from `z0`. Returns the terminal latents and the gradient of
/// `sum_i ||z_H^i - goal||^2 / d` with respect to every action.
pub fn unrolled_terminal_grad<T: Real>(
    predictor: &Mlp,
    params: &Params<T>,
    z0: ArrayView1<T>,
    seqs: ArrayView3<T>,
    goal: ArrayView1<T>,
) -> Result<(Array2<T>, Array3<T>)> {
    let (n, h, a) = seqs.dim();
    let d = z0.len();
    ensure!(goal.len() == d && predictor.in_dim() == d + a && predictor.out_dim() == d, "unrolled rollout dims");
    let mut z = z0.broadcast((n, d)).expect("broadcast").to_owned();
    let mut caches = Vec::with_capacity(h);
    for t in 0..h {
        let x = concat_cols(z.view(), seqs.slice(s![.., t, ..]));
        let (delta, cache) = predictor.forward(params, x.view(), &mut Mode::Eval)?;
        caches.push(cache);
        z += &delta;
    }
    let mut dz = (&z - &goal) * (T::lit(2.0) / T::from_usize(d).expect("dim"));
    let mut grad = Array3::zeros((n, h, a));
    for t in (0..h).rev() {
        let dx = predictor.backward(params, &caches[t], dz.view(), None);
        grad.slice_mut(s![.., t, ..]).assign(&dx.slice(s![.., d..]));
        dz += &dx.slice(s![.., ..d]);
    }
    Ok((z, grad))
}

impl LatentDynamics for WorldModelBundle {
    fn latent_dim(&self) -> usize {
        self.d
    }

    fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    fn predict(&self, z: ArrayView2<f32>, u: ArrayView2<f32>) -> Result<Array2<f32>> {
        WorldModelBundle::predict(self, z, u)
    }

    fn cost_grad(&self, z0: ArrayView1<f32>, seqs: ArrayView3<f32>, goal: ArrayView1<f32>) -> Result<(Vec<f64>, Array3<f32>)> {
        ensure!(seqs.dim().2 == self.act_dim(), "action width {} vs {}", seqs.dim().2, self.act_dim());
        PREDICTOR_CALLS.fetch_add((seqs.dim().0 * seqs.dim().1) as u64, Ordering::Relaxed);
        let (zt, g) = unrolled_terminal_grad(&self.predictor, &self.params, z0, seqs, goal)?;
        Ok((zt.axis_iter(Axis(0)).map(|r| terminal_cost(r, goal)).collect(), g))
    }
}

impl LatentModel for WorldModelBundle {
    fn encode_obs(&self, obs: &[f32]) -> Result<Array1<f32>> {
        self.encode_one(obs)
    }

    fn frameskip(&self) -> usize {
        self.frameskip
    }
}

/// Transition tuples `(o_t, mean action over the skip, o_{t+k})`.
#[derive(Clone, Debug)]
pub struct Transitions {
    pub obs: Array2<f32>,
    /// Normalized actions.
    pub actions: Array2<f32>,
    pub next_obs: Array2<f32>,
}

impl Transitions {
    pub fn from_dataset(ds: &DemoDataset, frameskip: usize) -> Result<Self> {
        ensure!(frameskip >= 1, "frameskip must be at least 1");
        let spec = ds.env.action_spec();
        let (od, ad) = (ds.obs_dim(), ds.act_dim());
        let mut obs = Vec::new();
        let mut acts = Vec::new();
        let mut next = Vec::new();
        for ep in &ds.episodes {
            if ep.len() < frameskip {
                continue;
            }
            for t in 0..=ep.len() - frameskip {
                obs.extend(ep.obs(t).iter());
                next.extend(ep.obs(t + frameskip).iter());
                let mean = ep.actions.slice(s![t..t + frameskip, ..]).mean_axis(Axis(0)).expect("non-empty");
                acts.extend(spec.normalize(mean.as_slice().expect("contiguous")));
            }
        }
        let n = obs.len() / od;
        ensure!(n > 0, "dataset has no transitions at frameskip {frameskip}");
        Ok(Self {
            obs: Array2::from_shape_vec((n, od), obs).expect("shape"),
            actions: Array2::from_shape_vec((n, ad), acts).expect("shape"),
            next_obs: Array2::from_shape_vec((n, od), next).expect("shape"),
        })
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }
}

/// Mean squared one-step latent prediction error per latent dimension.
pub fn prediction_mse(bundle: &WorldModelBundle, tr: &Transitions) -> Result<f64> {
    let z = bundle.encode(tr.obs.view())?;
    let zn = bundle.encode(tr.next_obs.view())?;
    let pred = bundle.predictor.forward_eval(&bundle.params, concat_cols(z.view(), tr.actions.view()).view())? + &z;
    Ok((&pred - &zn).mapv(|x| (x as f64).powi(2)).mean().unwrap_or(0.0))
}

fn observation_stats(ds: &DemoDataset) -> (Vec<f32>, Vec<f32>) {
    let all = ds.all_observations().mapv(|x| x as f64);
    let mean = all.mean_axis(Axis(0)).expect("non-empty");
    let std = all.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-3));
    (mean.iter().map(|&x| x as f32).collect(), std.iter().map(|&x| x as f32).collect())
}

/// Train encoder and predictor jointly. Returns the bundle and the sampled
/// training curve.
pub fn train_world_model(ds: &DemoDataset, cfg: &WorldModelConfig, seed: &SeedStream) -> Result<(WorldModelBundle, Vec<CurveRow>)> {
    ensure!(!ds.episodes.is_empty(), "empty dataset");
    ensure!(cfg.batch_size >= 2, "batch size must be at least 2");
    let (mean, std) = observation_stats(ds);
    let mut bundle = WorldModelBundle::init(ds.env, cfg, mean, std, seed)?;
    let tr = Transitions::from_dataset(ds, cfg.frameskip)?;
    let obs = bundle.standardize(tr.obs.view());
    let next = bundle.standardize(tr.next_obs.view());
    let mut ps = ParamSet::new(std::mem::take(&mut bundle.params));
    let opt_cfg = AdamWConfig::new(CosineSchedule::to_hundredth(cfg.lr, cfg.steps), cfg.weight_decay, Some(cfg.clip_norm));
    let mut opt = OptimState::new(opt_cfg, &ps)?;
    let mut rng = seed.derive("world_model.batches").rng();
    let d = cfg.latent_dim;
    let lam = (cfg.lambda / d as f64) as f32;
    let mut curve = Vec::new();
    let n = tr.len();
    let bs = cfg.batch_size;
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..bs).map(|_| rng.random_range(0..n)).collect();
        let o = obs.select(Axis(0), &idx);
        let on = next.select(Axis(0), &idx);
        let u = tr.actions.select(Axis(0), &idx);
        ps.zero_grad();
        let (z, enc_cache) = bundle.encoder.forward(&ps.params, o.view(), &mut Mode::Eval)?;
        let (zn, next_cache) = if cfg.stop_grad_target {
            (bundle.encoder.forward_eval(&ps.params, on.view())?, None)
        } else {
            let (zn, c) = bundle.encoder.forward(&ps.params, on.view(), &mut Mode::Eval)?;
            (zn, Some(c))
        };
        let (delta, pred_cache) = bundle.predictor.forward(&ps.params, concat_cols(z.view(), u.view()).view(), &mut Mode::Eval)?;
        let err = &(&z + &delta) - &zn;
        let pred_loss = err.mapv(|x| x * x).mean().expect("non-empty");
        let (sig, sig_grad) = sigreg_with_grad(z.view(), true)?;
        let total = pred_loss + lam * sig;
        if !total.is_finite() {
            return Err(Error::NumericalAbort { step, what: format!("world model loss is {total}") });
        }
        let dpred = &err * (2.0 / (bs * d) as f32);
        let dx = bundle.predictor.backward(&ps.params, &pred_cache, dpred.view(), Some(&mut ps.grads));
        let mut dz = &dpred + &dx.slice(s![.., ..d]);
        dz.scaled_add(lam, &sig_grad.expect("requested"));
        bundle.encoder.backward(&ps.params, &enc_cache, dz.view(), Some(&mut ps.grads));
        if let Some(c) = next_cache {
            let dzn = dpred.mapv(|x| -x);
            bundle.encoder.backward(&ps.params, &c, dzn.view(), Some(&mut ps.grads));
        }
        let info = opt.step(&mut ps)?;
        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            curve.push(CurveRow { step, pred_loss: pred_loss as f64, sigreg: sig as f64, lr: info.lr });
        }
    }
    ps.params.check_finite()?;
    bundle.params = ps.params;
    Ok((bundle, curve))
}

pub fn write_curve_csv(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in curve {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    checkpoint::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::nn::finite_diff::{assert_rel_close, numeric_grad};

    #[test]
    fn sigreg_hand_values() {
        let z = Array2::<f64>::zeros((10, 4));
        assert!((sigreg(z.view()).unwrap() - 4.0).abs() < 1e-12);
        assert!(sigreg(Array2::<f64>::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn sigreg_of_whitened_batch_is_zero() {
        let mut rng = SeedStream::new(1).rng();
        let n = 200;
        let d = 3;
        let x: Array2<f64> = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
        // whiten with the inverse Cholesky factor of the sample covariance
        let mean = x.mean_axis(Axis(0)).unwrap();
        let xc = &x - &mean;
        let c: Array2<f64> = xc.t().dot(&xc) / (n as f64 - 1.0);
        let mut l = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
                l[[i, j]] = if i == j { (c[[i, i]] - s).sqrt() } else { (c[[i, j]] - s) / l[[j, j]] };
            }
        }
        let mut linv = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            linv[[i, i]] = 1.0 / l[[i, i]];
            for j in 0..i {
                let s: f64 = (j..i).map(|k| l[[i, k]] * linv[[k, j]]).sum();
                linv[[i, j]] = -s / l[[i, i]];
            }
        }
        let w = xc.dot(&linv.t());
        assert!(sigreg(w.view()).unwrap() < 1e-10);
    }

    #[test]
    fn sigreg_gradient_matches_finite_differences() {
        let mut rng = SeedStream::new(2).rng();
        let z: Array2<f64> = Array2::from_shape_fn((7, 3), |_| StandardNormal.sample(&mut rng));
        let (_, g) = sigreg_with_grad(z.view(), true).unwrap();
        let num = numeric_grad(&z, |z| sigreg(z.view()).unwrap(), 1e-5);
        assert_rel_close(g.unwrap().view(), num.view(), 1e-4);
    }

    #[test]
    fn sigreg_sampling_error_shrinks_with_batch() {
        let mut rng = SeedStream::new(3).rng();
        let d = 32;
        let mut avg = |n: usize| {
            (0..5)
                .map(|_| {
                    let z = Array2::<f64>::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
                    sigreg(z.view()).unwrap()
                })
                .sum::<f64>()
                / 5.0
        };
        let small = avg(512);
        let large = avg(4096);
        // expected penalty is about d^2 / n
        assert!(large < small);
        assert!(large < 3.0 * (d * d) as f64 / 4096.0, "{large}");
    }
}
