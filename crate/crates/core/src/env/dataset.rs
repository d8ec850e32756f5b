//! Demonstration episodes, their on-disk container and expert collection.
//!
//! A dataset is stored as two files: a JSON index (`*.json`) and a payload
//! (`*.bin`) holding each episode's observations followed by its actions as
//! little-endian `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Env, EnvId};
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint::write_atomic;
use crate::nn::params::hex_digest;
use crate::rng::{Rng, SeedStream};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub env: EnvId,
    pub seed: u64,
    /// `[T + 1, obs_dim]`
    pub observations: Array2<f32>,
    /// `[T, act_dim]`
    pub actions: Array2<f32>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.nrows() == 0
    }

    pub fn obs(&self, t: usize) -> ArrayView1<'_, f32> {
        self.observations.row(t)
    }

    /// Largest deviation between stored observations and a replay of the
    /// stored actions from the first observation.
    pub fn replay_error(&self, env: &Env) -> Result<f64> {
        let mut s = self.observations.row(0).to_vec();
        let mut worst = 0.0f64;
        for t in 0..self.len() {
            s = env.step(&s, self.actions.row(t).as_slice().expect("contiguous row"))?;
            for (a, b) in s.iter().zip(self.observations.row(t + 1)) {
                worst = worst.max((*a as f64 - *b as f64).abs());
            }
        }
        Ok(worst)
    }
}

/// A start/goal pair with a step budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalTask {
    pub start_obs: Vec<f32>,
    pub goal_obs: Vec<f32>,
    pub goal_offset_steps: usize,
    pub budget: usize,
    /// Source episode and start frame when sampled from data.
    pub episode: Option<usize>,
    pub start_t: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env: Env,
    pub episodes: Vec<Episode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format_version: u32,
    env_id: EnvId,
    action_bound: f64,
    obs_dim: usize,
    act_dim: usize,
    lengths: Vec<usize>,
    seeds: Vec<u64>,
    success: Vec<bool>,
    /// Byte offset of each episode within the payload.
    offsets: Vec<u64>,
    payload: String,
    payload_sha256: String,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format { kind: "dataset", msg: msg.into() }
}

/// Payload path belonging to an index path.
pub fn payload_path(index: &Path) -> PathBuf {
    index.with_extension("bin")
}

impl DemoDataset {
    pub fn num_frames(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.env.act_dim()
    }

    fn encode(&self, payload_name: &str) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut payload = Vec::new();
        let mut offsets = Vec::new();
        for ep in &self.episodes {
            ensure!(ep.env == self.env.id, "episode from {} in a {} dataset", ep.env, self.env.id);
            ensure!(ep.observations.nrows() == ep.len() + 1, "episode needs one more observation than actions");
            offsets.push(payload.len() as u64);
            for x in ep.observations.iter().chain(ep.actions.iter()) {
                ensure!(x.is_finite(), "non-finite value in episode {}", ep.seed);
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut h = Sha256::new();
        h.update(&payload);
        let index = Index {
            format_version: DATASET_FORMAT_VERSION,
            env_id: self.env.id,
            action_bound: self.env.bound,
            obs_dim: self.obs_dim(),
            act_dim: self.act_dim(),
            lengths: self.episodes.iter().map(Episode::len).collect(),
            seeds: self.episodes.iter().map(|e| e.seed).collect(),
            success: self.episodes.iter().map(|e| e.success).collect(),
            offsets,
            payload: payload_name.to_string(),
            payload_sha256: hex_digest(h),
        };
        let mut idx = serde_json::to_vec_pretty(&index)?;
        idx.push(b'\n');
        Ok((idx, payload))
    }

    /// Write `<path>` (index) and its `.bin` payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin = payload_path(path);
        let name = bin.file_name().and_then(|n| n.to_str()).ok_or_else(|| fmt_err("bad payload file name"))?;
        let (idx, payload) = self.encode(name)?;
        write_atomic(&bin, &payload)?;
        if let Err(e) = write_atomic(path, &idx) {
            let _ = fs::remove_file(&bin);
            return Err(e);
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Index =
            serde_json::from_slice(&fs::read(path)?).map_err(|e| fmt_err(format!("{}: {e}", path.display())))?;
        if index.format_version != DATASET_FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format_version {}", index.format_version)));
        }
        let env = Env::with_bound(index.env_id, index.action_bound)?;
        if index.obs_dim != env.obs_dim() || index.act_dim != env.act_dim() {
            return Err(fmt_err("dimensions do not match the environment"));
        }
        let n = index.lengths.len();
        if index.seeds.len() != n || index.success.len() != n || index.offsets.len() != n {
            return Err(fmt_err("per-episode arrays differ in length"));
        }
        let bin = path.with_file_name(&index.payload);
        let payload = fs::read(&bin)?;
        let mut h = Sha256::new();
        h.update(&payload);
        if hex_digest(h) != index.payload_sha256 {
            return Err(fmt_err("payload checksum mismatch"));
        }
        let mut episodes = Vec::with_capacity(n);
        let mut expected = 0usize;
        for i in 0..n {
            let t = index.lengths[i];
            let (no, na) = ((t + 1) * env.obs_dim(), t * env.act_dim());
            if index.offsets[i] as usize != expected {
                return Err(fmt_err(format!("episode {i} offset mismatch")));
            }
            let raw = payload.get(expected..expected + 4 * (no + na)).ok_or_else(|| fmt_err("payload truncated"))?;
            let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("dataset episode {i}")));
            }
            let observations = Array2::from_shape_vec((t + 1, env.obs_dim()), vals[..no].to_vec())
                .map_err(|e| fmt_err(e.to_string()))?;
            let actions =
                Array2::from_shape_vec((t, env.act_dim()), vals[no..].to_vec()).map_err(|e| fmt_err(e.to_string()))?;
            episodes.push(Episode { env: env.id, seed: index.seeds[i], observations, actions, success: index.success[i] });
            expected += 4 * (no + na);
        }
        if expected != payload.len() {
            return Err(fmt_err("trailing payload bytes"));
        }
        Ok(Self { env, episodes })
    }

    /// Deterministic episode-level split; the first part holds `frac` of the
    /// episodes.
    pub fn split(&self, frac: f64, seed: u64) -> Result<(DemoDataset, DemoDataset)> {
        ensure!(frac > 0.0 && frac < 1.0, "split fraction {frac} outside (0, 1)");
        let mut idx: Vec<usize> = (0..self.episodes.len()).collect();
        idx.shuffle(&mut SeedStream::new(seed).derive("split").rng());
        let k = ((self.episodes.len() as f64) * frac).round() as usize;
        let pick = |ids: &[usize]| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            DemoDataset { env: self.env, episodes: ids.iter().map(|&i| self.episodes[i].clone()).collect() }
        };
        Ok((pick(&idx[..k]), pick(&idx[k..])))
    }

    /// Keep the first `frac` of the episodes (used for data-efficiency sweeps).
    pub fn subset(&self, frac: f64) -> Result<DemoDataset> {
        ensure!(frac > 0.0 && frac <= 1.0, "subset fraction {frac} outside (0, 1]");
        let k = ((self.episodes.len() as f64 * frac).round() as usize).max(1);
        Ok(DemoDataset { env: self.env, episodes: self.episodes[..k].to_vec() })
    }

    /// Sample goal-reaching tasks whose goal is `offset` steps ahead of the
    /// start within the same episode.
    pub fn sample_tasks(&self, n: usize, offset: usize, budget: usize, rng: &mut Rng) -> Result<Vec<GoalTask>> {
        ensure!(offset >= 1 && budget >= 1, "offset and budget must be positive");
        let eligible: Vec<usize> = (0..self.episodes.len()).filter(|&i| self.episodes[i].len() >= offset).collect();
        ensure!(!eligible.is_empty(), "no episode of {} is at least {offset} steps long", self.env.id);
        Ok((0..n)
            .map(|_| {
                let e = eligible[rng.random_range(0..eligible.len())];
                let ep = &self.episodes[e];
                let t = rng.random_range(0..=ep.len() - offset);
                GoalTask {
                    start_obs: ep.obs(t).to_vec(),
                    goal_obs: ep.obs(t + offset).to_vec(),
                    goal_offset_steps: offset,
                    budget,
                    episode: Some(e),
                    start_t: Some(t),
                }
            })
            .collect())
    }

    /// Row-stacked observations of all frames, `[frames + episodes, obs_dim]`.
    pub fn all_observations(&self) -> Array2<f32> {
        let rows: usize = self.episodes.iter().map(|e| e.observations.nrows()).sum();
        let mut out = Array2::zeros((rows, self.obs_dim()));
        let mut r = 0;
        for ep in &self.episodes {
            let n = ep.observations.nrows();
            out.slice_mut(s![r..r + n, ..]).assign(&ep.observations);
            r += n;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub n_episodes: usize,
    pub max_len: usize,
    pub max_retries: usize,
    /// Exploration noise added to expert actions, as a fraction of the bound.
    /// PointMass ignores it so its actions stay exact displacement rates.
    pub action_noise: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { n_episodes: 600, max_len: 100, max_retries: 50, action_noise: 0.3 }
    }
}

/// Roll out one expert episode; `None` if it fails to reach its goal.
fn expert_episode(env: &Env, cfg: &CollectConfig, stream: &SeedStream) -> Result<Option<Episode>> {
    let mut rng = stream.rng();
    let (start, goal) = env.sample_task(&mut rng);
    let mut obs = vec![start.clone()];
    let mut acts: Vec<Vec<f32>> = Vec::new();
    let mut s = start.clone();
    let bound = env.bound;
    let noise = Normal::new(0.0, (cfg.action_noise * bound).max(1e-12)).map_err(|e| crate::error::contract(e.to_string()))?;
    // PointMass follows a constant-velocity reference so every stored action
    // equals the displacement rate between any two frames of the episode.
    let carrot_steps = if env.id == EnvId::PointMass {
        let span = (goal[0] - start[0]).abs().max((goal[1] - start[1]).abs()) as f64;
        let n_min = ((span / bound).ceil() as usize).max(1);
        Some(rng.random_range(n_min..=cfg.max_len.max(n_min)))
    } else {
        None
    };
    let speed = rng.random_range(0.5..=1.0);
    for t in 0..cfg.max_len {
        if env.success(&s, &goal)? {
            break;
        }
        let a: Vec<f32> = match carrot_steps {
            Some(n) => {
                let frac = ((t + 1) as f64 / n as f64).min(1.0);
                let v: Vec<f64> = (0..2).map(|k| (goal[k] as f64 - start[k] as f64) * frac + start[k] as f64 - s[k] as f64).collect();
                let v: Vec<f64> = v.iter().map(|x| x.clamp(-bound, bound)).collect();
                v.iter().map(|&x| x as f32).collect()
            }
            None => {
                let base = env.expert_action_scaled(&s, &goal, speed)?;
                base.iter()
                    .map(|&x| if cfg.action_noise > 0.0 { (x as f64 + noise.sample(&mut rng)).clamp(-bound, bound) as f32 } else { x })
                    .collect()
            }
        };
        s = env.step(&s, &a)?;
        obs.push(s.clone());
        acts.push(a);
    }
    if !env.success(&s, &goal)? || acts.is_empty() {
        return Ok(None);
    }
    let t = acts.len();
    let observations = Array2::from_shape_vec((t + 1, env.obs_dim()), obs.concat()).expect("shape");
    let actions = Array2::from_shape_vec((t, env.act_dim()), acts.concat()).expect("shape");
    Ok(Some(Episode { env: env.id, seed: stream.fingerprint(), observations, actions, success: true }))
}

/// Collect `n_episodes` successful expert episodes. Failed attempts are
/// retried with a fresh derived seed, up to `max_retries` per episode.
pub fn collect_dataset(env: &Env, cfg: &CollectConfig, seed: u64) -> Result<DemoDataset> {
    ensure!(cfg.n_episodes >= 1, "n_episodes must be at least 1");
    ensure!(cfg.max_len >= 1, "max_len must be at least 1");
    ensure!(cfg.action_noise >= 0.0, "action noise must be non-negative");
    let root = SeedStream::new(seed).derive("collect").derive(env.id.name());
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    for i in 0..cfg.n_episodes {
        let ep_stream = root.derive_index(i as u64);
        let mut got = None;
        for attempt in 0..=cfg.max_retries {
            if let Some(ep) = expert_episode(env, cfg, &ep_stream.derive_index(attempt as u64))? {
                got = Some(ep);
                break;
            }
        }
        match got {
            Some(ep) => episodes.push(ep),
            None => return Err(Error::RetryExhausted { env: env.id.to_string(), seed, retries: cfg.max_retries }),
        }
    }
    Ok(DemoDataset { env: *env, episodes })
}
