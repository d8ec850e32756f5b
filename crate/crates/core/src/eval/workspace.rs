//! On-disk layout of datasets and checkpoints, and training of whatever a
//! protocol needs but is missing.
//!
//! ```text
//! <root>/<env>/dataset.json (+ dataset.bin)
//! <root>/<env>/world_model.ckpt
//! <root>/<env>/gc_idm/<variant>/seed<k>.ckpt
//! <root>/<env>/pairwise/sigma<s>.ckpt
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{collect_dataset, CollectConfig, DemoDataset, Env, EnvId};
use crate::error::{Error, Result};
use crate::gc_idm::{train_gc_idm, write_idm_curve_csv, GcIdmConfig, GcIdmModel, NoiseMode};
use crate::pairwise_idm::{train_pairwise, PairwiseConfig, PairwiseIdmModel};
use crate::rng::SeedStream;
use crate::world_model::{train_world_model, write_curve_csv, WorldModelBundle, WorldModelConfig};

/// Seed of the dataset, the world model and the held-out split.
pub const BASE_SEED: u64 = 42;
pub const HELD_OUT_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub collect: CollectConfig,
    pub world_model: WorldModelConfig,
    pub gc_idm: GcIdmConfig,
    pub pairwise: PairwiseConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            collect: CollectConfig::default(),
            world_model: WorldModelConfig::default(),
            gc_idm: GcIdmConfig::default(),
            pairwise: PairwiseConfig::default(),
        }
    }
}

/// A GC-IDM training variant: overrides on the base config plus the
/// training-data selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmVariant {
    pub h_max: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub noise_mode: Option<NoiseMode>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    /// Keep this fraction of the episodes (episode level).
    pub data_fraction: Option<f64>,
    /// Train on the 90% side of the held-out split.
    pub held_out_split: bool,
}

impl IdmVariant {
    /// Directory-safe name; `default` for no overrides.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(h) = self.h_max {
            parts.push(format!("hmax{h}"));
        }
        if let Some(s) = self.noise_sigma {
            let mode = match self.noise_mode.unwrap_or(NoiseMode::Fixed) {
                NoiseMode::Fixed => "sigma",
                NoiseMode::Uniform => "usigma",
            };
            parts.push(format!("{mode}{s}"));
        }
        if let Some(h) = self.hidden {
            parts.push(format!("hidden{h}"));
        }
        if let Some(l) = self.layers {
            parts.push(format!("layers{l}"));
        }
        if let Some(f) = self.data_fraction {
            parts.push(format!("data{f}"));
        }
        if self.held_out_split {
            parts.push("split90".into());
        }
        if parts.is_empty() {
            "default".into()
        } else {
            parts.join("_")
        }
    }

    pub fn config(&self, base: &GcIdmConfig) -> GcIdmConfig {
        let mut c = base.clone();
        if let Some(h) = self.h_max {
            c.h_max = h;
        }
        if let Some(s) = self.noise_sigma {
            c.noise_sigma = s;
        }
        if let Some(m) = self.noise_mode {
            c.noise_mode = m;
        }
        if let Some(h) = self.hidden {
            c.hidden = h;
        }
        if let Some(l) = self.layers {
            c.layers = l;
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub settings: TrainSettings,
    /// Print one line per artifact trained.
    pub verbose: bool,
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, settings: TrainSettings) -> Self {
        Self { root: root.into(), settings, verbose: false }
    }

    pub fn env_dir(&self, env: EnvId) -> PathBuf {
        self.root.join(env.name())
    }

    pub fn dataset_path(&self, env: EnvId) -> PathBuf {
        self.env_dir(env).join("dataset.json")
    }

    pub fn world_model_path(&self, env: EnvId) -> PathBuf {
        self.env_dir(env).join("world_model.ckpt")
    }

    pub fn gc_idm_path(&self, env: EnvId, variant: &IdmVariant, seed: u64) -> PathBuf {
        self.env_dir(env).join("gc_idm").join(variant.label()).join(format!("seed{seed}.ckpt"))
    }

    pub fn pairwise_path(&self, env: EnvId, sigma: f64) -> PathBuf {
        self.env_dir(env).join("pairwise").join(format!("sigma{sigma}.ckpt"))
    }

    pub fn load_dataset(&self, env: EnvId) -> Result<DemoDataset> {
        DemoDataset::load(&require(self.dataset_path(env))?)
    }

    pub fn load_world_model(&self, env: EnvId) -> Result<WorldModelBundle> {
        WorldModelBundle::load(&require(self.world_model_path(env))?)
    }

    pub fn load_gc_idm(&self, env: EnvId, variant: &IdmVariant, seed: u64) -> Result<GcIdmModel> {
        GcIdmModel::load(&require(self.gc_idm_path(env, variant, seed))?)
    }

    pub fn load_pairwise(&self, env: EnvId, sigma: f64) -> Result<PairwiseIdmModel> {
        PairwiseIdmModel::load(&require(self.pairwise_path(env, sigma))?)
    }

    fn note(&self, what: &str, path: &Path) {
        if self.verbose {
            eprintln!("trained {what} -> {}", path.display());
        }
    }

    /// Collect the dataset with `seed` and save it, replacing any existing one.
    pub fn collect(&self, env: EnvId, seed: u64) -> Result<DemoDataset> {
        let path = self.dataset_path(env);
        let ds = collect_dataset(&Env::new(env), &self.settings.collect, seed)?;
        ds.save(&path)?;
        self.note("dataset", &path);
        Ok(ds)
    }

    /// Train the world model on the stored dataset.
    pub fn train_world_model(&self, env: EnvId, seed: u64) -> Result<WorldModelBundle> {
        let path = self.world_model_path(env);
        let ds = self.load_dataset(env)?;
        let (bundle, curve) = train_world_model(&ds, &self.settings.world_model, &SeedStream::new(seed))?;
        bundle.save(&path)?;
        write_curve_csv(&path.with_extension("curve.csv"), &curve)?;
        self.note("world model", &path);
        Ok(bundle)
    }

    /// Episodes a variant trains on.
    pub fn training_data(&self, ds: &DemoDataset, variant: &IdmVariant) -> Result<DemoDataset> {
        let mut d = if variant.held_out_split { ds.split(HELD_OUT_FRACTION, BASE_SEED)?.0 } else { ds.clone() };
        if let Some(f) = variant.data_fraction {
            d = d.subset(f)?;
        }
        Ok(d)
    }

    /// Train one GC-IDM variant on the stored dataset and world model.
    pub fn train_gc_idm(&self, env: EnvId, variant: &IdmVariant, seed: u64) -> Result<GcIdmModel> {
        let path = self.gc_idm_path(env, variant, seed);
        let ds = self.load_dataset(env)?;
        let bundle = self.load_world_model(env)?;
        let data = self.training_data(&ds, variant)?;
        let (model, report) = train_gc_idm(&data, &bundle, &variant.config(&self.settings.gc_idm), &SeedStream::new(seed))?;
        model.save(&path)?;
        write_idm_curve_csv(&path.with_extension("curve.csv"), &report.curve)?;
        self.note("gc_idm", &path);
        Ok(model)
    }

    /// Train a pairwise IDM on the 90% side of the held-out split.
    pub fn train_pairwise(&self, env: EnvId, sigma: f64, seed: u64) -> Result<PairwiseIdmModel> {
        let path = self.pairwise_path(env, sigma);
        let ds = self.load_dataset(env)?;
        let bundle = self.load_world_model(env)?;
        let (train, _) = ds.split(HELD_OUT_FRACTION, BASE_SEED)?;
        let (model, curve) = train_pairwise(&train, &bundle, sigma, &self.settings.pairwise, &SeedStream::new(seed))?;
        model.save(&path)?;
        write_idm_curve_csv(&path.with_extension("curve.csv"), &curve)?;
        self.note("pairwise idm", &path);
        Ok(model)
    }

    pub fn ensure_dataset(&self, env: EnvId) -> Result<DemoDataset> {
        match self.load_dataset(env) {
            Err(Error::MissingArtifact(_)) => self.collect(env, BASE_SEED),
            r => r,
        }
    }

    pub fn ensure_world_model(&self, env: EnvId) -> Result<WorldModelBundle> {
        if !self.world_model_path(env).exists() {
            self.ensure_dataset(env)?;
            return self.train_world_model(env, BASE_SEED);
        }
        self.load_world_model(env)
    }

    pub fn ensure_gc_idm(&self, env: EnvId, variant: &IdmVariant, seed: u64) -> Result<GcIdmModel> {
        if !self.gc_idm_path(env, variant, seed).exists() {
            self.ensure_world_model(env)?;
            return self.train_gc_idm(env, variant, seed);
        }
        self.load_gc_idm(env, variant, seed)
    }

    pub fn ensure_pairwise(&self, env: EnvId, sigma: f64) -> Result<PairwiseIdmModel> {
        if !self.pairwise_path(env, sigma).exists() {
            self.ensure_world_model(env)?;
            return self.train_pairwise(env, sigma, BASE_SEED);
        }
        self.load_pairwise(env, sigma)
    }
}
