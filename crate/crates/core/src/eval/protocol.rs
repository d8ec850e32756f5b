//! Evaluation protocols: which controllers run on which tasks, with matched
//! task lists across methods.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, pareto_violations, write_csv, AggregateRow};
use super::io::write_records;
use super::svg::pareto_svg;
use super::workspace::{IdmVariant, Workspace, BASE_SEED, HELD_OUT_FRACTION};
use super::EpisodeRecord;
use crate::env::{DemoDataset, Env, EnvId, GoalTask, WALL_X};
use crate::error::{ensure, Error, Result};
use crate::gc_idm::{closed_loop_control, GcIdmModel, NoiseMode};
use crate::nn::checkpoint::write_atomic;
use crate::pairwise_idm::{pairwise_episode, PairwiseIdmModel, RefineConfig};
use crate::rng::SeedStream;
use crate::solvers::{receding_horizon_execute, PlanConfig, SolverConfig, SolverKind, SolverOverrides};
use crate::world_model::WorldModelBundle;

pub const HEADLINE_SEEDS: [u64; 3] = [42, 123, 456];

/// The CEM grid of the compute sweep, `(num_samples, n_steps)`.
pub const PARETO_GRID: [(usize, usize); 12] =
    [(30, 2), (30, 5), (100, 2), (100, 5), (300, 2), (100, 10), (300, 5), (100, 30), (300, 10), (300, 30), (1000, 10), (1000, 30)];
pub const OFFSET_GRID: [usize; 6] = [5, 10, 15, 25, 35, 50];
pub const H_MAX_GRID: [usize; 5] = [5, 10, 25, 50, 100];
pub const DATA_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0];
pub const NOISE_GRID: [f64; 6] = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5];
pub const NOISE_SCHEDULE_GRID: [f64; 3] = [0.05, 0.1, 0.2];
pub const HIDDEN_GRID: [usize; 4] = [128, 256, 512, 1024];
pub const LAYER_GRID: [usize; 5] = [1, 2, 3, 4, 5];
pub const BUDGET_GRID: [usize; 7] = [5, 10, 15, 25, 50, 75, 100];
/// Pairwise pilot: training noise, refinement rounds, candidates.
pub const PAIRWISE_GRID: [(f64, usize, usize); 4] = [(0.0, 0, 1), (1.5, 0, 1), (1.5, 3, 1), (1.5, 3, 10)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Headline,
    SolverFamily,
    Pareto,
    GoalOffset,
    HMax,
    DataEfficiency,
    Noise,
    NoiseSchedule,
    Architecture,
    Budget,
    HeldOut,
    HorizonEmbedding,
    Pairwise,
}

impl Protocol {
    pub const ALL: [Protocol; 13] = [
        Protocol::Headline,
        Protocol::SolverFamily,
        Protocol::Pareto,
        Protocol::GoalOffset,
        Protocol::HMax,
        Protocol::DataEfficiency,
        Protocol::Noise,
        Protocol::NoiseSchedule,
        Protocol::Architecture,
        Protocol::Budget,
        Protocol::HeldOut,
        Protocol::HorizonEmbedding,
        Protocol::Pairwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Headline => "headline",
            Protocol::SolverFamily => "solver-family",
            Protocol::Pareto => "pareto",
            Protocol::GoalOffset => "goal-offset",
            Protocol::HMax => "h-max",
            Protocol::DataEfficiency => "data-efficiency",
            Protocol::Noise => "noise",
            Protocol::NoiseSchedule => "noise-schedule",
            Protocol::Architecture => "architecture",
            Protocol::Budget => "budget",
            Protocol::HeldOut => "held-out",
            Protocol::HorizonEmbedding => "horizon-embedding",
            Protocol::Pairwise => "pairwise",
        }
    }

    /// Seeds used unless overridden: three training seeds where the
    /// comparison reports a spread, seed 42 for single-seed ablations.
    pub fn default_seeds(self) -> Vec<u64> {
        match self {
            Protocol::Headline | Protocol::SolverFamily | Protocol::HeldOut => HEADLINE_SEEDS.to_vec(),
            _ => vec![BASE_SEED],
        }
    }

    pub fn default_n_tasks(self) -> usize {
        match self {
            Protocol::Pareto | Protocol::Pairwise => 100,
            _ => 200,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    GcIdm(IdmVariant),
    Planner(SolverConfig),
    Pairwise { sigma: f64, refine: RefineConfig },
}

/// Where an arm's tasks come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    All,
    /// The 10% side of the episode-level split.
    HeldOut,
    /// TwoRoom tasks whose start and goal lie in different rooms (all tasks
    /// elsewhere).
    CrossWall,
}

impl TaskSource {
    fn name(self) -> &'static str {
        match self {
            TaskSource::All => "all",
            TaskSource::HeldOut => "held_out",
            TaskSource::CrossWall => "cross_wall",
        }
    }
}

/// One controller evaluated at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub method: String,
    pub variant: String,
    pub controller: Controller,
    pub offset: usize,
    pub budget: usize,
    pub tasks: TaskSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub protocol: Protocol,
    pub envs: Vec<EnvId>,
    pub seeds: Vec<u64>,
    pub n_tasks: usize,
    pub offset: usize,
    pub budget: usize,
    /// Keep only arms whose method is listed (all when empty).
    pub methods: Vec<String>,
    pub plan: PlanConfig,
    #[serde(default)]
    pub solver_overrides: SolverOverrides,
    /// Episodes evaluated concurrently.
    pub jobs: usize,
}

impl ProtocolSpec {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            envs: EnvId::ALL.to_vec(),
            seeds: protocol.default_seeds(),
            n_tasks: protocol.default_n_tasks(),
            offset: 25,
            budget: 50,
            methods: Vec::new(),
            plan: PlanConfig::default(),
            solver_overrides: SolverOverrides::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.envs.is_empty() && !self.seeds.is_empty(), "protocol needs environments and seeds");
        ensure!(self.n_tasks >= 1 && self.jobs >= 1, "n_tasks and jobs must be positive");
        for &env in &self.envs {
            for arm in self.arms(env) {
                if let Controller::Planner(cfg) = &arm.controller {
                    cfg.validate()?;
                }
            }
        }
        self.plan.validate()
    }

    fn gc_idm(&self, variant_name: String, v: IdmVariant) -> Arm {
        Arm { method: "gc_idm".into(), variant: variant_name, controller: Controller::GcIdm(v), offset: self.offset, budget: self.budget, tasks: TaskSource::All }
    }

    fn planner(&self, cfg: SolverConfig, variant: String) -> Arm {
        let cfg = self.solver_overrides.apply(cfg);
        Arm { method: cfg.kind.name().into(), variant, controller: Controller::Planner(cfg), offset: self.offset, budget: self.budget, tasks: TaskSource::All }
    }

    /// Every arm the protocol runs on one environment, after the method
    /// filter.
    pub fn arms(&self, env: EnvId) -> Vec<Arm> {
        let default = IdmVariant::default;
        let mut arms = match self.protocol {
            Protocol::Headline => vec![self.gc_idm(String::new(), default()), self.planner(SolverConfig::defaults(SolverKind::Cem), String::new())],
            Protocol::SolverFamily => {
                let mut a = vec![self.gc_idm(String::new(), default())];
                a.extend(SolverKind::ALL.into_iter().map(|k| self.planner(SolverConfig::defaults(k), String::new())));
                a
            }
            Protocol::Pareto => {
                let mut a = vec![self.gc_idm(String::new(), default())];
                // the grid point fixes population and iterations; overrides set the rest
                a.extend(PARETO_GRID.iter().map(|&(n, s)| {
                    let mut arm = self.planner(SolverConfig::cem(n, s), format!("n{n}_s{s}"));
                    if let Controller::Planner(c) = &mut arm.controller {
                        c.num_samples = n;
                        c.n_steps = s;
                        c.topk = c.topk.min(n);
                    }
                    arm
                }));
                a
            }
            Protocol::GoalOffset => OFFSET_GRID
                .iter()
                .map(|&o| Arm { offset: o, ..self.gc_idm(format!("offset{o}"), default()) })
                .collect(),
            Protocol::HMax => H_MAX_GRID.iter().map(|&h| self.gc_idm(format!("hmax{h}"), hmax(h))).collect(),
            Protocol::DataEfficiency => DATA_GRID
                .iter()
                .map(|&f| self.gc_idm(format!("data{f}"), if f < 1.0 { IdmVariant { data_fraction: Some(f), ..default() } } else { default() }))
                .collect(),
            Protocol::Noise => NOISE_GRID.iter().map(|&s| self.gc_idm(format!("sigma{s}"), sigma(s, NoiseMode::Fixed))).collect(),
            Protocol::NoiseSchedule => {
                let mut a = vec![self.gc_idm("sigma0".into(), default())];
                for mode in [NoiseMode::Fixed, NoiseMode::Uniform] {
                    for &s in &NOISE_SCHEDULE_GRID {
                        let v = sigma(s, mode);
                        a.push(self.gc_idm(v.label(), v));
                    }
                }
                a
            }
            Protocol::Architecture => {
                let mut a: Vec<Arm> = HIDDEN_GRID
                    .iter()
                    .map(|&h| self.gc_idm(format!("hidden{h}"), if h == 512 { default() } else { IdmVariant { hidden: Some(h), ..default() } }))
                    .collect();
                a.extend(
                    LAYER_GRID
                        .iter()
                        .map(|&l| self.gc_idm(format!("layers{l}"), if l == 3 { default() } else { IdmVariant { layers: Some(l), ..default() } })),
                );
                a
            }
            Protocol::Budget => BUDGET_GRID
                .iter()
                .map(|&b| Arm { budget: b, ..self.gc_idm(format!("budget{b}"), default()) })
                .collect(),
            Protocol::HeldOut => vec![
                Arm { tasks: TaskSource::HeldOut, ..self.gc_idm("held_out".into(), IdmVariant { held_out_split: true, ..default() }) },
                Arm { tasks: TaskSource::HeldOut, ..self.planner(SolverConfig::defaults(SolverKind::Cem), "held_out".into()) },
                self.gc_idm("in_distribution".into(), default()),
            ],
            Protocol::HorizonEmbedding => vec![
                self.gc_idm("hmax1".into(), hmax(1)),
                self.gc_idm("hmax5".into(), hmax(5)),
                self.gc_idm("hmax1_hidden1024_layers4".into(), IdmVariant { h_max: Some(1), hidden: Some(1024), layers: Some(4), ..default() }),
                self.gc_idm("hmax50".into(), default()),
            ],
            Protocol::Pairwise => {
                let mut a = vec![Arm { tasks: TaskSource::CrossWall, ..self.gc_idm(String::new(), default()) }];
                a.extend(PAIRWISE_GRID.iter().map(|&(s, k, n)| Arm {
                    method: "pairwise".into(),
                    variant: format!("sigma{s}_k{k}_c{n}"),
                    controller: Controller::Pairwise { sigma: s, refine: RefineConfig { k, n_candidates: n, ..Default::default() } },
                    offset: self.offset,
                    budget: self.budget,
                    tasks: TaskSource::CrossWall,
                }));
                a
            }
        };
        let _ = env;
        if !self.methods.is_empty() {
            arms.retain(|a| self.methods.iter().any(|m| *m == a.method));
        }
        arms
    }

    /// Every checkpoint or dataset the protocol reads.
    pub fn required_artifacts(&self, ws: &Workspace) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for &env in &self.envs {
            out.push(ws.dataset_path(env));
            out.push(ws.world_model_path(env));
            for arm in self.arms(env) {
                match &arm.controller {
                    Controller::GcIdm(v) => out.extend(self.seeds.iter().map(|&s| ws.gc_idm_path(env, v, s))),
                    Controller::Pairwise { sigma, .. } => out.push(ws.pairwise_path(env, *sigma)),
                    Controller::Planner(_) => {}
                }
            }
        }
        out.dedup();
        out
    }

    /// Train whatever [`Self::required_artifacts`] lists but is missing.
    pub fn prepare(&self, ws: &Workspace) -> Result<()> {
        for &env in &self.envs {
            ws.ensure_world_model(env)?;
            for arm in self.arms(env) {
                match &arm.controller {
                    Controller::GcIdm(v) => {
                        for &s in &self.seeds {
                            ws.ensure_gc_idm(env, v, s)?;
                        }
                    }
                    Controller::Pairwise { sigma, .. } => {
                        ws.ensure_pairwise(env, *sigma)?;
                    }
                    Controller::Planner(_) => {}
                }
            }
        }
        Ok(())
    }
}

fn hmax(h: usize) -> IdmVariant {
    if h == 50 {
        IdmVariant::default()
    } else {
        IdmVariant { h_max: Some(h), ..Default::default() }
    }
}

fn sigma(s: f64, mode: NoiseMode) -> IdmVariant {
    if s == 0.0 {
        IdmVariant::default()
    } else {
        IdmVariant { noise_sigma: Some(s), noise_mode: (mode == NoiseMode::Uniform).then_some(mode), ..Default::default() }
    }
}

fn crosses_wall(t: &GoalTask) -> bool {
    let mid = (WALL_X[0] + WALL_X[1]) / 2.0;
    ((t.start_obs[0] as f64) < mid) != ((t.goal_obs[0] as f64) < mid)
}

/// The task list for one (seed, env, offset, budget, source). Identical for
/// every method that asks for the same combination.
pub fn matched_tasks(ds: &DemoDataset, seed: u64, offset: usize, budget: usize, source: TaskSource, n: usize) -> Result<Vec<GoalTask>> {
    let stream = SeedStream::new(seed).derive("tasks").derive(ds.env.id.name()).derive(source.name()).derive_index(offset as u64);
    let mut rng = stream.rng();
    match source {
        TaskSource::All => ds.sample_tasks(n, offset, budget, &mut rng),
        TaskSource::HeldOut => ds.split(HELD_OUT_FRACTION, BASE_SEED)?.1.sample_tasks(n, offset, budget, &mut rng),
        TaskSource::CrossWall if ds.env.id == EnvId::TwoRoom => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..200 {
                out.extend(ds.sample_tasks(n, offset, budget, &mut rng)?.into_iter().filter(crosses_wall));
                if out.len() >= n {
                    out.truncate(n);
                    return Ok(out);
                }
            }
            Err(crate::error::contract(format!("could not find {n} cross-wall tasks at offset {offset}")))
        }
        TaskSource::CrossWall => ds.sample_tasks(n, offset, budget, &mut rng),
    }
}

enum Loaded {
    GcIdm(Vec<GcIdmModel>),
    Planner(SolverConfig),
    Pairwise(PairwiseIdmModel, RefineConfig),
}

fn run_one(env: &Env, task: &GoalTask, bundle: &WorldModelBundle, loaded: &Loaded, seed_slot: usize, plan: &PlanConfig, stream: &SeedStream) -> Result<EpisodeRecord> {
    match loaded {
        Loaded::GcIdm(models) => closed_loop_control(env, task, bundle, &models[seed_slot]),
        Loaded::Planner(cfg) => receding_horizon_execute(env, task, bundle, plan, cfg, stream),
        Loaded::Pairwise(m, refine) => pairwise_episode(env, task, m, bundle, refine, stream),
    }
}

/// Run `f` over `0..n` on up to `jobs` threads; results in index order.
fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every index visited")).collect()
}

#[derive(Clone, Debug, Default)]
pub struct ProtocolOutput {
    pub records: Vec<EpisodeRecord>,
    pub rows: Vec<AggregateRow>,
}

/// Evaluate every arm on every environment and seed. All artifacts are
/// checked before the first episode.
pub fn run_protocol(ws: &Workspace, spec: &ProtocolSpec) -> Result<ProtocolOutput> {
    spec.validate()?;
    for p in spec.required_artifacts(ws) {
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
    }
    let mut records = Vec::new();
    for &env_id in &spec.envs {
        let env = Env::new(env_id);
        let ds = ws.load_dataset(env_id)?;
        let bundle = ws.load_world_model(env_id)?;
        for arm in spec.arms(env_id) {
            let loaded = match &arm.controller {
                Controller::GcIdm(v) => Loaded::GcIdm(spec.seeds.iter().map(|&s| ws.load_gc_idm(env_id, v, s)).collect::<Result<_>>()?),
                Controller::Planner(cfg) => Loaded::Planner(cfg.clone()),
                Controller::Pairwise { sigma, refine } => Loaded::Pairwise(ws.load_pairwise(env_id, *sigma)?, refine.clone()),
            };
            let episodes = SeedStream::new(0).derive("episodes").derive(&arm.method).derive(&arm.variant);
            for (slot, &seed) in spec.seeds.iter().enumerate() {
                let tasks = matched_tasks(&ds, seed, arm.offset, arm.budget, arm.tasks, spec.n_tasks)?;
                let stream = episodes.derive_index(seed);
                // untimed warmup so first-call effects stay out of the timings
                run_one(&env, &tasks[0], &bundle, &loaded, slot, &spec.plan, &stream.derive("warmup"))?;
                let recs = parallel_map(tasks.len(), spec.jobs, |i| {
                    let mut r = run_one(&env, &tasks[i], &bundle, &loaded, slot, &spec.plan, &stream.derive_index(i as u64))?;
                    r.method = arm.method.clone();
                    r.protocol = spec.protocol.name().into();
                    r.variant = arm.variant.clone();
                    r.seed = seed;
                    r.task_index = i;
                    Ok(r)
                })?;
                records.extend(recs);
            }
        }
    }
    let rows = aggregate(&records);
    Ok(ProtocolOutput { records, rows })
}

/// `<dir>/<protocol>.jsonl` (+ timing sidecar), `<dir>/<protocol>.csv`, and
/// for the compute sweep `<dir>/pareto.svg`.
pub fn write_protocol_outputs(dir: &Path, protocol: Protocol, out: &ProtocolOutput) -> Result<Vec<PathBuf>> {
    let jsonl = dir.join(format!("{}.jsonl", protocol.name()));
    let csv = dir.join(format!("{}.csv", protocol.name()));
    write_records(&jsonl, &out.records)?;
    write_csv(&csv, &out.rows)?;
    let mut written = vec![jsonl.clone(), super::io::timing_path(&jsonl), csv];
    if protocol == Protocol::Pareto {
        let svg = dir.join("pareto.svg");
        write_atomic(&svg, pareto_svg(&out.rows, "gc_idm", "cem").as_bytes())?;
        written.push(svg);
    }
    Ok(written)
}

/// Environments where some sweep configuration beats GC-IDM on both axes.
pub fn pareto_failures(rows: &[AggregateRow]) -> Result<Vec<(EnvId, Vec<String>)>> {
    let mut out = Vec::new();
    for env in EnvId::ALL {
        if !rows.iter().any(|r| r.env == env && r.method == "gc_idm") {
            continue;
        }
        let bad = pareto_violations(rows, env, "gc_idm", "cem")?;
        if !bad.is_empty() {
            out.push((env, bad.iter().map(|r| r.variant.clone()).collect()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("nope".parse::<Protocol>().is_err());
    }

    #[test]
    fn grids() {
        let spec = ProtocolSpec::new(Protocol::Pareto);
        let arms = spec.arms(EnvId::TwoRoom);
        assert_eq!(arms.iter().filter(|a| a.method == "cem").count(), 12);
        let nine_k = arms.iter().find(|a| a.variant == "n300_s30").unwrap();
        match &nine_k.controller {
            Controller::Planner(c) => assert_eq!(c.rollouts_per_plan(), 9000),
            _ => unreachable!(),
        }
        let mut h = ProtocolSpec::new(Protocol::Headline);
        assert_eq!(h.seeds, vec![42, 123, 456]);
        assert_eq!(h.arms(EnvId::PointMass).len(), 2);
        h.methods = vec!["cem".into()];
        assert_eq!(h.arms(EnvId::PointMass).len(), 1);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v = parallel_map(20, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(v, (0..20).map(|i| i * i).collect::<Vec<_>>());
    }
}
