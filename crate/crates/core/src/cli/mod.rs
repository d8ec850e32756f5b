//! The `lcb` command line: data collection, training, protocol evaluation,
//! diagnostics and report regeneration over one artifact root.

pub mod config;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{FileConfig, OutputGuard, DEFAULT_ROOT, ROOT_ENV_VAR};

use crate::diagnostics::{conditioning_sweep, dump_latent_geometry, error_propagation_experiment, latent_action_jacobian, Perturbation};
use crate::env::{dataset::payload_path, Env, EnvId};
use crate::error::{Error, Result};
use crate::eval::protocol::{matched_tasks, pareto_failures, run_protocol, write_protocol_outputs, Protocol, ProtocolSpec, TaskSource};
use crate::eval::{io::timing_path, report::regenerate, IdmVariant, Workspace, BASE_SEED};
use crate::gc_idm::NoiseMode;
use crate::nn::checkpoint::write_atomic;
use crate::rng::SeedStream;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const MISSING_ARTIFACT: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::MissingArtifact(_) => exit::MISSING_ARTIFACT,
        Error::NonFinite(_) | Error::NumericalAbort { .. } | Error::RankDeficient(_) => exit::NUMERICAL,
        _ => exit::FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "lcb", version, about = "Latent planners versus goal-conditioned inverse dynamics")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact root; overrides $LCB_OUTPUT_ROOT and the config file.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    /// Report each trained artifact on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect expert demonstrations.
    Collect(CollectArgs),
    /// Train the latent world model.
    TrainWm(TrainWmArgs),
    /// Train a GC-IDM controller.
    TrainIdm(TrainIdmArgs),
    /// Train a pairwise IDM.
    TrainPairwise(TrainPairwiseArgs),
    /// Run an evaluation protocol.
    Eval(EvalArgs),
    /// Run a sweep protocol (the CEM compute sweep by default).
    Sweep(EvalArgs),
    /// Conditioning, error-propagation and latent-geometry diagnostics.
    Diagnose(DiagnoseArgs),
    /// Regenerate every aggregate table from episode records.
    Report(ReportArgs),
}

fn parse_env(s: &str) -> std::result::Result<EnvId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct CollectArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = BASE_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainWmArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long, default_value_t = BASE_SEED)]
    pub seed: u64,
    /// Optimizer steps (overrides the config file).
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainIdmArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long, default_value_t = BASE_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub h_max: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Draw the noise std uniformly from [0, sigma] per sample.
    #[arg(long)]
    pub uniform_noise: bool,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
    /// Train on the 90% side of the held-out split.
    #[arg(long)]
    pub held_out_split: bool,
}

impl TrainIdmArgs {
    pub fn variant(&self) -> IdmVariant {
        IdmVariant {
            h_max: self.h_max,
            noise_sigma: self.noise_sigma,
            noise_mode: self.uniform_noise.then_some(NoiseMode::Uniform),
            hidden: self.hidden,
            layers: self.layers,
            data_fraction: self.data_fraction,
            held_out_split: self.held_out_split,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainPairwiseArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    /// Training input-noise std.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = BASE_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Protocol name (headline, solver-family, pareto, goal-offset, h-max,
    /// data-efficiency, noise, noise-schedule, architecture, budget,
    /// held-out, horizon-embedding, pairwise).
    #[arg(long)]
    pub protocol: Option<String>,
    /// Comma-separated environments (all four by default).
    #[arg(long, value_delimiter = ',', value_parser = parse_env)]
    pub envs: Vec<EnvId>,
    /// Comma-separated method filter, e.g. gc_idm,cem.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Comma-separated controller training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub n_tasks: Option<usize>,
    #[arg(long)]
    pub offset: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Episodes evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Train any missing dataset or checkpoint first.
    #[arg(long)]
    pub train_missing: bool,
    /// Output directory (default <root>/results).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvId,
    #[arg(long, default_value_t = BASE_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed of the default GC-IDM used for error propagation.
    #[arg(long, default_value_t = BASE_SEED)]
    pub idm_seed: u64,
    #[arg(long)]
    pub train_missing: bool,
    /// Output directory (default <root>/diagnostics/<env>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory holding `*.jsonl` records (default <root>/results).
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

/// Parse `args`, run, print any error, and return the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match run(&cli, std::env::var(ROOT_ENV_VAR).ok().as_deref()) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Execute a parsed command line. `env_root` is the value of
/// [`ROOT_ENV_VAR`], passed in so tests need not touch the process
/// environment.
pub fn run(cli: &Cli, env_root: Option<&str>) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let root = config::resolve_root(cli.root.as_deref(), env_root, file.root.as_deref());
    let mut settings = file.train.clone();
    apply_overrides(&cli.command, &mut settings);
    let mut ws = Workspace::new(root, settings);
    ws.verbose = cli.verbose;
    let mut resolved = file.clone();
    resolved.train = ws.settings.clone();
    match &cli.command {
        Command::Collect(a) => collect(&ws, &resolved, a),
        Command::TrainWm(a) => train_wm(&ws, &resolved, a),
        Command::TrainIdm(a) => train_idm(&ws, &resolved, a),
        Command::TrainPairwise(a) => train_pairwise(&ws, &resolved, a),
        Command::Eval(a) => evaluate(&ws, &resolved, a, "eval", None),
        Command::Sweep(a) => evaluate(&ws, &resolved, a, "sweep", Some(Protocol::Pareto)),
        Command::Diagnose(a) => diagnose(&ws, &resolved, a),
        Command::Report(a) => report(&ws, &resolved, a),
    }
}

fn apply_overrides(cmd: &Command, s: &mut crate::eval::TrainSettings) {
    match cmd {
        Command::Collect(a) => {
            if let Some(n) = a.episodes {
                s.collect.n_episodes = n;
            }
        }
        Command::TrainWm(a) => {
            if let Some(n) = a.steps {
                s.world_model.steps = n;
            }
        }
        Command::TrainIdm(a) => {
            if let Some(n) = a.epochs {
                s.gc_idm.epochs = n;
            }
        }
        Command::TrainPairwise(a) => {
            if let Some(n) = a.epochs {
                s.pairwise.epochs = n;
            }
        }
        _ => {}
    }
}

fn snapshot<A: Serialize>(ws: &Workspace, dir: &Path, command: &str, args: &A, cfg: &FileConfig, guard: &mut OutputGuard) -> Result<()> {
    guard.claim(dir.join(format!("run_{command}.json")));
    config::write_snapshot(dir, &config::Snapshot { command, build: config::build_id(), root: &ws.root, args, config: cfg })?;
    Ok(())
}

fn collect(ws: &Workspace, cfg: &FileConfig, a: &CollectArgs) -> Result<()> {
    let mut guard = OutputGuard::new();
    let path = ws.dataset_path(a.env);
    guard.claim(&path);
    guard.claim(payload_path(&path));
    let ds = ws.collect(a.env, a.seed)?;
    snapshot(ws, &ws.env_dir(a.env), "collect", a, cfg, &mut guard)?;
    guard.commit();
    println!("{}: {} episodes, {} frames -> {}", a.env.name(), ds.episodes.len(), ds.num_frames(), path.display());
    Ok(())
}

fn train_wm(ws: &Workspace, cfg: &FileConfig, a: &TrainWmArgs) -> Result<()> {
    let mut guard = OutputGuard::new();
    let path = ws.world_model_path(a.env);
    guard.claim(&path);
    guard.claim(path.with_extension("curve.csv"));
    let bundle = ws.train_world_model(a.env, a.seed)?;
    snapshot(ws, &ws.env_dir(a.env), "train-wm", a, cfg, &mut guard)?;
    guard.commit();
    println!("{}: world model {} -> {}", a.env.name(), &bundle.checksum()[..12], path.display());
    Ok(())
}

fn train_idm(ws: &Workspace, cfg: &FileConfig, a: &TrainIdmArgs) -> Result<()> {
    let variant = a.variant();
    let mut guard = OutputGuard::new();
    let path = ws.gc_idm_path(a.env, &variant, a.seed);
    guard.claim(&path);
    guard.claim(path.with_extension("curve.csv"));
    let model = ws.train_gc_idm(a.env, &variant, a.seed)?;
    snapshot(ws, path.parent().expect("variant directory"), "train-idm", a, cfg, &mut guard)?;
    guard.commit();
    println!("{}: gc_idm {} ({}) -> {}", a.env.name(), &model.checksum()[..12], variant.label(), path.display());
    Ok(())
}

fn train_pairwise(ws: &Workspace, cfg: &FileConfig, a: &TrainPairwiseArgs) -> Result<()> {
    let mut guard = OutputGuard::new();
    let path = ws.pairwise_path(a.env, a.sigma);
    guard.claim(&path);
    guard.claim(path.with_extension("curve.csv"));
    ws.train_pairwise(a.env, a.sigma, a.seed)?;
    snapshot(ws, path.parent().expect("pairwise directory"), "train-pairwise", a, cfg, &mut guard)?;
    guard.commit();
    println!("{}: pairwise idm sigma {} -> {}", a.env.name(), a.sigma, path.display());
    Ok(())
}

/// Resolve an [`EvalArgs`] into a protocol spec.
pub fn protocol_spec(a: &EvalArgs, cfg: &FileConfig, default: Option<Protocol>) -> Result<ProtocolSpec> {
    let protocol = match (&a.protocol, default) {
        (Some(p), _) => p.parse()?,
        (None, Some(p)) => p,
        (None, None) => return Err(Error::Config("--protocol is required".into())),
    };
    let mut spec = ProtocolSpec::new(protocol);
    if !a.envs.is_empty() {
        spec.envs = a.envs.clone();
    }
    if !a.seeds.is_empty() {
        spec.seeds = a.seeds.clone();
    }
    spec.methods = a.methods.clone();
    spec.n_tasks = a.n_tasks.or(cfg.eval.n_tasks).unwrap_or(spec.n_tasks);
    spec.offset = a.offset.unwrap_or(cfg.eval.offset);
    spec.budget = a.budget.unwrap_or(cfg.eval.budget);
    spec.plan = cfg.eval.plan;
    spec.solver_overrides = cfg.eval.solver.clone();
    spec.jobs = a.jobs;
    spec.validate().map_err(|e| match e {
        Error::Contract(m) => Error::Config(m),
        other => other,
    })?;
    Ok(spec)
}

fn evaluate(ws: &Workspace, cfg: &FileConfig, a: &EvalArgs, command: &str, default: Option<Protocol>) -> Result<()> {
    let spec = protocol_spec(a, cfg, default)?;
    let dir = a.out.clone().unwrap_or_else(|| ws.root.join("results"));
    let name = spec.protocol.name();
    if a.train_missing {
        spec.prepare(ws)?;
    }
    let mut guard = OutputGuard::new();
    let jsonl = dir.join(format!("{name}.jsonl"));
    guard.claim(&jsonl);
    guard.claim(timing_path(&jsonl));
    guard.claim(dir.join(format!("{name}.csv")));
    if spec.protocol == Protocol::Pareto {
        guard.claim(dir.join("pareto.svg"));
    }
    let out = run_protocol(ws, &spec)?;
    write_protocol_outputs(&dir, spec.protocol, &out)?;
    snapshot(ws, &dir, &format!("{command}_{name}"), &spec, cfg, &mut guard)?;
    guard.commit();
    let mut stdout = std::io::stdout().lock();
    for r in &out.rows {
        let variant = if r.variant.is_empty() { String::new() } else { format!(" [{}]", r.variant) };
        writeln!(stdout, "{:<10} {:<7}{} success {:.3} ± {:.3}  calls/plan {:.0}", r.env.name(), r.method, variant, r.success_rate, r.success_std, r.predictor_calls_per_plan)?;
    }
    if spec.protocol == Protocol::Pareto {
        for (env, configs) in pareto_failures(&out.rows)? {
            writeln!(stdout, "{}: configurations dominating gc_idm: {}", env.name(), configs.join(", "))?;
        }
    }
    writeln!(stdout, "wrote {}", jsonl.display())?;
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseSummary<'a> {
    conditioning: &'a crate::diagnostics::ConditioningSummary,
    marginal_mean: f64,
    marginal_std: f64,
    divergence: &'a [crate::diagnostics::DivergenceCurve],
}

fn diagnose(ws: &Workspace, cfg: &FileConfig, a: &DiagnoseArgs) -> Result<()> {
    let d = &cfg.diagnose;
    let dir = a.out.clone().unwrap_or_else(|| ws.root.join("diagnostics").join(a.env.name()));
    let variant = IdmVariant::default();
    if a.train_missing {
        ws.ensure_gc_idm(a.env, &variant, a.idm_seed)?;
    }
    let ds = ws.load_dataset(a.env)?;
    let bundle = ws.load_world_model(a.env)?;
    let model = ws.load_gc_idm(a.env, &variant, a.idm_seed)?;
    let files = ["summary.json", "jacobian.json", "error_propagation.csv", "latent_geometry.csv", "latent_geometry.marginal.csv"];
    let mut guard = OutputGuard::new();
    for f in files {
        guard.claim(dir.join(f));
    }
    let stream = SeedStream::new(a.seed).derive("diagnose");
    let cond = conditioning_sweep(&bundle, &ds, a.samples.unwrap_or(d.samples), d.eps, &stream)?;

    let ep = &ds.episodes[0];
    let state: Vec<f64> = ep.obs(ep.len() / 2).iter().map(|&x| x as f64).collect();
    let example = latent_action_jacobian(&bundle, &state, &vec![0.2; ds.act_dim()], d.eps)?;
    write_atomic(&dir.join("jacobian.json"), example.to_json()?.as_bytes())?;

    let env = Env::new(a.env);
    let tasks = matched_tasks(&ds, a.seed, 25, 50, TaskSource::All, d.episodes)?;
    let spec = env.action_spec();
    let bias: Vec<f64> = (0..spec.dim()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * d.bias * spec.half_range(i)).collect();
    let curves = error_propagation_experiment(&env, &bundle, &model, &tasks, &d.windows, &Perturbation::Bias(bias))?;
    let mut csv = String::from("window,step,mean_divergence,success_rate\n");
    for c in &curves {
        for (s, v) in c.steps.iter().zip(&c.mean_divergence) {
            csv.push_str(&format!("{},{s},{v},{}\n", c.window, c.success_rate));
        }
    }
    write_atomic(&dir.join("error_propagation.csv"), csv.as_bytes())?;

    let marginal = dump_latent_geometry(&bundle, &ds, d.marginal_dim, &dir.join("latent_geometry.csv"))?;
    let summary = DiagnoseSummary { conditioning: &cond, marginal_mean: marginal.mean, marginal_std: marginal.std, divergence: &curves };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    snapshot(ws, &dir, "diagnose", a, cfg, &mut guard)?;
    guard.commit();

    println!(
        "{}: conditioning bound holds on {}/{} samples ({} rejected), max normal-equation residual {:.1e}",
        a.env.name(),
        cond.holds,
        cond.samples,
        cond.rejected,
        cond.max_residual
    );
    for c in &curves {
        println!("  window {:>3}: first-boundary divergence {:.4}, success {:.2}", c.window, c.first_boundary().unwrap_or(f64::NAN), c.success_rate);
    }
    println!("  latent marginal z{}: mean {:.3} std {:.3}", d.marginal_dim, marginal.mean, marginal.std);
    Ok(())
}

fn report(ws: &Workspace, cfg: &FileConfig, a: &ReportArgs) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| ws.root.join("results"));
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir));
    }
    let mut guard = OutputGuard::new();
    let written = regenerate(&dir)?;
    snapshot(ws, &dir, "report", a, cfg, &mut guard)?;
    guard.commit();
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
