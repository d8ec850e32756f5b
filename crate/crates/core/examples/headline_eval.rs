//! Run the headline protocol end to end in a scratch workspace: train what
//! is missing, evaluate GC-IDM against the planners on matched tasks, write
//! the records and aggregate table, and print the speed comparison.
//!
//! cargo run --release --example headline_eval

use latent_control::env::{CollectConfig, EnvId};
use latent_control::eval::protocol::write_protocol_outputs;
use latent_control::eval::{run_protocol, speedup_summary, Protocol, ProtocolSpec, TrainSettings, Workspace};
use latent_control::gc_idm::GcIdmConfig;
use latent_control::solvers::SolverOverrides;
use latent_control::world_model::WorldModelConfig;

fn main() -> latent_control::Result<()> {
    let dir = tempfile::tempdir()?;
    let settings = TrainSettings {
        collect: CollectConfig { n_episodes: 150, ..Default::default() },
        world_model: WorldModelConfig { latent_dim: 16, hidden: 128, steps: 1000, ..Default::default() },
        gc_idm: GcIdmConfig { hidden: 128, layers: 2, epochs: 100, ..Default::default() },
        ..Default::default()
    };
    let ws = Workspace::new(dir.path(), settings);

    let mut spec = ProtocolSpec::new(Protocol::Headline);
    spec.envs = vec![EnvId::PointMass, EnvId::TwoRoom];
    spec.seeds = vec![42];
    spec.n_tasks = 10;
    spec.solver_overrides = SolverOverrides { num_samples: Some(100), n_steps: Some(10), ..Default::default() };
    spec.prepare(&ws)?;
    let out = run_protocol(&ws, &spec)?;
    for p in write_protocol_outputs(&dir.path().join("results"), spec.protocol, &out)? {
        println!("wrote {}", p.display());
    }

    for r in &out.rows {
        println!(
            "{:<11} {:<9} success {:>5.1}%  calls/plan {:>6}  ms/plan {:.3}",
            r.env.name(),
            r.method,
            r.success_rate,
            r.predictor_calls_per_plan,
            r.ms_per_plan.unwrap_or(f64::NAN)
        );
    }
    for s in speedup_summary(&out.rows, "gc_idm", "cem")? {
        println!("gc_idm vs cem on {}: {:.0}x per plan, {:.0}x per episode, {}", s.env.name(), s.plan_ratio, s.wall_ratio, s.calls);
    }
    Ok(())
}
