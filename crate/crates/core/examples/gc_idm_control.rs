//! Train a goal-conditioned inverse-dynamics controller on a frozen world
//! model and run it closed loop next to receding-horizon CEM on the same
//! tasks.
//!
//! cargo run --release --example gc_idm_control

use latent_control::env::{collect_dataset, CollectConfig, Env, EnvId};
use latent_control::gc_idm::{closed_loop_control, train_gc_idm, GcIdmConfig};
use latent_control::rng::SeedStream;
use latent_control::solvers::{receding_horizon_execute, PlanConfig, SolverConfig};
use latent_control::world_model::{train_world_model, WorldModelConfig};

fn main() -> latent_control::Result<()> {
    let env = Env::new(EnvId::PointMass);
    let ds = collect_dataset(&env, &CollectConfig { n_episodes: 200, ..Default::default() }, 42)?;
    let (wm, _) = train_world_model(&ds, &WorldModelConfig { latent_dim: 16, hidden: 128, steps: 1500, ..Default::default() }, &SeedStream::new(1))?;
    let cfg = GcIdmConfig { hidden: 128, layers: 2, epochs: 150, ..Default::default() };
    let (idm, report) = train_gc_idm(&ds, &wm, &cfg, &SeedStream::new(2))?;
    println!("gc_idm: {} steps, probe mse {:.4} -> {:.4}", report.steps, report.init_mse, report.final_mse);

    let tasks = ds.sample_tasks(20, 25, 50, &mut SeedStream::new(3).rng())?;
    let plan_cfg = PlanConfig::default();
    let cem = SolverConfig::cem(100, 10);
    let (mut idm_wins, mut cem_wins, mut calls) = (0, 0, 0);
    for (i, task) in tasks.iter().enumerate() {
        let a = closed_loop_control(&env, task, &wm, &idm)?;
        let b = receding_horizon_execute(&env, task, &wm, &plan_cfg, &cem, &SeedStream::new(4).derive_index(i as u64))?;
        idm_wins += a.success as usize;
        cem_wins += b.success as usize;
        calls += b.predictor_calls;
        assert_eq!(a.predictor_calls, 0);
    }
    println!("success over {} tasks: gc_idm {idm_wins}, cem {cem_wins} ({calls} predictor calls)", tasks.len());
    Ok(())
}
