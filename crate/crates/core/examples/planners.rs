//! Every planner on a known linear latent system: how close each gets to the
//! goal in one plan call and how many predictor calls it spends.
//!
//! cargo run --release --example planners

use latent_control::rng::SeedStream;
use latent_control::solvers::{plan, rollout_costs, LinearIntegrator, PlanConfig, SolverConfig, SolverKind};
use ndarray::{array, Array3, Axis};

fn main() -> latent_control::Result<()> {
    // z' = z + u, so the goal is reachable in one step with u = goal
    let dynamics = LinearIntegrator::new(2, 1.0);
    let z0 = array![0.0f32, 0.0];
    let goal = array![0.6f32, -0.4];
    let plan_cfg = PlanConfig { horizon: 1, receding_horizon: 1, action_block: 1 };

    for kind in SolverKind::ALL {
        let cfg = SolverConfig::defaults(kind);
        let out = plan(&dynamics, z0.view(), goal.view(), &plan_cfg, &cfg, &mut SeedStream::new(42).rng())?;
        let seq: Array3<f32> = out.actions.clone().insert_axis(Axis(0));
        let cost = rollout_costs(&dynamics, z0.view(), seq.view(), goal.view())?[0];
        let best = out.trace.running_best();
        println!(
            "{:<8} action {:>7.3} {:>7.3}  terminal cost {cost:.2e}  iterations {:>2}  predictor calls {}",
            kind.name(),
            out.actions[[0, 0]],
            out.actions[[0, 1]],
            best.len(),
            out.cost.predictor_calls
        );
    }
    Ok(())
}
