//! Receding-horizon execution of a planner in the true environment.

use super::{plan, LatentModel, PlanConfig, SolverConfig};
use crate::env::{Env, GoalTask};
use crate::error::{ensure, Result};
use crate::eval::record::{latent_distance, EpisodeRecord, Stopwatch};
use crate::rng::SeedStream;

/// Encode, plan, commit `receding_horizon` planned actions (each repeated
/// `action_block` raw steps), re-encode, and repeat until success or the
/// task budget runs out. Plan call `k` draws from `stream.derive_index(k)`.
pub fn receding_horizon_execute(
    env: &Env,
    task: &GoalTask,
    model: &dyn LatentModel,
    plan_cfg: &PlanConfig,
    solver: &SolverConfig,
    stream: &SeedStream,
) -> Result<EpisodeRecord> {
    ensure!(task.budget >= 1, "budget must be at least 1");
    plan_cfg.validate()?;
    solver.validate()?;
    ensure!(
        model.frameskip() == plan_cfg.action_block,
        "model frameskip {} does not match action block {}",
        model.frameskip(),
        plan_cfg.action_block
    );
    let spec = env.action_spec();
    let mut rec = EpisodeRecord::new(env.id, solver.kind.name(), task.clone());
    rec.config_hash = solver.config_hash(plan_cfg);
    let watch = Stopwatch::start();
    let z_goal = model.encode_obs(&task.goal_obs)?;
    let mut obs = task.start_obs.clone();
    let mut z = model.encode_obs(&obs)?;
    rec.latent_goal_distances.push(latent_distance(z.as_slice().expect("contiguous"), z_goal.as_slice().expect("contiguous")));
    rec.success = env.success(&obs, &task.goal_obs)?;
    'episode: while !rec.success && rec.steps_taken < task.budget {
        let mut rng = stream.derive_index(rec.plan_calls).rng();
        let out = Stopwatch::time(&mut rec.timing, || plan(model, z.view(), z_goal.view(), plan_cfg, solver, &mut rng))?;
        rec.plan_calls += 1;
        rec.predictor_calls += out.cost.predictor_calls;
        for k in 0..plan_cfg.receding_horizon {
            let raw = spec.denormalize(out.actions.row(k).as_slice().expect("contiguous"));
            for _ in 0..plan_cfg.action_block {
                obs = env.step(&obs, &raw)?;
                let zs = model.encode_obs(&obs)?;
                rec.push_step(raw.clone(), latent_distance(zs.as_slice().expect("contiguous"), z_goal.as_slice().expect("contiguous")));
                z = zs;
                if env.success(&obs, &task.goal_obs)? {
                    rec.success = true;
                    break 'episode;
                }
                if rec.steps_taken >= task.budget {
                    break 'episode;
                }
            }
        }
    }
    watch.finish(&mut rec.timing);
    Ok(rec)
}
