use latent_control::env::{collect_dataset, CollectConfig, Env, EnvId, GoalTask};
use latent_control::gc_idm::{closed_loop_control, run_controller, train_gc_idm, train_gc_idm_from, GcIdmConfig, GcIdmModel, IdmBatch};
use latent_control::rng::{Rng, SeedStream};
use latent_control::solvers::LinearIntegrator;
use latent_control::world_model::{global_predictor_calls, train_world_model, WorldModelConfig};
use ndarray::Array2;
use rand::Rng as _;

const BOUND: f32 = 0.05;

fn small_cfg() -> GcIdmConfig {
    GcIdmConfig { hidden: 64, layers: 2, embed_dim: 16, cond_dim: 32, dropout: 0.0, h_max: 10, batch_size: 256, lr: 3e-3, ..Default::default() }
}

/// PointMass triples with the closed-form inverse: z_g = z + h * bound * u.
fn analytic_batch(n: usize, rng: &mut Rng) -> IdmBatch {
    let mut b = IdmBatch { z: Array2::zeros((n, 2)), z_goal: Array2::zeros((n, 2)), h: Vec::with_capacity(n), actions: Array2::zeros((n, 2)), index: vec![(0, 0); n] };
    for i in 0..n {
        let h = rng.random_range(1..=10usize);
        for j in 0..2 {
            let z = rng.random_range(0.0f32..1.0);
            let u = rng.random_range(-1.0f32..1.0);
            b.z[[i, j]] = z;
            b.z_goal[[i, j]] = z + h as f32 * BOUND * u;
            b.actions[[i, j]] = u;
        }
        b.h.push(h);
    }
    b
}

fn train_small(steps: u64, seed: u64) -> (GcIdmModel, latent_control::gc_idm::TrainReport) {
    train_gc_idm_from(2, 2, &small_cfg(), steps, &mut |n, rng| analytic_batch(n, rng), &SeedStream::new(seed)).unwrap()
}

#[test]
fn training_reduces_error_and_uses_the_horizon() {
    let (model, report) = train_small(600, 1);
    assert!(report.final_mse < report.init_mse / 3.0, "init {} final {}", report.init_mse, report.final_mse);
    // the same latent displacement means a different action at a different horizon
    let z = Array2::from_shape_vec((1, 2), vec![0.5f32, 0.5]).unwrap();
    let g = Array2::from_shape_vec((1, 2), vec![0.6f32, 0.5]).unwrap();
    let a2 = model.forward(z.view(), g.view(), &[2]).unwrap()[[0, 0]];
    let a8 = model.forward(z.view(), g.view(), &[8]).unwrap()[[0, 0]];
    assert!(a2 > a8 + 0.2, "h=2 gives {a2}, h=8 gives {a8}");
}

#[test]
fn training_is_deterministic() {
    let (a, _) = train_small(40, 5);
    let (b, _) = train_small(40, 5);
    let (c, _) = train_small(40, 6);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (model, _) = train_small(20, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idm.ckpt");
    model.save(&path).unwrap();
    let back = GcIdmModel::load(&path).unwrap();
    let mut rng = SeedStream::new(3).rng();
    let b = analytic_batch(64, &mut rng);
    assert_eq!(model.forward(b.z.view(), b.z_goal.view(), &b.h).unwrap(), back.forward(b.z.view(), b.z_goal.view(), &b.h).unwrap());
    assert_eq!(back.config, model.config);
}

fn far_task() -> GoalTask {
    GoalTask { start_obs: vec![0.1, 0.1], goal_obs: vec![0.9, 0.9], goal_offset_steps: 25, budget: 50, episode: None, start_t: None }
}

#[test]
fn closed_loop_reencodes_every_step_without_predictor_calls() {
    let env = Env::new(EnvId::PointMass);
    let model = GcIdmModel::init(2, 2, &small_cfg(), &SeedStream::new(4)).unwrap();
    let before = global_predictor_calls();
    let rec = closed_loop_control(&env, &far_task(), &LinearIntegrator::new(2, BOUND), &model).unwrap();
    assert!(!rec.success);
    assert_eq!(rec.steps_taken, 50);
    assert_eq!(rec.plan_calls, 50);
    assert_eq!(rec.model_forwards, 50);
    assert_eq!(rec.predictor_calls, 0);
    assert_eq!(rec.latent_goal_distances.len(), 51);
    assert_eq!(global_predictor_calls(), before);

    let held = run_controller(&env, &far_task(), &LinearIntegrator::new(2, BOUND), &model, 25, &mut |_, _| {}).unwrap();
    assert_eq!(held.plan_calls, 2);
    assert_eq!(held.raw_actions[0], held.raw_actions[24]);
}

#[test]
fn trained_controller_reaches_goals_on_the_integrator() {
    let (model, _) = train_small(1500, 7);
    let env = Env::new(EnvId::PointMass);
    let task = GoalTask { start_obs: vec![0.2, 0.3], goal_obs: vec![0.45, 0.5], goal_offset_steps: 10, budget: 10, episode: None, start_t: None };
    let rec = closed_loop_control(&env, &task, &LinearIntegrator::new(2, BOUND), &model).unwrap();
    assert!(rec.success, "final distances {:?}", rec.latent_goal_distances.last());
}

#[test]
fn end_to_end_training_on_demonstrations() {
    let env = Env::new(EnvId::TwoRoom);
    let ds = collect_dataset(&env, &CollectConfig { n_episodes: 12, ..Default::default() }, 3).unwrap();
    let wm_cfg = WorldModelConfig { latent_dim: 8, hidden: 32, steps: 30, batch_size: 64, frameskip: 5, ..Default::default() };
    let (bundle, _) = train_world_model(&ds, &wm_cfg, &SeedStream::new(3)).unwrap();
    let cfg = GcIdmConfig { epochs: 2, h_max: 50, ..small_cfg() };
    let (model, report) = train_gc_idm(&ds, &bundle, &cfg, &SeedStream::new(3)).unwrap();
    assert!(report.steps >= 2);
    assert_eq!(model.latent_dim(), 8);
    let task = &ds.sample_tasks(1, 10, 20, &mut SeedStream::new(9).rng()).unwrap()[0];
    let rec = closed_loop_control(&env, task, &bundle, &model).unwrap();
    assert_eq!(rec.predictor_calls, 0);
    assert_eq!(rec.plan_calls as usize, rec.steps_taken);
}
