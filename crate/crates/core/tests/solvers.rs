use latent_control::env::{Env, EnvId, GoalTask};
use latent_control::nn::finite_diff::assert_rel_close;
use latent_control::rng::SeedStream;
use latent_control::solvers::noise::ColoredNoise;
use latent_control::solvers::{
    mppi_weights, plan, receding_horizon_execute, LatentDynamics, LinearIntegrator, PlanConfig, SolverConfig, SolverKind,
};
use latent_control::world_model::{unrolled_terminal_grad, WorldModelBundle, WorldModelConfig};
use ndarray::{array, Array1, Array3};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

fn untrained(env: EnvId, frameskip: usize) -> WorldModelBundle {
    let cfg = WorldModelConfig { frameskip, ..WorldModelConfig::default() };
    let od = env.obs_dim();
    WorldModelBundle::init(Env::new(env), &cfg, vec![0.5; od], vec![0.3; od], &SeedStream::new(11)).unwrap()
}

const ONE_STEP: PlanConfig = PlanConfig { horizon: 1, receding_horizon: 1, action_block: 1 };

#[test]
fn cem_default_accounting_is_exact() {
    let wm = untrained(EnvId::TwoRoom, 5);
    let z0 = wm.encode_one(&[0.2, 0.3]).unwrap();
    let zg = wm.encode_one(&[0.8, 0.7]).unwrap();
    for kind in [SolverKind::Cem, SolverKind::Mppi, SolverKind::Icem] {
        let cfg = SolverConfig::defaults(kind);
        let out = plan(&wm, z0.view(), zg.view(), &PlanConfig::default(), &cfg, &mut SeedStream::new(1).rng()).unwrap();
        assert_eq!(out.cost.rollouts, 9000, "{kind:?}");
        assert_eq!(out.cost.predictor_calls, 45000, "{kind:?}");
        assert!(out.actions.iter().all(|x| x.abs() <= 1.0));
    }
}

#[test]
fn every_solver_recovers_the_one_step_optimum() {
    let dyn_ = LinearIntegrator::new(2, 1.0);
    let z0 = array![0.2f32, 0.4];
    let zg = array![0.5f32, -0.2];
    let target = &zg - &z0;
    for kind in SolverKind::ALL {
        let cfg = SolverConfig::defaults(kind);
        let out = plan(&dyn_, z0.view(), zg.view(), &ONE_STEP, &cfg, &mut SeedStream::new(3).rng()).unwrap();
        let err = (&out.actions.row(0) - &target).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
        assert!(err < 0.02, "{kind:?}: {err}");
        if kind == SolverKind::Gradient {
            assert!(err < 1e-3, "gradient solver should land exactly: {err}");
        }
    }
}

#[test]
fn cem_running_best_is_monotone() {
    let wm = untrained(EnvId::Reacher, 5);
    let z0 = wm.encode_one(&[0.1, 1.0, 0.2, 0.3]).unwrap();
    let zg = wm.encode_one(&[1.0, 2.0, -0.1, 0.2]).unwrap();
    let out = plan(&wm, z0.view(), zg.view(), &PlanConfig::default(), &SolverConfig::defaults(SolverKind::Cem), &mut SeedStream::new(2).rng()).unwrap();
    let rb = out.trace.running_best();
    assert_eq!(rb.len(), 30);
    assert!(rb.windows(2).all(|w| w[1] <= w[0]));
    assert!(rb[29] < out.trace.best_cost[0]);
}

#[test]
fn colored_noise_is_temporally_correlated() {
    let mut rng = SeedStream::new(5).rng();
    let lag1 = |beta: f64, rng: &mut latent_control::rng::Rng| {
        let gen = ColoredNoise::new(beta, 5);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..10_000 {
            let x = gen.sample(rng);
            num += x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 4.0;
            den += x.iter().map(|v| v * v).sum::<f64>() / 5.0;
        }
        num / den
    };
    let colored = lag1(2.0, &mut rng);
    let white = lag1(0.0, &mut rng);
    assert!(colored - white > 0.3, "colored {colored} white {white}");
}

/// Asymptotic Kolmogorov distribution tail.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn white_noise_marginals_are_standard_normal() {
    let gen = ColoredNoise::new(0.0, 5);
    let mut rng = SeedStream::new(6).rng();
    let draws: Vec<Vec<f64>> = (0..10_000).map(|_| gen.sample(&mut rng)).collect();
    let norm = Normal::new(0.0, 1.0).unwrap();
    for t in 0..5 {
        let mut col: Vec<f64> = draws.iter().map(|d| d[t]).collect();
        col.sort_by(f64::total_cmp);
        let n = col.len() as f64;
        let d = col
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = norm.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        let p = ks_p_value(d, col.len());
        assert!(p > 0.01, "step {t}: D {d} p {p}");
    }
}

#[test]
fn unrolled_predictor_gradient_matches_finite_differences() {
    let wm = untrained(EnvId::PushBlock, 5);
    let params = wm.params.cast::<f64>();
    let mut rng = SeedStream::new(8).rng();
    let z0: Array1<f64> = (0..wm.d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let goal: Array1<f64> = (0..wm.d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let seqs: Array3<f64> = Array3::from_shape_fn((2, 3, 2), |_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let (_, g) = unrolled_terminal_grad(&wm.predictor, &params, z0.view(), seqs.view(), goal.view()).unwrap();
    let objective = |s: &Array3<f64>| {
        let (zt, _) = unrolled_terminal_grad(&wm.predictor, &params, z0.view(), s.view(), goal.view()).unwrap();
        (&zt - &goal).mapv(|x| x * x).sum() / wm.d as f64
    };
    let num = latent_control::nn::finite_diff::numeric_grad(&seqs, objective, 1e-5);
    assert_rel_close(g.view(), num.view(), 1e-4);
}

#[test]
fn budget_fifty_gives_two_plan_calls() {
    let wm = untrained(EnvId::PointMass, 5);
    let env = Env::new(EnvId::PointMass);
    let task = GoalTask { start_obs: vec![0.1, 0.1], goal_obs: vec![0.9, 0.9], goal_offset_steps: 25, budget: 50, episode: None, start_t: None };
    let rec = receding_horizon_execute(&env, &task, &wm, &PlanConfig::default(), &SolverConfig::defaults(SolverKind::Cem), &SeedStream::new(1)).unwrap();
    assert!(!rec.success);
    assert_eq!(rec.plan_calls, 2);
    assert_eq!(rec.steps_taken, 50);
    assert_eq!(rec.predictor_calls, 2 * 45000);
    assert_eq!(rec.latent_goal_distances.len(), 51);
    assert_eq!(rec.timing.wall_ms_per_plan_call.len(), 2);
}

#[test]
fn early_success_stops_the_episode() {
    let env = Env::new(EnvId::PointMass);
    let model = LinearIntegrator::new(2, env.bound as f32);
    let task = GoalTask { start_obs: vec![0.3, 0.3], goal_obs: vec![0.3, 0.49], goal_offset_steps: 3, budget: 50, episode: None, start_t: None };
    let rec = receding_horizon_execute(&env, &task, &model, &ONE_STEP, &SolverConfig::defaults(SolverKind::Cem), &SeedStream::new(1)).unwrap();
    assert!(rec.success);
    assert_eq!(rec.steps_taken, 3);
    assert_eq!(rec.raw_actions.len(), 3);
    assert_eq!(rec.plan_calls, 3);
    let at_goal = GoalTask { start_obs: vec![0.3, 0.3], goal_obs: vec![0.3, 0.3], ..task };
    let rec = receding_horizon_execute(&env, &at_goal, &model, &ONE_STEP, &SolverConfig::defaults(SolverKind::Cem), &SeedStream::new(1)).unwrap();
    assert!(rec.success && rec.steps_taken == 0 && rec.plan_calls == 0);
}

#[test]
fn execution_is_seed_deterministic() {
    let env = Env::new(EnvId::PointMass);
    let model = LinearIntegrator { dim: 2, gain: 5.0 * env.bound as f32, frameskip: 5 };
    let task = GoalTask { start_obs: vec![0.2, 0.7], goal_obs: vec![0.6, 0.3], goal_offset_steps: 25, budget: 50, episode: None, start_t: None };
    for kind in SolverKind::ALL {
        let cfg = SolverConfig { n_steps: 5, ..SolverConfig::defaults(kind) };
        let a = receding_horizon_execute(&env, &task, &model, &PlanConfig::default(), &cfg, &SeedStream::new(4)).unwrap();
        let b = receding_horizon_execute(&env, &task, &model, &PlanConfig::default(), &cfg, &SeedStream::new(4)).unwrap();
        assert_eq!(a.raw_actions, b.raw_actions, "{kind:?}");
        assert!(a.success, "{kind:?} should solve a straight PointMass task with the exact model");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mppi_weights_sum_to_one(costs in prop::collection::vec(0.0f64..1e4, 1..400), temp in 1e-4f64..10.0) {
        let w = mppi_weights(&costs, temp).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn planned_actions_respect_bounds(gx in -3.0f32..3.0, gy in -3.0f32..3.0, seed in 0u64..1000, k in 0usize..4) {
        let dyn_ = LinearIntegrator::new(2, 0.3);
        let kind = SolverKind::ALL[k];
        let cfg = SolverConfig { n_steps: 4, num_samples: if kind == SolverKind::Gradient { 2 } else { 40 }, topk: 10, ..SolverConfig::defaults(kind) };
        let out = plan(&dyn_, array![0.0f32, 0.0].view(), array![gx, gy].view(), &PlanConfig::default(), &cfg, &mut SeedStream::new(seed).rng()).unwrap();
        prop_assert!(out.actions.iter().all(|x| x.abs() <= 1.0));
        prop_assert_eq!(out.cost.predictor_calls, out.cost.rollouts * 5);
    }
}

#[test]
fn dims_are_checked() {
    let dyn_ = LinearIntegrator::new(2, 1.0);
    assert!(dyn_.latent_dim() == 2);
    let r = plan(&dyn_, array![0.0f32].view(), array![0.0f32, 0.0].view(), &PlanConfig::default(), &SolverConfig::defaults(SolverKind::Cem), &mut SeedStream::new(0).rng());
    assert!(r.is_err());
}
