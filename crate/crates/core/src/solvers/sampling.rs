//! Population-based planners.

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::noise::ColoredNoise;
use super::{rollout_costs, IcemReturn, LatentDynamics, SolverConfig};
use crate::error::{contract, Result};
use crate::rng::Rng;

const VAR_FLOOR: f32 = 1e-6;

type Solved = (Array2<f32>, u64);

fn gaussian_population(mean: &Array2<f32>, std: &Array2<f32>, n: usize, rng: &mut Rng) -> Array3<f32> {
    let (h, a) = mean.dim();
    let mut pop = Array3::zeros((n, h, a));
    for mut seq in pop.outer_iter_mut() {
        for ((x, &m), &s) in seq.iter_mut().zip(mean.iter()).zip(std.iter()) {
            let e: f64 = StandardNormal.sample(rng);
            *x = (m + s * e as f32).clamp(-1.0, 1.0);
        }
    }
    pop
}

/// Indices sorted by cost; NaN sorts last and ties keep sample order.
fn ranking(costs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (costs[i], costs[j]);
        match (a.is_nan(), b.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => a.total_cmp(&b),
        }
    });
    idx
}

/// Mean and floored standard deviation of the selected sequences.
fn refit(pop: &Array3<f32>, elites: &[usize]) -> (Array2<f32>, Array2<f32>) {
    let sel = pop.select(Axis(0), elites);
    let mean = sel.mean_axis(Axis(0)).expect("non-empty elites");
    let var = sel.var_axis(Axis(0), 0.0);
    (mean, var.mapv(|v| v.max(VAR_FLOOR).sqrt()))
}

fn min_cost(costs: &[f64]) -> f64 {
    costs.iter().copied().filter(|c| !c.is_nan()).fold(f64::INFINITY, f64::min)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn cem(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    horizon: usize,
    cfg: &SolverConfig,
    rng: &mut Rng,
    best: &mut Vec<f64>,
    mut sink: Option<&mut Vec<Array3<f32>>>,
) -> Result<Solved> {
    let a = dynamics.act_dim();
    let mut mean = Array2::zeros((horizon, a));
    let mut std = Array2::from_elem((horizon, a), cfg.var_scale.sqrt() as f32);
    for _ in 0..cfg.n_steps {
        let pop = gaussian_population(&mean, &std, cfg.num_samples, rng);
        let costs = rollout_costs(dynamics, z0, pop.view(), goal)?;
        let order = ranking(&costs);
        best.push(costs[order[0]]);
        (mean, std) = refit(&pop, &order[..cfg.topk]);
        if let Some(s) = sink.as_deref_mut() {
            s.push(pop);
        }
    }
    Ok((mean, cfg.rollouts_per_plan()))
}

/// Normalized weights `softmax(-(c - min c) / temperature)`.
pub fn mppi_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(contract("temperature must be positive"));
    }
    let m = min_cost(costs);
    if !m.is_finite() {
        return Err(contract("every candidate cost is infinite or NaN"));
    }
    let w: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_nan() { 0.0 } else { (-(c - m) / temperature).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

#[allow(clippy::too_many_arguments)]
pub(super) fn mppi(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    horizon: usize,
    cfg: &SolverConfig,
    rng: &mut Rng,
    best: &mut Vec<f64>,
    mut sink: Option<&mut Vec<Array3<f32>>>,
) -> Result<Solved> {
    let a = dynamics.act_dim();
    let mut mean = Array2::<f32>::zeros((horizon, a));
    let mut std = Array2::from_elem((horizon, a), cfg.var_scale.sqrt() as f32);
    for _ in 0..cfg.n_steps {
        let pop = gaussian_population(&mean, &std, cfg.num_samples, rng);
        let costs = rollout_costs(dynamics, z0, pop.view(), goal)?;
        best.push(min_cost(&costs));
        let w = mppi_weights(&costs, cfg.temperature)?;
        let mut m = Array2::<f64>::zeros((horizon, a));
        for (seq, &wi) in pop.outer_iter().zip(&w) {
            m.zip_mut_with(&seq, |acc, &x| *acc += wi * x as f64);
        }
        let mut v = Array2::<f64>::zeros((horizon, a));
        for (seq, &wi) in pop.outer_iter().zip(&w) {
            ndarray::Zip::from(&mut v).and(&seq).and(&m).for_each(|acc, &x, &mu| *acc += wi * (x as f64 - mu).powi(2));
        }
        mean = m.mapv(|x| x as f32);
        std = v.mapv(|x| (x as f32).max(VAR_FLOOR).sqrt());
        if let Some(s) = sink.as_deref_mut() {
            s.push(pop);
        }
    }
    Ok((mean, cfg.rollouts_per_plan()))
}

fn colored_population(mean: &Array2<f32>, std: &Array2<f32>, n: usize, noise: &ColoredNoise, rng: &mut Rng) -> Array3<f32> {
    let (h, a) = mean.dim();
    let mut pop = Array3::zeros((n, h, a));
    for mut seq in pop.outer_iter_mut() {
        for j in 0..a {
            let e = noise.sample(rng);
            for t in 0..h {
                seq[[t, j]] = (mean[[t, j]] + std[[t, j]] * e[t] as f32).clamp(-1.0, 1.0);
            }
        }
    }
    pop
}

/// Number of previous elites carried into the next population.
pub(super) fn kept_elites(cfg: &SolverConfig) -> usize {
    let by_fraction = (cfg.keep_fraction * cfg.num_samples as f64).round() as usize;
    cfg.elite_keep.min(by_fraction).min(cfg.topk).min(cfg.num_samples)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn icem(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    horizon: usize,
    cfg: &SolverConfig,
    rng: &mut Rng,
    best: &mut Vec<f64>,
    mut sink: Option<&mut Vec<Array3<f32>>>,
) -> Result<Solved> {
    let a = dynamics.act_dim();
    let noise = ColoredNoise::new(cfg.noise_beta, horizon);
    let keep = kept_elites(cfg);
    let mut mean = Array2::zeros((horizon, a));
    let mut std = Array2::from_elem((horizon, a), cfg.var_scale.sqrt() as f32);
    let mut carried: Option<Array3<f32>> = None;
    let mut sampled_from = mean.clone();
    for _ in 0..cfg.n_steps {
        let reuse = carried.as_ref().map_or(0, |c| c.dim().0.min(keep));
        let fresh = colored_population(&mean, &std, cfg.num_samples - reuse, &noise, rng);
        let pop = match &carried {
            Some(c) if reuse > 0 => ndarray::concatenate(Axis(0), &[fresh.view(), c.slice(s![..reuse, .., ..])]).expect("same shape"),
            _ => fresh,
        };
        let costs = rollout_costs(dynamics, z0, pop.view(), goal)?;
        let order = ranking(&costs);
        best.push(costs[order[0]]);
        sampled_from = mean;
        (mean, std) = refit(&pop, &order[..cfg.topk]);
        carried = Some(pop.select(Axis(0), &order[..keep.min(order.len())]));
        if let Some(s) = sink.as_deref_mut() {
            s.push(pop);
        }
    }
    let out = match cfg.icem_return {
        IcemReturn::EliteMean => mean,
        IcemReturn::DistributionMean => sampled_from,
    };
    Ok((out, cfg.rollouts_per_plan()))
}
