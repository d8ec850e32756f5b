//! First-order trajectory optimization: plain SGD on the terminal cost
//! through the unrolled predictor.

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::{LatentDynamics, SolverConfig};
use crate::error::{contract, Result};
use crate::rng::Rng;

/// Candidate 0 starts at the zero sequence (the initial sampling mean); the
/// others are drawn from `N(0, var_scale)` and clipped. Returns the
/// best-scoring iterate that was actually evaluated.
pub(super) fn solve(
    dynamics: &dyn LatentDynamics,
    z0: ArrayView1<f32>,
    goal: ArrayView1<f32>,
    horizon: usize,
    cfg: &SolverConfig,
    rng: &mut Rng,
    best_trace: &mut Vec<f64>,
) -> Result<(Array2<f32>, u64)> {
    let a = dynamics.act_dim();
    let n = cfg.num_samples;
    let std = cfg.var_scale.sqrt();
    let mut seqs = Array3::<f32>::zeros((n, horizon, a));
    for (i, mut seq) in seqs.outer_iter_mut().enumerate() {
        if i > 0 {
            seq.mapv_inplace(|_| {
                let e: f64 = StandardNormal.sample(rng);
                (std * e).clamp(-1.0, 1.0) as f32
            });
        }
    }
    let mut alive = vec![true; n];
    let mut best: Option<(f64, Array2<f32>)> = None;
    let mut rollouts = 0u64;
    let lr = cfg.lr as f32;
    for _ in 0..cfg.n_steps {
        let live: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
        if live.is_empty() {
            break;
        }
        let batch = seqs.select(Axis(0), &live);
        let (costs, grads) = dynamics.cost_grad(z0, batch.view(), goal)?;
        rollouts += live.len() as u64;
        let mut step_best = f64::INFINITY;
        for (k, &i) in live.iter().enumerate() {
            let g = grads.index_axis(Axis(0), k);
            if !costs[k].is_finite() || g.iter().any(|x| !x.is_finite()) {
                alive[i] = false;
                continue;
            }
            step_best = step_best.min(costs[k]);
            if best.as_ref().is_none_or(|(c, _)| costs[k] < *c) {
                best = Some((costs[k], seqs.index_axis(Axis(0), i).to_owned()));
            }
            let mut seq = seqs.index_axis_mut(Axis(0), i);
            seq.zip_mut_with(&g, |x, &gx| *x -= lr * gx);
            if cfg.action_noise > 0.0 {
                seq.mapv_inplace(|x| {
                    let e: f64 = StandardNormal.sample(rng);
                    x + (cfg.action_noise * e) as f32
                });
            }
            seq.mapv_inplace(|x| x.clamp(-1.0, 1.0));
        }
        best_trace.push(step_best);
    }
    let (_, seq) = best.ok_or_else(|| contract("every gradient candidate produced a non-finite gradient"))?;
    Ok((seq, rollouts))
}
