//! Numerical checks on the inverse-dynamics problem: finite-difference
//! Jacobians of the latent transition, the conditioning bound, commit-window
//! error propagation, and raw latent-geometry dumps.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::env::{DemoDataset, Env, GoalTask};
use crate::error::{ensure, Error, Result};
use crate::gc_idm::{run_controller, GcIdmModel};
use crate::linalg::singular_values;
use crate::nn::{Mlp, Params};
use crate::rng::{Rng, SeedStream};
use crate::solvers::LatentModel;
use crate::world_model::WorldModelBundle;

/// Relative threshold below which the smallest singular value counts as zero.
pub const RANK_RCOND: f64 = 1e-10;
pub const DEFAULT_EPS: f64 = 1e-4;
pub const BOUND_SLACK: f64 = 0.05;

/// Finite-difference Jacobians at one `(state, action)` pair. Actions are in
/// normalized units `u = a / bound`.
#[derive(Clone, Debug)]
pub struct JacobianReport {
    /// `d(e(f(s, u))) / du`, `[d, act_dim]`.
    pub b: Array2<f64>,
    pub singular_values: Vec<f64>,
    /// Infinite when `b` is rank deficient.
    pub kappa: f64,
    pub full_rank: bool,
    /// Encoder Jacobian at the next state, `[d, obs_dim]`.
    pub j_e: Array2<f64>,
    /// Smallest and largest singular values of `j_e`.
    pub sqrt_m: f64,
    pub sqrt_big_m: f64,
    /// Environment Jacobian `df/du`, `[obs_dim, act_dim]`.
    pub j_f: Array2<f64>,
    pub kappa_jf: f64,
    pub eps: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    b: Vec<Vec<f64>>,
    singular_values: &'a [f64],
    kappa: Option<f64>,
    full_rank: bool,
    j_e_singular_range: [f64; 2],
    j_f: Vec<Vec<f64>>,
    kappa_jf: Option<f64>,
    conditioning_bound: Option<f64>,
    eps: f64,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl JacobianReport {
    /// `sqrt(M / m) * kappa(J_f)`.
    pub fn conditioning_bound(&self) -> f64 {
        if self.sqrt_m <= 0.0 {
            return f64::INFINITY;
        }
        self.sqrt_big_m / self.sqrt_m * self.kappa_jf
    }

    pub fn bound_holds(&self, slack: f64) -> bool {
        self.kappa <= self.conditioning_bound() * (1.0 + slack)
    }

    /// JSON object; infinite condition numbers become `null`.
    pub fn to_json(&self) -> Result<String> {
        let j = ReportJson {
            b: rows(&self.b),
            singular_values: &self.singular_values,
            kappa: finite(self.kappa),
            full_rank: self.full_rank,
            j_e_singular_range: [self.sqrt_m, self.sqrt_big_m],
            j_f: rows(&self.j_f),
            kappa_jf: finite(self.kappa_jf),
            conditioning_bound: finite(self.conditioning_bound()),
            eps: self.eps,
        };
        Ok(serde_json::to_string(&j)?)
    }
}

fn rank_and_kappa(s: &[f64]) -> (bool, f64) {
    let hi = s[0];
    let lo = *s.last().expect("non-empty");
    let full = hi > 0.0 && lo > RANK_RCOND * hi;
    (full, if full { hi / lo } else { f64::INFINITY })
}

/// Double-precision view of a bundle's encoder for finite differencing.
pub struct JacobianProbe {
    env: Env,
    encoder: Mlp,
    params: Params<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl JacobianProbe {
    pub fn new(bundle: &WorldModelBundle) -> Self {
        Self {
            env: bundle.env.clone(),
            encoder: bundle.encoder.clone(),
            params: bundle.params.cast(),
            mean: bundle.obs_mean.iter().map(|&x| x as f64).collect(),
            std: bundle.obs_std.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Encode raw observations `[n, obs_dim]` in f64.
    pub fn encode(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(obs.ncols() == self.mean.len(), "observation width {} vs {}", obs.ncols(), self.mean.len());
        let x = Array2::from_shape_fn(obs.raw_dim(), |(i, j)| (obs[[i, j]] - self.mean[j]) / self.std[j]);
        self.encoder.forward_eval(&self.params, x.view())
    }

    fn step_u(&self, state: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let bound = self.env.action_spec();
        let a: Vec<f64> = u.iter().enumerate().map(|(i, &x)| bound.center(i) + x * bound.half_range(i)).collect();
        self.env.step_f64(state, &a)
    }

    /// Central differences of `f(s, u)` in `u`, `[obs_dim, act_dim]`.
    pub fn env_jacobian(&self, state: &[f64], u: &[f64], eps: f64) -> Result<Array2<f64>> {
        let k = u.len();
        let mut j = Array2::zeros((state.len(), k));
        for c in 0..k {
            let (mut up, mut dn) = (u.to_vec(), u.to_vec());
            up[c] += eps;
            dn[c] -= eps;
            let (sp, sm) = (self.step_u(state, &up)?, self.step_u(state, &dn)?);
            for r in 0..state.len() {
                j[[r, c]] = (sp[r] - sm[r]) / (2.0 * eps);
            }
        }
        Ok(j)
    }

    /// Central differences of the encoder in raw observation units, with
    /// steps of `eps` standard deviations per coordinate.
    pub fn encoder_jacobian(&self, obs: &[f64], eps: f64) -> Result<Array2<f64>> {
        let n = obs.len();
        let mut pts = Array2::zeros((2 * n, n));
        for c in 0..n {
            for r in 0..n {
                pts[[2 * c, r]] = obs[r];
                pts[[2 * c + 1, r]] = obs[r];
            }
            pts[[2 * c, c]] += eps * self.std[c];
            pts[[2 * c + 1, c]] -= eps * self.std[c];
        }
        let z = self.encode(pts.view())?;
        Ok(Array2::from_shape_fn((z.ncols(), n), |(r, c)| (z[[2 * c, r]] - z[[2 * c + 1, r]]) / (2.0 * eps * self.std[c])))
    }

    /// Central differences of the composition `e(f(s, u))` in `u`.
    pub fn transition_jacobian(&self, state: &[f64], u: &[f64], eps: f64) -> Result<Array2<f64>> {
        let k = u.len();
        let mut pts = Array2::zeros((2 * k, state.len()));
        for c in 0..k {
            for (row, sign) in [(2 * c, 1.0), (2 * c + 1, -1.0)] {
                let mut v = u.to_vec();
                v[c] += sign * eps;
                let s = self.step_u(state, &v)?;
                pts.row_mut(row).assign(&ndarray::ArrayView1::from(&s[..]));
            }
        }
        let z = self.encode(pts.view())?;
        Ok(Array2::from_shape_fn((z.ncols(), k), |(r, c)| (z[[2 * c, r]] - z[[2 * c + 1, r]]) / (2.0 * eps)))
    }

    pub fn report(&self, state: &[f64], u: &[f64], eps: f64) -> Result<JacobianReport> {
        ensure!(eps > 0.0, "finite-difference step must be positive");
        ensure!(u.len() == self.env.act_dim(), "action width {} vs {}", u.len(), self.env.act_dim());
        let b = self.transition_jacobian(state, u, eps)?;
        let s = singular_values(&b)?;
        let (full_rank, kappa) = rank_and_kappa(&s);
        let next = self.step_u(state, u)?;
        let j_e = self.encoder_jacobian(&next, eps)?;
        let se = singular_values(&j_e)?;
        let j_f = self.env_jacobian(state, u, eps)?;
        let (_, kappa_jf) = rank_and_kappa(&singular_values(&j_f)?);
        Ok(JacobianReport {
            b,
            singular_values: s,
            kappa,
            full_rank,
            sqrt_m: *se.last().expect("non-empty"),
            sqrt_big_m: se[0],
            j_e,
            j_f,
            kappa_jf,
            eps,
        })
    }

    /// Largest entry change of `B` when `eps` is halved, relative to the
    /// largest entry.
    pub fn richardson_change(&self, state: &[f64], u: &[f64], eps: f64) -> Result<f64> {
        rel_change(&self.transition_jacobian(state, u, eps)?, &self.transition_jacobian(state, u, eps / 2.0)?)
    }
}

fn rel_change(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ensure!(scale > 0.0, "zero Jacobian");
    Ok(a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale)
}

pub fn latent_action_jacobian(bundle: &WorldModelBundle, state: &[f64], u: &[f64], eps: f64) -> Result<JacobianReport> {
    JacobianProbe::new(bundle).report(state, u, eps)
}

/// Least-squares action change `(B^T B)^{-1} B^T dz`.
pub fn pseudoinverse_action(report: &JacobianReport, delta_z: &[f64]) -> Result<Vec<f64>> {
    let b = &report.b;
    ensure!(delta_z.len() == b.nrows(), "latent change width {} vs {}", delta_z.len(), b.nrows());
    if !report.full_rank {
        return Err(Error::RankDeficient(report.kappa));
    }
    let bm = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]);
    let btb = bm.transpose() * &bm;
    let rhs = bm.transpose() * DVector::from_column_slice(delta_z);
    let chol = btb.clone().cholesky().ok_or(Error::RankDeficient(report.kappa))?;
    let mut x = chol.solve(&rhs);
    // One step of iterative refinement on the normal equations.
    let r = &rhs - &btb * &x;
    x += chol.solve(&r);
    Ok(x.iter().copied().collect())
}

/// `||B^T (B da - dz)||`.
pub fn normal_equation_residual(b: &Array2<f64>, delta_a: &[f64], delta_z: &[f64]) -> f64 {
    let r: Vec<f64> = (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[[i, j]] * delta_a[j]).sum::<f64>() - delta_z[i]).collect();
    (0..b.ncols()).map(|j| (0..b.nrows()).map(|i| b[[i, j]] * r[i]).sum::<f64>().powi(2)).sum::<f64>().sqrt()
}

/// One sample on which the conditioning bound failed.
#[derive(Clone, Debug, Serialize)]
pub struct BoundFailure {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub kappa: Option<f64>,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditioningSummary {
    pub env: String,
    pub samples: usize,
    /// Draws discarded because the environment was not smooth there.
    pub rejected: usize,
    pub holds: usize,
    pub fraction: f64,
    pub rank_deficient: usize,
    pub max_residual: f64,
    pub max_richardson_change: f64,
    pub median_kappa: f64,
    pub median_isometry_ratio: f64,
    pub failures: Vec<BoundFailure>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Sample dataset states with random interior actions and test the
/// conditioning bound and the pseudoinverse on each.
pub fn conditioning_sweep(bundle: &WorldModelBundle, ds: &DemoDataset, n: usize, eps: f64, seed: &SeedStream) -> Result<ConditioningSummary> {
    ensure!(n > 0, "need at least one sample");
    ensure!(!ds.episodes.is_empty(), "empty dataset");
    let probe = JacobianProbe::new(bundle);
    let mut rng = seed.derive("conditioning").rng();
    let (mut holds, mut rejected, mut deficient) = (0, 0, 0);
    let (mut max_res, mut max_rich) = (0.0f64, 0.0f64);
    let (mut kappas, mut ratios, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    let mut accepted = 0;
    while accepted < n {
        ensure!(rejected <= 20 * n, "too many non-smooth samples ({rejected})");
        let ep = &ds.episodes[rng.random_range(0..ds.episodes.len())];
        let t = rng.random_range(0..ep.observations.nrows());
        let state: Vec<f64> = ep.obs(t).iter().map(|&x| x as f64).collect();
        let u: Vec<f64> = (0..probe.env.act_dim()).map(|_| rng.random_range(-0.8..0.8)).collect();
        // Kinks from walls or box limits make central differences meaningless.
        let jf = probe.env_jacobian(&state, &u, eps)?;
        let jf_half = probe.env_jacobian(&state, &u, eps / 2.0)?;
        if jf.iter().all(|x| *x == 0.0) || rel_change(&jf, &jf_half)? > 0.01 || !rank_and_kappa(&singular_values(&jf)?).0 {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let rep = probe.report(&state, &u, eps)?;
        max_rich = max_rich.max(probe.richardson_change(&state, &u, eps)?);
        ratios.push(rep.sqrt_big_m / rep.sqrt_m);
        if rep.bound_holds(BOUND_SLACK) {
            holds += 1;
        } else {
            failures.push(BoundFailure {
                state: state.clone(),
                action: u.clone(),
                kappa: finite(rep.kappa),
                bound: finite(rep.conditioning_bound()),
            });
        }
        if !rep.full_rank {
            deficient += 1;
            continue;
        }
        kappas.push(rep.kappa);
        let dz: Vec<f64> = (0..rep.b.nrows()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let da = pseudoinverse_action(&rep, &dz)?;
        max_res = max_res.max(normal_equation_residual(&rep.b, &da, &dz));
    }
    Ok(ConditioningSummary {
        env: bundle.env.id.name().to_string(),
        samples: n,
        rejected,
        holds,
        fraction: holds as f64 / n as f64,
        rank_deficient: deficient,
        max_residual: max_res,
        max_richardson_change: max_rich,
        median_kappa: median(kappas),
        median_isometry_ratio: median(ratios),
        failures,
    })
}

/// Action perturbation injected at every environment step.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    None,
    /// Constant offset in raw action units.
    Bias(Vec<f64>),
    /// Independent Gaussian noise in raw action units; the same sequence is
    /// replayed for every commit window.
    Gaussian { sigma: f64, seed: u64 },
}

impl Perturbation {
    fn hook(&self, task_index: usize) -> impl FnMut(usize, &mut Vec<f32>) + '_ {
        let mut rng: Option<Rng> = match self {
            Perturbation::Gaussian { seed, .. } => Some(SeedStream::new(*seed).derive_index(task_index as u64).rng()),
            _ => None,
        };
        move |_t, a: &mut Vec<f32>| match self {
            Perturbation::None => {}
            Perturbation::Bias(b) => {
                for (x, d) in a.iter_mut().zip(b) {
                    *x += *d as f32;
                }
            }
            Perturbation::Gaussian { sigma, .. } => {
                let rng = rng.as_mut().expect("seeded");
                for x in a.iter_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    *x += (sigma * n) as f32;
                }
            }
        }
    }
}

/// Mean state divergence at each window boundary for one commit window.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceCurve {
    pub window: usize,
    pub steps: Vec<usize>,
    pub mean_divergence: Vec<f64>,
    pub success_rate: f64,
}

impl DivergenceCurve {
    /// Divergence at the end of the first window.
    pub fn first_boundary(&self) -> Option<f64> {
        self.mean_divergence.first().copied()
    }
}

/// States visited by replaying recorded raw actions, padded with the final
/// state out to `len + 1` entries.
fn replay(env: &Env, start: &[f32], actions: &[Vec<f32>], len: usize) -> Result<Vec<Vec<f32>>> {
    let mut states = vec![start.to_vec()];
    for a in actions {
        let next = env.step(states.last().expect("non-empty"), a)?;
        states.push(next);
    }
    while states.len() < len + 1 {
        states.push(states.last().expect("non-empty").clone());
    }
    Ok(states)
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Run GC-IDM with each commit window under `perturbation` and measure how
/// far the visited states drift from the unperturbed window-1 run.
pub fn error_propagation_experiment(
    env: &Env,
    encoder: &dyn LatentModel,
    model: &GcIdmModel,
    tasks: &[GoalTask],
    windows: &[usize],
    perturbation: &Perturbation,
) -> Result<Vec<DivergenceCurve>> {
    ensure!(!tasks.is_empty(), "no tasks");
    ensure!(windows.iter().all(|&w| w >= 1), "commit windows must be positive");
    let mut references = Vec::with_capacity(tasks.len());
    for task in tasks {
        let rec = run_controller(env, task, encoder, model, 1, &mut |_, _| {})?;
        references.push(replay(env, &task.start_obs, &rec.raw_actions, task.budget)?);
    }
    let mut curves = Vec::new();
    for &w in windows {
        let boundaries: Vec<usize> = (1..).map(|k| k * w).take_while(|&s| s <= tasks[0].budget).collect();
        let mut sums = vec![0.0; boundaries.len()];
        let mut successes = 0;
        for (i, (task, reference)) in tasks.iter().zip(&references).enumerate() {
            ensure!(task.budget == tasks[0].budget, "tasks must share one budget");
            let mut hook = perturbation.hook(i);
            let rec = run_controller(env, task, encoder, model, w, &mut hook)?;
            successes += rec.success as usize;
            let states = replay(env, &task.start_obs, &rec.raw_actions, task.budget)?;
            for (sum, &s) in sums.iter_mut().zip(&boundaries) {
                *sum += distance(&states[s], &reference[s]);
            }
        }
        let n = tasks.len() as f64;
        curves.push(DivergenceCurve {
            window: w,
            steps: boundaries,
            mean_divergence: sums.into_iter().map(|s| s / n).collect(),
            success_rate: successes as f64 / n,
        });
    }
    Ok(curves)
}

/// Moments of one latent coordinate over a dataset, with a histogram against
/// the unit Gaussian.
#[derive(Clone, Debug, Serialize)]
pub struct MarginalSummary {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
    pub bin_centers: Vec<f64>,
    pub density: Vec<f64>,
    pub gaussian_density: Vec<f64>,
}

/// Write `episode,frame,goal_distance,z0..` for every frame plus
/// `<stem>.marginal.csv` for latent coordinate `dim`. The goal of each frame
/// is its episode's final observation.
pub fn dump_latent_geometry(bundle: &WorldModelBundle, ds: &DemoDataset, dim: usize, out: &Path) -> Result<MarginalSummary> {
    ensure!(dim < bundle.d, "marginal index {dim} outside latent width {}", bundle.d);
    let mut buf = Vec::new();
    let mut header = vec!["episode".to_string(), "frame".into(), "goal_distance".into()];
    header.extend((0..bundle.d).map(|i| format!("z{i}")));
    writeln!(buf, "{}", header.join(","))?;
    let mut column = Vec::new();
    for (e, ep) in ds.episodes.iter().enumerate() {
        let z = bundle.encode(ep.observations.view())?;
        let last = ep.observations.nrows() - 1;
        let goal: Vec<f32> = ep.obs(last).to_vec();
        for t in 0..=last {
            let obs: Vec<f32> = ep.obs(t).to_vec();
            write!(buf, "{e},{t},{}", ds.env.task_distance(&obs, &goal))?;
            for x in z.row(t) {
                write!(buf, ",{x}")?;
            }
            writeln!(buf)?;
            column.push(z[[t, dim]] as f64);
        }
    }
    crate::nn::checkpoint::write_atomic(out, &buf)?;
    let summary = marginal_summary(dim, &column, 40);
    let mut m = Vec::new();
    writeln!(m, "bin_center,density,gaussian_density")?;
    for i in 0..summary.bin_centers.len() {
        writeln!(m, "{},{},{}", summary.bin_centers[i], summary.density[i], summary.gaussian_density[i])?;
    }
    crate::nn::checkpoint::write_atomic(&out.with_extension("marginal.csv"), &m)?;
    Ok(summary)
}

fn marginal_summary(dim: usize, x: &[f64], bins: usize) -> MarginalSummary {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let (lo, hi) = (-4.0, 4.0);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in x {
        let k = ((v - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        }
    }
    let bin_centers: Vec<f64> = (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect();
    MarginalSummary {
        dim,
        mean,
        std,
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        gaussian_density: bin_centers.iter().map(|c| (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect(),
        bin_centers,
    }
}
