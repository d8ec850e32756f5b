//! Local linear analysis of a trained world model: the latent action
//! Jacobian and its conditioning bound, drift under a constant action bias
//! for different commit windows, and a dump of the latent geometry.
//!
//! cargo run --release --example diagnostics

use latent_control::diagnostics::{conditioning_sweep, dump_latent_geometry, error_propagation_experiment, latent_action_jacobian, Perturbation, DEFAULT_EPS};
use latent_control::env::{collect_dataset, CollectConfig, Env, EnvId};
use latent_control::gc_idm::{train_gc_idm, GcIdmConfig};
use latent_control::rng::SeedStream;
use latent_control::world_model::{train_world_model, WorldModelConfig};

fn main() -> latent_control::Result<()> {
    let env = Env::new(EnvId::TwoRoom);
    let ds = collect_dataset(&env, &CollectConfig { n_episodes: 150, ..Default::default() }, 42)?;
    let (wm, _) = train_world_model(&ds, &WorldModelConfig { latent_dim: 16, hidden: 128, steps: 1000, ..Default::default() }, &SeedStream::new(1))?;

    let state = ds.episodes[0].obs(0).mapv(f64::from).to_vec();
    let r = latent_action_jacobian(&wm, &state, &[0.01, -0.01], DEFAULT_EPS)?;
    println!("one Jacobian: conditioning bound {:.2}", r.conditioning_bound());

    let c = conditioning_sweep(&wm, &ds, 100, DEFAULT_EPS, &SeedStream::new(2))?;
    println!(
        "bound holds on {}/{} samples ({} rejected), max residual {:.1e}, median kappa {:.2}",
        c.holds, c.samples, c.rejected, c.max_residual, c.median_kappa
    );

    let (idm, _) = train_gc_idm(&ds, &wm, &GcIdmConfig { hidden: 128, layers: 2, epochs: 100, ..Default::default() }, &SeedStream::new(3))?;
    let tasks = ds.sample_tasks(10, 25, 50, &mut SeedStream::new(4).rng())?;
    let spec = env.action_spec();
    let bias = (0..spec.dim()).map(|i| 0.1 * spec.half_range(i)).collect();
    for curve in error_propagation_experiment(&env, &wm, &idm, &tasks, &[1, 5, 25], &Perturbation::Bias(bias))? {
        let end = curve.mean_divergence.last().copied().unwrap_or(0.0);
        println!("window {:>2}: final divergence {end:.4}, success {:.0}%", curve.window, 100.0 * curve.success_rate);
    }

    let dir = tempfile::tempdir()?;
    let m = dump_latent_geometry(&wm, &ds, 0, &dir.path().join("latent_geometry.csv"))?;
    println!("latent coordinate 0: mean {:.3}, std {:.3}", m.mean, m.std);
    Ok(())
}
