//! Train a small latent world model on PointMass and compare its held-out
//! one-step error with the untrained network and with predicting no motion.
//!
//! cargo run --release --example train_world_model

use latent_control::env::{collect_dataset, CollectConfig, Env, EnvId};
use latent_control::rng::SeedStream;
use latent_control::world_model::{prediction_mse, train_world_model, Transitions, WorldModelBundle, WorldModelConfig};

fn main() -> latent_control::Result<()> {
    let ds = collect_dataset(&Env::new(EnvId::PointMass), &CollectConfig { n_episodes: 200, ..Default::default() }, 42)?;
    let (train, test) = ds.split(0.9, 42)?;
    let cfg = WorldModelConfig { latent_dim: 16, hidden: 128, steps: 3000, log_every: 500, ..Default::default() };

    let (init, _) = train_world_model(&train, &WorldModelConfig { steps: 0, ..cfg.clone() }, &SeedStream::new(1))?;
    let (wm, curve) = train_world_model(&train, &cfg, &SeedStream::new(1))?;
    for row in &curve {
        println!("step {:>5}  pred {:.4}  sigreg {:.3}", row.step, row.pred_loss, row.sigreg);
    }

    // raw errors are not comparable across models since training rescales
    // the latents; compare each against predicting no motion in its own space
    let held = Transitions::from_dataset(&test, cfg.frameskip)?;
    let relative = |m: &WorldModelBundle| -> latent_control::Result<(f64, f64)> {
        let z0 = m.encode(held.obs.view())?;
        let z1 = m.encode(held.next_obs.view())?;
        let still = (&z1 - &z0).mapv(|x| (x as f64).powi(2)).mean().unwrap_or(0.0);
        let mse = prediction_mse(m, &held)?;
        Ok((mse, mse / still))
    };
    let (a, b) = (relative(&init)?, relative(&wm)?);
    println!("held-out mse: untrained {:.4} ({:.2} of no motion), trained {:.4} ({:.2} of no motion)", a.0, a.1, b.0, b.1);
    Ok(())
}
