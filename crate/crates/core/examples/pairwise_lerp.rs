//! Pairwise inverse dynamics: decode a straight latent path into actions,
//! check the decoder against ground-truth pairs, then plan open loop with
//! and without refinement.
//!
//! cargo run --release --example pairwise_lerp

use latent_control::env::{collect_dataset, CollectConfig, Env, EnvId};
use latent_control::pairwise_idm::{oracle_eval, pairwise_episode, train_pairwise, PairwiseConfig, RefineConfig};
use latent_control::rng::SeedStream;
use latent_control::world_model::{train_world_model, WorldModelConfig};

fn main() -> latent_control::Result<()> {
    let env = Env::new(EnvId::PointMass);
    let ds = collect_dataset(&env, &CollectConfig { n_episodes: 200, ..Default::default() }, 42)?;
    let (train, test) = ds.split(0.9, 42)?;
    let (wm, _) = train_world_model(&train, &WorldModelConfig { latent_dim: 16, hidden: 128, steps: 1500, ..Default::default() }, &SeedStream::new(1))?;
    let (model, _) = train_pairwise(&train, &wm, 0.0, &PairwiseConfig { hidden: 128, epochs: 100, ..Default::default() }, &SeedStream::new(2))?;
    let m = oracle_eval(&model, &test, &wm, 0.0, &mut SeedStream::new(3).rng())?;
    println!("held-out decoding: mse {:.4}  cosine {:.3}  r2 {:.3}", m.mse, m.cosine_sim, m.r2);

    let tasks = test.sample_tasks(20, 25, 50, &mut SeedStream::new(4).rng())?;
    let arms = [("plain lerp", RefineConfig::default()), ("k=2, 4 candidates", RefineConfig { k: 2, n_candidates: 4, ..Default::default() })];
    for (name, cfg) in arms {
        let (mut wins, mut calls) = (0, 0);
        for (i, task) in tasks.iter().enumerate() {
            let rec = pairwise_episode(&env, task, &model, &wm, &cfg, &SeedStream::new(5).derive_index(i as u64))?;
            wins += rec.success as usize;
            calls += rec.predictor_calls;
        }
        println!("{name:<18} success {wins}/{}  predictor calls {calls}", tasks.len());
    }
    Ok(())
}
