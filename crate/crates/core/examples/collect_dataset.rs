//! Roll out the scripted expert in every environment, check that the stored
//! actions replay exactly, and save one dataset.
//!
//! cargo run --release --example collect_dataset

use latent_control::env::{collect_dataset, CollectConfig, DemoDataset, Env, EnvId};

fn main() -> latent_control::Result<()> {
    let cfg = CollectConfig { n_episodes: 40, ..Default::default() };
    for id in EnvId::ALL {
        let env = Env::new(id);
        let ds = collect_dataset(&env, &cfg, 42)?;
        let replay = ds.episodes.iter().map(|e| e.replay_error(&env)).collect::<latent_control::Result<Vec<_>>>()?;
        let worst = replay.iter().cloned().fold(0.0, f64::max);
        println!(
            "{:<11} obs {} act {} episodes {} frames {} worst replay error {worst:.1e}",
            id.name(),
            env.obs_dim(),
            env.act_dim(),
            ds.episodes.len(),
            ds.num_frames()
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("dataset.json");
    let ds = collect_dataset(&Env::new(EnvId::TwoRoom), &cfg, 7)?;
    ds.save(&path)?;
    let back = DemoDataset::load(&path)?;
    assert_eq!(back, ds);
    let (train, test) = ds.split(0.9, 42)?;
    println!("saved {} and split it {} / {} episodes", path.display(), train.episodes.len(), test.episodes.len());
    Ok(())
}
