//! Train a small mixture-of-experts generator end to end (cold start of the
//! shared expert, per-environment domain experts, and the router, then the
//! joint fine-tuning phase) and save a reloadable checkpoint.
//!
//! Runs in about a minute on a laptop core; bump `scenes_per_env` and the
//! epoch counts for a model that is actually worth electing from.
//!
//! ```bash
//! cargo run --release --example train_tiny_moe
//! ```

use radiolam::augment::AugmentParams;
use radiolam::config::GenerationSection;
use radiolam::generation::{load_checkpoint, save_checkpoint};
use radiolam::pipeline::{build_dataset, derive_seed, train_moe};
use radiolam::scene::{generate_scene, EnvLabel, SceneGenConfig};

fn main() -> radiolam::Result<()> {
    let scenes_per_env = 6;
    let mut scenes = Vec::new();
    for &env in &EnvLabel::ALL {
        for i in 0..scenes_per_env {
            let cfg = SceneGenConfig { env_label: env, ..Default::default() };
            scenes.push(generate_scene(&cfg, derive_seed(1, (env.index() * 100 + i) as u64))?);
        }
    }
    println!("generated {} scenes", scenes.len());

    let aug = AugmentParams { path_loss_n: 1.0, ..Default::default() };
    let items = build_dataset(&scenes, 16, &aug, 2)?;
    println!("built {} conditioned training items", items.len());

    let gen = GenerationSection {
        shared_epochs: 6,
        domain_epochs: 6,
        router_epochs: 20,
        finetune_epochs: 2,
        ..Default::default()
    };
    let (moe, log) = train_moe(&scenes, &items, &gen, 42)?;
    println!(
        "shared loss {:.4} -> {:.4} over {} epochs",
        log.shared.first().unwrap(),
        log.shared.last().unwrap(),
        log.shared.len()
    );
    for (label, losses) in &log.domains {
        println!("  domain {label:<12} {:.4} -> {:.4}", losses.first().unwrap(), losses.last().unwrap());
    }
    println!("router loss {:.4} -> {:.4}", log.router.first().unwrap(), log.router.last().unwrap());
    println!("fine-tune loss trajectory {:?}", log.finetune);

    let dir = std::path::Path::new("target/example-output/checkpoint");
    save_checkpoint(&moe, dir)?;
    let reloaded = load_checkpoint(dir)?;
    assert_eq!(moe, reloaded);
    println!("checkpoint saved to {} and reloads bit-exactly", dir.display());
    Ok(())
}
