//! The whole pipeline on one scene: train a small model, project the sparse
//! samples, generate candidates, elect the winner, and render heatmaps.
//!
//! ```bash
//! cargo run --release --example estimate_map
//! ```

use radiolam::augment::AugmentParams;
use radiolam::config::{ElectionSection, GenerationSection};
use radiolam::metrics::{mae, mse, psnr};
use radiolam::pipeline::{
    build_dataset, derive_seed, estimate_map, train_moe, EstimateOptions,
};
use radiolam::render::write_pgm;
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, SceneGenConfig};

fn main() -> radiolam::Result<()> {
    // A small training corpus; the held-out scene uses an unseen seed.
    let mut scenes = Vec::new();
    for &env in &EnvLabel::ALL {
        for i in 0..6 {
            let cfg = SceneGenConfig { env_label: env, ..Default::default() };
            scenes.push(generate_scene(&cfg, derive_seed(21, (env.index() * 64 + i) as u64))?);
        }
    }
    let aug = AugmentParams { path_loss_n: 1.0, ..Default::default() };
    let items = build_dataset(&scenes, 16, &aug, 3)?;
    let gen = GenerationSection {
        shared_epochs: 6,
        domain_epochs: 6,
        finetune_epochs: 2,
        ..Default::default()
    };
    println!("training a small mixture of experts on {} items...", items.len());
    let (moe, _) = train_moe(&scenes, &items, &gen, 9)?;

    let held_out = generate_scene(
        &SceneGenConfig { env_label: EnvLabel::Urban, ..Default::default() },
        9999,
    )?;
    let samples = draw_samples(&held_out, 16, 17)?;
    println!(
        "held-out urban scene, {} samples ({:.2}% of the grid)",
        samples.len(),
        100.0 * samples.len() as f64 / held_out.grid.n_cells() as f64
    );

    let out_dir = std::path::Path::new("target/example-output/estimate");
    std::fs::create_dir_all(out_dir)?;
    let opts = EstimateOptions {
        candidates: 8,
        ddim_steps: 10,
        rounds: 2,
        no_augment: false,
        no_election: false,
        seed: 4,
        augment: aug,
        election: ElectionSection::default(),
    };
    for h in 0..held_out.grid.h_dim {
        let outcome = estimate_map(&moe, &held_out.context(), &samples, h, &opts)?;
        let truth = &held_out.truth_maps[h];
        let report = outcome.report.as_ref().unwrap();
        println!(
            "h = {} ({:>5} m): winner {} of {} candidates | mae {:.4} mse {:.5} psnr {:.2} dB | sigma {:?}",
            h,
            held_out.grid.heights_m[h],
            report.winner_index,
            report.distances.len(),
            mae(truth, &outcome.map)?,
            mse(truth, &outcome.map)?,
            psnr(truth, &outcome.map)?,
            outcome.trace.iter().map(|r| r.sigma).collect::<Vec<_>>()
        );
        write_pgm(&outcome.map, &out_dir.join(format!("estimate_h{h}.pgm")))?;
        write_pgm(truth, &out_dir.join(format!("truth_h{h}.pgm")))?;
    }
    println!("heatmaps written to {}", out_dir.display());
    Ok(())
}
