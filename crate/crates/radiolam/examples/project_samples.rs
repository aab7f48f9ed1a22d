//! The augmentation block in isolation: localize transmitters from sparse
//! samples, fit their power constants, and project every sample onto a
//! target plane.
//!
//! ```bash
//! cargo run --release --example project_samples
//! ```

use radiolam::augment::{augment, estimate_transmitters, fit_power_params, AugmentParams};
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, SceneGenConfig};

fn main() -> radiolam::Result<()> {
    let cfg = SceneGenConfig { env_label: EnvLabel::Suburban, ..Default::default() };
    let scene = generate_scene(&cfg, 3)?;
    let samples = draw_samples(&scene, 24, 5)?;
    let params = AugmentParams { path_loss_n: 1.0, ..Default::default() };

    println!("hidden transmitters (never shown to the estimator):");
    for tx in &scene.transmitters {
        println!("  true   ({:5.1}, {:5.1}, z={:4.1} cells)", tx.pos[0], tx.pos[1], tx.pos[2]);
    }
    let positions = estimate_transmitters(&samples, &scene.grid, &params)?;
    let fitted = fit_power_params(&samples, &positions, &params)?;
    println!("localized from {} samples:", samples.len());
    for tx in &fitted {
        println!(
            "  fitted ({:5.1}, {:5.1}, z={:4.1} cells)  K = {:.4}",
            tx.pos[0], tx.pos[1], tx.pos[2], tx.gain_const
        );
    }

    // Project everything onto the 30 m plane and compare against the truth.
    let target_h = 1;
    let projected = augment(&samples, &scene.context(), target_h, &params)?;
    println!("\nprojection onto the {} m plane:", scene.grid.heights_m[target_h]);
    println!("{:>5} {:>5} {:>6} {:>9} {:>9} {:>9}", "x", "y", "from", "r_hat", "truth", "status");
    for e in &projected.entries {
        let s = &samples.samples[e.source_index];
        let status = if e.pass_through {
            "coplanar"
        } else if e.dropped {
            "dropped"
        } else {
            "projected"
        };
        println!(
            "{:>5} {:>5} {:>5}m {:>9.3} {:>9.3} {:>9}",
            e.x,
            e.y,
            scene.grid.heights_m[s.h],
            e.rss_hat,
            scene.truth_maps[target_h].get(e.x, e.y),
            status
        );
    }

    let out = std::path::Path::new("target/example-output/projection.csv");
    std::fs::create_dir_all(out.parent().unwrap())?;
    projected.save_csv(out)?;
    println!("\nwrote {}", out.display());
    Ok(())
}
