//! The 3D interpolation baselines head to head on one scene: Gaussian RBF
//! vs ordinary kriging with a fitted semivariogram.
//!
//! ```bash
//! cargo run --release --example compare_baselines
//! ```

use radiolam::baselines::{
    fit_variogram, kriging3d_estimate, rbf3d_estimate, VariogramKind,
};
use radiolam::metrics::{mae, mse, psnr};
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, SceneGenConfig};

fn main() -> radiolam::Result<()> {
    let cfg = SceneGenConfig { env_label: EnvLabel::Urban, ..Default::default() };
    let scene = generate_scene(&cfg, 12)?;

    for k in [16, 50, 150] {
        let samples = draw_samples(&scene, k, 99)?;
        let rate = 100.0 * k as f64 / scene.grid.n_cells() as f64;
        let vg = fit_variogram(&samples, VariogramKind::Exponential, 12)?;
        println!(
            "k = {k:<4} ({rate:.2}% sampling)  variogram: nugget {:.4}, sill {:.4}, range {:.1} cells",
            vg.nugget, vg.sill, vg.range_cells
        );
        println!(
            "  {:<10} {:>8} {:>9} {:>8}   (at each target height)",
            "method", "mae", "mse", "psnr"
        );
        for h in 0..scene.grid.h_dim {
            let truth = &scene.truth_maps[h];
            let rbf = rbf3d_estimate(&samples, h)?;
            let krig = kriging3d_estimate(&samples, h, vg)?;
            for (name, est) in [("rbf", &rbf), ("kriging", &krig)] {
                println!(
                    "  {:<10} {:>8.4} {:>9.5} {:>8.2}   h = {} ({} m)",
                    name,
                    mae(truth, est)?,
                    mse(truth, est)?,
                    psnr(truth, est)?,
                    h,
                    scene.grid.heights_m[h]
                );
            }
        }
    }
    Ok(())
}
