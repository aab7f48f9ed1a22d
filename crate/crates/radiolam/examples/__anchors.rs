use radiolam::augment::{augment, AugmentParams};
use radiolam::pipeline::derive_seed;
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, SceneGenConfig};

fn main() {
    for (n, max_tx) in [(1.0f64, 5usize), (1.0, 3), (1.0, 2), (0.5, 5), (0.5, 3), (0.5, 2), (0.3, 3), (0.3, 2), (2.0, 3)] {
        let mut err_by_h = [0.0f64; 3];
        let mut cnt_by_h = [0usize; 3];
        let mut dropped = 0usize;
        let mut total = 0usize;
        for (si, &env) in EnvLabel::ALL.iter().cycle().take(16).enumerate() {
            let cfg = SceneGenConfig { env_label: env, ..Default::default() };
            let scene = generate_scene(&cfg, derive_seed(3, si as u64)).unwrap();
            let samples = draw_samples(&scene, 16, derive_seed(4, si as u64)).unwrap();
            let params = AugmentParams { path_loss_n: n, max_transmitters: max_tx, ..Default::default() };
            for h in 0..3 {
                let proj = match augment(&samples, &scene.context(), h, &params) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                for e in proj.entries.iter().filter(|e| !e.pass_through) {
                    total += 1;
                    if e.dropped {
                        dropped += 1;
                        continue;
                    }
                    let t = scene.truth_maps[h].get(e.x, e.y);
                    err_by_h[h] += (e.rss_hat as f64 - t as f64).abs();
                    cnt_by_h[h] += 1;
                }
            }
        }
        println!(
            "n={n:4} mtx={max_tx}: MAE h0 {:.4} ({}), h1 {:.4} ({}), h2 {:.4} ({}), dropped {}/{}",
            err_by_h[0] / cnt_by_h[0].max(1) as f64,
            cnt_by_h[0],
            err_by_h[1] / cnt_by_h[1].max(1) as f64,
            cnt_by_h[1],
            err_by_h[2] / cnt_by_h[2].max(1) as f64,
            cnt_by_h[2],
            dropped,
            total
        );
    }
}
