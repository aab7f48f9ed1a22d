use radiolam::augment::AugmentParams;
use radiolam::config::GenerationSection;
use radiolam::election::select_best;
use radiolam::generation::generate_candidates;
use radiolam::grid::Map2;
use radiolam::metrics::mse;
use radiolam::pipeline::{build_dataset, conditioning, derive_seed, project_samples, train_moe};
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, Scene, SceneGenConfig};

fn gen_scenes(per_env: usize, seed_base: u64) -> Vec<Scene> {
    let mut scenes = Vec::new();
    for &env in &EnvLabel::ALL {
        for i in 0..per_env {
            let cfg = SceneGenConfig { env_label: env, ..Default::default() };
            scenes
                .push(generate_scene(&cfg, derive_seed(seed_base, (env.index() * 1000 + i) as u64)).unwrap());
        }
    }
    scenes
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let beta_t: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let prior_on: bool = args.get(2).map(|s| s == "on").unwrap_or(true);
    println!("beta_t {beta_t}, prior {prior_on}");
    let train_scenes = gen_scenes(20, 100);
    let test_scenes = gen_scenes(4, 900);
    let aug = AugmentParams { path_loss_n: 1.0, ..Default::default() };
    let items = build_dataset(&train_scenes, 16, &aug, 5).unwrap();
    let gen = GenerationSection {
        beta_t,
        shared_epochs: 14,
        domain_epochs: 14,
        finetune_epochs: 3,
        ..Default::default()
    };
    let (moe, _) = train_moe(&train_scenes, &items, &gen, 42).unwrap();
    println!("trained");

    for h in 0..3 {
        let (mut w_mse, mut best_mse, mut mean_cand_mse, mut ens_mse, mut anchor_mse) =
            (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut prior_mse = 0.0;
        let mut krig_mse = 0.0;
        let mut n = 0.0;
        for (si, scene) in test_scenes.iter().enumerate() {
            let samples = draw_samples(scene, 16, derive_seed(777, si as u64)).unwrap();
            let ctx = scene.context();
            let proj = project_samples(&ctx, &samples, h, &aug, false).unwrap();
            let mut cond = conditioning(&ctx, &proj, h).unwrap();
            let prior_mse_v = mse(&scene.truth_maps[h], &cond.prior).unwrap();
            if !prior_on {
                cond.prior = Map2::zeros(32, 32);
            }
            let set = generate_candidates(&moe, &cond, 16, 10, derive_seed(9, (si * 8 + h) as u64), 0.05)
                .unwrap();
            let truth = &scene.truth_maps[h];
            let (_, report) = select_best(&set, &proj, &samples).unwrap();
            let mses: Vec<f64> =
                set.candidates.iter().map(|c| mse(truth, c).unwrap()).collect();
            w_mse += mses[report.winner_index];
            best_mse += mses.iter().cloned().fold(f64::INFINITY, f64::min);
            mean_cand_mse += mses.iter().sum::<f64>() / mses.len() as f64;
            // Ensemble average of candidates (diagnostic only).
            let mut ens = Map2::zeros(32, 32);
            for c in &set.candidates {
                for (e, v) in ens.data_mut().iter_mut().zip(c.data()) {
                    *e += v / 16.0;
                }
            }
            ens_mse += mse(truth, &ens).unwrap();
            // Anchor field error at anchor sites.
            let (mut ae, mut ac) = (0.0, 0);
            for e in proj.entries.iter().filter(|e| !e.dropped) {
                ae += (e.rss_hat as f64 - truth.get(e.x, e.y) as f64).powi(2);
                ac += 1;
            }
            anchor_mse += ae / ac.max(1) as f64;
            prior_mse += prior_mse_v;
            let vg = radiolam::baselines::fit_variogram(&samples, radiolam::baselines::VariogramKind::Exponential, 12).unwrap();
            krig_mse += mse(truth, &radiolam::baselines::kriging3d_estimate(&samples, h, vg).unwrap()).unwrap();
            n += 1.0;
        }
        println!(
            "h{h}: winner {:.5} | best {:.5} | mean {:.5} | ens {:.5} | anchors {:.5} | prior {:.5} | krig {:.5}",
            w_mse / n,
            best_mse / n,
            mean_cand_mse / n,
            ens_mse / n,
            anchor_mse / n,
            prior_mse / n,
            krig_mse / n
        );
    }
}
