use std::time::Instant;

use radiolam::augment::AugmentParams;
use radiolam::baselines::{fit_variogram, kriging3d_estimate, rbf3d_estimate};
use radiolam::config::{ElectionSection, GenerationSection, RunConfig};
use radiolam::metrics::mse;
use radiolam::pipeline::{build_dataset, derive_seed, estimate_map, train_moe, EstimateOptions};
use radiolam::scene::{draw_samples, generate_scene, EnvLabel, Scene, SceneGenConfig};

fn gen_scenes(per_env: usize, seed_base: u64) -> Vec<Scene> {
    let mut scenes = Vec::new();
    for &env in &EnvLabel::ALL {
        for i in 0..per_env {
            let cfg = SceneGenConfig { env_label: env, ..Default::default() };
            scenes.push(generate_scene(&cfg, derive_seed(seed_base, (env.index() * 1000 + i) as u64)).unwrap());
        }
    }
    scenes
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_env_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let per_env_test: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(6);
    let m_cand: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);

    let t0 = Instant::now();
    let train_scenes = gen_scenes(per_env_train, 100);
    let test_scenes = gen_scenes(per_env_test, 900);
    println!("scenes: {} train, {} test, {:?}", train_scenes.len(), test_scenes.len(), t0.elapsed());

    let aug = AugmentParams { path_loss_n: 1.0, ..Default::default() };
    let t0 = Instant::now();
    let items = build_dataset(&train_scenes, 16, &aug, 5).unwrap();
    println!("items: {} in {:?}", items.len(), t0.elapsed());

    let gen = GenerationSection {
        beta_t: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.02),
        shared_epochs: epochs,
        domain_epochs: epochs,
        finetune_epochs: (epochs / 4).max(1),
        ..Default::default()
    };
    let t0 = Instant::now();
    let (moe, log) = train_moe(&train_scenes, &items, &gen, 42).unwrap();
    println!(
        "train {:?}; shared loss {:.4}->{:.4}, ft {:?}",
        t0.elapsed(),
        log.shared.first().unwrap(),
        log.shared.last().unwrap(),
        log.finetune
    );

    // Evaluate on held-out scenes.
    let cfg = RunConfig::default();
    let opts_full = EstimateOptions {
        candidates: m_cand,
        ddim_steps: 10,
        rounds: 1,
        no_augment: false,
        no_election: false,
        seed: 7,
        augment: aug.clone(),
        election: ElectionSection::default(),
    };
    let mut opts_noaug = opts_full.clone();
    opts_noaug.no_augment = true;
    let mut opts_noelec = opts_full.clone();
    opts_noelec.no_election = true;

    let nh = test_scenes[0].grid.h_dim;
    // per (env, h): sums over scenes
    let mut acc: std::collections::BTreeMap<(usize, usize, &'static str), (f64, usize)> =
        std::collections::BTreeMap::new();
    let t0 = Instant::now();
    for (si, scene) in test_scenes.iter().enumerate() {
        let samples = draw_samples(scene, 16, derive_seed(777, si as u64)).unwrap();
        let vg = fit_variogram(&samples, cfg.baselines.variogram, cfg.baselines.bins).unwrap();
        for h in 0..nh {
            let truth = &scene.truth_maps[h];
            let e = scene.env_label.index();
            let mut add = |name: &'static str, est: &radiolam::grid::Map2| {
                let v = mse(truth, est).unwrap();
                let ent = acc.entry((e, h, name)).or_insert((0.0, 0));
                ent.0 += v;
                ent.1 += 1;
            };
            let mut o = opts_full.clone();
            o.seed = derive_seed(7, (si * 10 + h) as u64);
            let full = estimate_map(&moe, &scene.context(), &samples, h, &o).unwrap();
            add("full", &full.map);
            let mut o = opts_noaug.clone();
            o.seed = derive_seed(7, (si * 10 + h) as u64);
            let na = estimate_map(&moe, &scene.context(), &samples, h, &o).unwrap();
            add("noaug", &na.map);
            let mut o = opts_noelec.clone();
            o.seed = derive_seed(7, (si * 10 + h) as u64);
            let ne = estimate_map(&moe, &scene.context(), &samples, h, &o).unwrap();
            add("noelec", &ne.map);
            add("rbf", &rbf3d_estimate(&samples, h).unwrap());
            add("krig", &kriging3d_estimate(&samples, h, vg).unwrap());
        }
    }
    println!("eval {:?}", t0.elapsed());

    for h in 0..nh {
        println!("--- height {h} ---");
        for name in ["full", "noaug", "noelec", "rbf", "krig"] {
            let mut per_env = Vec::new();
            for e in 0..4 {
                let (s, n) = acc[&(e, h, name)];
                per_env.push(s / n as f64);
            }
            let macro_mean = per_env.iter().sum::<f64>() / 4.0;
            println!(
                "{name:>7}: macro {:.5} | rural {:.5} suburban {:.5} urban {:.5} dense {:.5}",
                macro_mean, per_env[0], per_env[1], per_env[2], per_env[3]
            );
        }
    }
}
