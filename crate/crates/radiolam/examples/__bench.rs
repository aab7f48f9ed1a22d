use std::time::Instant;

use radiolam::augment::AugmentParams;
use radiolam::config::GenerationSection;
use radiolam::generation::{make_schedule, train_expert, ExpertTrainConfig};
use radiolam::pipeline::{build_dataset, derive_seed};
use radiolam::scene::{generate_scene, EnvLabel, SceneGenConfig};

fn main() {
    let t0 = Instant::now();
    let scenes: Vec<_> = (0..8)
        .map(|i| {
            let env = EnvLabel::ALL[i % 4];
            generate_scene(&SceneGenConfig { env_label: env, ..Default::default() }, derive_seed(1, i as u64)).unwrap()
        })
        .collect();
    println!("scene gen: {:?} for 8 scenes", t0.elapsed());

    let t0 = Instant::now();
    let items = build_dataset(&scenes, 16, &AugmentParams::default(), 0).unwrap();
    println!("dataset build (augment x {}): {:?}", items.len(), t0.elapsed());

    let gen = GenerationSection::default();
    let schedule = make_schedule(gen.t_max, gen.beta_1, gen.beta_t).unwrap();
    let t0 = Instant::now();
    let epochs = 3;
    let cfg = ExpertTrainConfig { epochs, ..Default::default() };
    let (_net, losses) = train_expert(&items, &schedule, &cfg).unwrap();
    let steps = epochs * items.len();
    let dt = t0.elapsed();
    println!(
        "train: {} steps in {:?} -> {:.2} ms/step, losses {:?}",
        steps,
        dt,
        dt.as_secs_f64() * 1e3 / steps as f64,
        losses
    );

    // Forward-only cost (DDIM inner loop).
    let t0 = Instant::now();
    let cond = items[0].cond.assemble(&vec![0.5f32; 32 * 32]);
    let expert = radiolam::generation::ExpertParams::init("shared", 0);
    let mut n = 0;
    while t0.elapsed().as_secs_f64() < 2.0 {
        let _ = radiolam::generation::denoiser_forward(&expert, &cond, 100, 32, 32).unwrap();
        n += 1;
    }
    println!("forward: {:.3} ms", t0.elapsed().as_secs_f64() * 1e3 / n as f64);
}
