//! End-to-end tests of the command layer, run in-process on tiny configs.

use std::fs;
use std::path::{Path, PathBuf};

use radiolam::cli::{
    cmd_baseline, cmd_estimate, cmd_eval, cmd_gen_scenes, cmd_render, cmd_train, BaselineArgs,
    EstimateArgs, EvalArgs,
};
use radiolam::config::RunConfig;
use radiolam::error::Error;
use radiolam::grid::Map2;
use radiolam::rmt::Tensor;

/// A configuration small enough for fast in-test training.
fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.scene.grid.x_dim = 16;
    cfg.scene.grid.y_dim = 16;
    cfg.scene.grid.heights_m = vec![1.5, 30.0];
    cfg.scene.grid.h_dim = 2;
    cfg.scene.scenes_per_env = 2;
    cfg.scene.k_samples = 10;
    cfg.augment.path_loss_n = 1.0;
    cfg.generation.t_max = 40;
    cfg.generation.ddim_steps = 5;
    cfg.generation.candidates = 3;
    cfg.generation.shared_epochs = 2;
    cfg.generation.domain_epochs = 1;
    cfg.generation.router_epochs = 4;
    cfg.generation.finetune_epochs = 1;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.json");
    cfg.save(&p).unwrap();
    p
}

/// Recursive byte comparison of two directories.
fn assert_dirs_identical(a: &Path, b: &Path) {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut names_b: Vec<String> = fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names_b.sort();
    assert_eq!(names, names_b, "directory listings differ");
    for n in names {
        let (pa, pb) = (a.join(&n), b.join(&n));
        if pa.is_dir() {
            assert_dirs_identical(&pa, &pb);
        } else {
            assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap(), "file {n} differs");
        }
    }
}

#[test]
fn gen_scenes_is_deterministic_and_validates_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &tiny_config());

    let out1 = tmp.path().join("d1");
    let out2 = tmp.path().join("d2");
    cmd_gen_scenes(&cfg_path, &out1).unwrap();
    cmd_gen_scenes(&cfg_path, &out2).unwrap();
    assert_dirs_identical(&out1, &out2);

    assert!(matches!(
        cmd_gen_scenes(Path::new("/nonexistent/cfg.json"), &out1),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn full_train_estimate_eval_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let cfg_path = write_config(tmp.path(), &cfg);
    let data = tmp.path().join("data");
    cmd_gen_scenes(&cfg_path, &data).unwrap();

    // Train twice: checkpoints must be byte-identical.
    let ck1 = tmp.path().join("ck1");
    let ck2 = tmp.path().join("ck2");
    cmd_train(&cfg_path, &data, &ck1).unwrap();
    cmd_train(&cfg_path, &data, &ck2).unwrap();
    assert_dirs_identical(&ck1, &ck2);

    // Loss CSVs carry one row per epoch.
    let shared = fs::read_to_string(ck1.join("loss_shared.csv")).unwrap();
    assert_eq!(shared.lines().count(), 1 + cfg.generation.shared_epochs);
    let ft = fs::read_to_string(ck1.join("loss_finetune.csv")).unwrap();
    assert_eq!(ft.lines().count(), 1 + cfg.generation.finetune_epochs);
    let router = fs::read_to_string(ck1.join("loss_router.csv")).unwrap();
    assert_eq!(router.lines().count(), 1 + cfg.generation.router_epochs);

    // Checkpoint loads back.
    let moe = radiolam::generation::load_checkpoint(&ck1).unwrap();
    assert_eq!(moe.domain_experts.len(), 4);

    // Estimate writes the three output files, deterministically.
    let scene_dir = data.join("scene_0000_rural");
    let samples = scene_dir.join("samples.csv");
    let mk_args = |prefix: &Path| EstimateArgs {
        checkpoint: ck1.clone(),
        scene: scene_dir.clone(),
        samples: samples.clone(),
        target_h: 1,
        out_prefix: prefix.to_path_buf(),
        candidates: 3,
        no_augment: false,
        no_election: false,
        seed: Some(5),
        config: Some(cfg_path.clone()),
    };
    let p1 = tmp.path().join("est1");
    let p2 = tmp.path().join("est2");
    cmd_estimate(&mk_args(&p1)).unwrap();
    cmd_estimate(&mk_args(&p2)).unwrap();
    for ext in ["rmt", "pgm", "report.json"] {
        let f1 = p1.with_extension(ext);
        assert!(f1.exists(), "{ext} missing");
        assert_eq!(fs::read(&f1).unwrap(), fs::read(p2.with_extension(ext)).unwrap());
    }

    // Out-of-range height fails.
    let mut bad = mk_args(&tmp.path().join("bad"));
    bad.target_h = 5;
    assert!(cmd_estimate(&bad).is_err());

    // The no-election ablation returns candidate 0 of the master seed,
    // which equals a direct DDIM sample with the derived seed.
    let pne = tmp.path().join("noelec");
    let mut ne_args = mk_args(&pne);
    ne_args.no_election = true;
    ne_args.candidates = 1;
    cmd_estimate(&ne_args).unwrap();
    let winner = Map2::from_tensor(&Tensor::load(&pne.with_extension("rmt")).unwrap()).unwrap();

    let scene = radiolam::scene::load_scene(&scene_dir).unwrap();
    let sample_set = radiolam::scene::load_samples(&samples, &scene.grid).unwrap();
    let ctx = scene.context();
    let projected = radiolam::pipeline::project_samples(
        &ctx,
        &sample_set,
        1,
        &cfg.augment,
        false,
    )
    .unwrap();
    let cond = radiolam::pipeline::conditioning(&ctx, &projected, 1).unwrap();
    let direct = radiolam::generation::ddim_sample(
        &moe,
        &cond,
        cfg.generation.ddim_steps,
        radiolam::generation::candidate_seed(5, 0),
        cfg.election.sigma0,
    )
    .unwrap();
    assert_eq!(winner, direct, "no-election winner must equal plain DDIM candidate 0");

    // Ablations compose: generation alone still runs.
    let mut both = mk_args(&tmp.path().join("bare"));
    both.no_augment = true;
    both.no_election = true;
    cmd_estimate(&both).unwrap();

    // Eval: 2 methods x 8 scenes x 1 height -> 16 result rows plus one mean
    // row per (method, env, height) group.
    let out_csv = tmp.path().join("eval.csv");
    cmd_eval(&EvalArgs {
        data_dir: data.clone(),
        methods: vec!["rbf".into(), "kriging".into()],
        heights: Some(vec![0]),
        out_csv: out_csv.clone(),
        checkpoint: None,
        config: Some(cfg_path.clone()),
        seed: None,
        no_augment: false,
        no_election: false,
    })
    .unwrap();
    let text = fs::read_to_string(&out_csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let scene_rows: Vec<&str> = rows.iter().filter(|r| !r.starts_with("mean,")).copied().collect();
    let mean_rows: Vec<&str> = rows.iter().filter(|r| r.starts_with("mean,")).copied().collect();
    assert_eq!(scene_rows.len(), 16);
    assert_eq!(mean_rows.len(), 8); // 2 methods x 4 envs x 1 height

    // Mean rows match a brute-force re-average of the per-scene rows.
    for mr in &mean_rows {
        let cols: Vec<&str> = mr.split(',').collect();
        let (env, h, method) = (cols[1], cols[2], cols[3]);
        let members: Vec<Vec<&str>> = scene_rows
            .iter()
            .map(|r| r.split(',').collect::<Vec<&str>>())
            .filter(|c| c[1] == env && c[2] == h && c[3] == method)
            .collect();
        assert!(!members.is_empty());
        for (ci, name) in [(4, "mae"), (5, "mse")] {
            let mean: f64 = members.iter().map(|c| c[ci].parse::<f64>().unwrap()).sum::<f64>()
                / members.len() as f64;
            let reported: f64 = cols[ci].parse().unwrap();
            assert!(
                (mean - reported).abs() < 1e-12,
                "{name} mean mismatch: {mean} vs {reported}"
            );
        }
    }

    // Unknown method errors.
    assert!(cmd_eval(&EvalArgs {
        data_dir: data.clone(),
        methods: vec!["spline".into()],
        heights: None,
        out_csv: tmp.path().join("x.csv"),
        checkpoint: None,
        config: None,
        seed: None,
        no_augment: false,
        no_election: false,
    })
    .is_err());

    // Baseline subcommand writes a clamped map.
    let brmt = tmp.path().join("rbf.rmt");
    cmd_baseline(&BaselineArgs {
        method: "rbf".into(),
        scene: scene_dir.clone(),
        samples: samples.clone(),
        target_h: 0,
        out_rmt: brmt.clone(),
        config: None,
    })
    .unwrap();
    let m = Map2::from_tensor(&Tensor::load(&brmt).unwrap()).unwrap();
    assert!(m.min_value() >= 0.0 && m.max_value() <= 1.0);
}

/// Minimal independent PGM reader for the render round-trip check.
fn parse_pgm(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let text_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .unwrap();
    let header = std::str::from_utf8(&bytes[..text_end]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next().unwrap(), "P5");
    let dims: Vec<usize> =
        lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(lines.next().unwrap(), "255");
    (dims[0], dims[1], bytes[text_end + 1..].to_vec())
}

#[test]
fn render_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let map = Map2::from_fn(9, 7, |x, y| ((x * 31 + y * 17) % 100) as f32 / 99.0);
    let rmt = tmp.path().join("m.rmt");
    map.to_tensor().save(&rmt).unwrap();
    let pgm = tmp.path().join("m.pgm");
    cmd_render(&rmt, &pgm).unwrap();

    let (w, h, px) = parse_pgm(&fs::read(&pgm).unwrap());
    assert_eq!((w, h), (7, 9));
    assert_eq!(px.len(), 63);
    for x in 0..9 {
        for y in 0..7 {
            let expect = (255.0 * map.get(x, y)).round() as u8;
            assert_eq!(px[x * 7 + y], expect, "pixel ({x}, {y})");
        }
    }

    // Constant maps hit the exact rails.
    let zeros = tmp.path().join("z.rmt");
    Map2::zeros(4, 4).to_tensor().save(&zeros).unwrap();
    cmd_render(&zeros, &pgm).unwrap();
    let (_, _, px) = parse_pgm(&fs::read(&pgm).unwrap());
    assert!(px.iter().all(|&p| p == 0));
    let ones = tmp.path().join("o.rmt");
    Map2::filled(4, 4, 1.0).to_tensor().save(&ones).unwrap();
    cmd_render(&ones, &pgm).unwrap();
    let (_, _, px) = parse_pgm(&fs::read(&pgm).unwrap());
    assert!(px.iter().all(|&p| p == 255));
}

/// The seed environment variable overrides the config seed. Exercised
/// through the real binary so the override cannot leak into other tests.
#[test]
fn seed_env_var_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.scene.scenes_per_env = 1;
    cfg.scene.envs = vec![radiolam::scene::EnvLabel::Rural];
    let cfg_path = write_config(tmp.path(), &cfg);
    let bin = env!("CARGO_BIN_EXE_radiolam");

    let run = |out: &Path, env_seed: Option<&str>| {
        let mut c = std::process::Command::new(bin);
        c.arg("gen-scenes").arg(&cfg_path).arg(out);
        if let Some(s) = env_seed {
            c.env("RADIOLAM_SEED", s);
        } else {
            c.env_remove("RADIOLAM_SEED");
        }
        let status = c.status().unwrap();
        assert!(status.success());
    };
    let base = tmp.path().join("base");
    let overridden = tmp.path().join("over");
    let same_as_base = tmp.path().join("same");
    run(&base, None);
    run(&overridden, Some("999"));
    run(&same_as_base, Some("11")); // equals the config seed

    assert_dirs_identical(&base, &same_as_base);
    let a = fs::read(base.join("scene_0000_rural/truth.rmt")).unwrap();
    let b = fs::read(overridden.join("scene_0000_rural/truth.rmt")).unwrap();
    assert_ne!(a, b, "override must change the generated scenes");
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let bin = env!("CARGO_BIN_EXE_radiolam");
    let status = std::process::Command::new(bin)
        .args(["render", "/nonexistent/in.rmt", "/tmp/out.pgm"])
        .status()
        .unwrap();
    assert!(!status.success());
}
