//! Command implementations behind the `radiolam` binary. Each command is an
//! ordinary library function so integration tests can drive it in-process.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_variogram, kriging3d_estimate, rbf3d_estimate};
use crate::config::RunConfig;
use crate::election::{ElectionReport, ElectionRound};
use crate::error::{Error, Result};
use crate::generation::{load_checkpoint, save_checkpoint};
use crate::grid::Map2;
use crate::metrics::{mae, mse, psnr};
use crate::pipeline::{
    derive_seed, estimate_map, train_moe, EstimateOptions, TrainLog,
};
use crate::render::write_pgm;
use crate::rmt::Tensor;
use crate::scene::{
    draw_samples, generate_scene, load_samples, load_scene, save_samples, save_scene, EnvLabel,
    Scene,
};

pub const INDEX_NAME: &str = "index.json";

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    format: String,
    entries: Vec<DatasetEntry>,
}

#[derive(Serialize, Deserialize, Clone)]
struct DatasetEntry {
    dir: String,
    env: EnvLabel,
    seed: u64,
    k_samples: usize,
}

/// Generate the configured scene set with per-scene sample CSVs and an
/// index manifest. Deterministic given the config seed.
pub fn cmd_gen_scenes(config_path: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    let mut idx = 0usize;
    for &env in &cfg.scene.envs {
        let gen_cfg = cfg.scene.gen_config(env);
        for _ in 0..cfg.scene.scenes_per_env {
            let scene_seed = derive_seed(cfg.seed, 1000 + idx as u64);
            let scene = generate_scene(&gen_cfg, scene_seed)?;
            let dir_name = format!("scene_{idx:04}_{}", env.as_str());
            let scene_dir = out_dir.join(&dir_name);
            save_scene(&scene, &scene_dir)?;
            let samples =
                draw_samples(&scene, cfg.scene.k_samples, derive_seed(scene_seed, 17))?;
            save_samples(&samples, &scene_dir.join("samples.csv"))?;
            entries.push(DatasetEntry {
                dir: dir_name,
                env,
                seed: scene_seed,
                k_samples: cfg.scene.k_samples,
            });
            idx += 1;
        }
    }
    let index = DatasetIndex { format: "radiolam-dataset/1".into(), entries };
    fs::write(out_dir.join(INDEX_NAME), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

fn read_index(data_dir: &Path) -> Result<Vec<DatasetEntry>> {
    let p = data_dir.join(INDEX_NAME);
    if !p.exists() {
        return Err(Error::MissingFile(p));
    }
    let index: DatasetIndex = serde_json::from_slice(&fs::read(&p)?)?;
    Ok(index.entries)
}

fn load_dataset(data_dir: &Path) -> Result<Vec<(Scene, crate::scene::SampleSet)>> {
    read_index(data_dir)?
        .iter()
        .map(|e| {
            let dir = data_dir.join(&e.dir);
            let scene = load_scene(&dir)?;
            let samples = load_samples(&dir.join("samples.csv"), &scene.grid)?;
            Ok((scene, samples))
        })
        .collect()
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_train_logs(dir: &Path, log: &TrainLog) -> Result<()> {
    write_loss_csv(&dir.join("loss_shared.csv"), &log.shared)?;
    for (label, losses) in &log.domains {
        write_loss_csv(&dir.join(format!("loss_domain_{label}.csv")), losses)?;
    }
    write_loss_csv(&dir.join("loss_router.csv"), &log.router)?;
    write_loss_csv(&dir.join("loss_finetune.csv"), &log.finetune)?;
    Ok(())
}

/// Two-phase training over a generated dataset directory; writes the
/// checkpoint bundle plus per-phase loss CSVs.
pub fn cmd_train(config_path: &Path, data_dir: &Path, out_checkpoint: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let dataset = load_dataset(data_dir)?;
    let present: std::collections::BTreeSet<usize> =
        dataset.iter().map(|(s, _)| s.env_label.index()).collect();
    for env in EnvLabel::ALL {
        if !present.contains(&env.index()) {
            return Err(Error::InvalidConfig(format!(
                "dataset has no scenes for environment {:?}",
                env.as_str()
            )));
        }
    }
    let scenes: Vec<Scene> = dataset.iter().map(|(s, _)| s.clone()).collect();
    let mut items = Vec::new();
    for (scene, samples) in &dataset {
        for h in 0..scene.grid.h_dim {
            items.push(crate::pipeline::build_train_item(scene, samples, h, &cfg.augment)?);
        }
    }
    let (moe, log) = train_moe(&scenes, &items, &cfg.generation, cfg.seed)?;
    fs::create_dir_all(out_checkpoint)?;
    save_checkpoint(&moe, out_checkpoint)?;
    write_train_logs(out_checkpoint, &log)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub checkpoint: PathBuf,
    pub scene: PathBuf,
    pub samples: PathBuf,
    pub target_h: usize,
    pub out_prefix: PathBuf,
    pub candidates: usize,
    pub no_augment: bool,
    pub no_election: bool,
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct EstimateReportFile {
    target_h: usize,
    seed: u64,
    candidates: usize,
    no_augment: bool,
    no_election: bool,
    election: Option<ElectionReport>,
    rounds: Vec<ElectionRound>,
}

/// Full estimate path; writes `<prefix>.rmt`, `<prefix>.pgm`, and
/// `<prefix>.report.json`.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_seed_override();
            c
        }
    };
    let moe = load_checkpoint(&args.checkpoint)?;
    let scene = load_scene(&args.scene)?;
    let samples = load_samples(&args.samples, &scene.grid)?;
    if args.target_h >= scene.grid.h_dim {
        return Err(Error::OutOfRange(format!(
            "target height {} outside 0..{}",
            args.target_h, scene.grid.h_dim
        )));
    }
    let mut opts = EstimateOptions::from_config(&cfg);
    opts.candidates = args.candidates;
    opts.no_augment = args.no_augment;
    opts.no_election = args.no_election;
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let outcome = estimate_map(&moe, &scene.context(), &samples, args.target_h, &opts)?;

    let rmt_path = args.out_prefix.with_extension("rmt");
    outcome.map.to_tensor().save(&rmt_path)?;
    write_pgm(&outcome.map, &args.out_prefix.with_extension("pgm"))?;
    let report = EstimateReportFile {
        target_h: args.target_h,
        seed: opts.seed,
        candidates: opts.candidates,
        no_augment: opts.no_augment,
        no_election: opts.no_election,
        election: outcome.report,
        rounds: outcome.trace,
    };
    fs::write(
        args.out_prefix.with_extension("report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub data_dir: PathBuf,
    pub methods: Vec<String>,
    pub heights: Option<Vec<usize>>,
    pub out_csv: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_augment: bool,
    pub no_election: bool,
}

struct EvalRow {
    scene_id: String,
    env: EnvLabel,
    h_t: usize,
    method: String,
    mae: f64,
    mse: f64,
    psnr: f64,
}

fn estimate_with_method(
    method: &str,
    scene: &Scene,
    samples: &crate::scene::SampleSet,
    h: usize,
    cfg: &RunConfig,
    moe: Option<&crate::generation::MoEParams>,
    opts: &EstimateOptions,
) -> Result<Map2> {
    match method {
        "rbf" => rbf3d_estimate(samples, h),
        "kriging" => {
            let vg = fit_variogram(samples, cfg.baselines.variogram, cfg.baselines.bins)?;
            kriging3d_estimate(samples, h, vg)
        }
        "radiolam" => {
            let moe = moe.ok_or_else(|| {
                Error::InvalidConfig("method 'radiolam' needs --checkpoint".into())
            })?;
            Ok(estimate_map(moe, &scene.context(), samples, h, opts)?.map)
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown method {other:?} (expected rbf, kriging, or radiolam)"
        ))),
    }
}

/// Evaluate methods over a dataset directory and write per-scene rows plus
/// per-(method, environment, height) mean rows.
pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_seed_override();
            c
        }
    };
    let dataset = load_dataset(&args.data_dir)?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let moe = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let mut opts = EstimateOptions::from_config(&cfg);
    opts.no_augment = args.no_augment;
    opts.no_election = args.no_election;
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let entries = read_index(&args.data_dir)?;
    let heights: Vec<usize> = match &args.heights {
        Some(h) => h.clone(),
        None => (0..dataset[0].0.grid.h_dim).collect(),
    };

    let mut rows: Vec<EvalRow> = Vec::new();
    for ((scene, samples), entry) in dataset.iter().zip(&entries) {
        for method in &args.methods {
            for &h in &heights {
                if h >= scene.grid.h_dim {
                    return Err(Error::OutOfRange(format!(
                        "height index {h} outside 0..{}",
                        scene.grid.h_dim
                    )));
                }
                let mut per_scene = opts.clone();
                per_scene.seed = derive_seed(opts.seed, entry.seed ^ h as u64);
                let est = estimate_with_method(method, scene, samples, h, &cfg, moe.as_ref(), &per_scene)?;
                let truth = &scene.truth_maps[h];
                rows.push(EvalRow {
                    scene_id: entry.dir.clone(),
                    env: scene.env_label,
                    h_t: h,
                    method: method.clone(),
                    mae: mae(truth, &est)?,
                    mse: mse(truth, &est)?,
                    psnr: psnr(truth, &est)?,
                });
            }
        }
    }

    let mut out = String::from("scene_id,env,h_t,method,mae,mse,psnr\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scene_id,
            r.env.as_str(),
            r.h_t,
            r.method,
            r.mae,
            r.mse,
            r.psnr
        ));
    }
    // Mean rows grouped by (method, env, h_t), in first-seen order.
    let mut groups: Vec<(String, EnvLabel, usize)> = Vec::new();
    for r in &rows {
        let key = (r.method.clone(), r.env, r.h_t);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (method, env, h) in groups {
        let members: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| r.method == method && r.env == env && r.h_t == h)
            .collect();
        let n = members.len() as f64;
        let m_mae = members.iter().map(|r| r.mae).sum::<f64>() / n;
        let m_mse = members.iter().map(|r| r.mse).sum::<f64>() / n;
        let m_psnr = members.iter().map(|r| r.psnr).sum::<f64>() / n;
        out.push_str(&format!(
            "mean,{},{},{},{},{},{}\n",
            env.as_str(),
            h,
            method,
            m_mae,
            m_mse,
            m_psnr
        ));
    }
    fs::write(&args.out_csv, out)?;
    Ok(())
}

/// Render a 2D RMT tensor as a PGM heatmap.
pub fn cmd_render(map_rmt: &Path, out_pgm: &Path) -> Result<()> {
    let map = Map2::from_tensor(&Tensor::load(map_rmt)?)?;
    write_pgm(&map, out_pgm)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BaselineArgs {
    pub method: String,
    pub scene: PathBuf,
    pub samples: PathBuf,
    pub target_h: usize,
    pub out_rmt: PathBuf,
    pub config: Option<PathBuf>,
}

/// Run one interpolation baseline and write the estimated map.
pub fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let scene = load_scene(&args.scene)?;
    let samples = load_samples(&args.samples, &scene.grid)?;
    let est = match args.method.as_str() {
        "rbf" => rbf3d_estimate(&samples, args.target_h)?,
        "kriging" => {
            let vg = fit_variogram(&samples, cfg.baselines.variogram, cfg.baselines.bins)?;
            kriging3d_estimate(&samples, args.target_h, vg)?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown baseline {other:?} (expected rbf or kriging)"
            )))
        }
    };
    est.to_tensor().save(&args.out_rmt)?;
    Ok(())
}
