//! End-to-end wiring: dataset preparation, two-phase training of the
//! mixture of experts, and the estimate path (project, generate, elect).

use crate::augment::{augment, AugmentParams, ProjectedSet, SceneContext};
use crate::config::{ElectionSection, GenerationSection};
use crate::election::{
    select_best, update_noise, ElectionReport, ElectionRound, NoiseCtlState,
};
use crate::error::{Error, Result};
use crate::generation::{
    fine_tune, generate_candidates, make_schedule, train_expert, train_router, ExpertTrainConfig,
    FineTuneConfig, MoEParams, RouterTrainConfig, StaticCond, TrainItem, TrainingMeta,
};
use crate::grid::Map2;
use crate::scene::{draw_samples, EnvLabel, SampleSet, Scene};

/// Deterministic per-purpose seed derivation.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
    z = (z ^ (z >> 32)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 32)
}

/// Build the projection for one target plane, honoring the ablation switch.
pub fn project_samples(
    ctx: &SceneContext<'_>,
    samples: &SampleSet,
    target_h: usize,
    params: &AugmentParams,
    no_augment: bool,
) -> Result<ProjectedSet> {
    if no_augment {
        Ok(ProjectedSet::pass_through_only(samples, target_h))
    } else {
        augment(samples, ctx, target_h, params)
    }
}

/// Static conditioning channels for one target plane.
pub fn conditioning(
    ctx: &SceneContext<'_>,
    projected: &ProjectedSet,
    target_h: usize,
) -> Result<StaticCond> {
    StaticCond::build(
        projected,
        ctx.buildings.slice_at(target_h),
        &ctx.terrain.elevation,
        ctx.grid,
        target_h,
    )
}

/// One (scene, samples, target height) triple turned into a training item.
pub fn build_train_item(
    scene: &Scene,
    samples: &SampleSet,
    target_h: usize,
    params: &AugmentParams,
) -> Result<TrainItem> {
    let ctx = scene.context();
    let projected = project_samples(&ctx, samples, target_h, params, false)?;
    let cond = conditioning(&ctx, &projected, target_h)?;
    Ok(TrainItem {
        cond,
        truth: scene.truth_maps[target_h].clone(),
        env_index: scene.env_label.index(),
    })
}

/// Training items for every height of every scene. Sample sets are drawn
/// deterministically per scene from the master seed.
pub fn build_dataset(
    scenes: &[Scene],
    k_samples: usize,
    params: &AugmentParams,
    master_seed: u64,
) -> Result<Vec<TrainItem>> {
    let mut items = Vec::with_capacity(scenes.len() * 3);
    for (i, scene) in scenes.iter().enumerate() {
        let samples = draw_samples(scene, k_samples, derive_seed(master_seed, i as u64))?;
        for h in 0..scene.grid.h_dim {
            items.push(build_train_item(scene, &samples, h, params)?);
        }
    }
    Ok(items)
}

/// Per-phase loss trajectories from a full training run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub shared: Vec<f64>,
    pub domains: Vec<(String, Vec<f64>)>,
    pub router: Vec<f64>,
    pub finetune: Vec<f64>,
}

/// Two-phase training: cold start (shared expert on everything, one expert
/// per environment on its own subset, router on the labeled layout data),
/// then joint fine-tuning of all parameter groups.
pub fn train_moe(
    scenes: &[Scene],
    items: &[TrainItem],
    gen: &GenerationSection,
    seed: u64,
) -> Result<(MoEParams, TrainLog)> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    let schedule = make_schedule(gen.t_max, gen.beta_1, gen.beta_t)?;
    let mut log = TrainLog::default();

    let (shared, shared_losses) = train_expert(
        items,
        &schedule,
        &ExpertTrainConfig {
            expert_id: "shared".into(),
            epochs: gen.shared_epochs,
            lr: gen.lr,
            seed: derive_seed(seed, 1),
            init_from: None,
        },
    )?;
    log.shared = shared_losses;

    let mut domain_experts = Vec::with_capacity(EnvLabel::ALL.len());
    for env in EnvLabel::ALL {
        let subset: Vec<TrainItem> = items
            .iter()
            .filter(|it| it.env_index == env.index())
            .cloned()
            .collect();
        if subset.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no training scenes for domain {:?}",
                env.as_str()
            )));
        }
        // Domain experts specialize from the cold-started shared weights.
        let (expert, losses) = train_expert(
            &subset,
            &schedule,
            &ExpertTrainConfig {
                expert_id: env.as_str().into(),
                epochs: gen.domain_epochs,
                lr: gen.lr,
                seed: derive_seed(seed, 2 + env.index() as u64),
                init_from: Some(shared.clone()),
            },
        )?;
        log.domains.push((env.as_str().to_string(), losses));
        domain_experts.push(expert);
    }

    // Router learns environments from the pre-labeled layout data: every
    // height slice of every scene, paired with the normalized terrain.
    let h_max = *scenes[0].grid.heights_m.last().unwrap() as f32;
    let mut router_data = Vec::new();
    for scene in scenes {
        let terrain_norm = Map2::from_vec(
            scene.grid.x_dim,
            scene.grid.y_dim,
            scene.terrain.elevation.data().iter().map(|v| v / h_max).collect(),
        )?;
        for h in 0..scene.grid.h_dim {
            router_data.push((
                scene.buildings.slice_at(h),
                terrain_norm.clone(),
                scene.env_label.index(),
            ));
        }
    }
    let (router, router_losses) = train_router(
        &router_data,
        EnvLabel::ALL.iter().map(|e| e.as_str().to_string()).collect(),
        &RouterTrainConfig { epochs: gen.router_epochs, lr: 1e-3, seed: derive_seed(seed, 7) },
    )?;
    log.router = router_losses;

    let moe = MoEParams {
        shared,
        domain_experts,
        router,
        schedule,
        guidance: gen.guidance,
        meta: TrainingMeta {
            seed,
            shared_epochs: gen.shared_epochs,
            domain_epochs: gen.domain_epochs,
            router_epochs: gen.router_epochs,
            finetune_epochs: gen.finetune_epochs,
            train_items: items.len(),
            final_loss: 0.0,
        },
    };

    let (mut moe, ft_losses) = fine_tune(
        &moe,
        items,
        &FineTuneConfig {
            epochs: gen.finetune_epochs,
            lr: gen.finetune_lr,
            seed: derive_seed(seed, 8),
        },
    )?;
    moe.meta.final_loss = ft_losses.last().copied().unwrap_or(0.0);
    log.finetune = ft_losses;
    Ok((moe, log))
}

/// Knobs of the estimate path.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub candidates: usize,
    pub ddim_steps: usize,
    pub rounds: usize,
    pub no_augment: bool,
    pub no_election: bool,
    pub seed: u64,
    pub augment: AugmentParams,
    pub election: ElectionSection,
}

impl EstimateOptions {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        EstimateOptions {
            candidates: cfg.generation.candidates,
            ddim_steps: cfg.generation.ddim_steps,
            rounds: cfg.election.rounds,
            no_augment: false,
            no_election: false,
            seed: cfg.seed,
            augment: cfg.augment,
            election: cfg.election.clone(),
        }
    }
}

/// Result of one estimate run.
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub map: Map2,
    pub report: Option<ElectionReport>,
    pub trace: Vec<ElectionRound>,
    pub projected: ProjectedSet,
}

/// The full estimate path for one target plane: project the samples,
/// generate candidates, and elect (unless ablated away).
pub fn estimate_map(
    moe: &MoEParams,
    ctx: &SceneContext<'_>,
    samples: &SampleSet,
    target_h: usize,
    opts: &EstimateOptions,
) -> Result<EstimateOutcome> {
    if target_h >= ctx.grid.h_dim {
        return Err(Error::OutOfRange(format!(
            "target height {target_h} outside 0..{}",
            ctx.grid.h_dim
        )));
    }
    let projected = project_samples(ctx, samples, target_h, &opts.augment, opts.no_augment)?;
    let cond = conditioning(ctx, &projected, target_h)?;

    if opts.no_election {
        // Ablation: candidate 0 stands in for the elected winner.
        let set = generate_candidates(
            moe,
            &cond,
            1,
            opts.ddim_steps,
            opts.seed,
            opts.election.sigma0,
        )?;
        return Ok(EstimateOutcome {
            map: set.candidates.into_iter().next().unwrap(),
            report: None,
            trace: Vec::new(),
            projected,
        });
    }

    let mut state = NoiseCtlState {
        sigma_t: opts.election.sigma0,
        delta_sigma: opts.election.delta_sigma,
        sigma_max: opts.election.sigma_max,
        // Placeholder until calibrated from the first round when unset.
        var_threshold: opts.election.var_threshold.unwrap_or(1.0),
    };
    state.validate()?;
    if opts.rounds == 0 {
        return Err(Error::InvalidConfig("need at least one election round".into()));
    }
    let mut best: Option<(f64, Map2, ElectionReport)> = None;
    let mut trace = Vec::with_capacity(opts.rounds);
    for round in 0..opts.rounds {
        let set = generate_candidates(
            moe,
            &cond,
            opts.candidates,
            opts.ddim_steps,
            opts.seed.wrapping_add(round as u64),
            state.sigma_t,
        )?;
        let (winner, mut report) = select_best(&set, &projected, samples)?;
        if round == 0 && opts.election.var_threshold.is_none() {
            // Per-run calibration: the first batch's variance becomes V.
            state.var_threshold = report.variance.max(1e-12);
        }
        let best_d = report.distances[report.winner_index];
        state = update_noise(&state, report.variance);
        report.updated_sigma = state.sigma_t;
        trace.push(ElectionRound {
            round,
            sigma: set.sigma_trace[0],
            variance: report.variance,
            best_distance: best_d,
        });
        if best.as_ref().map_or(true, |(d, _, _)| best_d < *d) {
            best = Some((best_d, winner, report));
        }
    }
    let (_, map, report) = best.unwrap();
    Ok(EstimateOutcome { map, report: Some(report), trace, projected })
}
