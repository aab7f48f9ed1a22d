//! DDPM training of experts and the joint fine-tuning phase.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::generation::cond::StaticCond;
use crate::generation::expert::{backward, forward_trace, ExpertParams, PARAM_COUNT};
use crate::generation::nn::Adam;
use crate::generation::router::{
    apply_gradients, backward_from_weight_grad, route_for_training,
};
use crate::generation::schedule::DiffusionSchedule;
use crate::generation::MoEParams;
use crate::grid::Map2;

/// One training instance: the static conditioning for a (scene, samples,
/// target height) triple and the ground-truth map of that plane.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub cond: StaticCond,
    pub truth: Map2,
    /// Index into the fixed environment ordering.
    pub env_index: usize,
}

#[derive(Debug, Clone)]
pub struct ExpertTrainConfig {
    pub expert_id: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Warm-start weights; fresh seeded init when absent.
    pub init_from: Option<ExpertParams>,
}

impl Default for ExpertTrainConfig {
    fn default() -> Self {
        ExpertTrainConfig {
            expert_id: "shared".into(),
            epochs: 20,
            lr: 1e-3,
            seed: 0,
            init_from: None,
        }
    }
}

fn diffuse_into(
    truth: &Map2,
    t: usize,
    eps: &[f32],
    schedule: &DiffusionSchedule,
) -> Vec<f32> {
    let ab = schedule.alpha_bars[t];
    let (cs, cn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    truth.data().iter().zip(eps).map(|(x, e)| cs * x + cn * e).collect()
}

/// Standard DDPM objective: uniform timestep, standard-normal noise, mean
/// squared error between the predicted and the injected noise, Adam updates.
/// Single-threaded and deterministic given the seed.
pub fn train_expert(
    items: &[TrainItem],
    schedule: &DiffusionSchedule,
    cfg: &ExpertTrainConfig,
) -> Result<(ExpertParams, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "expert {:?} received an empty training set",
            cfg.expert_id
        )));
    }
    let mut net = match &cfg.init_from {
        Some(p) => {
            let mut p = p.clone();
            p.expert_id = cfg.expert_id.clone();
            p
        }
        None => ExpertParams::init(cfg.expert_id.clone(), cfg.seed),
    };
    let mut adam = Adam::new(PARAM_COUNT);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let item = &items[i];
            let (nx, ny) = (item.truth.nx(), item.truth.ny());
            let n = nx * ny;
            let t = rng.gen_range(0..schedule.t_max);
            let eps: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            let x_t = diffuse_into(&item.truth, t, &eps, schedule);
            let cond = item.cond.assemble(&x_t);
            let (pred, trace) = forward_trace(&net, &cond, t, nx, ny)?;
            let mut grad_out = vec![0.0f32; n];
            let mut loss = 0.0f64;
            for j in 0..n {
                let r = pred[j] - eps[j];
                loss += (r as f64) * (r as f64);
                grad_out[j] = 2.0 * r / n as f32;
            }
            epoch_loss += loss / n as f64;
            let grads = backward(&net, &trace, &grad_out);
            adam.step(cfg.lr, net.params_mut(), &grads);
        }
        losses.push(epoch_loss / items.len() as f64);
    }
    Ok((net, losses))
}

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig { epochs: 4, lr: 2e-4, seed: 0 }
    }
}

/// Joint phase: the fused prediction over all experts with full router
/// weights replaces the single-expert prediction, and every parameter group
/// (shared, domains, router) updates simultaneously.
pub fn fine_tune(
    moe: &MoEParams,
    items: &[TrainItem],
    cfg: &FineTuneConfig,
) -> Result<(MoEParams, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("fine-tune received an empty training set".into()));
    }
    moe.validate()?;
    let mut moe = moe.clone();
    let g = moe.guidance;
    let e_count = moe.domain_experts.len();
    let mut adam_shared = Adam::new(PARAM_COUNT);
    let mut adam_domain: Vec<Adam> = (0..e_count).map(|_| Adam::new(PARAM_COUNT)).collect();
    let mut adam_router = Adam::new(moe.router.params().len());
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x94D0_49BB_1331_11EB);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let item = &items[i];
            let (nx, ny) = (item.truth.nx(), item.truth.ny());
            let n = nx * ny;
            let t = rng.gen_range(0..moe.schedule.t_max);
            let eps: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            let x_t = diffuse_into(&item.truth, t, &eps, &moe.schedule);
            let cond = item.cond.assemble(&x_t);

            let (weights, rtrace) =
                route_for_training(&moe.router, &item.cond.building_slice, &item.cond.terrain_norm)?;
            let (eps_s, trace_s) = forward_trace(&moe.shared, &cond, t, nx, ny)?;
            let mut eps_e = Vec::with_capacity(e_count);
            let mut trace_e = Vec::with_capacity(e_count);
            for expert in &moe.domain_experts {
                let (p, tr) = forward_trace(expert, &cond, t, nx, ny)?;
                eps_e.push(p);
                trace_e.push(tr);
            }

            // fused = eps_s + g * sum_e w_e (eps_e - eps_s)
            let mut fused = eps_s.clone();
            for (e, pe) in eps_e.iter().enumerate() {
                let we = (g * weights[e]) as f32;
                for (f, (p, s)) in fused.iter_mut().zip(pe.iter().zip(&eps_s)) {
                    *f += we * (p - s);
                }
            }
            let mut grad_fused = vec![0.0f32; n];
            let mut loss = 0.0f64;
            for j in 0..n {
                let r = fused[j] - eps[j];
                loss += (r as f64) * (r as f64);
                grad_fused[j] = 2.0 * r / n as f32;
            }
            epoch_loss += loss / n as f64;

            // Shared expert: coefficient (1 - g * sum w).
            let w_sum: f64 = weights.iter().sum();
            let c_s = (1.0 - g * w_sum) as f32;
            let grad_s: Vec<f32> = grad_fused.iter().map(|v| c_s * v).collect();
            let gs = backward(&moe.shared, &trace_s, &grad_s);
            adam_shared.step(cfg.lr, moe.shared.params_mut(), &gs);

            // Domain experts and the router weight gradient.
            let mut grad_w = vec![0.0f64; e_count];
            for e in 0..e_count {
                let ce = (g * weights[e]) as f32;
                let grad_e: Vec<f32> = grad_fused.iter().map(|v| ce * v).collect();
                let ge = backward(&moe.domain_experts[e], &trace_e[e], &grad_e);
                adam_domain[e].step(cfg.lr, moe.domain_experts[e].params_mut(), &ge);
                grad_w[e] = g
                    * grad_fused
                        .iter()
                        .zip(eps_e[e].iter().zip(&eps_s))
                        .map(|(gf, (p, s))| *gf as f64 * (*p as f64 - *s as f64))
                        .sum::<f64>();
            }
            let gr = backward_from_weight_grad(&moe.router, &rtrace, &grad_w);
            apply_gradients(&mut moe.router, &mut adam_router, cfg.lr, &gr);
        }
        losses.push(epoch_loss / items.len() as f64);
    }
    Ok((moe, losses))
}

/// Deterministic evaluation of the fused DDPM objective over a dataset,
/// with draws derived from the seed. Used to compare model states.
pub fn fused_loss(moe: &MoEParams, items: &[TrainItem], seed: u64) -> Result<f64> {
    let g = moe.guidance;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0f64;
    for item in items {
        let (nx, ny) = (item.truth.nx(), item.truth.ny());
        let n = nx * ny;
        let t = rng.gen_range(0..moe.schedule.t_max);
        let eps: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let x_t = diffuse_into(&item.truth, t, &eps, &moe.schedule);
        let cond = item.cond.assemble(&x_t);
        let (weights, _) =
            route_for_training(&moe.router, &item.cond.building_slice, &item.cond.terrain_norm)?;
        let (eps_s, _) = forward_trace(&moe.shared, &cond, t, nx, ny)?;
        let mut fused = eps_s.clone();
        for (e, expert) in moe.domain_experts.iter().enumerate() {
            let (pe, _) = forward_trace(expert, &cond, t, nx, ny)?;
            let we = (g * weights[e]) as f32;
            for (f, (p, s)) in fused.iter_mut().zip(pe.iter().zip(&eps_s)) {
                *f += we * (p - s);
            }
        }
        total += fused
            .iter()
            .zip(&eps)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    Ok(total / items.len() as f64)
}
