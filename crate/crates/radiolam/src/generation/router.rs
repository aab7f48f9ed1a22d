//! The compact routing classifier over domain experts.
//!
//! conv 3x3 (2 -> 8) + ReLU, global average pool, dense 8 -> E, softmax.
//! Inputs are the building layout slice and the normalized terrain.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::generation::nn::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, softmax, Adam,
};
use crate::grid::Map2;

pub const ROUTER_IN: usize = 2;
pub const ROUTER_HIDDEN: usize = 8;

const CONV_W: usize = ROUTER_HIDDEN * ROUTER_IN * 9;

/// Weights of the router. The dense head has one row per domain expert, in
/// the order of `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub labels: Vec<String>,
    params: Vec<f32>,
}

impl RouterParams {
    pub fn param_count(n_experts: usize) -> usize {
        CONV_W + ROUTER_HIDDEN + n_experts * ROUTER_HIDDEN + n_experts
    }

    pub fn init(labels: Vec<String>, seed: u64) -> Self {
        let e = labels.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; Self::param_count(e)];
        let conv_bound = 1.0 / ((ROUTER_IN * 9) as f32).sqrt();
        for p in &mut params[..CONV_W] {
            *p = rng.gen_range(-conv_bound..conv_bound);
        }
        let dense_bound = 1.0 / (ROUTER_HIDDEN as f32).sqrt();
        let dense_range = CONV_W + ROUTER_HIDDEN..CONV_W + ROUTER_HIDDEN + e * ROUTER_HIDDEN;
        for p in &mut params[dense_range] {
            *p = rng.gen_range(-dense_bound..dense_bound);
        }
        RouterParams { labels, params }
    }

    pub fn zeroed(labels: Vec<String>) -> Self {
        let e = labels.len();
        RouterParams { labels, params: vec![0.0; Self::param_count(e)] }
    }

    pub fn from_params(labels: Vec<String>, params: Vec<f32>) -> Result<Self> {
        if params.len() != Self::param_count(labels.len()) {
            return Err(Error::ArchitectureMismatch(format!(
                "router expects {} parameters for {} experts, got {}",
                Self::param_count(labels.len()),
                labels.len(),
                params.len()
            )));
        }
        Ok(RouterParams { labels, params })
    }

    pub fn n_experts(&self) -> usize {
        self.labels.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let e = self.n_experts();
        let conv_b = CONV_W;
        let dense_w = conv_b + ROUTER_HIDDEN;
        let dense_b = dense_w + e * ROUTER_HIDDEN;
        (conv_b, dense_w, dense_b)
    }
}

struct RouterTrace {
    input: Vec<f32>,
    a1: Vec<f32>,
    gap: Vec<f32>,
    weights: Vec<f64>,
    h: usize,
    w: usize,
}

fn forward_trace(router: &RouterParams, input: &[f32], h: usize, w: usize) -> (Vec<f64>, RouterTrace) {
    let p = &router.params;
    let (off_cb, off_dw, off_db) = router.offsets();
    let plane = h * w;
    let e = router.n_experts();
    let mut a1 = vec![0.0f32; ROUTER_HIDDEN * plane];
    conv3x3_forward(&p[..CONV_W], &p[off_cb..off_dw], input, ROUTER_IN, ROUTER_HIDDEN, h, w, &mut a1);
    let gap: Vec<f32> = (0..ROUTER_HIDDEN)
        .map(|c| {
            a1[c * plane..(c + 1) * plane].iter().map(|v| v.max(0.0)).sum::<f32>() / plane as f32
        })
        .collect();
    let logits = dense_forward(&p[off_dw..off_db], &p[off_db..], &gap, e);
    let weights = softmax(&logits.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let trace = RouterTrace { input: input.to_vec(), a1, gap, weights: weights.clone(), h, w };
    (weights, trace)
}

fn backward(router: &RouterParams, trace: &RouterTrace, grad_logits: &[f64]) -> Vec<f32> {
    let p = &router.params;
    let (_, off_dw, off_db) = router.offsets();
    let plane = trace.h * trace.w;
    let mut g = vec![0.0f32; p.len()];
    let gl: Vec<f32> = grad_logits.iter().map(|&v| v as f32).collect();
    let mut grad_gap = vec![0.0f32; ROUTER_HIDDEN];
    {
        let (rest, gdb) = g.split_at_mut(off_db);
        let gdw = &mut rest[off_dw..];
        dense_backward(&p[off_dw..off_db], &trace.gap, &gl, gdw, gdb, Some(&mut grad_gap));
    }
    // Through the average pool and ReLU.
    let mut grad_a1 = vec![0.0f32; ROUTER_HIDDEN * plane];
    for c in 0..ROUTER_HIDDEN {
        let gc = grad_gap[c] / plane as f32;
        for (ga, a) in grad_a1[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&trace.a1[c * plane..(c + 1) * plane])
        {
            if *a > 0.0 {
                *ga = gc;
            }
        }
    }
    {
        let (gcw, rest) = g.split_at_mut(CONV_W);
        let gcb = &mut rest[..ROUTER_HIDDEN];
        conv3x3_backward(
            &p[..CONV_W],
            &trace.input,
            &grad_a1,
            ROUTER_IN,
            ROUTER_HIDDEN,
            trace.h,
            trace.w,
            gcw,
            gcb,
            None,
        );
    }
    g
}

fn stack_input(building_slice: &Map2, terrain_norm: &Map2) -> Result<Vec<f32>> {
    if !building_slice.same_dims(terrain_norm) {
        return Err(Error::DimensionMismatch {
            expected: format!("[{}, {}]", building_slice.nx(), building_slice.ny()),
            got: format!("[{}, {}]", terrain_norm.nx(), terrain_norm.ny()),
        });
    }
    let mut input = Vec::with_capacity(2 * building_slice.data().len());
    input.extend_from_slice(building_slice.data());
    input.extend_from_slice(terrain_norm.data());
    Ok(input)
}

/// Softmax weights over the domain experts plus the top-1 index
/// (ties resolve to the lowest index).
pub fn route(
    router: &RouterParams,
    building_slice: &Map2,
    terrain_norm: &Map2,
) -> Result<(Vec<f64>, usize)> {
    let input = stack_input(building_slice, terrain_norm)?;
    let (weights, _) = forward_trace(router, &input, building_slice.nx(), building_slice.ny());
    let top = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    Ok((weights, top))
}

pub struct RouterTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RouterTrainConfig {
    fn default() -> Self {
        RouterTrainConfig { epochs: 30, lr: 1e-3, seed: 0 }
    }
}

/// Cross-entropy training over pre-labeled (building slice, terrain) pairs.
/// `labels[i]` of each item indexes into `label_names`.
pub fn train_router(
    dataset: &[(Map2, Map2, usize)],
    label_names: Vec<String>,
    cfg: &RouterTrainConfig,
) -> Result<(RouterParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("router dataset is empty".into()));
    }
    let distinct: std::collections::BTreeSet<usize> =
        dataset.iter().map(|(_, _, l)| *l).collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidConfig(
            "router training needs at least 2 distinct labels".into(),
        ));
    }
    if *distinct.iter().max().unwrap() >= label_names.len() {
        return Err(Error::OutOfRange("label index outside label_names".into()));
    }
    let mut router = RouterParams::init(label_names, cfg.seed);
    let mut adam = Adam::new(router.params.len());
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (bs, tn, label) = &dataset[i];
            let input = stack_input(bs, tn)?;
            let (weights, trace) = forward_trace(&router, &input, bs.nx(), bs.ny());
            epoch_loss += -(weights[*label].max(1e-12)).ln();
            let grad_logits: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(j, w)| w - if j == *label { 1.0 } else { 0.0 })
                .collect();
            let grads = backward(&router, &trace, &grad_logits);
            adam.step(cfg.lr, &mut router.params, &grads);
        }
        losses.push(epoch_loss / dataset.len() as f64);
    }
    Ok((router, losses))
}

/// Fine-tune support: forward with cached trace and backward from a gradient
/// on the softmax weights.
pub(crate) fn route_for_training(
    router: &RouterParams,
    building_slice: &Map2,
    terrain_norm: &Map2,
) -> Result<(Vec<f64>, RouterFineTrace)> {
    let input = stack_input(building_slice, terrain_norm)?;
    let (weights, trace) = forward_trace(router, &input, building_slice.nx(), building_slice.ny());
    Ok((weights, RouterFineTrace(trace)))
}

pub(crate) struct RouterFineTrace(RouterTrace);

pub(crate) fn backward_from_weight_grad(
    router: &RouterParams,
    trace: &RouterFineTrace,
    grad_weights: &[f64],
) -> Vec<f32> {
    let grad_logits =
        crate::generation::nn::softmax_backward(&trace.0.weights, grad_weights);
    backward(router, &trace.0, &grad_logits)
}

pub(crate) fn apply_gradients(
    router: &mut RouterParams,
    adam: &mut Adam,
    lr: f64,
    grads: &[f32],
) {
    adam.step(lr, &mut router.params, grads);
}
