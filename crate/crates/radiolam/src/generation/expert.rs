//! The reference denoiser: a compact convolutional epsilon-predictor with a
//! timestep-conditioned per-channel bias.
//!
//! Architecture: conv 3x3 (6 -> 32) + ReLU with a timestep bias added after
//! the convolution, two residual conv 3x3 (32 -> 32) + ReLU blocks, and a
//! linear conv 3x3 (32 -> 1) head. The timestep enters through a 32-dim
//! sinusoidal embedding mapped by a dense layer to per-channel biases.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::generation::nn::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, timestep_embedding,
};

/// Conditioning channels: noisy map, projected values, sample mask, building
/// slice, normalized terrain, broadcast normalized target height.
pub const COND_CHANNELS: usize = 6;
pub const HIDDEN: usize = 32;
pub const TEMB_DIM: usize = 32;

const CONV1_W: usize = HIDDEN * COND_CHANNELS * 9;
const TEMB_W: usize = HIDDEN * TEMB_DIM;
const RES_W: usize = HIDDEN * HIDDEN * 9;
const OUT_W: usize = HIDDEN * 9;

// Flat parameter layout offsets.
const OFF_CONV1_W: usize = 0;
const OFF_CONV1_B: usize = OFF_CONV1_W + CONV1_W;
const OFF_TEMB_W: usize = OFF_CONV1_B + HIDDEN;
const OFF_TEMB_B: usize = OFF_TEMB_W + TEMB_W;
const OFF_RES1_W: usize = OFF_TEMB_B + HIDDEN;
const OFF_RES1_B: usize = OFF_RES1_W + RES_W;
const OFF_RES2_W: usize = OFF_RES1_B + HIDDEN;
const OFF_RES2_B: usize = OFF_RES2_W + RES_W;
const OFF_OUT_W: usize = OFF_RES2_B + HIDDEN;
const OFF_OUT_B: usize = OFF_OUT_W + OUT_W;
pub const PARAM_COUNT: usize = OFF_OUT_B + 1;

/// Weights of one denoiser expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    /// `"shared"` or the specialized domain label.
    pub expert_id: String,
    params: Vec<f32>,
}

impl ExpertParams {
    /// Fresh weights, uniform in plus/minus `1/sqrt(fan_in)`, biases zero.
    pub fn init(expert_id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha12Rng| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        fill(OFF_CONV1_W..OFF_CONV1_B, COND_CHANNELS * 9, &mut rng);
        fill(OFF_TEMB_W..OFF_TEMB_B, TEMB_DIM, &mut rng);
        fill(OFF_RES1_W..OFF_RES1_B, HIDDEN * 9, &mut rng);
        fill(OFF_RES2_W..OFF_RES2_B, HIDDEN * 9, &mut rng);
        fill(OFF_OUT_W..OFF_OUT_B, HIDDEN * 9, &mut rng);
        ExpertParams { expert_id: expert_id.into(), params }
    }

    pub fn zeroed(expert_id: impl Into<String>) -> Self {
        ExpertParams { expert_id: expert_id.into(), params: vec![0.0; PARAM_COUNT] }
    }

    pub fn from_params(expert_id: impl Into<String>, params: Vec<f32>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::ArchitectureMismatch(format!(
                "expert expects {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        Ok(ExpertParams { expert_id: expert_id.into(), params })
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Cached activations of one forward pass, for the backward pass.
pub(crate) struct DenoiserTrace {
    h: usize,
    w: usize,
    cond: Vec<f32>,
    emb: Vec<f32>,
    a1: Vec<f32>,
    h1: Vec<f32>,
    a2: Vec<f32>,
    h2: Vec<f32>,
    a3: Vec<f32>,
    h3: Vec<f32>,
}

fn check_cond(cond: &[f32], h: usize, w: usize) -> Result<()> {
    if cond.len() != COND_CHANNELS * h * w {
        return Err(Error::DimensionMismatch {
            expected: format!("{} conditioning values", COND_CHANNELS * h * w),
            got: format!("{}", cond.len()),
        });
    }
    Ok(())
}

pub(crate) fn forward_trace(
    expert: &ExpertParams,
    cond: &[f32],
    t: usize,
    h: usize,
    w: usize,
) -> Result<(Vec<f32>, DenoiserTrace)> {
    check_cond(cond, h, w)?;
    let p = &expert.params;
    let plane = h * w;
    let emb = timestep_embedding(t, TEMB_DIM);
    let tbias = dense_forward(&p[OFF_TEMB_W..OFF_TEMB_B], &p[OFF_TEMB_B..OFF_RES1_W], &emb, HIDDEN);

    let mut a1 = vec![0.0f32; HIDDEN * plane];
    conv3x3_forward(
        &p[OFF_CONV1_W..OFF_CONV1_B],
        &p[OFF_CONV1_B..OFF_TEMB_W],
        cond,
        COND_CHANNELS,
        HIDDEN,
        h,
        w,
        &mut a1,
    );
    for c in 0..HIDDEN {
        let b = tbias[c];
        for v in &mut a1[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
    let h1: Vec<f32> = a1.iter().map(|v| v.max(0.0)).collect();

    let mut a2 = vec![0.0f32; HIDDEN * plane];
    conv3x3_forward(&p[OFF_RES1_W..OFF_RES1_B], &p[OFF_RES1_B..OFF_RES2_W], &h1, HIDDEN, HIDDEN, h, w, &mut a2);
    let h2: Vec<f32> = h1.iter().zip(&a2).map(|(x, a)| x + a.max(0.0)).collect();

    let mut a3 = vec![0.0f32; HIDDEN * plane];
    conv3x3_forward(&p[OFF_RES2_W..OFF_RES2_B], &p[OFF_RES2_B..OFF_OUT_W], &h2, HIDDEN, HIDDEN, h, w, &mut a3);
    let h3: Vec<f32> = h2.iter().zip(&a3).map(|(x, a)| x + a.max(0.0)).collect();

    let mut out = vec![0.0f32; plane];
    conv3x3_forward(&p[OFF_OUT_W..OFF_OUT_B], &p[OFF_OUT_B..PARAM_COUNT], &h3, HIDDEN, 1, h, w, &mut out);

    let trace = DenoiserTrace { h, w, cond: cond.to_vec(), emb, a1, h1, a2, h2, a3, h3 };
    Ok((out, trace))
}

/// Backward pass; returns the parameter gradient in the flat layout.
pub(crate) fn backward(
    expert: &ExpertParams,
    trace: &DenoiserTrace,
    grad_out: &[f32],
) -> Vec<f32> {
    let p = &expert.params;
    let (h, w) = (trace.h, trace.w);
    let plane = h * w;
    let mut g = vec![0.0f32; PARAM_COUNT];

    // Output head.
    let mut grad_h3 = vec![0.0f32; HIDDEN * plane];
    {
        let (gw, rest) = g[OFF_OUT_W..].split_at_mut(OUT_W);
        conv3x3_backward(
            &p[OFF_OUT_W..OFF_OUT_B],
            &trace.h3,
            grad_out,
            HIDDEN,
            1,
            h,
            w,
            gw,
            rest,
            Some(&mut grad_h3),
        );
    }

    // Second residual block: h3 = h2 + relu(a3).
    let grad_a3: Vec<f32> = grad_h3
        .iter()
        .zip(&trace.a3)
        .map(|(gv, a)| if *a > 0.0 { *gv } else { 0.0 })
        .collect();
    let mut grad_h2 = vec![0.0f32; HIDDEN * plane];
    {
        let (gw, gb) = g[OFF_RES2_W..OFF_OUT_W].split_at_mut(RES_W);
        conv3x3_backward(
            &p[OFF_RES2_W..OFF_RES2_B],
            &trace.h2,
            &grad_a3,
            HIDDEN,
            HIDDEN,
            h,
            w,
            gw,
            gb,
            Some(&mut grad_h2),
        );
    }
    for (gh2, gh3) in grad_h2.iter_mut().zip(&grad_h3) {
        *gh2 += gh3; // skip connection
    }

    // First residual block: h2 = h1 + relu(a2).
    let grad_a2: Vec<f32> = grad_h2
        .iter()
        .zip(&trace.a2)
        .map(|(gv, a)| if *a > 0.0 { *gv } else { 0.0 })
        .collect();
    let mut grad_h1 = vec![0.0f32; HIDDEN * plane];
    {
        let (gw, gb) = g[OFF_RES1_W..OFF_RES2_W].split_at_mut(RES_W);
        conv3x3_backward(
            &p[OFF_RES1_W..OFF_RES1_B],
            &trace.h1,
            &grad_a2,
            HIDDEN,
            HIDDEN,
            h,
            w,
            gw,
            gb,
            Some(&mut grad_h1),
        );
    }
    for (gh1, gh2) in grad_h1.iter_mut().zip(&grad_h2) {
        *gh1 += gh2;
    }

    // Input convolution with the timestep bias: a1 = conv1(cond) + tbias.
    let grad_a1: Vec<f32> = grad_h1
        .iter()
        .zip(&trace.a1)
        .map(|(gv, a)| if *a > 0.0 { *gv } else { 0.0 })
        .collect();
    {
        let (gw, gb) = g[OFF_CONV1_W..OFF_TEMB_W].split_at_mut(CONV1_W);
        conv3x3_backward(
            &p[OFF_CONV1_W..OFF_CONV1_B],
            &trace.cond,
            &grad_a1,
            COND_CHANNELS,
            HIDDEN,
            h,
            w,
            gw,
            gb,
            None,
        );
    }
    // The per-channel timestep bias sees the same summed gradient as conv1's
    // bias; push it through the embedding dense layer.
    let grad_tbias: Vec<f32> = (0..HIDDEN)
        .map(|c| grad_a1[c * plane..(c + 1) * plane].iter().sum())
        .collect();
    {
        let (gw, gb) = g[OFF_TEMB_W..OFF_RES1_W].split_at_mut(TEMB_W);
        dense_backward(&p[OFF_TEMB_W..OFF_TEMB_B], &trace.emb, &grad_tbias, gw, gb, None);
    }
    g
}

/// Deterministic epsilon prediction for one conditioning tensor.
pub fn denoiser_forward(
    expert: &ExpertParams,
    cond: &[f32],
    t: usize,
    h: usize,
    w: usize,
) -> Result<Vec<f32>> {
    Ok(forward_trace(expert, cond, t, h, w)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cond(h: usize, w: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..COND_CHANNELS * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let e = ExpertParams::zeroed("shared");
        let out = denoiser_forward(&e, &random_cond(8, 8, 1), 10, 8, 8).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let e = ExpertParams::init("shared", 3);
        let cond = random_cond(8, 8, 2);
        let a = denoiser_forward(&e, &cond, 5, 8, 8).unwrap();
        let b = denoiser_forward(&e, &cond, 5, 8, 8).unwrap();
        assert_eq!(a, b);
        let c = denoiser_forward(&e, &cond, 6, 8, 8).unwrap();
        assert_ne!(a, c, "timestep must influence the output");
    }

    #[test]
    fn random_init_output_is_bounded_on_unit_input() {
        for seed in 0..5 {
            let e = ExpertParams::init("shared", seed);
            assert!(e.is_finite());
            let cond = vec![1.0f32; COND_CHANNELS * 32 * 32];
            let out = denoiser_forward(&e, &cond, 100, 32, 32).unwrap();
            let max = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(max.is_finite() && max < 1e3, "seed {seed}: max {max}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let e = ExpertParams::init("shared", 0);
        assert!(denoiser_forward(&e, &[0.0; 10], 0, 8, 8).is_err());
        assert!(ExpertParams::from_params("x", vec![0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (h, w) = (6, 5);
        let e = ExpertParams::init("shared", 11);
        let cond = random_cond(h, w, 4);
        let t = 17;
        let (out, trace) = forward_trace(&e, &cond, t, h, w).unwrap();
        // Loss = 0.5 sum out^2.
        let g = backward(&e, &trace, &out);
        let loss = |params: &ExpertParams| -> f64 {
            let o = denoiser_forward(params, &cond, t, h, w).unwrap();
            o.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 2.0
        };
        let eps = 1e-3f32;
        for idx in [
            OFF_CONV1_W + 5,
            OFF_CONV1_B + 3,
            OFF_TEMB_W + 40,
            OFF_TEMB_B + 7,
            OFF_RES1_W + 123,
            OFF_RES2_W + 999,
            OFF_OUT_W + 50,
            OFF_OUT_B,
        ] {
            let mut ep = e.clone();
            ep.params_mut()[idx] += eps;
            let mut em = e.clone();
            em.params_mut()[idx] -= eps;
            let fd = (loss(&ep) - loss(&em)) / (2.0 * eps as f64);
            let gi = g[idx] as f64;
            assert!(
                (fd - gi).abs() < 3e-2 * fd.abs().max(1.0),
                "param {idx}: fd {fd} vs analytic {gi}"
            );
        }
    }
}
