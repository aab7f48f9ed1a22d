//! Minimal neural network kernels: 3x3 same-padding convolutions, dense
//! layers, sinusoidal timestep embeddings, and Adam. All loops are written
//! so the x axis stays contiguous for auto-vectorization.

#[inline]
pub(crate) fn axpy(dst: &mut [f32], src: &[f32], a: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Eight-lane dot product. The fixed lane structure keeps results
/// deterministic while letting the reduction vectorize.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Copy one `h x wd` plane into a zero-padded `(h+2) x (wd+2)` buffer.
fn pad_plane(plane: &[f32], h: usize, wd: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), (h + 2) * (wd + 2));
    out.fill(0.0);
    for y in 0..h {
        out[(y + 1) * (wd + 2) + 1..(y + 1) * (wd + 2) + 1 + wd]
            .copy_from_slice(&plane[y * wd..(y + 1) * wd]);
    }
}

/// Accumulate a 9-tap convolution of one padded input plane into `out_plane`.
#[inline]
fn conv_tap9(w9: &[f32], padded: &[f32], h: usize, wd: usize, out_plane: &mut [f32]) {
    let pw = wd + 2;
    for y in 0..h {
        let r0 = &padded[y * pw..y * pw + pw];
        let r1 = &padded[(y + 1) * pw..(y + 1) * pw + pw];
        let r2 = &padded[(y + 2) * pw..(y + 2) * pw + pw];
        let orow = &mut out_plane[y * wd..(y + 1) * wd];
        for x in 0..wd {
            orow[x] += w9[0] * r0[x]
                + w9[1] * r0[x + 1]
                + w9[2] * r0[x + 2]
                + w9[3] * r1[x]
                + w9[4] * r1[x + 1]
                + w9[5] * r1[x + 2]
                + w9[6] * r2[x]
                + w9[7] * r2[x + 1]
                + w9[8] * r2[x + 2];
        }
    }
}

/// `out[co] = b[co] + sum_ci conv3x3(w[co][ci], input[ci])`, zero padding.
pub(crate) fn conv3x3_forward(
    w: &[f32],
    b: &[f32],
    input: &[f32],
    in_c: usize,
    out_c: usize,
    h: usize,
    wd: usize,
    out: &mut [f32],
) {
    debug_assert_eq!(w.len(), out_c * in_c * 9);
    debug_assert_eq!(b.len(), out_c);
    debug_assert_eq!(input.len(), in_c * h * wd);
    debug_assert_eq!(out.len(), out_c * h * wd);
    let plane = h * wd;
    let mut padded = vec![0.0f32; in_c * (h + 2) * (wd + 2)];
    for ci in 0..in_c {
        pad_plane(
            &input[ci * plane..(ci + 1) * plane],
            h,
            wd,
            &mut padded[ci * (h + 2) * (wd + 2)..(ci + 1) * (h + 2) * (wd + 2)],
        );
    }
    for co in 0..out_c {
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        out_plane.fill(b[co]);
        for ci in 0..in_c {
            let w9 = &w[(co * in_c + ci) * 9..(co * in_c + ci) * 9 + 9];
            conv_tap9(
                w9,
                &padded[ci * (h + 2) * (wd + 2)..(ci + 1) * (h + 2) * (wd + 2)],
                h,
                wd,
                out_plane,
            );
        }
    }
}

/// Gradients of `conv3x3_forward`. `grad_in` may be omitted for the first
/// layer. Weight/bias gradients are accumulated into the provided slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    w: &[f32],
    input: &[f32],
    grad_out: &[f32],
    in_c: usize,
    out_c: usize,
    h: usize,
    wd: usize,
    grad_w: &mut [f32],
    grad_b: &mut [f32],
    mut grad_in: Option<&mut [f32]>,
) {
    let plane = h * wd;
    let pplane = (h + 2) * (wd + 2);
    let pw = wd + 2;
    let mut in_pad = vec![0.0f32; in_c * pplane];
    for ci in 0..in_c {
        pad_plane(&input[ci * plane..(ci + 1) * plane], h, wd, &mut in_pad[ci * pplane..(ci + 1) * pplane]);
    }
    // Padded grad_out is only needed to form grad_in.
    let mut go_pad = Vec::new();
    if grad_in.is_some() {
        go_pad = vec![0.0f32; out_c * pplane];
        for co in 0..out_c {
            pad_plane(
                &grad_out[co * plane..(co + 1) * plane],
                h,
                wd,
                &mut go_pad[co * pplane..(co + 1) * pplane],
            );
        }
    }
    if let Some(gi) = grad_in.as_deref_mut() {
        gi.fill(0.0);
    }
    for co in 0..out_c {
        let go_plane = &grad_out[co * plane..(co + 1) * plane];
        grad_b[co] += go_plane.iter().sum::<f32>();
        for ci in 0..in_c {
            let ipad = &in_pad[ci * pplane..(ci + 1) * pplane];
            let w9 = &w[(co * in_c + ci) * 9..(co * in_c + ci) * 9 + 9];
            let gw9 = &mut grad_w[(co * in_c + ci) * 9..(co * in_c + ci) * 9 + 9];
            // dL/dw[ky][kx] = sum_y <go_row_y, padded_in[y+ky] shifted by kx>.
            for y in 0..h {
                let gorow = &go_plane[y * wd..(y + 1) * wd];
                for ky in 0..3usize {
                    let prow = &ipad[(y + ky) * pw..(y + ky) * pw + pw];
                    gw9[ky * 3] += dot(gorow, &prow[..wd]);
                    gw9[ky * 3 + 1] += dot(gorow, &prow[1..1 + wd]);
                    gw9[ky * 3 + 2] += dot(gorow, &prow[2..2 + wd]);
                }
            }
            if let Some(gi) = grad_in.as_deref_mut() {
                // dL/dx = grad_out convolved with the 180-degree flipped kernel.
                let wflip: [f32; 9] =
                    [w9[8], w9[7], w9[6], w9[5], w9[4], w9[3], w9[2], w9[1], w9[0]];
                conv_tap9(
                    &wflip,
                    &go_pad[co * pplane..(co + 1) * pplane],
                    h,
                    wd,
                    &mut gi[ci * plane..(ci + 1) * plane],
                );
            }
        }
    }
}

pub(crate) fn dense_forward(w: &[f32], b: &[f32], x: &[f32], out_d: usize) -> Vec<f32> {
    let in_d = x.len();
    debug_assert_eq!(w.len(), out_d * in_d);
    (0..out_d)
        .map(|o| b[o] + dot(&w[o * in_d..(o + 1) * in_d], x))
        .collect()
}

pub(crate) fn dense_backward(
    w: &[f32],
    x: &[f32],
    grad_out: &[f32],
    grad_w: &mut [f32],
    grad_b: &mut [f32],
    grad_in: Option<&mut [f32]>,
) {
    let in_d = x.len();
    let out_d = grad_out.len();
    for o in 0..out_d {
        grad_b[o] += grad_out[o];
        axpy(&mut grad_w[o * in_d..(o + 1) * in_d], x, grad_out[o]);
    }
    if let Some(gi) = grad_in {
        gi.fill(0.0);
        for o in 0..out_d {
            axpy(gi, &w[o * in_d..(o + 1) * in_d], grad_out[o]);
        }
    }
}

/// Standard sinusoidal embedding: `dim/2` sine and `dim/2` cosine channels
/// at geometrically spaced frequencies.
pub(crate) fn timestep_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut emb = vec![0.0f32; dim];
    for j in 0..half {
        let freq = (10_000f64).powf(-(j as f64) / (half.max(2) - 1) as f64);
        let arg = t as f64 * freq;
        emb[j] = arg.sin() as f32;
        emb[half + j] = arg.cos() as f32;
    }
    emb
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Jacobian-vector product of softmax: `grad_z = w .* (grad_w - <w, grad_w>)`.
pub(crate) fn softmax_backward(weights: &[f64], grad_w: &[f64]) -> Vec<f64> {
    let inner: f64 = weights.iter().zip(grad_w).map(|(w, g)| w * g).sum();
    weights.iter().zip(grad_w).map(|(w, g)| w * (g - inner)).collect()
}

/// Adam with the usual bias correction.
pub(crate) struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, lr: f64, params: &mut [f32], grads: &[f32]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let scale = (lr / b1c) as f32;
        let b2c = b2c as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let vhat = (self.v[i] / b2c).sqrt() + eps;
            params[i] -= scale * self.m[i] / vhat;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Reference convolution written index-wise, as an independent check of
    /// the shifted-slice kernels.
    fn conv_ref(w: &[f32], b: &[f32], x: &[f32], in_c: usize, out_c: usize, h: usize, wd: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; out_c * h * wd];
        for co in 0..out_c {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[co];
                    for ci in 0..in_c {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let iy = y as i64 + ky - 1;
                                let ix = xx as i64 + kx - 1;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                acc += w[((co * in_c + ci) * 9) + (ky * 3 + kx) as usize]
                                    * x[(ci * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[(co * h + y) * wd + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_reference() {
        let (in_c, out_c, h, wd) = (3, 4, 7, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let w: Vec<f32> = (0..out_c * in_c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f32> = (0..in_c * h * wd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; out_c * h * wd];
        conv3x3_forward(&w, &b, &x, in_c, out_c, h, wd, &mut out);
        let reference = conv_ref(&w, &b, &x, in_c, out_c, h, wd);
        for (a, r) in out.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-5, "{a} vs {r}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let (in_c, out_c, h, wd) = (2, 3, 5, 4);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let w: Vec<f32> = (0..out_c * in_c * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b: Vec<f32> = vec![0.1; out_c];
        let x: Vec<f32> = (0..in_c * h * wd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Loss = sum(out^2) / 2 so dL/dout = out.
        let mut out = vec![0.0; out_c * h * wd];
        conv3x3_forward(&w, &b, &x, in_c, out_c, h, wd, &mut out);
        let grad_out = out.clone();
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let mut gx = vec![0.0; x.len()];
        conv3x3_backward(&w, &x, &grad_out, in_c, out_c, h, wd, &mut gw, &mut gb, Some(&mut gx));

        let loss = |w: &[f32], x: &[f32]| -> f64 {
            let mut o = vec![0.0; out_c * h * wd];
            conv3x3_forward(w, &b, x, in_c, out_c, h, wd, &mut o);
            o.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 2.0
        };
        let eps = 1e-3f32;
        for idx in [0usize, 7, 17, w.len() - 1] {
            let mut wp = w.clone();
            wp[idx] += eps;
            let mut wm = w.clone();
            wm[idx] -= eps;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * eps as f64);
            assert!((fd - gw[idx] as f64).abs() < 2e-2 * fd.abs().max(1.0), "w[{idx}] fd {fd} vs {}", gw[idx]);
        }
        for idx in [0usize, 5, x.len() - 1] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * eps as f64);
            assert!((fd - gx[idx] as f64).abs() < 2e-2 * fd.abs().max(1.0), "x[{idx}] fd {fd} vs {}", gx[idx]);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_backward_is_tangent() {
        let w = softmax(&[0.3, -1.2, 2.0, 0.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Directional derivative check.
        let z = [0.3f64, -1.2, 2.0, 0.0];
        let dir = [0.5f64, -0.25, 0.1, 0.7];
        let g = [1.0f64, 2.0, -0.5, 0.3];
        let gz = softmax_backward(&softmax(&z), &g);
        let analytic: f64 = gz.iter().zip(&dir).map(|(a, d)| a * d).sum();
        let h = 1e-6;
        let zp: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
        let zm: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
        let f = |zz: &[f64]| -> f64 { softmax(zz).iter().zip(&g).map(|(w, gi)| w * gi).sum() };
        let fd = (f(&zp) - f(&zm)) / (2.0 * h);
        assert!((analytic - fd).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut params = vec![0.5f32, -0.25, 1.0];
        let before = params.clone();
        let mut adam = Adam::new(3);
        adam.step(0.0, &mut params, &[1.0, -2.0, 3.0]);
        assert_eq!(params, before);
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(3, 32);
        let b = timestep_embedding(4, 32);
        assert_eq!(a.len(), 32);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
