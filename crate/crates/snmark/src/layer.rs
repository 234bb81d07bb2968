//! Layer descriptors and the forward/backward kernels behind them.
//!
//! Convolutions are 3×3 with "same" padding (28×28 stays 28×28) and ReLU;
//! pooling is 2×2 max with stride 2. Convolution is lowered to GEMM through
//! im2col over fixed-size sample chunks, which keeps scratch memory bounded
//! and the reduction order fixed.

use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use serde::{Deserialize, Serialize};

pub const KERNEL: usize = 3;
pub const POOL: usize = 2;

/// Samples per im2col chunk. Fixed so results do not depend on batch size.
const CONV_CHUNK: usize = 32;

/// Architecture building block. Conv and the hidden Dense carry ReLU; the
/// final Dense is the linear logit head (softmax is attached at the loss).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d { filters: usize },
    MaxPool2d,
    Flatten,
    DenseRelu { width: usize },
    Dense { width: usize },
}

/// Shape of the activation flowing between layers (per sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Map { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn elements(&self) -> usize {
        match *self {
            FeatureShape::Map { h, w, c } => h * w * c,
            FeatureShape::Flat(n) => n,
        }
    }
}

impl LayerSpec {
    /// Propagates the activation shape through this layer.
    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape, String> {
        match (*self, input) {
            (LayerSpec::Conv2d { filters }, FeatureShape::Map { h, w, .. }) => {
                Ok(FeatureShape::Map { h, w, c: filters })
            }
            (LayerSpec::MaxPool2d, FeatureShape::Map { h, w, c }) => {
                if h % POOL != 0 || w % POOL != 0 {
                    return Err(format!("pool input {h}x{w} not divisible by {POOL}"));
                }
                Ok(FeatureShape::Map { h: h / POOL, w: w / POOL, c })
            }
            (LayerSpec::Flatten, FeatureShape::Map { h, w, c }) => Ok(FeatureShape::Flat(h * w * c)),
            (LayerSpec::DenseRelu { width }, FeatureShape::Flat(_)) => Ok(FeatureShape::Flat(width)),
            (LayerSpec::Dense { width }, FeatureShape::Flat(_)) => Ok(FeatureShape::Flat(width)),
            (spec, shape) => Err(format!("layer {spec:?} cannot follow activation {shape:?}")),
        }
    }

    /// (weight shape, bias length) for parameterized layers.
    pub fn param_shape(&self, input: FeatureShape) -> Option<(Vec<usize>, usize)> {
        match (*self, input) {
            (LayerSpec::Conv2d { filters }, FeatureShape::Map { c, .. }) => {
                Some((vec![KERNEL, KERNEL, c, filters], filters))
            }
            (LayerSpec::DenseRelu { width }, FeatureShape::Flat(n))
            | (LayerSpec::Dense { width }, FeatureShape::Flat(n)) => Some((vec![n, width], width)),
            _ => None,
        }
    }

    pub fn has_relu(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::DenseRelu { .. })
    }
}

/// Fan-in used by the uniform He-style init.
pub fn fan_in(weight_shape: &[usize]) -> usize {
    match weight_shape.len() {
        4 => weight_shape[0] * weight_shape[1] * weight_shape[2],
        2 => weight_shape[0],
        _ => weight_shape.iter().product(),
    }
}

// ---------------------------------------------------------------------------
// im2col lowering for 3x3 same-padding convolution
// ---------------------------------------------------------------------------

/// Expands `rows` sample-pixels starting at output pixel (y,x) = (row0 / w, row0 % w)
/// of one sample into the column buffer: each row holds the 3×3×cin receptive field.
fn im2col_sample<S: Scalar>(x: &[S], h: usize, w: usize, cin: usize, col: &mut [S]) {
    let k = KERNEL * KERNEL * cin;
    debug_assert_eq!(col.len(), h * w * k);
    for y in 0..h {
        for xo in 0..w {
            let row = (y * w + xo) * k;
            for ky in 0..KERNEL {
                let iy = y as isize + ky as isize - 1;
                for kx in 0..KERNEL {
                    let ix = xo as isize + kx as isize - 1;
                    let dst = row + (ky * KERNEL + kx) * cin;
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        let src = ((iy as usize) * w + ix as usize) * cin;
                        col[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    } else {
                        col[dst..dst + cin].fill(S::zero());
                    }
                }
            }
        }
    }
}

/// Transpose of `im2col_sample`: scatter-adds column-gradient rows back onto
/// the input gradient.
fn col2im_add_sample<S: Scalar>(dcol: &[S], h: usize, w: usize, cin: usize, dx: &mut [S]) {
    let k = KERNEL * KERNEL * cin;
    for y in 0..h {
        for xo in 0..w {
            let row = (y * w + xo) * k;
            for ky in 0..KERNEL {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = xo as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = row + (ky * KERNEL + kx) * cin;
                    let dst = ((iy as usize) * w + ix as usize) * cin;
                    for ci in 0..cin {
                        dx[dst + ci] += dcol[src + ci];
                    }
                }
            }
        }
    }
}

/// Batched 3×3 same-padding convolution with ReLU.
///
/// `x` is N×h×w×cin, `wt` is (3·3·cin)×f row-major, `y` is N×h×w×f.
pub fn conv3x3_forward<S: Scalar>(
    x: &[S], n: usize, h: usize, w: usize, cin: usize,
    wt: &[S], bias: &[S], f: usize,
    y: &mut [S],
) {
    let k = KERNEL * KERNEL * cin;
    let hw = h * w;
    let in_stride = hw * cin;
    let out_stride = hw * f;
    let mut col = vec![S::zero(); CONV_CHUNK.min(n) * hw * k];
    let mut start = 0;
    while start < n {
        let m = CONV_CHUNK.min(n - start);
        for s in 0..m {
            im2col_sample(
                &x[(start + s) * in_stride..(start + s + 1) * in_stride],
                h, w, cin,
                &mut col[s * hw * k..(s + 1) * hw * k],
            );
        }
        let out = &mut y[start * out_stride..(start + m) * out_stride];
        gemm_nn(m * hw, k, f, &col, wt, S::zero(), out);
        for row in out.chunks_exact_mut(f) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v = (*v + *b).max(S::zero());
            }
        }
        start += m;
    }
}

/// Backward pass of the convolution above.
///
/// `y` is the (post-ReLU) forward output, `dy` the gradient flowing in.
/// Accumulates into `dw`/`db` (callers zero them first) and overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<S: Scalar>(
    x: &[S], y: &[S], dy: &[S],
    n: usize, h: usize, w: usize, cin: usize,
    wt: &[S], f: usize,
    dw: &mut [S], db: &mut [S], dx: &mut [S],
) {
    let k = KERNEL * KERNEL * cin;
    let hw = h * w;
    let in_stride = hw * cin;
    let out_stride = hw * f;
    let chunk = CONV_CHUNK.min(n);
    let mut col = vec![S::zero(); chunk * hw * k];
    let mut dpre = vec![S::zero(); chunk * hw * f];
    let mut dcol = vec![S::zero(); chunk * hw * k];
    dx.fill(S::zero());
    let mut start = 0;
    while start < n {
        let m = CONV_CHUNK.min(n - start);
        let rows = m * hw;
        for s in 0..m {
            im2col_sample(
                &x[(start + s) * in_stride..(start + s + 1) * in_stride],
                h, w, cin,
                &mut col[s * hw * k..(s + 1) * hw * k],
            );
        }
        // ReLU gate: dpre = dy where the activation survived, else 0.
        let yc = &y[start * out_stride..(start + m) * out_stride];
        let dyc = &dy[start * out_stride..(start + m) * out_stride];
        for i in 0..rows * f {
            dpre[i] = if yc[i] > S::zero() { dyc[i] } else { S::zero() };
        }
        for row in dpre[..rows * f].chunks_exact(f) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += *g;
            }
        }
        gemm_tn(k, rows, f, &col[..rows * k], &dpre[..rows * f], S::one(), dw);
        gemm_nt(rows, f, k, &dpre[..rows * f], wt, S::zero(), &mut dcol[..rows * k]);
        for s in 0..m {
            col2im_add_sample(
                &dcol[s * hw * k..(s + 1) * hw * k],
                h, w, cin,
                &mut dx[(start + s) * in_stride..(start + s + 1) * in_stride],
            );
        }
        start += m;
    }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling
// ---------------------------------------------------------------------------

/// 2×2 stride-2 max pool. Records the flat per-sample argmax index of each
/// output cell; ties go to the first cell in scan order.
pub fn pool2x2_forward<S: Scalar>(
    x: &[S], n: usize, h: usize, w: usize, c: usize,
    y: &mut [S], idx: &mut [u32],
) {
    let (oh, ow) = (h / POOL, w / POOL);
    let in_stride = h * w * c;
    let out_stride = oh * ow * c;
    for s in 0..n {
        let xs = &x[s * in_stride..(s + 1) * in_stride];
        let ys = &mut y[s * out_stride..(s + 1) * out_stride];
        let is = &mut idx[s * out_stride..(s + 1) * out_stride];
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best_idx = ((oy * 2) * w + ox * 2) * c + ci;
                    let mut best = xs[best_idx];
                    for dy in 0..POOL {
                        for dxx in 0..POOL {
                            let p = ((oy * 2 + dy) * w + (ox * 2 + dxx)) * c + ci;
                            if xs[p] > best {
                                best = xs[p];
                                best_idx = p;
                            }
                        }
                    }
                    let o = (oy * ow + ox) * c + ci;
                    ys[o] = best;
                    is[o] = best_idx as u32;
                }
            }
        }
    }
}

pub fn pool2x2_backward<S: Scalar>(
    dy: &[S], idx: &[u32],
    n: usize, h: usize, w: usize, c: usize,
    dx: &mut [S],
) {
    let (oh, ow) = (h / POOL, w / POOL);
    let in_stride = h * w * c;
    let out_stride = oh * ow * c;
    dx.fill(S::zero());
    for s in 0..n {
        let dys = &dy[s * out_stride..(s + 1) * out_stride];
        let is = &idx[s * out_stride..(s + 1) * out_stride];
        let dxs = &mut dx[s * in_stride..(s + 1) * in_stride];
        for (g, &i) in dys.iter().zip(is) {
            dxs[i as usize] += *g;
        }
    }
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// `x` is N×din, `wt` din×dout row-major, `y` N×dout.
pub fn dense_forward<S: Scalar>(
    x: &[S], n: usize, din: usize,
    wt: &[S], bias: &[S], dout: usize, relu: bool,
    y: &mut [S],
) {
    gemm_nn(n, din, dout, x, wt, S::zero(), y);
    for row in y.chunks_exact_mut(dout) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
            if relu && *v < S::zero() {
                *v = S::zero();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<S: Scalar>(
    x: &[S], y: &[S], dy: &[S],
    n: usize, din: usize, dout: usize, relu: bool,
    wt: &[S],
    dw: &mut [S], db: &mut [S], dx: &mut [S],
) {
    let mut dpre = vec![S::zero(); n * dout];
    if relu {
        for i in 0..n * dout {
            dpre[i] = if y[i] > S::zero() { dy[i] } else { S::zero() };
        }
    } else {
        dpre.copy_from_slice(&dy[..n * dout]);
    }
    for row in dpre.chunks_exact(dout) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += *g;
        }
    }
    gemm_tn(din, n, dout, x, &dpre, S::one(), dw);
    gemm_nt(n, dout, din, &dpre, wt, S::zero(), dx);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], h: usize, w: usize, cin: usize, wt: &[f64], bias: &[f64], f: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w * f];
        for y in 0..h {
            for xo in 0..w {
                for fo in 0..f {
                    let mut acc = bias[fo];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = y as isize + ky as isize - 1;
                            let ix = xo as isize + kx as isize - 1;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((iy as usize) * w + ix as usize) * cin + ci];
                                let wv = wt[((ky * 3 + kx) * cin + ci) * f + fo];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[(y * w + xo) * f + fo] = acc.max(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let (h, w, cin, f) = (6, 5, 3, 4);
        let x: Vec<f64> = (0..h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..9 * cin * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..f).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut y = vec![0.0; h * w * f];
        conv3x3_forward(&x, 1, h, w, cin, &wt, &bias, f, &mut y);
        let want = naive_conv(&x, h, w, cin, &wt, &bias, f);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        // one sample, 4x4x1
        let x: Vec<f32> = vec![
            1.0, 2.0, 5.0, 1.0,
            3.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 2.0, 2.0,
            0.0, 9.0, 2.0, 2.0,
        ];
        let mut y = vec![0.0f32; 4];
        let mut idx = vec![0u32; 4];
        pool2x2_forward(&x, 1, 4, 4, 1, &mut y, &mut idx);
        assert_eq!(y, vec![3.0, 5.0, 9.0, 2.0]);
        // tie in the last window: first in scan order wins
        assert_eq!(idx[3], 10);

        let dy = vec![1.0f32, 2.0, 3.0, 4.0];
        let mut dx = vec![0.0f32; 16];
        pool2x2_backward(&dy, &idx, 1, 4, 4, 1, &mut dx);
        assert_eq!(dx[4], 1.0);
        assert_eq!(dx[2], 2.0);
        assert_eq!(dx[13], 3.0);
        assert_eq!(dx[10], 4.0);
        assert_eq!(dx.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn dense_forward_relu_clamps() {
        let x = vec![1.0f32, -2.0];
        let wt = vec![1.0f32, 0.0, 0.0, 1.0]; // identity 2x2
        let bias = vec![0.0f32, 0.0];
        let mut y = vec![0.0f32; 2];
        dense_forward(&x, 1, 2, &wt, &bias, 2, true, &mut y);
        assert_eq!(y, vec![1.0, 0.0]);
        dense_forward(&x, 1, 2, &wt, &bias, 2, false, &mut y);
        assert_eq!(y, vec![1.0, -2.0]);
    }

    #[test]
    fn shape_propagation() {
        let s = FeatureShape::Map { h: 28, w: 28, c: 1 };
        let s = LayerSpec::Conv2d { filters: 64 }.output_shape(s).unwrap();
        let s = LayerSpec::MaxPool2d.output_shape(s).unwrap();
        let s = LayerSpec::Conv2d { filters: 64 }.output_shape(s).unwrap();
        let s = LayerSpec::MaxPool2d.output_shape(s).unwrap();
        let s = LayerSpec::Flatten.output_shape(s).unwrap();
        assert_eq!(s, FeatureShape::Flat(3136));
        assert!(LayerSpec::Conv2d { filters: 3 }.output_shape(s).is_err());
    }
}
