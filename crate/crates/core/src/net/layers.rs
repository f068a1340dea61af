//! Layer primitives with explicit forward caches and backward passes.
//!
//! Activations are `(rows, cols, channels)` tensors; kernels are `1 x w`
//! so convolutions slide along the column (subcarrier) axis only, with
//! same-padding there and no mixing across rows.

use ndarray::{Array1, Array2, Array3, Axis};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub(crate) struct ConvCache {
    /// im2col matrix, one row per output position.
    x_cols: Array2<f64>,
    in_shape: (usize, usize, usize),
}

/// Same-padded 1-D convolution along the column axis.
/// `kernel` is `(width, c_in, c_out)`.
pub(crate) fn conv_forward(
    x: &Array3<f64>,
    kernel: &Array3<f64>,
    bias: &Array1<f64>,
) -> (Array3<f64>, ConvCache) {
    let (h, w, cin) = x.dim();
    let (kw, kcin, cout) = kernel.dim();
    debug_assert_eq!(cin, kcin, "kernel input channels mismatch");
    let pad = (kw - 1) / 2;
    let mut x_cols = Array2::<f64>::zeros((h * w, kw * cin));
    for hh in 0..h {
        for ww in 0..w {
            let row = hh * w + ww;
            for t in 0..kw {
                let src = ww as isize + t as isize - pad as isize;
                if src >= 0 && (src as usize) < w {
                    let src = src as usize;
                    for c in 0..cin {
                        x_cols[(row, t * cin + c)] = x[(hh, src, c)];
                    }
                }
            }
        }
    }
    let w_mat = kernel
        .to_shape((kw * cin, cout))
        .expect("kernel is contiguous");
    let mut y_mat = x_cols.dot(&w_mat);
    y_mat += bias;
    let y = y_mat
        .into_shape_with_order((h, w, cout))
        .expect("row-major reshape");
    (
        y,
        ConvCache {
            x_cols,
            in_shape: (h, w, cin),
        },
    )
}

pub(crate) fn conv_backward(
    cache: &ConvCache,
    kernel: &Array3<f64>,
    dy: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>, Array1<f64>) {
    let (h, w, cin) = cache.in_shape;
    let (kw, _, cout) = kernel.dim();
    let pad = (kw - 1) / 2;
    let dy_mat = dy.to_shape((h * w, cout)).expect("contiguous dy");
    let dkernel = cache
        .x_cols
        .t()
        .dot(&dy_mat)
        .into_shape_with_order((kw, cin, cout))
        .expect("row-major reshape");
    let dbias = dy_mat.sum_axis(Axis(0));
    let w_mat = kernel
        .to_shape((kw * cin, cout))
        .expect("kernel is contiguous");
    let dx_cols = dy_mat.dot(&w_mat.t());
    let mut dx = Array3::<f64>::zeros((h, w, cin));
    for hh in 0..h {
        for ww in 0..w {
            let row = hh * w + ww;
            for t in 0..kw {
                let src = ww as isize + t as isize - pad as isize;
                if src >= 0 && (src as usize) < w {
                    let src = src as usize;
                    for c in 0..cin {
                        dx[(hh, src, c)] += dx_cols[(row, t * cin + c)];
                    }
                }
            }
        }
    }
    (dx, dkernel, dbias)
}

pub(crate) fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub(crate) fn selu_forward3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(selu)
}

pub(crate) fn selu_backward3(pre: &Array3<f64>, dy: &Array3<f64>) -> Array3<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| *d *= selu_grad(p));
    dx
}

pub(crate) fn selu_forward1(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(selu)
}

pub(crate) fn selu_backward1(pre: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| *d *= selu_grad(p));
    dx
}

/// Max-pool along the column axis with the given width; trailing columns
/// that do not fill a window are dropped.
pub(crate) fn pool_forward(x: &Array3<f64>, width: usize) -> (Array3<f64>, Array3<usize>) {
    let (h, w, c) = x.dim();
    let wo = w / width;
    let mut y = Array3::<f64>::zeros((h, wo, c));
    let mut argmax = Array3::<usize>::zeros((h, wo, c));
    for hh in 0..h {
        for ww in 0..wo {
            for cc in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = ww * width;
                for t in 0..width {
                    let v = x[(hh, ww * width + t, cc)];
                    if v > best {
                        best = v;
                        best_at = ww * width + t;
                    }
                }
                y[(hh, ww, cc)] = best;
                argmax[(hh, ww, cc)] = best_at;
            }
        }
    }
    (y, argmax)
}

pub(crate) fn pool_backward(
    in_shape: (usize, usize, usize),
    argmax: &Array3<usize>,
    dy: &Array3<f64>,
) -> Array3<f64> {
    let mut dx = Array3::<f64>::zeros(in_shape);
    let (h, wo, c) = dy.dim();
    for hh in 0..h {
        for ww in 0..wo {
            for cc in 0..c {
                dx[(hh, argmax[(hh, ww, cc)], cc)] += dy[(hh, ww, cc)];
            }
        }
    }
    dx
}

pub(crate) struct AttentionCache {
    x: Array3<f64>,
    weights: Array2<f64>,
    argmax_channel: Array2<usize>,
    conv: ConvCache,
}

/// Spatial attention: per position, concatenate the channel-max and
/// channel-mean maps, convolve to one plane, squash with a sigmoid,
/// multiply into the input and add the input back (skip connection).
pub(crate) fn attention_forward(
    x: &Array3<f64>,
    kernel: &Array3<f64>,
    bias: &Array1<f64>,
) -> (Array3<f64>, AttentionCache) {
    let (h, w, c) = x.dim();
    let mut stacked = Array3::<f64>::zeros((h, w, 2));
    let mut argmax_channel = Array2::<usize>::zeros((h, w));
    for hh in 0..h {
        for ww in 0..w {
            let mut best = f64::NEG_INFINITY;
            let mut best_c = 0;
            let mut sum = 0.0;
            for cc in 0..c {
                let v = x[(hh, ww, cc)];
                sum += v;
                if v > best {
                    best = v;
                    best_c = cc;
                }
            }
            stacked[(hh, ww, 0)] = best;
            stacked[(hh, ww, 1)] = sum / c as f64;
            argmax_channel[(hh, ww)] = best_c;
        }
    }
    let (pre, conv) = conv_forward(&stacked, kernel, bias);
    let mut weights = Array2::<f64>::zeros((h, w));
    for hh in 0..h {
        for ww in 0..w {
            weights[(hh, ww)] = 1.0 / (1.0 + (-pre[(hh, ww, 0)]).exp());
        }
    }
    let mut y = x.clone();
    for hh in 0..h {
        for ww in 0..w {
            let a = weights[(hh, ww)];
            for cc in 0..c {
                y[(hh, ww, cc)] += x[(hh, ww, cc)] * a;
            }
        }
    }
    (
        y,
        AttentionCache {
            x: x.clone(),
            weights,
            argmax_channel,
            conv,
        },
    )
}

pub(crate) fn attention_backward(
    cache: &AttentionCache,
    kernel: &Array3<f64>,
    dy: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>, Array1<f64>) {
    let (h, w, c) = cache.x.dim();
    // Through the multiply: dx gets dy * a; the weight map gets
    // sum_c dy * x.
    let mut dx = dy.clone();
    let mut da_pre = Array3::<f64>::zeros((h, w, 1));
    for hh in 0..h {
        for ww in 0..w {
            let a = cache.weights[(hh, ww)];
            let mut da = 0.0;
            for cc in 0..c {
                da += dy[(hh, ww, cc)] * cache.x[(hh, ww, cc)];
                dx[(hh, ww, cc)] += dy[(hh, ww, cc)] * a;
            }
            da_pre[(hh, ww, 0)] = da * a * (1.0 - a);
        }
    }
    let (dstacked, dkernel, dbias) = conv_backward(&cache.conv, kernel, &da_pre);
    for hh in 0..h {
        for ww in 0..w {
            dx[(hh, ww, cache.argmax_channel[(hh, ww)])] += dstacked[(hh, ww, 0)];
            let spread = dstacked[(hh, ww, 1)] / c as f64;
            for cc in 0..c {
                dx[(hh, ww, cc)] += spread;
            }
        }
    }
    (dx, dkernel, dbias)
}

/// Fully connected layer; `weight` is `(in, out)`.
pub(crate) fn dense_forward(x: &Array1<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array1<f64> {
    let mut y = x.dot(weight);
    y += bias;
    y
}

pub(crate) fn dense_backward(
    x: &Array1<f64>,
    weight: &Array2<f64>,
    dy: &Array1<f64>,
) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
    let dx = weight.dot(dy);
    let dw = outer(x, dy);
    (dx, dw, dy.clone())
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        let ai = a[i];
        for j in 0..b.len() {
            out[(i, j)] = ai * b[j];
        }
    }
    out
}

/// Affine parameters of alpha dropout for a retain probability; dropped
/// units are set to the negative saturation value of selu and the output
/// is rescaled so mean and variance are preserved.
pub(crate) fn alpha_dropout_params(keep: f64) -> (f64, f64, f64) {
    let alpha_prime = -SELU_LAMBDA * SELU_ALPHA;
    let scale = (keep + alpha_prime * alpha_prime * keep * (1.0 - keep)).powf(-0.5);
    let shift = -scale * (1.0 - keep) * alpha_prime;
    (alpha_prime, scale, shift)
}

pub(crate) fn alpha_dropout_forward(
    x: &Array1<f64>,
    keep: f64,
    mask: Option<&Array1<f64>>,
) -> Array1<f64> {
    match mask {
        None => x.clone(),
        Some(mask) if keep >= 1.0 => {
            debug_assert_eq!(mask.len(), x.len());
            x.clone()
        }
        Some(mask) => {
            let (alpha_prime, scale, shift) = alpha_dropout_params(keep);
            let mut y = x.clone();
            for (v, &m) in y.iter_mut().zip(mask.iter()) {
                *v = scale * (*v * m + alpha_prime * (1.0 - m)) + shift;
            }
            y
        }
    }
}

pub(crate) fn alpha_dropout_backward(
    keep: f64,
    mask: Option<&Array1<f64>>,
    dy: &Array1<f64>,
) -> Array1<f64> {
    match mask {
        None => dy.clone(),
        Some(mask) if keep >= 1.0 => {
            debug_assert_eq!(mask.len(), dy.len());
            dy.clone()
        }
        Some(mask) => {
            let (_, scale, _) = alpha_dropout_params(keep);
            let mut dx = dy.clone();
            for (v, &m) in dx.iter_mut().zip(mask.iter()) {
                *v *= scale * m;
            }
            dx
        }
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exp = logits.mapv(|v| (v - max).exp());
    let sum: f64 = exp.sum();
    exp /= sum;
    exp
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn conv_matches_direct_evaluation() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = Array3::from_shape_fn((2, 6, 3), |_| rng.gen::<f64>() - 0.5);
        let kernel = Array3::from_shape_fn((3, 3, 4), |_| rng.gen::<f64>() - 0.5);
        let bias = Array1::from_shape_fn(4, |_| rng.gen::<f64>() - 0.5);
        let (y, _) = conv_forward(&x, &kernel, &bias);
        assert_eq!(y.dim(), (2, 6, 4));
        for hh in 0..2 {
            for ww in 0..6 {
                for co in 0..4 {
                    let mut want = bias[co];
                    for t in 0..3usize {
                        let src = ww as isize + t as isize - 1;
                        if src >= 0 && src < 6 {
                            for ci in 0..3 {
                                want += x[(hh, src as usize, ci)] * kernel[(t, ci, co)];
                            }
                        }
                    }
                    assert!((y[(hh, ww, co)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_halves_and_routes_gradient() {
        let x = array![[[1.0], [3.0], [2.0], [0.5], [9.0]]];
        let (y, argmax) = pool_forward(&x, 2);
        assert_eq!(y.dim(), (1, 2, 1));
        assert_eq!(y[(0, 0, 0)], 3.0);
        assert_eq!(y[(0, 1, 0)], 2.0);
        let dy = array![[[1.0], [2.0]]];
        let dx = pool_backward((1, 5, 1), &argmax, &dy);
        assert_eq!(dx[(0, 1, 0)], 1.0);
        assert_eq!(dx[(0, 2, 0)], 2.0);
        assert_eq!(dx[(0, 0, 0)], 0.0);
        assert_eq!(dx[(0, 4, 0)], 0.0); // dropped tail column
    }

    #[test]
    fn selu_has_expected_fixed_points() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - SELU_LAMBDA).abs() < 1e-12);
        assert!(selu(-30.0) > -SELU_LAMBDA * SELU_ALPHA);
    }

    #[test]
    fn attention_is_shape_preserving() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = Array3::from_shape_fn((1, 7, 8), |_| rng.gen::<f64>() - 0.5);
        let kernel = Array3::from_shape_fn((5, 2, 1), |_| rng.gen::<f64>() - 0.5);
        let bias = Array1::zeros(1);
        let (y, _) = attention_forward(&x, &kernel, &bias);
        assert_eq!(y.dim(), x.dim());
    }

    #[test]
    fn zero_weights_make_attention_a_half_residual() {
        // Sigmoid(0) = 0.5, so y = 1.5 * x when the conv is zeroed.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = Array3::from_shape_fn((1, 5, 4), |_| rng.gen::<f64>() - 0.5);
        let kernel = Array3::zeros((3, 2, 1));
        let bias = Array1::zeros(1);
        let (y, _) = attention_forward(&x, &kernel, &bias);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((b - 1.5 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_dropout_keep_one_is_identity() {
        let x = array![0.3, -0.7, 1.2];
        let mask = array![1.0, 0.0, 1.0];
        let y = alpha_dropout_forward(&x, 1.0, Some(&mask));
        assert_eq!(y, x);
    }

    #[test]
    fn alpha_dropout_preserves_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 100_000;
        for keep in [0.5, 0.2] {
            let x = Array1::from_shape_fn(n, |_| selu(crate::chansim::gaussian(&mut rng)));
            let mask = Array1::from_shape_fn(n, |_| f64::from(rng.gen_bool(keep)));
            let y = alpha_dropout_forward(&x, keep, Some(&mask));
            let mean = y.sum() / n as f64;
            let var = y.mapv(|v| (v - mean) * (v - mean)).sum() / n as f64;
            assert!(mean.abs() < 0.1, "mean {mean} drifted (keep={keep})");
            assert!((0.8..1.2).contains(&var), "variance {var} drifted (keep={keep})");
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&array![1.0, 2.0, -0.5, 0.0]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
