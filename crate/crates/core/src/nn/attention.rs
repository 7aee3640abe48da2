//! Standalone attention and token-mixing functions on plain tensors.

use alloc::vec;

use super::kernels::{self, ConvGeom, PadMode};
use super::NnError;
use crate::math;
use crate::tensor::{Tensor, TensorError};

/// Denominator guard of the linear attention.
pub const ATTENTION_EPS: f64 = 1e-6;

fn nd(op: &'static str, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize), NnError> {
    let [n, d] = *q.shape() else {
        return Err(TensorError::Invalid {
            op,
            reason: "expected (tokens, dim) tensors",
        }
        .into());
    };
    for other in [k, v] {
        if other.shape() != q.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: q.shape().into(),
                right: other.shape().into(),
            }
            .into());
        }
    }
    Ok((n, d))
}

/// ReLU linear attention `phi(Q) (phi(K)^T V) / (phi(Q) phi(K)^T 1 + eps)`,
/// evaluated right to left in `O(N d^2)`.
pub fn relu_linear_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, NnError> {
    let (n, d) = nd("relu_linear_attention", q, k, v)?;
    let out = kernels::linear_attention_head(q.data(), k.data(), v.data(), n, d, ATTENTION_EPS);
    Ok(Tensor::new(&[n, d], out)?)
}

/// Scaled dot-product softmax attention, `O(N^2 d)`.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, NnError> {
    let (n, d) = nd("softmax_attention", q, k, v)?;
    let scale = 1.0 / math::sqrt(d as f64);
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; n * d];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let qi = &qd[i * d..(i + 1) * d];
        for (j, l) in logits.iter_mut().enumerate() {
            *l = qi.iter().zip(&kd[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = math::exp(*l - max);
            total += *l;
        }
        let row = &mut out[i * d..(i + 1) * d];
        for (j, &wgt) in logits.iter().enumerate() {
            let p = wgt / total;
            for (r, &vv) in row.iter_mut().zip(&vd[j * d..(j + 1) * d]) {
                *r += p * vv;
            }
        }
    }
    Ok(Tensor::new(&[n, d], out)?)
}

/// Depthwise `k x k` box filter weights for `channels` channels.
pub fn averaging_kernel(channels: usize, k: usize) -> Tensor {
    Tensor::full(&[channels, 1, k, k], 1.0 / (k * k) as f64)
}

/// Concatenate `x` (`C x H x W`) with its depthwise convolution by
/// `weights` (`C x 1 x k x k`, edge-replicated borders) along channels.
pub fn multiscale_tokens(x: &Tensor, weights: &Tensor) -> Result<Tensor, NnError> {
    let [c, h, w] = *x.shape() else {
        return Err(TensorError::Invalid {
            op: "multiscale_tokens",
            reason: "expected a (channels, height, width) tensor",
        }
        .into());
    };
    let [wc, 1, k, k2] = *weights.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "multiscale_tokens",
            left: x.shape().into(),
            right: weights.shape().into(),
        }
        .into());
    };
    if wc != c || k != k2 || k % 2 == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "multiscale_tokens",
            left: x.shape().into(),
            right: weights.shape().into(),
        }
        .into());
    }
    if k > h.min(w) {
        return Err(NnError::KernelTooLarge {
            kernel: k,
            height: h,
            width: w,
        });
    }
    let geom = ConvGeom {
        batch: 1,
        cin: c,
        cout: c,
        h,
        w,
        k,
        stride: 1,
        groups: c,
        pad_mode: PadMode::Replicate,
    };
    let mut data = x.data().to_vec();
    data.extend(kernels::conv2d_forward(&geom, x.data(), weights.data(), None));
    Ok(Tensor::new(&[2 * c, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand::Rng;

    fn rand_t(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct quadratic evaluation of the same attention formula.
    fn quadratic_oracle(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let [n, d] = *q.shape() else { unreachable!() };
        let relu = |x: f64| x.max(0.0);
        Tensor::from_fn(&[n, d], |idx| {
            let (i, c) = (idx / d, idx % d);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n {
                let s: f64 = (0..d).map(|a| relu(q.get(&[i, a])) * relu(k.get(&[j, a]))).sum();
                num += s * v.get(&[j, c]);
                den += s;
            }
            num / (den + ATTENTION_EPS)
        })
    }

    #[test]
    fn single_token_returns_value() {
        let q = Tensor::new(&[1, 3], vec![0.5, 0.2, 0.9]).unwrap();
        let k = Tensor::new(&[1, 3], vec![1.0, 2.0, 0.5]).unwrap();
        let v = Tensor::new(&[1, 3], vec![-3.0, 4.0, 7.0]).unwrap();
        let out = relu_linear_attention(&q, &k, &v).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-5);
        assert!(softmax_attention(&q, &k, &v).unwrap().max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = substream(1, Domain::Probe, 0, 0);
        let q = Tensor::from_fn(&[6, 4], |_| rng.gen_range(0.1..1.0));
        let k = Tensor::from_fn(&[6, 4], |i| 0.3 + (i % 4) as f64 * 0.1);
        let v = rand_t(&mut rng, &[6, 4]);
        let out = relu_linear_attention(&q, &k, &v).unwrap();
        for c in 0..4 {
            let mean: f64 = (0..6).map(|j| v.get(&[j, c])).sum::<f64>() / 6.0;
            for i in 0..6 {
                assert!((out.get(&[i, c]) - mean).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn uniform_logits_average_values() {
        let mut rng = substream(2, Domain::Probe, 0, 0);
        let q = Tensor::zeros(&[5, 3]);
        let k = rand_t(&mut rng, &[5, 3]);
        let v = rand_t(&mut rng, &[5, 3]);
        let out = softmax_attention(&q, &k, &v).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..5).map(|j| v.get(&[j, c])).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((out.get(&[i, c]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factored_matches_quadratic() {
        let mut rng = substream(3, Domain::Probe, 0, 0);
        for _ in 0..30 {
            let (n, d) = (rng.gen_range(1..=64), rng.gen_range(1..=16));
            let q = rand_t(&mut rng, &[n, d]);
            let k = rand_t(&mut rng, &[n, d]);
            let v = rand_t(&mut rng, &[n, d]);
            let fast = relu_linear_attention(&q, &k, &v).unwrap();
            let slow = quadratic_oracle(&q, &k, &v);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(&[4, 2]);
        let b = Tensor::zeros(&[4, 3]);
        assert!(relu_linear_attention(&a, &a, &b).is_err());
        assert!(softmax_attention(&a, &b, &a).is_err());
        assert!(relu_linear_attention(&Tensor::zeros(&[8]), &Tensor::zeros(&[8]), &Tensor::zeros(&[8])).is_err());
    }

    #[test]
    fn multiscale_constant_input() {
        let x = Tensor::full(&[3, 7, 6], 0.42);
        let out = multiscale_tokens(&x, &averaging_kernel(3, 5)).unwrap();
        assert_eq!(out.shape(), &[6, 7, 6]);
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn multiscale_bright_pixel_support_is_kernel_square() {
        for k in [1, 3, 5] {
            let mut x = Tensor::zeros(&[1, 11, 11]);
            x.set(&[0, 5, 5], 1.0);
            let out = multiscale_tokens(&x, &averaging_kernel(1, k)).unwrap();
            let conv = &out.data()[121..];
            let r = k / 2;
            for y in 0..11 {
                for xx in 0..11 {
                    let inside = (y as usize).abs_diff(5) <= r && (xx as usize).abs_diff(5) <= r;
                    let v = conv[y * 11 + xx];
                    assert_eq!(v != 0.0, inside, "k={k} at ({xx},{y})");
                    if inside {
                        assert!((v - 1.0 / (k * k) as f64).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn multiscale_rejects_large_kernel() {
        let x = Tensor::zeros(&[2, 4, 9]);
        assert_eq!(
            multiscale_tokens(&x, &averaging_kernel(2, 5)),
            Err(NnError::KernelTooLarge { kernel: 5, height: 4, width: 9 })
        );
    }
}
