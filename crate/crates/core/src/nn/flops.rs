//! Analytic operation counts. One multiply-accumulate counts as two FLOPs.

use super::model::Model;

/// Multiply-accumulates of a square-kernel convolution.
pub fn conv_macs(cin: usize, cout: usize, k: usize, groups: usize, out_h: usize, out_w: usize) -> u64 {
    (cout * (cin / groups) * k * k * out_h * out_w) as u64
}

/// Factored ReLU linear attention for one head: `phi(K)^T V` and the key
/// sums, then the numerator and denominator per query.
pub fn linear_attention_macs(n: usize, d: usize) -> u64 {
    (2 * n * d * d + 2 * n * d) as u64
}

/// Softmax attention for one head: `Q K^T` and the weighted sum of values.
pub fn softmax_attention_macs(n: usize, d: usize) -> u64 {
    (2 * n * n * d) as u64
}

fn mbconv_macs(cin: usize, cout: usize, stride: usize, expand: usize, side: usize) -> (u64, usize) {
    let mid = cin * expand;
    let out = if stride == 2 { side.div_ceil(2) } else { side };
    let m = conv_macs(cin, mid, 1, 1, side, side) + conv_macs(mid, mid, 3, mid, out, out) + conv_macs(mid, cout, 1, 1, out, out);
    (m, out)
}

/// GFLOPs of one forward pass over `input_shape` (`(3, S, S)` or
/// `(batch, 3, S, S)`), counting convolutions, projections and attention.
pub fn estimate_flops(model: &Model, input_shape: &[usize]) -> f64 {
    let cfg = model.config();
    let (batch, side) = match *input_shape {
        [b, _, h, _] => (b, h),
        [_, h, _] => (1, h),
        _ => (1, cfg.input_size),
    };
    let ch = cfg.stage_channels;
    let mut s = side.div_ceil(2);
    let mut macs = conv_macs(3, ch[0], 3, 1, s, s);
    let mut cin = ch[0];
    let mut sides = [0; 4];
    let inner = cfg.attention_heads * cfg.attention_dim;
    for st in 0..4 {
        for b in 0..cfg.stage_depths[st] {
            if b == 0 || st < 2 {
                let stride = if b == 0 { 2 } else { 1 };
                let (m, out) = mbconv_macs(if b == 0 { cin } else { ch[st] }, ch[st], stride, cfg.expand_ratio, s);
                macs += m;
                s = out;
            } else {
                let c = ch[st];
                let k = cfg.effective_kernel(st);
                let n = s * s;
                macs += conv_macs(c, c, k, c, s, s);
                macs += 3 * conv_macs(2 * c, inner, 1, 1, s, s);
                macs += cfg.attention_heads as u64 * linear_attention_macs(n, cfg.attention_dim);
                macs += conv_macs(inner, c, 1, 1, s, s);
                macs += mbconv_macs(c, c, 1, cfg.expand_ratio, s).0;
            }
        }
        sides[st] = s;
        cin = ch[st];
    }
    let hc = cfg.head_channels;
    for st in 1..4 {
        macs += conv_macs(ch[st], hc, 1, 1, sides[st], sides[st]);
    }
    macs += (hc * cfg.num_classes) as u64;
    2.0 * (macs * batch as u64) as f64 / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn single_conv() {
        assert_eq!(2 * conv_macs(1, 1, 3, 1, 8, 8), 1152);
    }

    #[test]
    fn attention_growth() {
        let d = 16;
        for n in [64, 256, 1024] {
            assert_eq!(linear_attention_macs(2 * n, d), 2 * linear_attention_macs(n, d));
            assert_eq!(softmax_attention_macs(2 * n, d), 4 * softmax_attention_macs(n, d));
        }
    }

    #[test]
    fn batch_scales_linearly() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let one = estimate_flops(&m, &[3, 64, 64]);
        assert!(one > 0.0);
        assert!((estimate_flops(&m, &[4, 3, 64, 64]) - 4.0 * one).abs() < 1e-12);
    }
}
