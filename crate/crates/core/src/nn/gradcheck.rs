use alloc::vec::Vec;

use rand::Rng;

use super::{Mode, Model, NnError, ParamKind, Tape};
use crate::rng::{substream, Domain};
use crate::tensor::Tensor;

/// One probed coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradProbe {
    pub param: usize,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: Vec<GradProbe>,
    pub worst_relative_error: f64,
}

fn loss(model: &Model, x: &Tensor, targets: &[usize], mode: Mode) -> Result<f64, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fp = model.forward_pass(&mut tape, xv, mode)?;
    let l = tape.cross_entropy(fp.logits, targets)?;
    Ok(tape.value(l).data()[0])
}

/// Compare backprop gradients of the mean cross-entropy with central
/// differences at `coords` trainable coordinates drawn from `seed`.
///
/// The relative error is `|a - n| / max(|a|, |n|)`, and 0 when both vanish.
pub fn check_gradients(
    model: &Model,
    x: &Tensor,
    targets: &[usize],
    mode: Mode,
    coords: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fp = model.forward_pass(&mut tape, xv, mode)?;
    let l = tape.cross_entropy(fp.logits, targets)?;
    let grads = tape.backward(l)?;
    let store = model.params();
    let trainable: Vec<usize> = (0..store.len()).filter(|&i| store.kind(i) == ParamKind::Trainable).collect();
    let total: usize = trainable.iter().map(|&i| store.value(i).len()).sum();
    if total == 0 {
        return Err(NnError::InvalidConfig("no trainable parameters".into()));
    }
    let mut rng = substream(seed, Domain::Probe, 0x6772, 0);
    let mut probe = model.clone();
    let mut probes = Vec::with_capacity(coords);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let mut r = rng.gen_range(0..total);
        let mut param = trainable[0];
        for &i in &trainable {
            let n = store.value(i).len();
            if r < n {
                param = i;
                break;
            }
            r -= n;
        }
        let analytic = fp.param_vars[param].map_or(0.0, |v| grads.get_or_zeros(v).data()[r]);
        let orig = store.value(param).data()[r];
        probe.params_mut().value_mut(param).data_mut()[r] = orig + h;
        let lp = loss(&probe, x, targets, mode)?;
        probe.params_mut().value_mut(param).data_mut()[r] = orig - h;
        let lm = loss(&probe, x, targets, mode)?;
        probe.params_mut().value_mut(param).data_mut()[r] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let relative_error = if scale == 0.0 { 0.0 } else { (analytic - numeric).abs() / scale };
        worst = worst.max(relative_error);
        probes.push(GradProbe {
            param,
            offset: r,
            analytic,
            numeric,
            relative_error,
        });
    }
    Ok(GradCheck {
        probes,
        worst_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn small_model_passes() {
        // 64 px keeps the last stage at 2x2; a 1x1 map over a batch of two
        // makes batch-stat BN gradients vanish to rounding noise
        let cfg = ModelConfig {
            input_size: 64,
            stage_channels: [4, 4, 8, 8],
            stage_depths: [1, 2, 2, 2],
            attention_dim: 4,
            attention_heads: 2,
            multiscale_kernel: 3,
            num_classes: 3,
            expand_ratio: 2,
            head_channels: 4,
        };
        let m = Model::seeded(cfg, 1).unwrap();
        let mut rng = substream(2, Domain::Probe, 0, 0);
        let x = Tensor::from_fn(&[2, 3, 64, 64], |_| rng.gen_range(0.0..1.0));
        // with four channels, batch-stat BN is sharply curved and the attention
        // ReLUs sit close to their kinks, so a coarse step misreads the slope
        for mode in [Mode::Train, Mode::Eval] {
            let h = 1e-6;
            let r = check_gradients(&m, &x, &[0, 2], mode, 40, h, 3).unwrap();
            assert_eq!(r.probes.len(), 40);
            // relative bound plus a floor for the step's rounding noise
            for p in &r.probes {
                let scale = p.analytic.abs().max(p.numeric.abs());
                assert!((p.analytic - p.numeric).abs() <= 1e-4 * scale + 1e-9, "{mode:?}: {p:?}");
            }
        }
    }
}
