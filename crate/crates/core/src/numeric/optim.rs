//! Adam with coupled L2 weight decay, plus the warmup + cosine schedule.

use std::collections::BTreeMap;

use super::array::Array;
use super::params::ParamSet;
use super::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<F: Scalar> {
    pub moments: BTreeMap<String, (Array<F>, Array<F>)>,
    pub step: u64,
    pub base_lr: F,
    pub weight_decay: F,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ParamSet<F>, base_lr: F, weight_decay: F) -> Self {
        let moments = params
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    (Array::zeros(p.value.shape()), Array::zeros(p.value.shape())),
                )
            })
            .collect();
        Self {
            moments,
            step: 0,
            base_lr,
            weight_decay,
        }
    }
}

/// One Adam step over every parameter, consuming the stored gradients.
/// Weight decay is added to the gradient (coupled L2), and moments are
/// bias-corrected.
pub fn adam_update<F: Scalar>(params: &mut ParamSet<F>, state: &mut OptimizerState<F>, lr: F) {
    state.step += 1;
    let b1 = F::from_f64_c(ADAM_BETA1);
    let b2 = F::from_f64_c(ADAM_BETA2);
    let eps = F::from_f64_c(ADAM_EPS);
    let t = state.step as i32;
    let corr1 = F::one() - b1.powi(t);
    let corr2 = F::one() - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let (m, v) = state
            .moments
            .get_mut(name)
            .unwrap_or_else(|| panic!("optimizer missing moments for {name}"));
        assert_eq!(m.shape(), p.value.shape(), "moment shape drift for {name}");
        for i in 0..p.value.numel() {
            let g = p.grad.data()[i] + state.weight_decay * p.value.data()[i];
            let mi = b1 * m.data()[i] + (F::one() - b1) * g;
            let vi = b2 * v.data()[i] + (F::one() - b2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / corr1;
            let vhat = vi / corr2;
            p.value.data_mut()[i] = p.value.data()[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Linear warmup to `base_lr`, then a cosine decay to zero over the remaining
/// epochs. `epoch` is zero-based and must be below `total_epochs`.
pub fn cosine_lr<F: Scalar>(epoch: usize, total_epochs: usize, warmup_epochs: usize, base_lr: F) -> F {
    assert!(
        warmup_epochs < total_epochs,
        "warmup ({warmup_epochs}) must be shorter than the schedule ({total_epochs})"
    );
    assert!(epoch < total_epochs, "epoch {epoch} outside schedule {total_epochs}");
    if epoch < warmup_epochs {
        return base_lr * F::from_usize_c(epoch + 1) / F::from_usize_c(warmup_epochs);
    }
    let span = (total_epochs - 1 - warmup_epochs).max(1);
    let progress = (epoch - warmup_epochs) as f64 / span as f64;
    base_lr * F::from_f64_c(0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
