//! Central finite-difference validation of reverse-mode gradients.

use super::params::ParamSet;
use super::scalar::Scalar;

/// Compare analytic gradients against central finite differences of `loss_fn`.
///
/// `loss_fn` must be a deterministic forward pass of the current parameter
/// values. `analytic` is read from the gradients already accumulated in
/// `params`. Checks every coordinate when the model has at most
/// `max_coords_per_param` entries per parameter, otherwise samples a strided
/// subset. Returns the maximum relative error
/// |analytic − difference| / (|analytic| + |difference| + 1e-12).
pub fn finite_difference_check<F: Scalar>(
    params: &mut ParamSet<F>,
    loss_fn: &dyn Fn(&ParamSet<F>) -> F,
    epsilon: F,
    max_coords_per_param: usize,
) -> F {
    let names: Vec<String> = params.names().cloned().collect();
    let mut worst = F::zero();
    for name in names {
        let n = params.get(&name).value.numel();
        let stride = n.div_ceil(max_coords_per_param).max(1);
        let mut i = 0;
        while i < n {
            let orig = params.get(&name).value.data()[i];
            params.get_mut(&name).value.data_mut()[i] = orig + epsilon;
            let plus = loss_fn(params);
            params.get_mut(&name).value.data_mut()[i] = orig - epsilon;
            let minus = loss_fn(params);
            params.get_mut(&name).value.data_mut()[i] = orig;

            let diff = (plus - minus) / (F::from_f64_c(2.0) * epsilon);
            let analytic = params.get(&name).grad.data()[i];
            let rel = (analytic - diff).abs()
                / (analytic.abs() + diff.abs() + F::from_f64_c(1e-12));
            worst = worst.max(rel);
            i += stride;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::array::Array;
    use crate::numeric::tape::Tape;

    #[test]
    fn linear_map_is_exact() {
        let mut params: ParamSet<f64> = ParamSet::new();
        params.insert("w", Array::new(vec![3], vec![0.3, -0.7, 1.1]));
        let loss_fn = |p: &ParamSet<f64>| -> f64 {
            p.get("w").value.data().iter().zip([2.0, -1.0, 0.5]).map(|(w, c)| w * c).sum()
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let coeff = tape.constant(Array::new(vec![3], vec![2.0, -1.0, 0.5]));
        let loss = bound.var("w").mul(coeff).sum_all();
        let grads = tape.backward(loss);
        params.accumulate(&grads);
        let err = finite_difference_check(&mut params, &loss_fn, 1e-4, usize::MAX);
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn softmax_cross_entropy_layer_checks_out() {
        let mut params: ParamSet<f64> = ParamSet::new();
        params.insert("w", Array::new(vec![2, 3], vec![0.2, -0.4, 0.9, 1.3, 0.1, -0.6]));
        let forward = |p: &ParamSet<f64>| -> f64 {
            let tape = Tape::new();
            let bound = p.bind(&tape);
            let x = tape.constant(Array::new(vec![1, 2], vec![0.7, -1.2]));
            let probs = x.matmul(bound.var("w")).softmax_rows();
            probs.cross_entropy(1, 1.0).value_scalar()
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.constant(Array::new(vec![1, 2], vec![0.7, -1.2]));
        let probs = x.matmul(bound.var("w")).softmax_rows();
        let loss = probs.cross_entropy(1, 1.0);
        let grads = tape.backward(loss);
        params.accumulate(&grads);
        let err = finite_difference_check(&mut params, &forward, 1e-4, usize::MAX);
        assert!(err < 1e-6, "relative error {err}");
    }
}
