//! Named parameters with paired gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;

use super::array::Array;
use super::scalar::Scalar;
use super::tape::{GradientMap, Tape, Var};

/// A trainable value plus its accumulated gradient of identical shape.
#[derive(Clone, Debug)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Array<F>,
    pub grad: Array<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: &str, value: Array<F>) -> Self {
        let grad = Array::zeros(value.shape());
        Self {
            name: name.to_string(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Ordered parameter collection; iteration order (name order) is the fixed
/// reduction order that keeps training deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F: Scalar> {
    params: BTreeMap<String, Parameter<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array<F>) {
        assert!(
            self.params
                .insert(name.to_string(), Parameter::new(name, value))
                .is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn insert_xavier<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let bound = F::from_f64_c((6.0 / (rows + cols) as f64).sqrt());
        self.insert(name, Array::uniform(&[rows, cols], bound, rng));
    }

    pub fn get(&self, name: &str) -> &Parameter<F> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter<F> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<F>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<F>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.zero_grad();
        }
    }

    /// Add a gradient map (as produced by [`Tape::backward`]) into the stored
    /// gradients; repeated calls accumulate.
    pub fn accumulate(&mut self, grads: &GradientMap<F>) {
        for (name, g) in grads {
            self.get_mut(name).grad.add_assign(g);
        }
    }

    /// Bind every parameter onto a tape as named leaves.
    pub fn bind<'t>(&self, tape: &'t Tape<F>) -> BoundParams<'t, F> {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.param(name, p.value.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Tape-bound view of a [`ParamSet`]: one leaf Var per parameter.
pub struct BoundParams<'t, F: Scalar> {
    vars: BTreeMap<String, Var<'t, F>>,
}

impl<'t, F: Scalar> BoundParams<'t, F> {
    pub fn var(&self, name: &str) -> Var<'t, F> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}
