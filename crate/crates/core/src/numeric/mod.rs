//! Differentiable-array kernel: arrays, reverse-mode tape, optimizer, and
//! gradient checking. Generic over [`scalar::Scalar`] (f32 or f64).

pub mod array;
pub mod fdcheck;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;

pub use array::Array;
pub use fdcheck::finite_difference_check;
pub use optim::{adam_update, cosine_lr, OptimizerState};
pub use params::{BoundParams, ParamSet, Parameter};
pub use scalar::Scalar;
pub use tape::{ctc_min_steps, GradientMap, Tape, Var};
