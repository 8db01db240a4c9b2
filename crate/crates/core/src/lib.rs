//! Online micro-gesture recognition from streaming 21-joint hand skeletons.
//!
//! The crate covers the full pipeline: a synthetic, statistically calibrated
//! gesture generator with a heuristic distance-rule annotator; a graph
//! spatiotemporal backbone; hierarchical FIFO memory banks; a position-aware
//! query decoder; bipartite-matching + CTC training; a streaming inference
//! engine with non-overlapping 16-frame windows; and the online evaluation
//! metric suite (DR / FP / JI / NLD / average delay).
//!
//! The numeric kernel in [`numeric`] is generic over its scalar type; the
//! pipeline itself runs on the f64 aliases below.

pub mod backbone;
pub mod decoder;
pub mod hand;
pub mod heuristic;
pub mod io;
pub mod loss;
pub mod eval;
pub mod streaming;
pub mod synth;
pub mod trainer;
pub mod memory;
pub mod numeric;

/// Scalar type of the recognition pipeline.
pub type Real = f64;
/// Dense array of pipeline scalars.
pub type Arr = numeric::Array<Real>;
/// Autodiff tape over pipeline scalars.
pub type TapeR = numeric::Tape<Real>;
/// Parameter set over pipeline scalars.
pub type Params = numeric::ParamSet<Real>;
