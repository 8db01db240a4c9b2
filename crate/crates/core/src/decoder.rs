//! Position-aware query decoder.
//!
//! Per window: initialize working queries from the window-level memory mean,
//! enhance the frame features against the frame-level memory, run query
//! self/cross attention into the window memory, attend the queries over the
//! enhanced frames, and emit per-query class logits plus squashed
//! (center, width) localizations on the lookback span.
//!
//! All blocks are pre-norm residual transformer blocks with a 4× feed-forward.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::backbone::{
    extract_features, init_backbone_params, sinusoidal_pe, window_input, BackboneConfig,
};
use crate::hand::{build_hand_graph, HandGraph, SkeletonFrame};
use crate::memory::{FrameMemoryBank, WindowMemoryBank};
use crate::numeric::{BoundParams, ParamSet, Tape, Var};
use crate::{Arr, Real};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub attention_heads: usize,
    pub ff_mult: usize,
    pub n_queries: usize,
    pub n_categories: usize,
    /// Frame-level memory capacity L_f.
    pub frame_capacity: usize,
    /// Window-level memory capacity L_w, in windows.
    pub window_capacity: usize,
    pub use_frame_memory: bool,
    pub use_window_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            attention_heads: 4,
            ff_mult: 4,
            n_queries: 10,
            n_categories: 40,
            frame_capacity: 16,
            window_capacity: 3,
            use_frame_memory: true,
            use_window_memory: true,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.backbone.out_channels()
    }

    pub fn window_len(&self) -> usize {
        self.backbone.window_len
    }

    /// Classes including the background slot.
    pub fn n_classes(&self) -> usize {
        self.n_categories + 1
    }

    pub fn background_index(&self) -> usize {
        self.n_categories
    }

    /// Localization span in frames: (L_w + 1) windows ending at the current
    /// window's last frame.
    pub fn lookback_frames(&self) -> usize {
        (self.window_capacity + 1) * self.window_len()
    }

    pub fn validate(&self) {
        self.backbone.validate();
        assert!(self.n_queries > 0, "need at least one query");
        assert_eq!(
            self.channels() % self.attention_heads,
            0,
            "channels must split evenly over attention heads"
        );
    }
}

fn init_layer_norm(params: &mut ParamSet<Real>, prefix: &str, c: usize) {
    params.insert(&format!("{prefix}.g"), Arr::filled(&[c], 1.0));
    params.insert(&format!("{prefix}.b"), Arr::zeros(&[c]));
}

fn init_attention<R: Rng>(params: &mut ParamSet<Real>, prefix: &str, c: usize, rng: &mut R) {
    for name in ["wq", "wk", "wv", "wo"] {
        params.insert_xavier(&format!("{prefix}.{name}"), c, c, rng);
    }
    // no key bias: a shared key offset cancels inside the row softmax
    for name in ["bq", "bv", "bo"] {
        params.insert(&format!("{prefix}.{name}"), Arr::zeros(&[c]));
    }
}

fn init_feed_forward<R: Rng>(params: &mut ParamSet<Real>, prefix: &str, c: usize, mult: usize, rng: &mut R) {
    params.insert_xavier(&format!("{prefix}.w1"), c, c * mult, rng);
    params.insert(&format!("{prefix}.b1"), Arr::zeros(&[c * mult]));
    params.insert_xavier(&format!("{prefix}.w2"), c * mult, c, rng);
    params.insert(&format!("{prefix}.b2"), Arr::zeros(&[c]));
}

pub fn init_model_params(config: &ModelConfig, seed: u64) -> ParamSet<Real> {
    config.validate();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let c = config.channels();
    init_backbone_params(&mut params, &config.backbone, &mut rng);
    params.insert_xavier("dec.queries", config.n_queries, c, &mut rng);

    init_layer_norm(&mut params, "dec.fmi.ln1", c);
    init_attention(&mut params, "dec.fmi.attn", c, &mut rng);
    init_layer_norm(&mut params, "dec.fmi.ln2", c);
    init_feed_forward(&mut params, "dec.fmi.ff", c, config.ff_mult, &mut rng);

    init_layer_norm(&mut params, "dec.qmi.ln_sa", c);
    init_attention(&mut params, "dec.qmi.sa", c, &mut rng);
    init_layer_norm(&mut params, "dec.qmi.ln_ca", c);
    init_attention(&mut params, "dec.qmi.ca", c, &mut rng);
    init_layer_norm(&mut params, "dec.qmi.ln_ff", c);
    init_feed_forward(&mut params, "dec.qmi.ff", c, config.ff_mult, &mut rng);

    init_layer_norm(&mut params, "dec.pi.ln_ca", c);
    init_attention(&mut params, "dec.pi.ca", c, &mut rng);
    init_layer_norm(&mut params, "dec.pi.ln_ff", c);
    init_feed_forward(&mut params, "dec.pi.ff", c, config.ff_mult, &mut rng);

    init_layer_norm(&mut params, "dec.head.ln", c);
    params.insert_xavier("dec.head.cls.w", c, config.n_classes(), &mut rng);
    params.insert("dec.head.cls.b", Arr::zeros(&[config.n_classes()]));
    params.insert_xavier("dec.head.det.w1", c, c, &mut rng);
    params.insert("dec.head.det.b1", Arr::zeros(&[c]));
    // zero-init the final detection layer so localization starts at the
    // span center with half width
    params.insert("dec.head.det.w2", Arr::zeros(&[c, 2]));
    params.insert("dec.head.det.b2", Arr::zeros(&[2]));
    params
}

/// Scaled-dot-product multi-head attention with projections read from
/// `prefix`. Attention rows are softmax-normalized per query position.
pub(crate) fn multi_head_attention<'t>(
    tape: &'t Tape<Real>,
    q_in: Var<'t, Real>,
    kv: Var<'t, Real>,
    bound: &BoundParams<'t, Real>,
    prefix: &str,
    heads: usize,
) -> Var<'t, Real> {
    let c = q_in.shape()[1];
    assert_eq!(c % heads, 0, "head split mismatch");
    let dh = c / heads;
    let q = q_in
        .matmul(bound.var(&format!("{prefix}.wq")))
        .add_row(bound.var(&format!("{prefix}.bq")));
    let k = kv.matmul(bound.var(&format!("{prefix}.wk")));
    let v = kv
        .matmul(bound.var(&format!("{prefix}.wv")))
        .add_row(bound.var(&format!("{prefix}.bv")));
    let scale = 1.0 / (dh as Real).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi);
        let kh = k.slice_cols(lo, hi);
        let vh = v.slice_cols(lo, hi);
        let attn = qh.matmul(kh.transpose()).scale(scale).softmax_rows();
        head_outs.push(attn.matmul(vh));
    }
    let merged = tape.concat_cols(&head_outs);
    merged
        .matmul(bound.var(&format!("{prefix}.wo")))
        .add_row(bound.var(&format!("{prefix}.bo")))
}

fn layer_norm<'t>(
    x: Var<'t, Real>,
    bound: &BoundParams<'t, Real>,
    prefix: &str,
) -> Var<'t, Real> {
    x.layer_norm_rows(
        bound.var(&format!("{prefix}.g")),
        bound.var(&format!("{prefix}.b")),
    )
}

fn feed_forward<'t>(
    x: Var<'t, Real>,
    bound: &BoundParams<'t, Real>,
    ln_prefix: &str,
    ff_prefix: &str,
) -> Var<'t, Real> {
    let h = layer_norm(x, bound, ln_prefix)
        .matmul(bound.var(&format!("{ff_prefix}.w1")))
        .add_row(bound.var(&format!("{ff_prefix}.b1")))
        .relu();
    let out = h
        .matmul(bound.var(&format!("{ff_prefix}.w2")))
        .add_row(bound.var(&format!("{ff_prefix}.b2")));
    x.add(out)
}

/// Frame Memory Interaction: current frames attend over memory ++ current
/// frames (or only themselves on a cold start).
pub fn frame_memory_interaction<'t>(
    tape: &'t Tape<Real>,
    bound: &BoundParams<'t, Real>,
    frames: Var<'t, Real>,
    frame_memory: Option<Var<'t, Real>>,
    heads: usize,
) -> Var<'t, Real> {
    let kv_raw = match frame_memory {
        Some(mem) => tape.concat_rows(&[mem, frames]),
        None => frames,
    };
    // normalize both streams with the block norm; raw backbone features are
    // unbounded and would saturate the attention softmax
    let q_in = layer_norm(frames, bound, "dec.fmi.ln1");
    let kv = layer_norm(kv_raw, bound, "dec.fmi.ln1");
    let attended = multi_head_attention(tape, q_in, kv, bound, "dec.fmi.attn", heads);
    let x = frames.add(attended);
    feed_forward(x, bound, "dec.fmi.ln2", "dec.fmi.ff")
}

/// Working queries: base queries plus the mean of every stored memory vector.
pub fn init_queries<'t>(
    bound: &BoundParams<'t, Real>,
    window_memory: Option<Var<'t, Real>>,
) -> Var<'t, Real> {
    let base = bound.var("dec.queries");
    match window_memory {
        Some(mem) => base.add_row(mem.mean_rows()),
        None => base,
    }
}

/// Query Memory Interaction: query self-attention, then cross-attention into
/// the stored window-memory vectors when any exist.
pub fn query_memory_interaction<'t>(
    tape: &'t Tape<Real>,
    bound: &BoundParams<'t, Real>,
    queries: Var<'t, Real>,
    window_memory: Option<Var<'t, Real>>,
    heads: usize,
) -> Var<'t, Real> {
    let sa_in = layer_norm(queries, bound, "dec.qmi.ln_sa");
    let sa = multi_head_attention(tape, sa_in, sa_in, bound, "dec.qmi.sa", heads);
    let mut x = queries.add(sa);
    if let Some(mem) = window_memory {
        let ca_in = layer_norm(x, bound, "dec.qmi.ln_ca");
        let kv = layer_norm(mem, bound, "dec.qmi.ln_ca");
        let ca = multi_head_attention(tape, ca_in, kv, bound, "dec.qmi.ca", heads);
        x = x.add(ca);
    }
    feed_forward(x, bound, "dec.qmi.ln_ff", "dec.qmi.ff")
}

/// Position-aware Interaction: queries attend over the enhanced window frames.
pub fn position_aware_interaction<'t>(
    tape: &'t Tape<Real>,
    bound: &BoundParams<'t, Real>,
    queries: Var<'t, Real>,
    frames: Var<'t, Real>,
    heads: usize,
) -> Var<'t, Real> {
    let ca_in = layer_norm(queries, bound, "dec.pi.ln_ca");
    let kv = layer_norm(frames, bound, "dec.pi.ln_ca");
    let ca = multi_head_attention(tape, ca_in, kv, bound, "dec.pi.ca", heads);
    let x = queries.add(ca);
    feed_forward(x, bound, "dec.pi.ln_ff", "dec.pi.ff")
}

/// Classification and detection heads: [n, classes] logits and [n, 2]
/// sigmoid-squashed (center, width).
pub fn predict_heads<'t>(
    bound: &BoundParams<'t, Real>,
    queries: Var<'t, Real>,
) -> (Var<'t, Real>, Var<'t, Real>) {
    let normed = layer_norm(queries, bound, "dec.head.ln");
    let logits = normed
        .matmul(bound.var("dec.head.cls.w"))
        .add_row(bound.var("dec.head.cls.b"));
    let h = normed
        .matmul(bound.var("dec.head.det.w1"))
        .add_row(bound.var("dec.head.det.b1"))
        .relu();
    let loc = h
        .matmul(bound.var("dec.head.det.w2"))
        .add_row(bound.var("dec.head.det.b2"))
        .sigmoid();
    (logits, loc)
}

/// Everything one window step produces on the tape.
pub struct DecodeVars<'t> {
    pub logits: Var<'t, Real>,
    pub loc: Var<'t, Real>,
    /// Post-interaction frame features (what the frame memory stores).
    pub frame_feat: Var<'t, Real>,
    /// Post-interaction query features (what the window memory stores).
    pub query_feat: Var<'t, Real>,
}

/// Full window decode on an existing tape; memory contents arrive as stacked
/// matrices (or None on cold start).
#[allow(clippy::too_many_arguments)]
pub fn decode_window_vars<'t>(
    tape: &'t Tape<Real>,
    bound: &BoundParams<'t, Real>,
    window: Var<'t, Real>,
    frame_memory: Option<Var<'t, Real>>,
    window_memory: Option<Var<'t, Real>>,
    graph: &HandGraph,
    config: &ModelConfig,
    pe: &Arr,
) -> DecodeVars<'t> {
    let heads = config.attention_heads;
    let frames = extract_features(tape, bound, window, graph, &config.backbone, pe);
    let enhanced = frame_memory_interaction(tape, bound, frames, frame_memory, heads);
    let queries = init_queries(bound, window_memory);
    let queries = query_memory_interaction(tape, bound, queries, window_memory, heads);
    let queries = position_aware_interaction(tape, bound, queries, enhanced, heads);
    let (logits, loc) = predict_heads(bound, queries);
    DecodeVars {
        logits,
        loc,
        frame_feat: enhanced,
        query_feat: queries,
    }
}

/// Per-query category distribution and localization for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPrediction {
    /// [n_queries, classes] softmax probabilities (last class = background).
    pub probs: Arr,
    /// [n_queries, 2] (center, width) in (0,1) on the lookback span.
    pub loc: Arr,
}

impl WindowPrediction {
    pub fn n_queries(&self) -> usize {
        self.probs.dims2().0
    }

    pub fn argmax_class(&self, q: usize) -> usize {
        let row = self.probs.row(q);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Highest non-background probability for a query.
    pub fn confidence(&self, q: usize) -> Real {
        let row = self.probs.row(q);
        row[..row.len() - 1].iter().copied().fold(0.0, Real::max)
    }

    pub fn center_width(&self, q: usize) -> (Real, Real) {
        (self.loc.at2(q, 0), self.loc.at2(q, 1))
    }
}

/// The trained recognition model: configuration, hand graph, positional
/// encoding, and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: HandGraph,
    pub pe: Arr,
    pub params: ParamSet<Real>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        config.validate();
        let params = init_model_params(&config, seed);
        let pe = sinusoidal_pe(config.window_len(), config.channels());
        Self {
            config,
            graph: build_hand_graph(),
            pe,
            params,
        }
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<Real>) -> Self {
        config.validate();
        let pe = sinusoidal_pe(config.window_len(), config.channels());
        Self {
            config,
            graph: build_hand_graph(),
            pe,
            params,
        }
    }

    /// Memory contents as decode inputs, honoring the ablation switches.
    fn memory_inputs<'t>(
        &self,
        tape: &'t Tape<Real>,
        frame_bank: &FrameMemoryBank,
        window_bank: &WindowMemoryBank,
    ) -> (Option<Var<'t, Real>>, Option<Var<'t, Real>>) {
        let fmem = if self.config.use_frame_memory {
            frame_bank.as_matrix().map(|m| tape.constant(m))
        } else {
            None
        };
        let wmem = if self.config.use_window_memory {
            window_bank.as_matrix().map(|m| tape.constant(m))
        } else {
            None
        };
        (fmem, wmem)
    }

    /// Inference-path window decode: fresh tape, forward only. Returns the
    /// prediction plus the post-interaction features for the caller's memory
    /// update.
    pub fn decode_window(
        &self,
        frames: &[SkeletonFrame],
        frame_bank: &FrameMemoryBank,
        window_bank: &WindowMemoryBank,
    ) -> (WindowPrediction, Arr, Arr) {
        assert_eq!(
            frames.len(),
            self.config.window_len(),
            "decode_window requires exactly one window of frames"
        );
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let window = tape.constant(window_input(frames));
        let (fmem, wmem) = self.memory_inputs(&tape, frame_bank, window_bank);
        let out = decode_window_vars(
            &tape,
            &bound,
            window,
            fmem,
            wmem,
            &self.graph,
            &self.config,
            &self.pe,
        );
        let prediction = WindowPrediction {
            probs: out.logits.value().softmax(1),
            loc: out.loc.value(),
        };
        (prediction, out.frame_feat.value(), out.query_feat.value())
    }

    pub fn empty_banks(&self) -> (FrameMemoryBank, WindowMemoryBank) {
        (
            FrameMemoryBank::new(self.config.channels(), self.config.frame_capacity),
            WindowMemoryBank::new(
                self.config.n_queries,
                self.config.channels(),
                self.config.window_capacity,
            ),
        )
    }

    /// Push post-interaction features into the banks (no-ops under ablation).
    pub fn update_banks(
        &self,
        frame_bank: &mut FrameMemoryBank,
        window_bank: &mut WindowMemoryBank,
        frame_feat: &Arr,
        query_feat: &Arr,
    ) {
        if self.config.use_frame_memory {
            frame_bank.update(frame_feat);
        }
        if self.config.use_window_memory {
            window_bank.update(query_feat);
        }
    }
}

/// A small configuration for tests and gradient checks.
#[cfg(test)]
pub(crate) fn toy_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            plan: vec![(3, 8), (8, 8)],
            temporal_kernel: 3,
            window_len: 4,
        },
        attention_heads: 2,
        ff_mult: 2,
        n_queries: 3,
        n_categories: 5,
        frame_capacity: 8,
        window_capacity: 2,
        use_frame_memory: true,
        use_window_memory: true,
    }
}
