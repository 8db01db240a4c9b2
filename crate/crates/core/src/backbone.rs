//! Graph spatiotemporal feature extractor for one 16-frame window.
//!
//! Three graph-convolution layers (normalized-adjacency aggregation, channel
//! mixing, per-joint temporal convolution, ReLU), global average pooling over
//! joints, then additive sinusoidal positional encoding, giving one feature
//! row per frame.

use std::sync::Arc;

use rand::Rng;

use crate::hand::{HandGraph, SkeletonFrame, JOINT_COUNT};
use crate::numeric::{BoundParams, ParamSet, Tape, Var};
use crate::{Arr, Real};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// (in, out) channels per layer.
    pub plan: Vec<(usize, usize)>,
    pub temporal_kernel: usize,
    pub window_len: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            plan: vec![(3, 64), (64, 128), (128, 256)],
            temporal_kernel: 5,
            window_len: 16,
        }
    }
}

impl BackboneConfig {
    pub fn out_channels(&self) -> usize {
        self.plan.last().expect("empty channel plan").1
    }

    pub fn validate(&self) {
        assert!(!self.plan.is_empty(), "empty channel plan");
        assert_eq!(self.temporal_kernel % 2, 1, "temporal kernel must be odd");
        for w in self.plan.windows(2) {
            assert_eq!(w[0].1, w[1].0, "channel plan does not chain");
        }
    }
}

/// Register backbone parameters (spatial mix, temporal kernel, bias per layer).
pub fn init_backbone_params<R: Rng>(params: &mut ParamSet<Real>, config: &BackboneConfig, rng: &mut R) {
    config.validate();
    for (i, &(cin, cout)) in config.plan.iter().enumerate() {
        params.insert_xavier(&format!("backbone.l{i}.spatial.w"), cin, cout, rng);
        params.insert_xavier(
            &format!("backbone.l{i}.temporal.w"),
            config.temporal_kernel * cout,
            cout,
            rng,
        );
        params.insert(&format!("backbone.l{i}.temporal.b"), Arr::zeros(&[cout]));
    }
}

/// One graph-conv layer: out = relu(temporal(spatial(x)) [+ x]), with the
/// residual only legal when channel counts match.
pub fn graph_conv_layer<'t>(
    _tape: &'t Tape<Real>,
    x: Var<'t, Real>,
    adj: Arc<Arr>,
    spatial_w: Var<'t, Real>,
    temporal_w: Var<'t, Real>,
    temporal_b: Var<'t, Real>,
    kernel: usize,
    residual: bool,
) -> Var<'t, Real> {
    let shape = x.shape();
    let (t, j, cin) = (shape[0], shape[1], shape[2]);
    let wshape = spatial_w.shape();
    assert_eq!(wshape[0], cin, "spatial mix input channels disagree");
    let cout = wshape[1];
    let agg = x.adj_mix(adj);
    let mixed = agg
        .reshape(&[t * j, cin])
        .matmul(spatial_w)
        .reshape(&[t, j, cout]);
    let conv = mixed.temporal_conv(temporal_w, temporal_b, kernel);
    let pre = if residual {
        assert_eq!(cin, cout, "residual requires matching channels");
        conv.add(x)
    } else {
        conv
    };
    pre.relu()
}

/// Standard interleaved sin/cos positional encoding over window positions.
pub fn sinusoidal_pe(length: usize, channels: usize) -> Arr {
    assert_eq!(channels % 2, 0, "positional encoding needs even channels");
    let mut out = Arr::zeros(&[length, channels]);
    for pos in 0..length {
        for i in 0..channels / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / channels as f64);
            let angle = pos as f64 * rate;
            out.data_mut()[pos * channels + 2 * i] = angle.sin();
            out.data_mut()[pos * channels + 2 * i + 1] = angle.cos();
        }
    }
    out
}

/// Pack normalized skeleton frames into the backbone input layout [t, j, 3].
pub fn window_input(frames: &[SkeletonFrame]) -> Arr {
    let t = frames.len();
    let mut out = Arr::zeros(&[t, JOINT_COUNT, 3]);
    for (ti, f) in frames.iter().enumerate() {
        for (ji, joint) in f.joints.iter().enumerate() {
            let base = (ti * JOINT_COUNT + ji) * 3;
            out.data_mut()[base..base + 3].copy_from_slice(joint);
        }
    }
    out
}

/// Full feature extraction for one window: stacked layers, joint pooling,
/// positional encoding. Output is [window_len, out_channels].
pub fn extract_features<'t>(
    tape: &'t Tape<Real>,
    bound: &BoundParams<'t, Real>,
    window: Var<'t, Real>,
    graph: &HandGraph,
    config: &BackboneConfig,
    pe: &Arr,
) -> Var<'t, Real> {
    let shape = window.shape();
    assert_eq!(shape[0], config.window_len, "window frame count mismatch");
    assert_eq!(shape[1], JOINT_COUNT, "joint count mismatch");
    let adj = Arc::new(graph.normalized_adjacency.clone());
    let mut x = window;
    for (i, &(cin, cout)) in config.plan.iter().enumerate() {
        x = graph_conv_layer(
            tape,
            x,
            adj.clone(),
            bound.var(&format!("backbone.l{i}.spatial.w")),
            bound.var(&format!("backbone.l{i}.temporal.w")),
            bound.var(&format!("backbone.l{i}.temporal.b")),
            config.temporal_kernel,
            cin == cout,
        );
    }
    let pooled = x.mean_axis_mid();
    let pe_var = tape.constant(pe.clone());
    pooled.add(pe_var)
}
