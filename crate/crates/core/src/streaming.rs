//! Online inference: per-frame ingestion, non-overlapping window execution,
//! confidence filtering, cross-window dedup, and latency accounting.
//!
//! Frames are normalized and buffered; every 16th frame triggers exactly one
//! window decode (the compute-budget invariant), both memory banks update,
//! surviving predictions map onto absolute frames over the lookback span, and
//! same-category duplicates within the dedup horizon are suppressed.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::decoder::{Model, WindowPrediction};
use crate::eval::{average_delay, detection_rate, Detection};
use crate::hand::{normalize_frame, GestureInstance, SkeletonFrame, JOINT_COUNT};
use crate::loss::segment_iou_1d;
use crate::memory::{FrameMemoryBank, WindowMemoryBank};
use crate::Real;

pub const DEFAULT_CONFIDENCE_THRESHOLD: Real = 0.7;
/// Same-category candidates overlapping a kept event beyond this IoU are
/// suppressed.
pub const DEDUP_IOU: Real = 0.5;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("frame rejected: non-finite joint coordinates")]
    NonFiniteFrame,
    #[error("frame rejected: degenerate pose ({0})")]
    DegeneratePose(Real),
}

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("snapshot header mismatch")]
    BadHeader,
    #[error("snapshot truncated")]
    Truncated,
    #[error("snapshot shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Per-stream mutable state; one per concurrent stream.
pub struct StreamState {
    pending: Vec<SkeletonFrame>,
    frame_bank: FrameMemoryBank,
    window_bank: WindowMemoryBank,
    frames_seen: u64,
    windows_run: u64,
    recent: Vec<Detection>,
    confidence_threshold: Real,
}

/// A model plus one stream's state.
pub struct OnlineRecognizer<'m> {
    model: &'m Model,
    state: StreamState,
}

impl<'m> OnlineRecognizer<'m> {
    pub fn new(model: &'m Model, confidence_threshold: Real) -> Self {
        let (frame_bank, window_bank) = model.empty_banks();
        Self {
            model,
            state: StreamState {
                pending: Vec::with_capacity(model.config.window_len()),
                frame_bank,
                window_bank,
                frames_seen: 0,
                windows_run: 0,
                recent: Vec::new(),
                confidence_threshold,
            },
        }
    }

    pub fn frames_seen(&self) -> u64 {
        self.state.frames_seen
    }

    /// Backbone invocations so far; exactly ⌊frames/16⌋.
    pub fn windows_run(&self) -> u64 {
        self.state.windows_run
    }

    /// Ingest one raw frame (meters). Emits the window's surviving events when
    /// this frame completes a window, otherwise an empty list.
    pub fn push_frame(&mut self, frame: &SkeletonFrame) -> Result<Vec<Detection>, StreamError> {
        if !frame.is_finite() {
            return Err(StreamError::NonFiniteFrame);
        }
        let normalized = normalize_frame(frame)
            .map_err(|crate::hand::PoseError::DegeneratePose(d)| StreamError::DegeneratePose(d))?;
        self.state.pending.push(normalized);
        self.state.frames_seen += 1;
        if self.state.pending.len() < self.model.config.window_len() {
            return Ok(Vec::new());
        }
        let window: Vec<SkeletonFrame> = std::mem::take(&mut self.state.pending);
        let window_end = self.state.frames_seen - 1;
        Ok(process_window(
            self.model,
            &window,
            window_end,
            &mut self.state.frame_bank,
            &mut self.state.window_bank,
            &mut self.state.recent,
            &mut self.state.windows_run,
            self.state.confidence_threshold,
        ))
    }

    pub fn snapshot(&self) -> Vec<u8> {
        snapshot_bytes(self.model, &self.state)
    }

    pub fn restore(model: &'m Model, bytes: &[u8]) -> Result<Self, RestoreError> {
        let state = restore_state(model, bytes)?;
        Ok(Self { model, state })
    }
}

/// Decode one full window against the banks, update them, convert surviving
/// predictions to absolute events, and deduplicate. Shared verbatim between
/// the frame-by-frame and offline paths.
#[allow(clippy::too_many_arguments)]
fn process_window(
    model: &Model,
    window: &[SkeletonFrame],
    window_end: u64,
    frame_bank: &mut FrameMemoryBank,
    window_bank: &mut WindowMemoryBank,
    recent: &mut Vec<Detection>,
    windows_run: &mut u64,
    threshold: Real,
) -> Vec<Detection> {
    let (prediction, frame_feat, query_feat) = model.decode_window(window, frame_bank, window_bank);
    *windows_run += 1;
    model.update_banks(frame_bank, window_bank, &frame_feat, &query_feat);

    let candidates = decode_predictions(
        &prediction,
        window_end,
        model.config.lookback_frames(),
        threshold,
    );
    // events older than the dedup horizon can no longer collide
    let horizon = (model.config.window_capacity * model.config.window_len()) as u64;
    recent.retain(|e| e.commit_frame as u64 + horizon >= window_end);
    let survivors = dedup_events(candidates, recent);
    recent.extend_from_slice(&survivors);
    survivors
}

/// Keep confident non-background queries and map their (center, width) from
/// the lookback span onto absolute frames, clamped to the stream's past with
/// the duration preserved.
pub fn decode_predictions(
    prediction: &WindowPrediction,
    window_end: u64,
    lookback: usize,
    threshold: Real,
) -> Vec<Detection> {
    let background = prediction.probs.dims2().1 - 1;
    let mut out = Vec::new();
    for q in 0..prediction.n_queries() {
        let confidence = prediction.confidence(q);
        if confidence < threshold {
            continue;
        }
        if prediction.argmax_class(q) == background {
            continue;
        }
        let class = prediction.argmax_class(q);
        let (x, w) = prediction.center_width(q);
        let span_start = window_end as i64 + 1 - lookback as i64;
        let mut start_f = span_start as Real + (x - w / 2.0) * lookback as Real;
        let mut end_f = span_start as Real + (x + w / 2.0) * lookback as Real;
        let limit = (window_end + 1) as Real;
        if end_f > limit {
            let shift = end_f - limit;
            start_f -= shift;
            end_f = limit;
        }
        let mut start = start_f.round().max(0.0) as usize;
        let mut end = end_f.round() as usize;
        if end <= start {
            end = start + 1;
        }
        if end > (window_end + 1) as usize {
            end = (window_end + 1) as usize;
            start = start.min(end - 1);
        }
        out.push(Detection {
            category: (class + 1) as u16,
            start,
            end,
            confidence,
            commit_frame: window_end as usize,
        });
    }
    out
}

/// 1-D non-maximum suppression: same-category events overlapping a stronger
/// candidate (or an already committed recent event) beyond [`DEDUP_IOU`] are
/// dropped.
pub fn dedup_events(mut candidates: Vec<Detection>, recent: &[Detection]) -> Vec<Detection> {
    candidates.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.start.cmp(&b.start))
    });
    let span = |d: &Detection| {
        let width = (d.end - d.start) as Real;
        (d.start as Real + width / 2.0, width)
    };
    let mut kept: Vec<Detection> = Vec::new();
    for c in candidates {
        let collides = |other: &Detection| {
            other.category == c.category && segment_iou_1d(span(other), span(&c)) > DEDUP_IOU
        };
        if kept.iter().any(collides) || recent.iter().any(collides) {
            continue;
        }
        kept.push(c);
    }
    kept.sort_by_key(|d| (d.start, d.end));
    kept
}

/// Mean commit delay over events matched to ground truth by the detection
/// rule; None when nothing matched.
pub fn measure_latency(events: &[Detection], ground_truth: &[GestureInstance]) -> Option<Real> {
    let (_, outcome) = detection_rate(events, ground_truth);
    average_delay(events, ground_truth, &outcome)
}

/// Offline window-by-window processing with the identical bank protocol;
/// returns (events, windows run). Trailing partial windows are discarded.
pub fn run_offline(model: &Model, frames: &[SkeletonFrame], threshold: Real) -> (Vec<Detection>, u64) {
    let window_len = model.config.window_len();
    let (mut frame_bank, mut window_bank) = model.empty_banks();
    let mut recent = Vec::new();
    let mut windows_run = 0u64;
    let mut events = Vec::new();
    for (w, chunk) in frames.chunks_exact(window_len).enumerate() {
        let normalized: Vec<SkeletonFrame> = chunk
            .iter()
            .map(|f| normalize_frame(f).expect("degenerate pose in offline run"))
            .collect();
        let window_end = ((w + 1) * window_len - 1) as u64;
        events.extend(process_window(
            model,
            &normalized,
            window_end,
            &mut frame_bank,
            &mut window_bank,
            &mut recent,
            &mut windows_run,
            threshold,
        ));
    }
    (events, windows_run)
}

const SNAPSHOT_MAGIC: u32 = 0x4D47_5353; // "MGSS"
const SNAPSHOT_VERSION: u32 = 1;

fn write_f64s(buf: &mut Vec<u8>, vals: impl Iterator<Item = Real>) {
    for v in vals {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

fn snapshot_bytes(model: &Model, state: &StreamState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.write_u32::<LittleEndian>(SNAPSHOT_MAGIC).unwrap();
    buf.write_u32::<LittleEndian>(SNAPSHOT_VERSION).unwrap();
    let c = model.config.channels();
    buf.write_u32::<LittleEndian>(c as u32).unwrap();
    buf.write_u32::<LittleEndian>(model.config.n_queries as u32).unwrap();
    buf.write_u32::<LittleEndian>(model.config.frame_capacity as u32).unwrap();
    buf.write_u32::<LittleEndian>(model.config.window_capacity as u32).unwrap();
    buf.write_u64::<LittleEndian>(state.frames_seen).unwrap();
    buf.write_u64::<LittleEndian>(state.windows_run).unwrap();
    buf.write_f64::<LittleEndian>(state.confidence_threshold).unwrap();

    buf.write_u32::<LittleEndian>(state.pending.len() as u32).unwrap();
    for f in &state.pending {
        write_f64s(&mut buf, f.joints.iter().flatten().copied());
    }
    let frame_rows: Vec<&[Real]> = state.frame_bank.rows().collect();
    buf.write_u32::<LittleEndian>(frame_rows.len() as u32).unwrap();
    for r in frame_rows {
        write_f64s(&mut buf, r.iter().copied());
    }
    let blocks: Vec<&crate::Arr> = state.window_bank.blocks().collect();
    buf.write_u32::<LittleEndian>(blocks.len() as u32).unwrap();
    for b in blocks {
        write_f64s(&mut buf, b.data().iter().copied());
    }
    buf.write_u32::<LittleEndian>(state.recent.len() as u32).unwrap();
    for e in &state.recent {
        buf.write_u16::<LittleEndian>(e.category).unwrap();
        buf.write_u64::<LittleEndian>(e.start as u64).unwrap();
        buf.write_u64::<LittleEndian>(e.end as u64).unwrap();
        buf.write_f64::<LittleEndian>(e.confidence).unwrap();
        buf.write_u64::<LittleEndian>(e.commit_frame as u64).unwrap();
    }
    buf
}

fn restore_state(model: &Model, bytes: &[u8]) -> Result<StreamState, RestoreError> {
    let mut r = std::io::Cursor::new(bytes);
    let magic = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    let version = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    if magic != SNAPSHOT_MAGIC || version != SNAPSHOT_VERSION {
        return Err(RestoreError::BadHeader);
    }
    let check = |name: &str, got: u32, want: usize| {
        if got as usize != want {
            Err(RestoreError::ShapeMismatch(format!(
                "{name}: snapshot {got}, model {want}"
            )))
        } else {
            Ok(())
        }
    };
    let c = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    check("channels", c, model.config.channels())?;
    let nq = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    check("queries", nq, model.config.n_queries)?;
    let fcap = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    check("frame capacity", fcap, model.config.frame_capacity)?;
    let wcap = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    check("window capacity", wcap, model.config.window_capacity)?;

    let frames_seen = r.read_u64::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    let windows_run = r.read_u64::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
    let threshold = r.read_f64::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;

    let n_pending = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
    let mut pending = Vec::with_capacity(n_pending);
    for _ in 0..n_pending {
        let mut f = SkeletonFrame::zeroed();
        for j in 0..JOINT_COUNT {
            for k in 0..3 {
                f.joints[j][k] = r
                    .read_f64::<LittleEndian>()
                    .map_err(|_| RestoreError::Truncated)?;
            }
        }
        pending.push(f);
    }
    let (mut frame_bank, mut window_bank) = model.empty_banks();
    let n_rows = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
    let width = model.config.channels();
    for _ in 0..n_rows {
        let mut row = vec![0.0; width];
        for v in row.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| RestoreError::Truncated)?;
        }
        frame_bank.update(&crate::Arr::new(vec![1, width], row));
    }
    let n_blocks = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
    for _ in 0..n_blocks {
        let mut data = vec![0.0; model.config.n_queries * width];
        for v in data.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| RestoreError::Truncated)?;
        }
        window_bank.update(&crate::Arr::new(vec![model.config.n_queries, width], data));
    }
    let n_recent = r.read_u32::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
    let mut recent = Vec::with_capacity(n_recent);
    for _ in 0..n_recent {
        let category = r.read_u16::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
        let start = r.read_u64::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
        let end = r.read_u64::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
        let confidence = r.read_f64::<LittleEndian>().map_err(|_| RestoreError::Truncated)?;
        let commit_frame = r.read_u64::<LittleEndian>().map_err(|_| RestoreError::Truncated)? as usize;
        recent.push(Detection {
            category,
            start,
            end,
            confidence,
            commit_frame,
        });
    }
    Ok(StreamState {
        pending,
        frame_bank,
        window_bank,
        frames_seen,
        windows_run,
        recent,
        confidence_threshold: threshold,
    })
}
