//! Segment-based training: 128-frame segments at stride 64, eight sequential
//! windows per segment with memory carried on the tape (so gradients flow
//! across windows), Adam with coupled weight decay, warmup + cosine schedule,
//! per-epoch validation by streaming inference, and binary checkpoints.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::window_input;
use crate::decoder::{decode_window_vars, Model, ModelConfig};
use crate::eval::{evaluate_sequences, EvalReport};
use crate::hand::{normalize_frame, SkeletonFrame, SkeletonSequence};
use crate::loss::{
    build_cost_matrix, classification_loss, hungarian_match, position_loss, query_ctc_loss,
    total_loss, CtcWindow, LossWeights, MatchAssignment, MatchTarget,
};
use crate::numeric::{adam_update, cosine_lr, GradientMap, OptimizerState, ParamSet, Tape, Var};
use crate::streaming::run_offline;
use crate::{Arr, Real};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub segment_len: usize,
    pub segment_stride: usize,
    pub batch_size: usize,
    pub base_lr: Real,
    pub weight_decay: Real,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Extra per-coordinate Gaussian noise on training windows (the synthetic
    /// corpus already carries generator noise, so this defaults off).
    pub augment_noise_std: Real,
    /// Online confidence threshold used for validation streaming.
    pub confidence_threshold: Real,
    /// Stop once validation DR reaches this value (None = full schedule).
    pub early_stop_dr: Option<Real>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            segment_len: 128,
            segment_stride: 64,
            batch_size: 8,
            base_lr: 0.001,
            weight_decay: 0.0004,
            warmup_epochs: 5,
            total_epochs: 50,
            seed: 0,
            loss_weights: LossWeights::default(),
            augment_noise_std: 0.0,
            confidence_threshold: 0.7,
            early_stop_dr: None,
        }
    }
}

impl TrainConfig {
    pub fn windows_per_segment(&self, window_len: usize) -> usize {
        assert_eq!(
            self.segment_len % window_len,
            0,
            "segment length must be a whole number of windows"
        );
        self.segment_len / window_len
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss on segment {segment}")]
    NonFinite { segment: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One 128-frame training segment with per-window committed targets.
#[derive(Clone, Debug)]
pub struct TrainSegment {
    pub id: String,
    pub start_frame: usize,
    /// Normalized window inputs, each [window_len, joints, 3].
    pub windows: Vec<Arr>,
    /// Per-window committed ground truth on the lookback span.
    pub targets: Vec<Vec<MatchTarget>>,
    /// Committed class sequence for the CTC term, chronological.
    pub ctc_classes: Vec<usize>,
    pub padded: bool,
}

/// Slice a corpus into overlapping training segments. Sequences shorter than
/// one segment are end-padded with their last frame and flagged.
pub fn make_segments(
    corpus: &[SkeletonSequence],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Vec<TrainSegment> {
    let window_len = model_config.window_len();
    let windows_per_segment = config.windows_per_segment(window_len);
    let lookback = model_config.lookback_frames() as i64;
    let mut out = Vec::new();
    for seq in corpus {
        let mut frames: Vec<SkeletonFrame> = seq
            .frames
            .iter()
            .map(|f| normalize_frame(f).expect("degenerate pose in training corpus"))
            .collect();
        let mut padded = false;
        if frames.len() < config.segment_len {
            let last = frames.last().cloned().unwrap_or_else(SkeletonFrame::zeroed);
            frames.resize(config.segment_len, last);
            padded = true;
        }
        let mut start = 0usize;
        while start + config.segment_len <= frames.len() {
            let mut windows = Vec::with_capacity(windows_per_segment);
            let mut targets: Vec<Vec<MatchTarget>> = vec![Vec::new(); windows_per_segment];
            let mut committed: Vec<(usize, Real, usize)> = Vec::new(); // (window, center, class)
            for w in 0..windows_per_segment {
                let lo = start + w * window_len;
                windows.push(window_input(&frames[lo..lo + window_len]));
            }
            for inst in &seq.instances {
                let end_local = inst.end as i64 - start as i64;
                let last_frame = end_local - 1;
                if last_frame < 0 || last_frame >= config.segment_len as i64 {
                    continue;
                }
                let w = last_frame as usize / window_len;
                let span_end = ((w + 1) * window_len) as i64;
                let span_start = span_end - lookback;
                let start_local = inst.start as i64 - start as i64;
                let center = (start_local + end_local) as Real / 2.0;
                let x = (center - span_start as Real) / lookback as Real;
                let width = (end_local - start_local) as Real / lookback as Real;
                debug_assert!(x > 0.0 && x < 1.0, "center target {x} escaped the span");
                debug_assert!(width > 0.0 && width < 1.0, "width target {width} escaped the span");
                let target = MatchTarget {
                    class_index: inst.category as usize - 1,
                    center: x.clamp(1e-4, 1.0 - 1e-4),
                    width: width.clamp(1e-4, 1.0 - 1e-4),
                };
                targets[w].push(target);
                committed.push((w, x, inst.category as usize - 1));
            }
            committed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
            out.push(TrainSegment {
                id: format!("{}@{}", seq.id, start),
                start_frame: start,
                windows,
                targets,
                ctc_classes: committed.iter().map(|&(_, _, c)| c).collect(),
                padded,
            });
            start += config.segment_stride;
        }
    }
    out
}

struct SegmentOutcome {
    grads: GradientMap<Real>,
    cls: Real,
    pos: Real,
    ctc: Option<Real>,
    total: Real,
    /// Per-window (classification, position) loss values; exercised by the
    /// within-segment carry tests.
    #[allow(dead_code)]
    window_losses: Vec<(Real, Real)>,
}

/// Total segment loss and its parameter gradients; the scalar alone with
/// `with_grads = false`. Exposed for gradient checking.
pub fn segment_loss(
    model: &Model,
    segment: &TrainSegment,
    weights: &LossWeights,
    with_grads: bool,
) -> (Real, GradientMap<Real>) {
    let out = segment_pass_inner(model, segment, weights, with_grads);
    (out.total, out.grads)
}

/// Forward + backward over one segment, carrying memory on the tape so the
/// whole eight-window stretch is differentiated end-to-end.
fn segment_pass(model: &Model, segment: &TrainSegment, weights: &LossWeights) -> SegmentOutcome {
    segment_pass_inner(model, segment, weights, true)
}

fn segment_pass_inner(
    model: &Model,
    segment: &TrainSegment,
    weights: &LossWeights,
    with_grads: bool,
) -> SegmentOutcome {
    let config = &model.config;
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let mut frame_blocks: VecDeque<(Var<'_, Real>, usize)> = VecDeque::new();
    let mut window_blocks: VecDeque<Var<'_, Real>> = VecDeque::new();
    let mut cls_sum = tape.constant(Arr::scalar(0.0));
    let mut pos_sum = tape.constant(Arr::scalar(0.0));
    let mut window_losses = Vec::with_capacity(segment.windows.len());
    let mut ctc_parts: Vec<(Var<'_, Real>, Arr, Arr, MatchAssignment)> = Vec::new();

    for (w, window) in segment.windows.iter().enumerate() {
        let fmem = if config.use_frame_memory && !frame_blocks.is_empty() {
            let vars: Vec<Var<'_, Real>> = frame_blocks.iter().map(|(v, _)| *v).collect();
            Some(tape.concat_rows(&vars))
        } else {
            None
        };
        let wmem = if config.use_window_memory && !window_blocks.is_empty() {
            let vars: Vec<Var<'_, Real>> = window_blocks.iter().copied().collect();
            Some(tape.concat_rows(&vars))
        } else {
            None
        };
        let out = decode_window_vars(
            &tape,
            &bound,
            tape.constant(window.clone()),
            fmem,
            wmem,
            &model.graph,
            config,
            &model.pe,
        );
        let probs = out.logits.value().softmax(1);
        let loc = out.loc.value();
        let targets = &segment.targets[w];
        let assignment: MatchAssignment = if targets.is_empty() {
            vec![None; config.n_queries]
        } else {
            hungarian_match(&build_cost_matrix(&probs, &loc, targets, weights))
        };
        let cls = classification_loss(
            &tape,
            out.logits,
            &assignment,
            targets,
            config.background_index(),
            weights,
        );
        let pos = position_loss(&tape, out.loc, &assignment, targets);
        window_losses.push((cls.value_scalar(), pos.value_scalar()));
        cls_sum = cls_sum.add(cls);
        pos_sum = pos_sum.add(pos);
        ctc_parts.push((out.logits, probs, loc, assignment));

        if config.use_frame_memory {
            push_frame_block(
                &mut frame_blocks,
                out.frame_feat,
                config.window_len(),
                config.frame_capacity,
            );
        }
        if config.use_window_memory {
            window_blocks.push_back(out.query_feat);
            if window_blocks.len() > config.window_capacity {
                window_blocks.pop_front();
            }
        }
    }

    let ctc_windows: Vec<CtcWindow<'_, '_>> = ctc_parts
        .iter()
        .map(|(logits, probs, loc, assignment)| CtcWindow {
            logits: *logits,
            probs,
            loc,
            assignment,
        })
        .collect();
    let ctc = query_ctc_loss(
        &tape,
        &ctc_windows,
        &segment.ctc_classes,
        config.background_index(),
    )
    .ok();
    let total = total_loss(cls_sum, pos_sum, ctc, weights);
    SegmentOutcome {
        grads: if with_grads {
            tape.backward(total)
        } else {
            GradientMap::new()
        },
        cls: cls_sum.value_scalar(),
        pos: pos_sum.value_scalar(),
        ctc: ctc.map(|v| v.value_scalar()),
        total: total.value_scalar(),
        window_losses,
    }
}

/// FIFO of row blocks on the tape: keep the most recent `cap` rows, slicing
/// the oldest block when it straddles the boundary.
fn push_frame_block<'t>(
    blocks: &mut VecDeque<(Var<'t, Real>, usize)>,
    block: Var<'t, Real>,
    rows: usize,
    cap: usize,
) {
    blocks.push_back((block, rows));
    let mut total: usize = blocks.iter().map(|&(_, r)| r).sum();
    while total > cap {
        let (front, r) = blocks.pop_front().expect("nonempty");
        if total - r >= cap {
            total -= r;
        } else {
            let keep = r - (total - cap);
            blocks.push_front((front.slice_rows(r - keep, r), keep));
            total = cap;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: Real,
    pub mean_cls: Real,
    pub mean_pos: Real,
    pub mean_ctc: Real,
    pub ctc_skipped: usize,
    pub mean_total: Real,
    pub val_dr: Real,
}

/// One optimization pass over all segments in shuffled batches. Per-segment
/// passes inside a batch run in parallel; gradients reduce in segment order,
/// so the result is independent of thread scheduling.
pub fn train_epoch(
    model: &mut Model,
    segments: &[TrainSegment],
    optimizer: &mut OptimizerState<Real>,
    epoch: usize,
    config: &TrainConfig,
    data_rng: &mut ChaCha12Rng,
) -> Result<EpochRecord, TrainError> {
    let lr = cosine_lr(epoch, config.total_epochs, config.warmup_epochs, config.base_lr);
    let mut order: Vec<usize> = (0..segments.len()).collect();
    // Fisher-Yates from the persistent data stream
    for i in (1..order.len()).rev() {
        let j = data_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    let mut ctc_counted = 0usize;
    let mut ctc_skipped = 0usize;
    for batch in order.chunks(config.batch_size.max(1)) {
        let augmented: Vec<TrainSegment> = batch
            .iter()
            .map(|&i| augment_segment(&segments[i], config, epoch, i))
            .collect();
        let outcomes: Vec<SegmentOutcome> = augmented
            .par_iter()
            .map(|seg| segment_pass(model, seg, &config.loss_weights))
            .collect();
        for (seg, outcome) in augmented.iter().zip(&outcomes) {
            if !outcome.total.is_finite() {
                return Err(TrainError::NonFinite {
                    segment: seg.id.clone(),
                });
            }
        }
        model.params.zero_grads();
        let scale = 1.0 / batch.len() as Real;
        for outcome in &outcomes {
            for (name, g) in &outcome.grads {
                let grad = &mut model.params.get_mut(name).grad;
                for (acc, &v) in grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += v * scale;
                }
            }
            sums.0 += outcome.cls;
            sums.1 += outcome.pos;
            sums.3 += outcome.total;
            match outcome.ctc {
                Some(v) => {
                    sums.2 += v;
                    ctc_counted += 1;
                }
                None => ctc_skipped += 1,
            }
        }
        adam_update(&mut model.params, optimizer, lr);
    }
    let n = segments.len().max(1) as Real;
    Ok(EpochRecord {
        epoch,
        lr,
        mean_cls: sums.0 / n,
        mean_pos: sums.1 / n,
        mean_ctc: if ctc_counted == 0 {
            0.0
        } else {
            sums.2 / ctc_counted as Real
        },
        ctc_skipped,
        mean_total: sums.3 / n,
        val_dr: 0.0,
    })
}

/// Optional Gaussian augmentation, deterministic in (seed, epoch, segment).
fn augment_segment(
    segment: &TrainSegment,
    config: &TrainConfig,
    epoch: usize,
    index: usize,
) -> TrainSegment {
    if config.augment_noise_std <= 0.0 {
        return segment.clone();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(
        config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((epoch as u64) << 32)
            .wrapping_add(index as u64),
    );
    let mut out = segment.clone();
    for w in out.windows.iter_mut() {
        for v in w.data_mut() {
            let z: Real = rng.sample(StandardNormal);
            *v += z * config.augment_noise_std;
        }
    }
    out
}

/// Stream every sequence through the model and score the full metric suite.
pub fn validate(model: &Model, sequences: &[SkeletonSequence], threshold: Real) -> EvalReport {
    let per_sequence: Vec<_> = sequences
        .par_iter()
        .map(|seq| (run_offline(model, &seq.frames, threshold).0, seq))
        .collect();
    evaluate_sequences(&per_sequence)
}

pub struct FitOutcome {
    /// Model with the best-by-validation-DR parameters.
    pub model: Model,
    pub best_val_dr: Real,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub final_checkpoint: Checkpoint,
}

/// Run the training schedule, validating every epoch and keeping the best
/// parameters. `checkpoint_path`, when given, receives the latest checkpoint
/// after every epoch.
pub fn fit(
    model_config: &ModelConfig,
    train: &[SkeletonSequence],
    val: &[SkeletonSequence],
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<FitOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let segments = make_segments(train, model_config, config);
    let (mut model, mut optimizer, mut data_rng, mut log, start_epoch, mut best) = match resume {
        Some(ckpt) => {
            let model = Model::from_params(ckpt.model_config.clone(), ckpt.params.clone());
            let mut rng = ChaCha12Rng::from_seed(ckpt.rng_seed);
            rng.set_word_pos(ckpt.rng_word_pos);
            let best = ckpt
                .best_params
                .clone()
                .map(|p| (ckpt.best_val_dr, ckpt.best_epoch, p));
            (model, ckpt.optimizer.clone(), rng, ckpt.log.clone(), ckpt.epoch, best)
        }
        None => {
            let model = Model::init(model_config.clone(), config.seed);
            let optimizer = OptimizerState::new(&model.params, config.base_lr, config.weight_decay);
            let rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5EED_DA7A);
            (model, optimizer, rng, Vec::new(), 0, None)
        }
    };

    let mut epochs_run = start_epoch;
    for epoch in start_epoch..config.total_epochs {
        let mut record = train_epoch(&mut model, &segments, &mut optimizer, epoch, config, &mut data_rng)?;
        let report = validate(&model, val, config.confidence_threshold);
        record.val_dr = report.detection_rate;
        log.push(record.clone());
        epochs_run = epoch + 1;

        let improved = best
            .as_ref()
            .map(|(dr, _, _)| record.val_dr > *dr)
            .unwrap_or(true);
        if improved {
            best = Some((record.val_dr, epoch, model.params.clone()));
        }
        if let Some(path) = checkpoint_path {
            let ckpt = build_checkpoint(&model, &optimizer, &data_rng, config, epochs_run, &best, &log);
            ckpt.save(path)?;
        }
        if let Some(target) = config.early_stop_dr {
            if record.val_dr >= target {
                break;
            }
        }
    }
    let final_checkpoint =
        build_checkpoint(&model, &optimizer, &data_rng, config, epochs_run, &best, &log);
    let (best_val_dr, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        model: Model::from_params(model_config.clone(), best_params),
        best_val_dr,
        best_epoch,
        log,
        epochs_run,
        final_checkpoint,
    })
}

fn build_checkpoint(
    model: &Model,
    optimizer: &OptimizerState<Real>,
    data_rng: &ChaCha12Rng,
    config: &TrainConfig,
    epoch: usize,
    best: &Option<(Real, usize, ParamSet<Real>)>,
    log: &[EpochRecord],
) -> Checkpoint {
    Checkpoint {
        model_config: model.config.clone(),
        train_config: config.clone(),
        epoch,
        params: model.params.clone(),
        optimizer: optimizer.clone(),
        rng_seed: data_rng.get_seed(),
        rng_word_pos: data_rng.get_word_pos(),
        best_val_dr: best.as_ref().map(|(dr, _, _)| *dr).unwrap_or(0.0),
        best_epoch: best.as_ref().map(|(_, e, _)| *e).unwrap_or(0),
        best_params: best.as_ref().map(|(_, _, p)| p.clone()),
        log: log.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// checkpoint container

const CKPT_MAGIC: u32 = 0x4D47_434B; // "MGCK"
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub params: ParamSet<Real>,
    pub optimizer: OptimizerState<Real>,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub best_val_dr: Real,
    pub best_epoch: usize,
    pub best_params: Option<ParamSet<Real>>,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn write_param_set(buf: &mut Vec<u8>, params: &ParamSet<Real>) {
    buf.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, p) in params.iter() {
        write_string(buf, name);
        write_array(buf, &p.value);
    }
}

fn write_string(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn write_array(buf: &mut Vec<u8>, a: &Arr) {
    buf.write_u32::<LittleEndian>(a.rank() as u32).unwrap();
    for &d in a.shape() {
        buf.write_u64::<LittleEndian>(d as u64).unwrap();
    }
    for &v in a.data() {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| CheckpointError::Corrupt("non-utf8 string"))
}

fn read_array(r: &mut impl Read) -> Result<Arr, CheckpointError> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 4 {
        return Err(CheckpointError::Corrupt("implausible array rank"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let n: usize = shape.iter().product();
    if n > 1 << 28 {
        return Err(CheckpointError::Corrupt("implausible array size"));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(Arr::new(shape, data))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.write_u32::<LittleEndian>(CKPT_MAGIC).unwrap();
        buf.write_u32::<LittleEndian>(CKPT_VERSION).unwrap();
        write_string(&mut buf, &serde_json::to_string(&self.model_config).unwrap());
        write_string(&mut buf, &serde_json::to_string(&self.train_config).unwrap());
        write_string(&mut buf, &serde_json::to_string(&self.log).unwrap());
        buf.write_u64::<LittleEndian>(self.epoch as u64).unwrap();
        buf.write_u64::<LittleEndian>(self.optimizer.step).unwrap();
        buf.write_f64::<LittleEndian>(self.optimizer.base_lr).unwrap();
        buf.write_f64::<LittleEndian>(self.optimizer.weight_decay).unwrap();
        buf.extend_from_slice(&self.rng_seed);
        buf.write_u128::<LittleEndian>(self.rng_word_pos).unwrap();
        buf.write_f64::<LittleEndian>(self.best_val_dr).unwrap();
        buf.write_u64::<LittleEndian>(self.best_epoch as u64).unwrap();
        write_param_set(&mut buf, &self.params);
        buf.write_u32::<LittleEndian>(self.params.len() as u32).unwrap();
        for (name, _) in self.params.iter() {
            let (m, v) = &self.optimizer.moments[name];
            write_string(&mut buf, name);
            write_array(&mut buf, m);
            write_array(&mut buf, v);
        }
        match &self.best_params {
            Some(p) => {
                buf.write_u8(1).unwrap();
                write_param_set(&mut buf, p);
            }
            None => buf.write_u8(0).unwrap(),
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 40 {
            return Err(CheckpointError::Corrupt("too short"));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(CheckpointError::Corrupt("checksum mismatch"));
        }
        let mut r = std::io::Cursor::new(payload);
        let magic = r.read_u32::<LittleEndian>()?;
        if magic != CKPT_MAGIC {
            return Err(CheckpointError::Corrupt("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CKPT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let model_config: ModelConfig = serde_json::from_str(&read_string(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("model config"))?;
        let train_config: TrainConfig = serde_json::from_str(&read_string(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("train config"))?;
        let log: Vec<EpochRecord> = serde_json::from_str(&read_string(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("log"))?;
        let epoch = r.read_u64::<LittleEndian>()? as usize;
        let step = r.read_u64::<LittleEndian>()?;
        let base_lr = r.read_f64::<LittleEndian>()?;
        let weight_decay = r.read_f64::<LittleEndian>()?;
        let mut rng_seed = [0u8; 32];
        r.read_exact(&mut rng_seed)?;
        let rng_word_pos = r.read_u128::<LittleEndian>()?;
        let best_val_dr = r.read_f64::<LittleEndian>()?;
        let best_epoch = r.read_u64::<LittleEndian>()? as usize;

        let n_params = r.read_u32::<LittleEndian>()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n_params {
            let name = read_string(&mut r)?;
            let value = read_array(&mut r)?;
            params.insert(&name, value);
        }
        let n_moments = r.read_u32::<LittleEndian>()? as usize;
        let mut optimizer = OptimizerState::new(&params, base_lr, weight_decay);
        optimizer.step = step;
        for _ in 0..n_moments {
            let name = read_string(&mut r)?;
            let m = read_array(&mut r)?;
            let v = read_array(&mut r)?;
            let slot = optimizer
                .moments
                .get_mut(&name)
                .ok_or(CheckpointError::Corrupt("moment for unknown parameter"))?;
            if m.shape() != slot.0.shape() || v.shape() != slot.1.shape() {
                return Err(CheckpointError::Shape(format!("moments for {name}")));
            }
            *slot = (m, v);
        }
        let best_params = match r.read_u8()? {
            0 => None,
            1 => {
                let n = r.read_u32::<LittleEndian>()? as usize;
                let mut p = ParamSet::new();
                for _ in 0..n {
                    let name = read_string(&mut r)?;
                    let value = read_array(&mut r)?;
                    p.insert(&name, value);
                }
                Some(p)
            }
            _ => return Err(CheckpointError::Corrupt("best flag")),
        };

        // parameter shapes must agree with the stored model config
        let reference = crate::decoder::init_model_params(&model_config, 0);
        if reference.len() != params.len() {
            return Err(CheckpointError::Shape(format!(
                "parameter count {} does not match config ({})",
                params.len(),
                reference.len()
            )));
        }
        for (name, p) in reference.iter() {
            if !params.contains(name) {
                return Err(CheckpointError::Shape(format!("missing parameter {name}")));
            }
            if params.get(name).value.shape() != p.value.shape() {
                return Err(CheckpointError::Shape(format!(
                    "{name}: stored {:?}, config implies {:?}",
                    params.get(name).value.shape(),
                    p.value.shape()
                )));
            }
        }

        Ok(Self {
            model_config,
            train_config,
            epoch,
            params,
            optimizer,
            rng_seed,
            rng_word_pos,
            best_val_dr,
            best_epoch,
            best_params,
            log,
        })
    }

    /// Atomic write (temp file + rename) of the serialized checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn model(&self) -> Model {
        Model::from_params(self.model_config.clone(), self.params.clone())
    }

    /// Model with the best-by-validation parameters (falls back to latest).
    pub fn best_model(&self) -> Model {
        let params = self.best_params.clone().unwrap_or_else(|| self.params.clone());
        Model::from_params(self.model_config.clone(), params)
    }
}
