//! The 21-joint hand model, gesture taxonomy, sequences, and normalization.
//!
//! Joint order is fixed as: wrist, then thumb through little finger, each
//! finger base-to-tip. Fingers use MCP, PIP, DIP, TIP; the thumb uses CMC,
//! MCP, IP, TIP. Indices:
//!
//! ```text
//!  0 wrist
//!  1..=4   thumb  (CMC, MCP, IP, TIP)
//!  5..=8   index  (MCP, PIP, DIP, TIP)
//!  9..=12  middle
//! 13..=16  ring
//! 17..=20  little
//! ```

use std::sync::OnceLock;

use thiserror::Error;

use crate::Arr;

pub const JOINT_COUNT: usize = 21;
pub const WRIST: usize = 0;
pub const THUMB_TIP: usize = 4;
/// Wrist-to-middle-MCP is the scale reference for normalization and NMJD.
pub const MIDDLE_MCP: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Finger {
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; 4] = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Little];

    fn base_joint(self) -> usize {
        match self {
            Finger::Index => 5,
            Finger::Middle => 9,
            Finger::Ring => 13,
            Finger::Little => 17,
        }
    }

    pub fn mcp(self) -> usize {
        self.base_joint()
    }

    pub fn pip(self) -> usize {
        self.base_joint() + 1
    }

    pub fn dip(self) -> usize {
        self.base_joint() + 2
    }

    pub fn tip(self) -> usize {
        self.base_joint() + 3
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Little => "little",
        }
    }
}

/// Kinematic tree over the 21 joints plus the normalized adjacency used by
/// graph convolution.
#[derive(Clone, Debug)]
pub struct HandGraph {
    /// (parent, child) pairs; exactly 20 for the 21-joint tree.
    pub edges: Vec<(usize, usize)>,
    /// D^{-1/2} (A + I) D^{-1/2} over the symmetric adjacency.
    pub normalized_adjacency: Arr,
}

pub fn build_hand_graph() -> HandGraph {
    let mut edges = Vec::with_capacity(20);
    for base in [1usize, 5, 9, 13, 17] {
        edges.push((WRIST, base));
        for j in base..base + 3 {
            edges.push((j, j + 1));
        }
    }
    let n = JOINT_COUNT;
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(p, c) in &edges {
        a[p * n + c] = 1.0;
        a[c * n + p] = 1.0;
    }
    let degree: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j]).sum())
        .collect();
    let mut norm = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] != 0.0 {
                norm[i * n + j] = a[i * n + j] / (degree[i] * degree[j]).sqrt();
            }
        }
    }
    HandGraph {
        edges,
        normalized_adjacency: Arr::new(vec![n, n], norm),
    }
}

pub type Point = [f64; 3];

/// One frame of 21 joint positions, in meters before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    pub joints: [Point; JOINT_COUNT],
}

impl SkeletonFrame {
    pub fn zeroed() -> Self {
        Self {
            joints: [[0.0; 3]; JOINT_COUNT],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

pub fn joint_distance(frame: &SkeletonFrame, a: usize, b: usize) -> f64 {
    let pa = frame.joints[a];
    let pb = frame.joints[b];
    let dx = pa[0] - pb[0];
    let dy = pa[1] - pb[1];
    let dz = pa[2] - pb[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("degenerate pose: wrist to middle-MCP distance {0} below 1e-6")]
    DegeneratePose(f64),
}

/// Translate the wrist to the origin and rescale so the wrist-to-middle-MCP
/// distance is one. Idempotent, and invariant to rigid translation and
/// uniform scaling of the input.
pub fn normalize_frame(frame: &SkeletonFrame) -> Result<SkeletonFrame, PoseError> {
    let scale = joint_distance(frame, WRIST, MIDDLE_MCP);
    if scale <= 1e-6 {
        return Err(PoseError::DegeneratePose(scale));
    }
    let wrist = frame.joints[WRIST];
    let mut out = SkeletonFrame::zeroed();
    for (o, j) in out.joints.iter_mut().zip(&frame.joints) {
        for k in 0..3 {
            o[k] = (j[k] - wrist[k]) / scale;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GestureKind {
    Tap,
    DoubleTap,
    Swipe,
    Pinch,
    Release,
}

impl GestureKind {
    pub fn name(self) -> &'static str {
        match self {
            GestureKind::Tap => "tap",
            GestureKind::DoubleTap => "double-tap",
            GestureKind::Swipe => "swipe",
            GestureKind::Pinch => "pinch",
            GestureKind::Release => "release",
        }
    }
}

/// Contact location, or the swipe path when the gesture travels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    Tip,
    Mcp,
    TipToMcp,
    McpToTip,
    PipUp,
    PipDown,
}

impl Location {
    pub fn name(self) -> &'static str {
        match self {
            Location::Tip => "TIP",
            Location::Mcp => "MCP",
            Location::TipToMcp => "TIP->MCP",
            Location::McpToTip => "MCP->TIP",
            Location::PipUp => "PIP up",
            Location::PipDown => "PIP down",
        }
    }
}

pub type CategoryId = u16;

#[derive(Clone, Debug)]
pub struct GestureCategory {
    pub id: CategoryId,
    pub finger: Finger,
    pub location: Location,
    pub kind: GestureKind,
    pub description: String,
}

pub const CATEGORY_COUNT: usize = 40;

/// The 40-category taxonomy: taps and double-taps at TIP/MCP, four swipe
/// paths, and pinch/release, each over the four non-thumb fingers.
pub fn taxonomy() -> &'static [GestureCategory] {
    static TABLE: OnceLock<Vec<GestureCategory>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut cats = Vec::with_capacity(CATEGORY_COUNT);
        let mut id: CategoryId = 1;
        let mut push = |finger: Finger, location: Location, kind: GestureKind, desc: String| {
            cats.push(GestureCategory {
                id,
                finger,
                location,
                kind,
                description: desc,
            });
            id += 1;
        };
        for finger in Finger::ALL {
            for loc in [Location::Tip, Location::Mcp] {
                push(
                    finger,
                    loc,
                    GestureKind::Tap,
                    format!("Thumb taps {} of the {} finger", loc.name(), finger.name()),
                );
            }
        }
        for finger in Finger::ALL {
            for loc in [Location::Tip, Location::Mcp] {
                push(
                    finger,
                    loc,
                    GestureKind::DoubleTap,
                    format!(
                        "Thumb double-taps {} of the {} finger",
                        loc.name(),
                        finger.name()
                    ),
                );
            }
        }
        for finger in Finger::ALL {
            push(
                finger,
                Location::TipToMcp,
                GestureKind::Swipe,
                format!("Thumb swipes right along the {} finger", finger.name()),
            );
            push(
                finger,
                Location::McpToTip,
                GestureKind::Swipe,
                format!("Thumb swipes left along the {} finger", finger.name()),
            );
        }
        for finger in Finger::ALL {
            push(
                finger,
                Location::PipUp,
                GestureKind::Swipe,
                format!("Thumb swipes up/forward along the {} finger", finger.name()),
            );
            push(
                finger,
                Location::PipDown,
                GestureKind::Swipe,
                format!(
                    "Thumb swipes down/backward along the {} finger",
                    finger.name()
                ),
            );
        }
        for finger in Finger::ALL {
            push(
                finger,
                Location::Tip,
                GestureKind::Pinch,
                format!("Thumb and {} finger pinch", finger.name()),
            );
            push(
                finger,
                Location::Tip,
                GestureKind::Release,
                format!("Thumb and {} finger release", finger.name()),
            );
        }
        assert_eq!(cats.len(), CATEGORY_COUNT);
        cats
    })
}

pub fn category(id: CategoryId) -> &'static GestureCategory {
    assert!(
        (1..=CATEGORY_COUNT as CategoryId).contains(&id),
        "category id {id} outside 1..=40"
    );
    &taxonomy()[id as usize - 1]
}

/// Half-open span [start, end) of one gesture instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GestureInstance {
    pub category: CategoryId,
    pub start: usize,
    pub end: usize,
}

impl GestureInstance {
    pub fn new(category: CategoryId, start: usize, end: usize) -> Self {
        assert!(start < end, "instance span [{start}, {end}) is empty");
        Self {
            category,
            start,
            end,
        }
    }

    pub fn duration(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Clone, Debug)]
pub struct SkeletonSequence {
    pub id: String,
    pub subject: String,
    pub fps: f64,
    pub frames: Vec<SkeletonFrame>,
    pub instances: Vec<GestureInstance>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    OutOfOrder { index: usize },
    Overlap { first: usize, second: usize },
    OutOfBounds { index: usize },
    NonFiniteFrame { frame: usize },
    BadCategory { index: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::OutOfOrder { index } => {
                write!(f, "instance {index} starts before its predecessor")
            }
            Violation::Overlap { first, second } => {
                write!(f, "instances {first} and {second} overlap")
            }
            Violation::OutOfBounds { index } => {
                write!(f, "instance {index} extends past the frame count")
            }
            Violation::NonFiniteFrame { frame } => write!(f, "frame {frame} has non-finite joints"),
            Violation::BadCategory { index } => {
                write!(f, "instance {index} has a category outside 1..=40")
            }
        }
    }
}

/// Report every ordering, overlap, bounds, category, and finiteness problem;
/// an empty list means the sequence invariants hold.
pub fn validate_sequence(seq: &SkeletonSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        if !frame.is_finite() {
            out.push(Violation::NonFiniteFrame { frame: i });
        }
    }
    for (i, inst) in seq.instances.iter().enumerate() {
        if !(1..=CATEGORY_COUNT as CategoryId).contains(&inst.category) {
            out.push(Violation::BadCategory { index: i });
        }
        if inst.end > seq.frames.len() {
            out.push(Violation::OutOfBounds { index: i });
        }
        if i > 0 {
            let prev = &seq.instances[i - 1];
            if inst.start < prev.start {
                out.push(Violation::OutOfOrder { index: i });
            } else if inst.start < prev.end {
                out.push(Violation::Overlap {
                    first: i - 1,
                    second: i,
                });
            }
        }
    }
    out
}
