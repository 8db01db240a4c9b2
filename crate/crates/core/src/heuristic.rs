//! Threshold-based heuristic gesture annotator.
//!
//! Works purely from per-frame distances between the thumb tip and finger
//! landmarks on normalized skeletons. Contact runs are extracted with
//! hysteresis, extended to the surrounding approach/depart ramps, then
//! classified:
//!
//! - groups of short runs separated by less than the merge window become one
//!   double-tap
//! - an isolated short run is a tap
//! - a long run at a fingertip is a pinch when the approach ramp is the slow
//!   side, a release when the depart ramp is
//! - swipe rules track distance to the finger polyline (or the PIP crossing
//!   corridor) and require their waypoints visited in order
//!
//! Overlapping candidates are resolved most-specific-first:
//! swipe > double-tap > pinch/release > tap.

use crate::hand::{
    joint_distance, normalize_frame, taxonomy, CategoryId, Finger, GestureInstance,
    GestureKind, Location, SkeletonFrame, SkeletonSequence, THUMB_TIP, WRIST,
};
use crate::synth::PIP_SWIPE_OFFSET;

#[derive(Clone, Debug)]
pub enum RuleGeometry {
    /// Contact with a single joint.
    Point { joint: usize },
    /// Contact anywhere along the polyline through these joints.
    FingerPath { joints: Vec<usize> },
    /// Crossing corridor at the PIP joint, offset along the palm normal.
    PipCross { pip: usize, upward: bool },
}

#[derive(Clone, Debug)]
pub enum WaypointSpec {
    Joint(usize),
    /// PIP joint displaced along the palm normal by `sign` × offset.
    PipOffset { pip: usize, sign: f64 },
}

#[derive(Clone, Debug)]
pub struct HeuristicRule {
    pub category: CategoryId,
    pub kind: GestureKind,
    pub thumb_joint: usize,
    pub geometry: RuleGeometry,
    pub contact_threshold: f64,
    pub min_contact_frames: usize,
    pub max_contact_frames: usize,
    /// Ordered path waypoints; empty for non-swipes.
    pub waypoints: Vec<WaypointSpec>,
}

#[derive(Clone, Debug)]
pub struct RuleParams {
    /// Contact when distance drops below the rule threshold; contact breaks
    /// above threshold × exit_factor.
    pub exit_factor: f64,
    /// Runs closer than this merge into one double-tap.
    pub merge_window_s: f64,
    /// Waypoint proximity radius for finger-path swipes.
    pub swipe_waypoint_radius: f64,
    /// Waypoint proximity radius for PIP crossings.
    pub pip_waypoint_radius: f64,
    pub min_swipe_run: usize,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            exit_factor: 1.2,
            merge_window_s: 0.2,
            swipe_waypoint_radius: 0.22,
            pip_waypoint_radius: 0.12,
            min_swipe_run: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeuristicRules {
    pub params: RuleParams,
    pub rules: Vec<HeuristicRule>,
}

impl HeuristicRules {
    /// Rules covering the full 40-category taxonomy.
    pub fn standard() -> Self {
        let mut rules = Vec::new();
        for cat in taxonomy() {
            let finger = cat.finger;
            let rule = match (cat.kind, cat.location) {
                (GestureKind::Tap, loc) | (GestureKind::DoubleTap, loc) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::Point {
                        joint: match loc {
                            Location::Tip => finger.tip(),
                            Location::Mcp => finger.mcp(),
                            _ => unreachable!("taps only at TIP/MCP"),
                        },
                    },
                    contact_threshold: 0.12,
                    // single-frame dips are transit grazes, not contacts
                    min_contact_frames: 2,
                    max_contact_frames: 9,
                    waypoints: Vec::new(),
                },
                (GestureKind::Pinch, _) | (GestureKind::Release, _) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::Point {
                        joint: finger.tip(),
                    },
                    contact_threshold: 0.12,
                    min_contact_frames: 10,
                    max_contact_frames: usize::MAX,
                    waypoints: Vec::new(),
                },
                (GestureKind::Swipe, Location::TipToMcp) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::FingerPath {
                        joints: vec![finger.tip(), finger.dip(), finger.pip(), finger.mcp()],
                    },
                    contact_threshold: 0.12,
                    min_contact_frames: 5,
                    max_contact_frames: usize::MAX,
                    waypoints: vec![
                        WaypointSpec::Joint(finger.tip()),
                        WaypointSpec::Joint(finger.pip()),
                        WaypointSpec::Joint(finger.mcp()),
                    ],
                },
                (GestureKind::Swipe, Location::McpToTip) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::FingerPath {
                        joints: vec![finger.tip(), finger.dip(), finger.pip(), finger.mcp()],
                    },
                    contact_threshold: 0.12,
                    min_contact_frames: 5,
                    max_contact_frames: usize::MAX,
                    waypoints: vec![
                        WaypointSpec::Joint(finger.mcp()),
                        WaypointSpec::Joint(finger.pip()),
                        WaypointSpec::Joint(finger.tip()),
                    ],
                },
                (GestureKind::Swipe, Location::PipUp) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::PipCross {
                        pip: finger.pip(),
                        upward: true,
                    },
                    contact_threshold: 0.3,
                    min_contact_frames: 3,
                    max_contact_frames: usize::MAX,
                    waypoints: vec![
                        WaypointSpec::PipOffset {
                            pip: finger.pip(),
                            sign: -1.0,
                        },
                        WaypointSpec::PipOffset {
                            pip: finger.pip(),
                            sign: 1.0,
                        },
                    ],
                },
                (GestureKind::Swipe, Location::PipDown) => HeuristicRule {
                    category: cat.id,
                    kind: cat.kind,
                    thumb_joint: THUMB_TIP,
                    geometry: RuleGeometry::PipCross {
                        pip: finger.pip(),
                        upward: false,
                    },
                    contact_threshold: 0.3,
                    min_contact_frames: 3,
                    max_contact_frames: usize::MAX,
                    waypoints: vec![
                        WaypointSpec::PipOffset {
                            pip: finger.pip(),
                            sign: 1.0,
                        },
                        WaypointSpec::PipOffset {
                            pip: finger.pip(),
                            sign: -1.0,
                        },
                    ],
                },
                (k, l) => unreachable!("no rule template for {:?} at {:?}", k, l),
            };
            rules.push(rule);
        }
        Self {
            params: RuleParams::default(),
            rules,
        }
    }
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let denom = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if denom > 1e-12 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + ab[0] * t, a[1] + ab[1] * t, a[2] + ab[2] * t];
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Palm normal estimated from the wrist / index-MCP / ring-MCP plane.
fn palm_normal(frame: &SkeletonFrame) -> [f64; 3] {
    let w = frame.joints[WRIST];
    let i = frame.joints[Finger::Index.mcp()];
    let r = frame.joints[Finger::Ring.mcp()];
    let u = [i[0] - w[0], i[1] - w[1], i[2] - w[2]];
    let v = [r[0] - w[0], r[1] - w[1], r[2] - w[2]];
    // index × ring so the normal faces the thumb side of the canonical pose
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
    [n[0] / len, n[1] / len, n[2] / len]
}

fn waypoint_position(frame: &SkeletonFrame, spec: &WaypointSpec) -> [f64; 3] {
    match spec {
        WaypointSpec::Joint(j) => frame.joints[*j],
        WaypointSpec::PipOffset { pip, sign } => {
            let n = palm_normal(frame);
            let p = frame.joints[*pip];
            [
                p[0] + sign * PIP_SWIPE_OFFSET * n[0],
                p[1] + sign * PIP_SWIPE_OFFSET * n[1],
                p[2] + sign * PIP_SWIPE_OFFSET * n[2],
            ]
        }
    }
}

fn geometry_distance(frame: &SkeletonFrame, thumb: usize, geom: &RuleGeometry) -> f64 {
    match geom {
        RuleGeometry::Point { joint } => joint_distance(frame, thumb, *joint),
        RuleGeometry::FingerPath { joints } => {
            let p = frame.joints[thumb];
            joints
                .windows(2)
                .map(|w| point_segment_distance(p, frame.joints[w[0]], frame.joints[w[1]]))
                .fold(f64::INFINITY, f64::min)
        }
        RuleGeometry::PipCross { pip, .. } => joint_distance(frame, thumb, *pip),
    }
}

/// Half-open contact runs of `trace` below `enter`, with exit hysteresis.
fn contact_runs(trace: &[f64], enter: f64, exit: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for (t, &d) in trace.iter().enumerate() {
        match start {
            None if d < enter => start = Some(t),
            Some(s) if d > exit => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, trace.len()));
    }
    runs
}

/// Extend a run along its strictly monotone approach and depart ramps so the
/// span covers the whole motion, not just the contact frames. The depart walk
/// stops once the trace climbs back to the level the approach started from,
/// which keeps the span from bleeding into the next gesture's transit.
/// Returns (span_start, span_end, approach_frames, depart_frames).
fn extend_run(trace: &[f64], run: (usize, usize), cap: usize) -> (usize, usize, usize, usize) {
    let mut s = run.0;
    let mut steps = 0;
    while s > 0 && steps < cap && trace[s - 1] > trace[s] + 1e-12 {
        s -= 1;
        steps += 1;
    }
    let settle_level = trace[s] * 0.96;
    let mut e = run.1;
    steps = 0;
    while e < trace.len()
        && steps < cap
        && trace[e] > trace[e - 1] + 1e-12
        && trace[e] < settle_level
    {
        e += 1;
        steps += 1;
    }
    let e = e.max(run.1);
    (s, e, run.0 - s, e - run.1)
}

const RAMP_WALK_CAP: usize = 40;

#[derive(Clone, Debug)]
struct Candidate {
    category: CategoryId,
    start: usize,
    end: usize,
    priority: u8,
    strength: usize,
}

fn kind_priority(kind: GestureKind) -> u8 {
    match kind {
        GestureKind::Swipe => 4,
        GestureKind::DoubleTap => 3,
        GestureKind::Pinch | GestureKind::Release => 2,
        GestureKind::Tap => 1,
    }
}

/// Annotate an unlabeled sequence. Frames that fail normalization are treated
/// as fully disengaged.
pub fn heuristic_label(seq: &SkeletonSequence, rules: &HeuristicRules) -> Vec<GestureInstance> {
    let normalized: Vec<Option<SkeletonFrame>> = seq
        .frames
        .iter()
        .map(|f| normalize_frame(f).ok())
        .collect();
    let params = &rules.params;
    let merge_frames = (params.merge_window_s * seq.fps).round() as usize;
    let mut candidates: Vec<Candidate> = Vec::new();

    // point-contact families share a trace per (thumb, joint) pair; evaluate
    // the family's tap/double/pinch/release rules over that trace together
    let mut point_groups: Vec<(usize, usize, Vec<&HeuristicRule>)> = Vec::new();
    for rule in &rules.rules {
        if let RuleGeometry::Point { joint } = rule.geometry {
            match point_groups
                .iter_mut()
                .find(|(t, j, _)| *t == rule.thumb_joint && *j == joint)
            {
                Some((_, _, list)) => list.push(rule),
                None => point_groups.push((rule.thumb_joint, joint, vec![rule])),
            }
        }
    }

    for (thumb, joint, family) in &point_groups {
        let geom = RuleGeometry::Point { joint: *joint };
        let trace: Vec<f64> = normalized
            .iter()
            .map(|f| match f {
                Some(fr) => geometry_distance(fr, *thumb, &geom),
                None => f64::INFINITY,
            })
            .collect();
        let threshold = family[0].contact_threshold;
        let min_run = family.iter().map(|r| r.min_contact_frames).min().unwrap_or(1);
        let mut runs = contact_runs(&trace, threshold, threshold * params.exit_factor);
        runs.retain(|r| r.1 - r.0 >= min_run);
        let tap_rule = family.iter().find(|r| r.kind == GestureKind::Tap);
        let double_rule = family.iter().find(|r| r.kind == GestureKind::DoubleTap);
        let pinch_rule = family.iter().find(|r| r.kind == GestureKind::Pinch);
        let release_rule = family.iter().find(|r| r.kind == GestureKind::Release);
        let short_cap = tap_rule.map(|r| r.max_contact_frames).unwrap_or(9);

        let mut i = 0;
        while i < runs.len() {
            let run = runs[i];
            let len = run.1 - run.0;
            if len > short_cap {
                // sustained contact: pinch or release by ramp asymmetry
                let (s, e, approach, depart) = extend_run(&trace, run, RAMP_WALK_CAP);
                let rule = if approach < depart {
                    release_rule
                } else {
                    pinch_rule
                };
                if let Some(rule) = rule {
                    if len >= rule.min_contact_frames {
                        candidates.push(Candidate {
                            category: rule.category,
                            start: s,
                            end: e,
                            priority: kind_priority(rule.kind),
                            strength: len,
                        });
                        i += 1;
                        continue;
                    }
                }
                // no pinch/release rule at this landmark: fall through to tap
                if let Some(rule) = tap_rule {
                    candidates.push(Candidate {
                        category: rule.category,
                        start: s,
                        end: e,
                        priority: kind_priority(rule.kind),
                        strength: len,
                    });
                }
                i += 1;
                continue;
            }
            // gather the group of short runs within the merge window
            let mut group_end = i;
            while group_end + 1 < runs.len() {
                let next = runs[group_end + 1];
                if next.1 - next.0 <= short_cap && next.0 - runs[group_end].1 < merge_frames {
                    group_end += 1;
                } else {
                    break;
                }
            }
            let first = runs[i];
            let last = runs[group_end];
            let (s, _, _, _) = extend_run(&trace, first, RAMP_WALK_CAP);
            let (_, e, _, _) = extend_run(&trace, last, RAMP_WALK_CAP);
            let total_contact: usize = runs[i..=group_end].iter().map(|r| r.1 - r.0).sum();
            if group_end > i {
                if let Some(rule) = double_rule {
                    candidates.push(Candidate {
                        category: rule.category,
                        start: s,
                        end: e,
                        priority: kind_priority(rule.kind),
                        strength: total_contact,
                    });
                }
            } else if let Some(rule) = tap_rule {
                if len >= rule.min_contact_frames {
                    candidates.push(Candidate {
                        category: rule.category,
                        start: s,
                        end: e,
                        priority: kind_priority(rule.kind),
                        strength: total_contact,
                    });
                }
            }
            i = group_end + 1;
        }
    }

    // swipe rules: contact run plus ordered waypoint visits
    for rule in &rules.rules {
        if matches!(rule.geometry, RuleGeometry::Point { .. }) {
            continue;
        }
        let trace: Vec<f64> = normalized
            .iter()
            .map(|f| match f {
                Some(fr) => geometry_distance(fr, rule.thumb_joint, &rule.geometry),
                None => f64::INFINITY,
            })
            .collect();
        let enter = rule.contact_threshold;
        let runs = contact_runs(&trace, enter, enter * params.exit_factor);
        let radius = match rule.geometry {
            RuleGeometry::PipCross { .. } => params.pip_waypoint_radius,
            _ => params.swipe_waypoint_radius,
        };
        for run in runs {
            if run.1 - run.0 < rule.min_contact_frames.max(params.min_swipe_run) {
                continue;
            }
            let (s, e, _, _) = extend_run(&trace, run, RAMP_WALK_CAP);
            // closest approach to each waypoint inside the extended span
            let mut visit_frames = Vec::with_capacity(rule.waypoints.len());
            let mut ok = true;
            for wp in &rule.waypoints {
                let mut best = f64::INFINITY;
                let mut best_t = s;
                for (t, nf) in normalized.iter().enumerate().take(e).skip(s) {
                    if let Some(fr) = nf {
                        let p = fr.joints[rule.thumb_joint];
                        let w = waypoint_position(fr, wp);
                        let d = ((p[0] - w[0]).powi(2)
                            + (p[1] - w[1]).powi(2)
                            + (p[2] - w[2]).powi(2))
                        .sqrt();
                        if d < best {
                            best = d;
                            best_t = t;
                        }
                    }
                }
                if best > radius {
                    ok = false;
                    break;
                }
                visit_frames.push(best_t);
            }
            if !ok || !visit_frames.windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            candidates.push(Candidate {
                category: rule.category,
                start: s,
                end: e,
                priority: kind_priority(rule.kind),
                strength: run.1 - run.0,
            });
        }
    }

    // most specific wins; lower-priority spans are trimmed around the kept
    // ones (ramp walks of neighbors can disagree by a frame or two) and only
    // dropped when little of them survives
    candidates.sort_by(|a, b| {
        b.priority
            .cmp(&a.priority)
            .then(b.strength.cmp(&a.strength))
            .then(a.start.cmp(&b.start))
            .then(a.category.cmp(&b.category))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    'next: for mut c in candidates {
        let original = c.end - c.start;
        for k in &kept {
            if c.end <= k.start || c.start >= k.end {
                continue;
            }
            if k.start > c.start && k.end < c.end {
                continue 'next; // higher-priority span strictly inside
            }
            if k.start <= c.start {
                c.start = c.start.max(k.end);
            }
            if k.end >= c.end {
                c.end = c.end.min(k.start);
            }
            if c.start >= c.end {
                continue 'next;
            }
        }
        let trimmed = c.end - c.start;
        if trimmed >= 2 && trimmed * 5 >= original * 2 {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.start);
    kept.into_iter()
        .map(|c| GestureInstance::new(c.category, c.start, c.end))
        .collect()
}

/// Span IoU between two half-open instances.
pub fn instance_iou(a: &GestureInstance, b: &GestureInstance) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start)) as f64;
    let union = (a.end.max(b.end) - a.start.min(b.start)) as f64;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{
        generate_sequence, synthesize_sequence, GeneratorConfig, ScriptEntry,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn clean_config(categories: Vec<CategoryId>) -> GeneratorConfig {
        GeneratorConfig {
            seed: 77,
            joint_noise_std: 0.0,
            categories,
            ..GeneratorConfig::default()
        }
    }

    fn run_script(script: Vec<ScriptEntry>, seed: u64) -> SkeletonSequence {
        let config = clean_config((1..=40).collect());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        synthesize_sequence(&script, &config, &mut rng).unwrap()
    }

    #[test]
    fn rest_sequence_yields_no_labels() {
        let seq = run_script(Vec::new(), 1);
        let labels = heuristic_label(&seq, &HeuristicRules::standard());
        assert!(labels.is_empty());
    }

    #[test]
    fn clean_tap_recovered_with_good_iou() {
        let script = vec![ScriptEntry {
            category: 3, // middle TIP tap
            duration_frames: 18,
            gap_frames: 12,
        }];
        let seq = run_script(script, 2);
        let labels = heuristic_label(&seq, &HeuristicRules::standard());
        assert_eq!(labels.len(), 1, "labels: {:?}", labels);
        assert_eq!(labels[0].category, 3);
        assert!(instance_iou(&labels[0], &seq.instances[0]) > 0.5);
    }

    #[test]
    fn two_contact_runs_a_tenth_second_apart_merge_into_a_double_tap() {
        // hand-built trace: contact at the index TIP for 3 frames, 3 frames
        // out (0.1 s at 30 fps), contact again
        use crate::synth::REST_POSE;
        let mut frames = Vec::new();
        for t in 0..24usize {
            let mut f = SkeletonFrame::zeroed();
            for (j, p) in REST_POSE.iter().enumerate() {
                f.joints[j] = *p;
            }
            let contact = (8..11).contains(&t) || (14..17).contains(&t);
            if contact {
                let tip = f.joints[Finger::Index.tip()];
                f.joints[THUMB_TIP] = [tip[0] + 0.05, tip[1], tip[2]];
            }
            frames.push(f);
        }
        let seq = SkeletonSequence {
            id: "merge".into(),
            subject: "t".into(),
            fps: 30.0,
            frames,
            instances: Vec::new(),
        };
        let labels = heuristic_label(&seq, &HeuristicRules::standard());
        assert_eq!(labels.len(), 1, "labels: {:?}", labels);
        assert_eq!(labels[0].category, 9); // index TIP double-tap
    }

    #[test]
    fn well_separated_runs_stay_two_taps() {
        let script = vec![
            ScriptEntry {
                category: 1,
                duration_frames: 12,
                gap_frames: 12,
            },
            ScriptEntry {
                category: 1,
                duration_frames: 12,
                gap_frames: 10,
            },
        ];
        let seq = run_script(script, 3);
        let labels = heuristic_label(&seq, &HeuristicRules::standard());
        assert_eq!(labels.len(), 2, "labels: {:?}", labels);
        assert!(labels.iter().all(|l| l.category == 1));
    }

    #[test]
    fn every_kind_round_trips_on_clean_data() {
        // one representative of each kind+location template, generous spans
        let cases: Vec<(CategoryId, usize)> = vec![
            (1, 16),  // tap index TIP
            (6, 14),  // tap ring MCP
            (9, 20),  // double-tap index TIP
            (16, 24), // double-tap little MCP
            (17, 20), // swipe index TIP->MCP
            (22, 26), // swipe ring MCP->TIP
            (27, 22), // swipe middle PIP up
            (32, 22), // swipe little PIP down
            (33, 20), // pinch index
            (38, 20), // release ring
        ];
        for (cat, dur) in cases {
            let script = vec![ScriptEntry {
                category: cat,
                duration_frames: dur,
                gap_frames: 15,
            }];
            let seq = run_script(script, 100 + cat as u64);
            let labels = heuristic_label(&seq, &HeuristicRules::standard());
            assert_eq!(labels.len(), 1, "category {cat}: {:?}", labels);
            assert_eq!(labels[0].category, cat, "category {cat} mislabeled");
            assert!(
                instance_iou(&labels[0], &seq.instances[0]) > 0.5,
                "category {cat} IoU too low: {:?} vs {:?}",
                labels[0],
                seq.instances[0]
            );
        }
    }

    #[test]
    fn round_trip_recovers_most_instances_on_clean_corpora() {
        let config = clean_config((1..=40).collect());
        let mut total = 0usize;
        let mut recovered = 0usize;
        for i in 0..30 {
            let seq = generate_sequence(&config, i).unwrap();
            let labels = heuristic_label(&seq, &HeuristicRules::standard());
            for gt in &seq.instances {
                total += 1;
                if labels
                    .iter()
                    .any(|l| l.category == gt.category && instance_iou(l, gt) > 0.5)
                {
                    recovered += 1;
                }
            }
        }
        let rate = recovered as f64 / total as f64;
        assert!(
            rate >= 0.95,
            "round-trip recovery {rate:.3} ({recovered}/{total})"
        );
    }
}
