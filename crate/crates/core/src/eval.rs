//! Online evaluation metrics: detection rate, false-positive score, frame
//! Jaccard index, normalized Levenshtein distance, average delay, and the
//! corpus statistics (SCCGP / MGI / MGD / NMJD).

use std::collections::BTreeMap;

use crate::hand::{joint_distance, CategoryId, GestureInstance, SkeletonSequence, JOINT_COUNT, MIDDLE_MCP, WRIST};
use crate::Real;

/// One committed detection on a sequence timeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub category: CategoryId,
    pub start: usize,
    pub end: usize,
    pub confidence: Real,
    /// Frame at which the detection was committed (window end).
    pub commit_frame: usize,
}

impl Detection {
    pub fn duration(&self) -> usize {
        self.end - self.start
    }
}

/// Matched (prediction index, ground-truth index) pairs plus the indices of
/// unmatched predictions (the false positives).
#[derive(Clone, Debug, Default)]
pub struct MatchOutcome {
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
}

/// A ground-truth gesture counts as detected when a same-category prediction
/// covers more than half of it and does not last more than twice as long.
/// Predictions are consumed greedily by descending overlap, ties to the
/// earlier ground truth.
pub fn detection_rate(
    predictions: &[Detection],
    ground_truth: &[GestureInstance],
) -> (Real, MatchOutcome) {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new(); // (overlap, pred, gt)
    for (pi, p) in predictions.iter().enumerate() {
        for (gi, g) in ground_truth.iter().enumerate() {
            if p.category != g.category {
                continue;
            }
            let inter = p.end.min(g.end).saturating_sub(p.start.max(g.start));
            if 2 * inter <= g.duration() {
                continue;
            }
            if p.duration() > 2 * g.duration() {
                continue;
            }
            candidates.push((inter, pi, gi));
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let mut pred_used = vec![false; predictions.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut outcome = MatchOutcome::default();
    for (_, pi, gi) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        outcome.pairs.push((pi, gi));
    }
    outcome.false_positives = (0..predictions.len()).filter(|&i| !pred_used[i]).collect();
    let dr = if ground_truth.is_empty() {
        0.0
    } else {
        outcome.pairs.len() as Real / ground_truth.len() as Real
    };
    (dr, outcome)
}

/// |false positives| / |ground truth|; None when there is no ground truth.
pub fn false_positive_score(false_positive_count: usize, total_gt: usize) -> Option<Real> {
    if total_gt == 0 {
        None
    } else {
        Some(false_positive_count as Real / total_gt as Real)
    }
}

/// Frame-wise Jaccard index averaged over the categories present in either
/// labeling (background excluded).
pub fn jaccard_index(
    predictions: &[Detection],
    ground_truth: &[GestureInstance],
    sequence_len: usize,
) -> Real {
    let mut gt_frames = vec![0u16; sequence_len];
    let mut pred_frames = vec![0u16; sequence_len];
    for g in ground_truth {
        for f in g.start..g.end.min(sequence_len) {
            gt_frames[f] = g.category;
        }
    }
    for p in predictions {
        for f in p.start..p.end.min(sequence_len) {
            pred_frames[f] = p.category;
        }
    }
    let mut categories: Vec<u16> = ground_truth
        .iter()
        .map(|g| g.category)
        .chain(predictions.iter().map(|p| p.category))
        .collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.is_empty() {
        return 1.0; // nothing to label on either side
    }
    let mut total = 0.0;
    for &c in &categories {
        let mut inter = 0usize;
        let mut union = 0usize;
        for f in 0..sequence_len {
            let a = gt_frames[f] == c;
            let b = pred_frames[f] == c;
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        if union > 0 {
            total += inter as Real / union as Real;
        }
    }
    total / categories.len() as Real
}

/// Classic dynamic-programming edit distance.
pub fn levenshtein(a: &[CategoryId], b: &[CategoryId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// 1 − edit distance / |truth|, clamped below at zero. None when the true
/// sequence is empty (the sequence is skipped by callers).
pub fn nld(predicted: &[CategoryId], truth: &[CategoryId]) -> Option<Real> {
    if truth.is_empty() {
        return None;
    }
    let d = levenshtein(predicted, truth) as Real;
    Some((1.0 - d / truth.len() as Real).max(0.0))
}

/// Mean commit latency in frames over detected gestures.
pub fn average_delay(
    predictions: &[Detection],
    ground_truth: &[GestureInstance],
    outcome: &MatchOutcome,
) -> Option<Real> {
    if outcome.pairs.is_empty() {
        return None;
    }
    let total: Real = outcome
        .pairs
        .iter()
        .map(|&(pi, gi)| predictions[pi].commit_frame as Real - ground_truth[gi].start as Real)
        .sum();
    Some(total / outcome.pairs.len() as Real)
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub detection_rate: Real,
    pub false_positive_score: Option<Real>,
    pub jaccard_index: Real,
    pub nld: Real,
    pub average_delay: Option<Real>,
    pub gt_count: usize,
    pub detection_count: usize,
    pub false_positive_count: usize,
    pub sequences: usize,
    pub nld_skipped: usize,
    pub per_category: BTreeMap<CategoryId, CategoryStats>,
}

#[derive(Clone, Debug, Default)]
pub struct CategoryStats {
    pub gt: usize,
    pub detected: usize,
    pub false_positives: usize,
}

/// Aggregate the full metric suite over per-sequence prediction lists.
pub fn evaluate_sequences(
    per_sequence: &[(Vec<Detection>, &SkeletonSequence)],
) -> EvalReport {
    let mut report = EvalReport {
        sequences: per_sequence.len(),
        ..Default::default()
    };
    let mut detected_total = 0usize;
    let mut ji_total = 0.0;
    let mut nld_total = 0.0;
    let mut nld_count = 0usize;
    let mut delay_total = 0.0;
    let mut delay_count = 0usize;
    for (preds, seq) in per_sequence {
        let (_, outcome) = detection_rate(preds, &seq.instances);
        report.gt_count += seq.instances.len();
        report.detection_count += preds.len();
        report.false_positive_count += outcome.false_positives.len();
        detected_total += outcome.pairs.len();
        ji_total += jaccard_index(preds, &seq.instances, seq.frames.len());

        let mut pred_sorted: Vec<&Detection> = preds.iter().collect();
        pred_sorted.sort_by_key(|p| (p.start, p.end));
        let pred_cats: Vec<CategoryId> = pred_sorted.iter().map(|p| p.category).collect();
        let true_cats: Vec<CategoryId> = seq.instances.iter().map(|g| g.category).collect();
        match nld(&pred_cats, &true_cats) {
            Some(v) => {
                nld_total += v;
                nld_count += 1;
            }
            None => report.nld_skipped += 1,
        }
        if let Some(d) = average_delay(preds, &seq.instances, &outcome) {
            delay_total += d * outcome.pairs.len() as Real;
            delay_count += outcome.pairs.len();
        }
        for g in &seq.instances {
            report.per_category.entry(g.category).or_default().gt += 1;
        }
        for &(pi, _) in &outcome.pairs {
            report
                .per_category
                .entry(preds[pi].category)
                .or_default()
                .detected += 1;
        }
        for &pi in &outcome.false_positives {
            report
                .per_category
                .entry(preds[pi].category)
                .or_default()
                .false_positives += 1;
        }
    }
    report.detection_rate = if report.gt_count == 0 {
        0.0
    } else {
        detected_total as Real / report.gt_count as Real
    };
    report.false_positive_score =
        false_positive_score(report.false_positive_count, report.gt_count);
    report.jaccard_index = if report.sequences == 0 {
        0.0
    } else {
        ji_total / report.sequences as Real
    };
    report.nld = if nld_count == 0 {
        0.0
    } else {
        nld_total / nld_count as Real
    };
    report.average_delay = if delay_count == 0 {
        None
    } else {
        Some(delay_total / delay_count as Real)
    };
    report
}

/// Corpus statistics: same-category continuation fraction, mean gap seconds,
/// mean duration seconds, and normalized mean joint displacement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStatistics {
    pub sccgp: Real,
    pub mgi: Real,
    pub mgd: Real,
    pub nmjd: Real,
    pub instances: usize,
    pub sequences: usize,
}

pub fn dataset_statistics(corpus: &[SkeletonSequence]) -> DatasetStatistics {
    let mut pair_count = 0usize;
    let mut repeat_count = 0usize;
    let mut gap_total = 0.0;
    let mut gap_count = 0usize;
    let mut dur_total = 0.0;
    let mut instances = 0usize;
    let mut disp_total = 0.0;
    let mut disp_count = 0usize;
    for seq in corpus {
        for w in seq.instances.windows(2) {
            pair_count += 1;
            if w[0].category == w[1].category {
                repeat_count += 1;
            }
            gap_total += w[1].start.saturating_sub(w[0].end) as Real / seq.fps;
            gap_count += 1;
        }
        for inst in &seq.instances {
            dur_total += inst.duration() as Real / seq.fps;
            instances += 1;
        }
        for w in seq.frames.windows(2) {
            let reference = joint_distance(&w[1], WRIST, MIDDLE_MCP);
            if reference <= 1e-9 {
                continue;
            }
            for j in 0..JOINT_COUNT {
                let a = w[0].joints[j];
                let b = w[1].joints[j];
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                    .sqrt();
                disp_total += d / reference;
                disp_count += 1;
            }
        }
    }
    DatasetStatistics {
        sccgp: if pair_count == 0 {
            0.0
        } else {
            repeat_count as Real / pair_count as Real
        },
        mgi: if gap_count == 0 { 0.0 } else { gap_total / gap_count as Real },
        mgd: if instances == 0 { 0.0 } else { dur_total / instances as Real },
        nmjd: if disp_count == 0 {
            0.0
        } else {
            disp_total / disp_count as Real
        },
        instances,
        sequences: corpus.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::SkeletonFrame;

    fn det(category: CategoryId, start: usize, end: usize) -> Detection {
        Detection {
            category,
            start,
            end,
            confidence: 0.9,
            commit_frame: end.saturating_sub(1),
        }
    }

    #[test]
    fn detection_rule_arithmetic() {
        // GT [10,40) cat 5; pred [20,45) cat 5: intersection 20 > 15,
        // duration 25 <= 60 -> detected
        let gt = vec![GestureInstance::new(5, 10, 40)];
        let (dr, outcome) = detection_rate(&[det(5, 20, 45)], &gt);
        assert_eq!(dr, 1.0);
        assert!(outcome.false_positives.is_empty());
    }

    #[test]
    fn label_mismatch_is_a_false_positive() {
        let gt = vec![GestureInstance::new(5, 10, 40)];
        let (dr, outcome) = detection_rate(&[det(6, 20, 45)], &gt);
        assert_eq!(dr, 0.0);
        assert_eq!(outcome.false_positives, vec![0]);
    }

    #[test]
    fn over_long_predictions_do_not_count() {
        let gt = vec![GestureInstance::new(5, 100, 120)]; // duration 20
        // full overlap but 2.5x duration
        let (dr, _) = detection_rate(&[det(5, 80, 130)], &gt);
        assert_eq!(dr, 0.0);
    }

    #[test]
    fn each_prediction_matches_at_most_one_gt() {
        let gt = vec![
            GestureInstance::new(5, 0, 20),
            GestureInstance::new(5, 20, 40),
        ];
        // one prediction overlapping both; covers > half of the first only
        let (dr, outcome) = detection_rate(&[det(5, 2, 24)], &gt);
        assert_eq!(dr, 0.5);
        assert_eq!(outcome.pairs.len(), 1);
    }

    #[test]
    fn detection_matching_is_order_independent() {
        let gt = vec![
            GestureInstance::new(3, 0, 20),
            GestureInstance::new(3, 30, 60),
        ];
        let preds_a = vec![det(3, 1, 21), det(3, 31, 59)];
        let preds_b = vec![det(3, 31, 59), det(3, 1, 21)];
        let (dr_a, _) = detection_rate(&preds_a, &gt);
        let (dr_b, _) = detection_rate(&preds_b, &gt);
        assert_eq!(dr_a, dr_b);
    }

    #[test]
    fn false_positive_ratio() {
        assert_eq!(false_positive_score(0, 20), Some(0.0));
        assert_eq!(false_positive_score(5, 20), Some(0.25));
        assert_eq!(false_positive_score(3, 0), None);
        // every prediction wrong-category over equal counts
        let gt: Vec<GestureInstance> = (0..4).map(|i| GestureInstance::new(1, i * 30, i * 30 + 20)).collect();
        let preds: Vec<Detection> = (0..4).map(|i| det(2, i * 30, i * 30 + 20)).collect();
        let (_, outcome) = detection_rate(&preds, &gt);
        assert_eq!(
            false_positive_score(outcome.false_positives.len(), gt.len()),
            Some(1.0)
        );
    }

    #[test]
    fn jaccard_examples() {
        let gt = vec![GestureInstance::new(7, 2, 6)];
        let same = vec![det(7, 2, 6)];
        assert!((jaccard_index(&same, &gt, 10) - 1.0).abs() < 1e-12);

        let shifted = vec![det(7, 3, 7)];
        assert!((jaccard_index(&shifted, &gt, 10) - 0.6).abs() < 1e-12);

        assert_eq!(jaccard_index(&[], &gt, 10), 0.0);
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(levenshtein(&[], &[1, 2, 3]), 3);
    }

    #[test]
    fn levenshtein_matches_memoized_recursion_exhaustively() {
        fn rec(a: &[u16], b: &[u16], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
            fn go(
                a: &[u16],
                b: &[u16],
                i: usize,
                j: usize,
                memo: &mut BTreeMap<(usize, usize), usize>,
            ) -> usize {
                if i == a.len() {
                    return b.len() - j;
                }
                if j == b.len() {
                    return a.len() - i;
                }
                if let Some(&v) = memo.get(&(i, j)) {
                    return v;
                }
                let mut best = go(a, b, i + 1, j, memo) + 1;
                best = best.min(go(a, b, i, j + 1, memo) + 1);
                best = best.min(go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]));
                memo.insert((i, j), best);
                best
            }
            go(a, b, 0, 0, memo)
        }
        // exhaustive over all sequences of length <= 3 on 3 symbols, both sides
        // (length <= 6 total across the pair keeps this fast and covers the DP)
        let mut seqs: Vec<Vec<u16>> = vec![vec![]];
        for len in 1..=3usize {
            let mut next = Vec::new();
            for s in seqs.iter().filter(|s| s.len() == len - 1) {
                for sym in 1..=3u16 {
                    let mut t = s.clone();
                    t.push(sym);
                    next.push(t);
                }
            }
            seqs.extend(next);
        }
        for a in &seqs {
            for b in &seqs {
                let mut memo = BTreeMap::new();
                assert_eq!(levenshtein(a, b), rec(a, b, &mut memo));
            }
        }
    }

    #[test]
    fn nld_examples() {
        assert_eq!(nld(&[1, 2, 3], &[1, 2, 3]), Some(1.0));
        assert_eq!(nld(&[1, 3], &[1, 2]), Some(0.5));
        assert_eq!(nld(&[1, 2, 3, 4, 5], &[9]), Some(0.0)); // clamped
        assert_eq!(nld(&[1], &[]), None);
    }

    #[test]
    fn delay_arithmetic() {
        let gt = vec![GestureInstance::new(4, 100, 110)];
        let mut p = det(4, 100, 110);
        p.commit_frame = 111;
        let (_, outcome) = detection_rate(&[p], &gt);
        let d = average_delay(&[p], &gt, &outcome).unwrap();
        assert_eq!(d, 11.0);
        // undetected gestures are excluded entirely
        let (_, empty_outcome) = detection_rate(&[], &gt);
        assert_eq!(average_delay(&[], &gt, &empty_outcome), None);
    }

    #[test]
    fn perfect_predictions_hit_the_fixed_point() {
        let frames = vec![SkeletonFrame::zeroed(); 100];
        let seq = SkeletonSequence {
            id: "s".into(),
            subject: "x".into(),
            fps: 30.0,
            frames,
            instances: vec![
                GestureInstance::new(1, 10, 30),
                GestureInstance::new(2, 40, 60),
            ],
        };
        let preds: Vec<Detection> = seq
            .instances
            .iter()
            .map(|g| det(g.category, g.start, g.end))
            .collect();
        let report = evaluate_sequences(&[(preds, &seq)]);
        assert_eq!(report.detection_rate, 1.0);
        assert_eq!(report.false_positive_score, Some(0.0));
        assert!((report.jaccard_index - 1.0).abs() < 1e-12);
        assert!((report.nld - 1.0).abs() < 1e-12);
    }

    #[test]
    fn removing_a_correct_prediction_never_helps() {
        let frames = vec![SkeletonFrame::zeroed(); 100];
        let seq = SkeletonSequence {
            id: "s".into(),
            subject: "x".into(),
            fps: 30.0,
            frames,
            instances: vec![
                GestureInstance::new(1, 10, 30),
                GestureInstance::new(2, 40, 60),
            ],
        };
        let full: Vec<Detection> = seq
            .instances
            .iter()
            .map(|g| det(g.category, g.start, g.end))
            .collect();
        let partial = vec![full[0]];
        let report_full = evaluate_sequences(&[(full.clone(), &seq)]);
        let report_partial = evaluate_sequences(&[(partial, &seq)]);
        assert!(report_partial.detection_rate <= report_full.detection_rate);
        assert!(report_partial.jaccard_index <= report_full.jaccard_index);
        // adding a wrong-category prediction never lowers FP
        let mut with_fp = full.clone();
        with_fp.push(det(9, 70, 90));
        let report_fp = evaluate_sequences(&[(with_fp, &seq)]);
        assert!(report_fp.false_positive_score >= report_full.false_positive_score);
    }

    #[test]
    fn statistics_definitions() {
        let frames = vec![SkeletonFrame::zeroed(); 200];
        let mut seq = SkeletonSequence {
            id: "s".into(),
            subject: "x".into(),
            fps: 30.0,
            frames,
            instances: vec![
                GestureInstance::new(1, 0, 15),  // 0.5 s
                GestureInstance::new(1, 20, 41), // 0.7 s, repeat, gap 5
                GestureInstance::new(2, 50, 65), // gap 9
            ],
        };
        // give frames a nonzero reference distance
        for f in seq.frames.iter_mut() {
            f.joints[MIDDLE_MCP] = [0.0, 0.1, 0.0];
        }
        let stats = dataset_statistics(&[seq]);
        assert!((stats.sccgp - 0.5).abs() < 1e-12); // 1 repeat of 2 pairs
        let expect_mgi = (5.0 + 9.0) / 2.0 / 30.0;
        assert!((stats.mgi - expect_mgi).abs() < 1e-12);
        let expect_mgd = (15.0 + 21.0 + 15.0) / 3.0 / 30.0;
        assert!((stats.mgd - expect_mgd).abs() < 1e-12);
        assert_eq!(stats.nmjd, 0.0); // static frames
    }

    #[test]
    fn sccgp_instance_example() {
        // categories [A, A, B]: one of two pairs repeats
        let frames = vec![SkeletonFrame::zeroed(); 100];
        let seq = SkeletonSequence {
            id: "s".into(),
            subject: "x".into(),
            fps: 30.0,
            frames,
            instances: vec![
                GestureInstance::new(1, 0, 10),
                GestureInstance::new(1, 12, 22),
                GestureInstance::new(2, 30, 40),
            ],
        };
        let stats = dataset_statistics(&[seq]);
        assert!((stats.sccgp - 0.5).abs() < 1e-12);
    }
}
