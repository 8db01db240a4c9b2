//! Bipartite matching between queries and ground truth, and the training
//! losses: weighted cross-entropy over matched/background queries, L1+IoU
//! position loss, and a query-based CTC loss over each training segment.
//!
//! Matching runs on detached values; gradients flow through the losses under
//! the chosen assignment.

use thiserror::Error;

use crate::numeric::{ctc_min_steps, Tape, Var};
use crate::{Arr, Real};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: Real,
    pub pos: Real,
    pub qctc: Real,
    /// Down-weight applied to background (unmatched) classification terms.
    pub background: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            pos: 5.0,
            qctc: 0.2,
            background: 0.1,
        }
    }
}

/// One ground-truth gesture as a matching target: 0-based class index plus
/// (center, width) on the lookback span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchTarget {
    pub class_index: usize,
    pub center: Real,
    pub width: Real,
}

/// Intersection-over-union of two 1-D segments given as (center, width).
pub fn segment_iou_1d(a: (Real, Real), b: (Real, Real)) -> Real {
    assert!(a.1 > 0.0 && b.1 > 0.0, "segment widths must be positive");
    let (alo, ahi) = (a.0 - a.1 / 2.0, a.0 + a.1 / 2.0);
    let (blo, bhi) = (b.0 - b.1 / 2.0, b.0 + b.1 / 2.0);
    let inter = (ahi.min(bhi) - alo.max(blo)).max(0.0);
    let union = a.1 + b.1 - inter;
    inter / union
}

/// Matching cost for one query/ground-truth pair:
/// λ_cls (1 − p(gt class)) + λ_pos (|Δx| + |Δw|) + λ_cls (1 − IoU).
pub fn match_cost(
    probs: &[Real],
    loc: (Real, Real),
    target: &MatchTarget,
    weights: &LossWeights,
) -> Real {
    let p = probs[target.class_index];
    let l1 = (loc.0 - target.center).abs() + (loc.1 - target.width).abs();
    let iou = segment_iou_1d(loc, (target.center, target.width));
    weights.cls * (1.0 - p) + weights.pos * l1 + weights.cls * (1.0 - iou)
}

/// Cost matrix [n_queries, n_targets] for the assignment.
pub fn build_cost_matrix(
    probs: &Arr,
    loc: &Arr,
    targets: &[MatchTarget],
    weights: &LossWeights,
) -> Arr {
    let (n, _) = probs.dims2();
    let g = targets.len();
    let mut out = Arr::zeros(&[n, g]);
    for q in 0..n {
        for (j, t) in targets.iter().enumerate() {
            out.data_mut()[q * g + j] =
                match_cost(probs.row(q), (loc.at2(q, 0), loc.at2(q, 1)), t, weights);
        }
    }
    out
}

/// Query-to-target assignment; None marks background queries.
pub type MatchAssignment = Vec<Option<usize>>;

/// Exact minimum-cost assignment of every target to a distinct query
/// (dynamic programming over target subsets). Requires targets ≤ queries.
pub fn hungarian_match(cost: &Arr) -> MatchAssignment {
    let (n, g) = cost.dims2();
    assert!(
        g <= n,
        "more ground-truth gestures ({g}) than queries ({n}) in one window"
    );
    assert!(g <= 20, "assignment DP limited to 20 targets");
    if g == 0 {
        return vec![None; n];
    }
    let full = (1usize << g) - 1;
    let inf = Real::INFINITY;
    // best[i][mask]: minimal cost assigning targets in `mask` using queries 0..i
    let mut best = vec![vec![inf; full + 1]; n + 1];
    best[0][0] = 0.0;
    for i in 0..n {
        for mask in 0..=full {
            let cur = best[i][mask];
            if cur == inf {
                continue;
            }
            // query i stays background
            if cur < best[i + 1][mask] {
                best[i + 1][mask] = cur;
            }
            for j in 0..g {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let nm = mask | (1 << j);
                let c = cur + cost.at2(i, j);
                if c < best[i + 1][nm] {
                    best[i + 1][nm] = c;
                }
            }
        }
    }
    // backtrack
    let mut assignment = vec![None; n];
    let mut mask = full;
    for i in (0..n).rev() {
        if best[i][mask] == best[i + 1][mask] {
            continue;
        }
        let mut chosen = None;
        for j in 0..g {
            if mask & (1 << j) == 0 {
                continue;
            }
            let prev = mask ^ (1 << j);
            if best[i][prev] != inf
                && (best[i][prev] + cost.at2(i, j) - best[i + 1][mask]).abs() < 1e-12
            {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("assignment backtrack failed");
        assignment[i] = Some(j);
        mask ^= 1 << j;
    }
    assert_eq!(mask, 0, "assignment left targets uncovered");
    assignment
}

/// Weighted cross-entropy over every query: matched queries supervise their
/// class at weight 1, unmatched queries supervise background at the
/// background weight.
pub fn classification_loss<'t>(
    tape: &'t Tape<Real>,
    logits: Var<'t, Real>,
    assignment: &MatchAssignment,
    targets: &[MatchTarget],
    background_index: usize,
    weights: &LossWeights,
) -> Var<'t, Real> {
    let log_probs = logits.log_softmax_rows();
    let mut total = tape.constant(Arr::scalar(0.0));
    for (q, assigned) in assignment.iter().enumerate() {
        let (class, w) = match assigned {
            Some(j) => (targets[*j].class_index, 1.0),
            None => (background_index, weights.background),
        };
        total = total.add(log_probs.pick(q, class).scale(-w));
    }
    total
}

fn scalar<'t>(tape: &'t Tape<Real>, v: Real) -> Var<'t, Real> {
    tape.constant(Arr::scalar(v))
}

fn abs_diff<'t>(a: Var<'t, Real>, b: Var<'t, Real>) -> Var<'t, Real> {
    a.sub(b).relu().add(b.sub(a).relu())
}

fn min_var<'t>(a: Var<'t, Real>, b: Var<'t, Real>) -> Var<'t, Real> {
    b.sub(b.sub(a).relu())
}

fn max_var<'t>(a: Var<'t, Real>, b: Var<'t, Real>) -> Var<'t, Real> {
    a.add(b.sub(a).relu())
}

/// Differentiable IoU of a predicted (center, width) scalar pair against a
/// fixed target segment.
fn iou_var<'t>(
    tape: &'t Tape<Real>,
    x: Var<'t, Real>,
    w: Var<'t, Real>,
    target: &MatchTarget,
) -> Var<'t, Real> {
    let half = w.scale(0.5);
    let lo = x.sub(half);
    let hi = x.add(half);
    let tlo = scalar(tape, target.center - target.width / 2.0);
    let thi = scalar(tape, target.center + target.width / 2.0);
    let inter = min_var(hi, thi).sub(max_var(lo, tlo)).relu();
    let union = w.add(scalar(tape, target.width)).sub(inter);
    inter.div(union)
}

/// Σ over matched pairs of |Δx| + |Δw| + (1 − IoU); background queries
/// contribute nothing.
pub fn position_loss<'t>(
    tape: &'t Tape<Real>,
    loc: Var<'t, Real>,
    assignment: &MatchAssignment,
    targets: &[MatchTarget],
) -> Var<'t, Real> {
    let mut total = scalar(tape, 0.0);
    for (q, assigned) in assignment.iter().enumerate() {
        let Some(j) = assigned else { continue };
        let t = &targets[*j];
        let x = loc.pick(q, 0);
        let w = loc.pick(q, 1);
        let l1 = abs_diff(x, scalar(tape, t.center)).add(abs_diff(w, scalar(tape, t.width)));
        let iou = iou_var(tape, x, w, t);
        total = total.add(l1).add(scalar(tape, 1.0).sub(iou));
    }
    total
}

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("target needs {needed} emission steps, segment provides {available}")]
    InfeasibleAlignment { needed: usize, available: usize },
}

/// Per-window inputs to the segment CTC loss.
pub struct CtcWindow<'a, 't> {
    pub logits: Var<'t, Real>,
    /// Detached probabilities, for choosing the background-dominated step.
    pub probs: &'a Arr,
    /// Detached (center, width) values, for ordering matched queries.
    pub loc: &'a Arr,
    pub assignment: &'a MatchAssignment,
}

/// Query-based CTC over one training segment. Emissions are, per window, the
/// matched queries' log-probability rows ordered by predicted center; windows
/// with no match contribute their most background-leaning query. Background
/// doubles as the CTC blank.
pub fn query_ctc_loss<'t>(
    tape: &'t Tape<Real>,
    windows: &[CtcWindow<'_, 't>],
    target_classes: &[usize],
    background_index: usize,
) -> Result<Var<'t, Real>, CtcError> {
    let mut rows: Vec<Var<'t, Real>> = Vec::new();
    for win in windows {
        let log_probs = win.logits.log_softmax_rows();
        let mut matched: Vec<usize> = win
            .assignment
            .iter()
            .enumerate()
            .filter_map(|(q, a)| a.map(|_| q))
            .collect();
        if matched.is_empty() {
            // most background-leaning query stands in for "nothing here"
            let mut best = 0;
            for q in 1..win.probs.dims2().0 {
                if win.probs.at2(q, background_index) > win.probs.at2(best, background_index) {
                    best = q;
                }
            }
            rows.push(log_probs.slice_rows(best, best + 1));
            continue;
        }
        matched.sort_by(|&a, &b| {
            win.loc
                .at2(a, 0)
                .partial_cmp(&win.loc.at2(b, 0))
                .unwrap()
                .then(a.cmp(&b))
        });
        for q in matched {
            rows.push(log_probs.slice_rows(q, q + 1));
        }
    }
    let needed = ctc_min_steps(target_classes);
    if needed > rows.len() {
        return Err(CtcError::InfeasibleAlignment {
            needed,
            available: rows.len(),
        });
    }
    let emissions = tape.concat_rows(&rows);
    Ok(tape.ctc_loss(emissions, target_classes, background_index))
}

/// λ_cls · L_cls + λ_pos · L_pos + λ_qctc · L_qctc.
pub fn total_loss<'t>(
    cls: Var<'t, Real>,
    pos: Var<'t, Real>,
    qctc: Option<Var<'t, Real>>,
    weights: &LossWeights,
) -> Var<'t, Real> {
    let mut total = cls.scale(weights.cls).add(pos.scale(weights.pos));
    if let Some(ctc) = qctc {
        total = total.add(ctc.scale(weights.qctc));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn iou_basics() {
        assert!((segment_iou_1d((5.0, 10.0), (5.0, 10.0)) - 1.0).abs() < 1e-12);
        assert_eq!(segment_iou_1d((0.0, 2.0), (10.0, 2.0)), 0.0);
        // [0,10] vs [5,15]
        let iou = segment_iou_1d((5.0, 10.0), (10.0, 10.0));
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "widths must be positive")]
    fn nonpositive_width_is_a_contract_violation() {
        let _ = segment_iou_1d((0.0, 0.0), (1.0, 1.0));
    }

    #[test]
    fn match_cost_examples() {
        let w = LossWeights::default();
        let mut probs = vec![0.0; 41];
        probs[7] = 1.0;
        let t = MatchTarget {
            class_index: 7,
            center: 0.4,
            width: 0.2,
        };
        assert!(match_cost(&probs, (0.4, 0.2), &t, &w).abs() < 1e-12);

        let uniform = vec![1.0 / 41.0; 41];
        let expect = w.cls * (1.0 - 1.0 / 41.0);
        assert!((match_cost(&uniform, (0.4, 0.2), &t, &w) - expect).abs() < 1e-12);

        // monotone nonincreasing in p(gt category)
        let mut lower = vec![0.5 / 40.0; 41];
        lower[7] = 0.5;
        let mut higher = vec![0.2 / 40.0; 41];
        higher[7] = 0.8;
        assert!(
            match_cost(&higher, (0.4, 0.2), &t, &w) < match_cost(&lower, (0.4, 0.2), &t, &w)
        );
    }

    /// Exhaustive minimum over all injections of targets into queries.
    fn brute_force_min(cost: &Arr) -> Real {
        let (n, g) = cost.dims2();
        fn rec(cost: &Arr, j: usize, used: &mut Vec<bool>, acc: Real, best: &mut Real) {
            let (n, g) = cost.dims2();
            if j == g {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for q in 0..n {
                if used[q] {
                    continue;
                }
                used[q] = true;
                rec(cost, j + 1, used, acc + cost.at2(q, j), best);
                used[q] = false;
            }
        }
        let mut best = Real::INFINITY;
        let mut used = vec![false; n];
        rec(cost, 0, &mut used, 0.0, &mut best);
        let _ = g;
        best
    }

    fn assignment_cost(cost: &Arr, assignment: &MatchAssignment) -> Real {
        assignment
            .iter()
            .enumerate()
            .filter_map(|(q, a)| a.map(|j| cost.at2(q, j)))
            .sum()
    }

    #[test]
    fn trivial_assignments() {
        let one = Arr::new(vec![1, 1], vec![3.0]);
        assert_eq!(hungarian_match(&one), vec![Some(0)]);

        let two = Arr::new(vec![2, 2], vec![1.0, 2.0, 2.0, 1.0]);
        let m = hungarian_match(&two);
        assert_eq!(m, vec![Some(0), Some(1)]);
        assert!((assignment_cost(&two, &m) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..300 {
            let n = rng.gen_range(1..=6);
            let g = rng.gen_range(1..=n);
            let cost = Arr::new(
                vec![n, g],
                (0..n * g).map(|_| rng.gen_range(0.0..10.0)).collect(),
            );
            let m = hungarian_match(&cost);
            // valid: injective, full coverage
            let mut seen = vec![false; g];
            for a in m.iter().flatten() {
                assert!(!seen[*a], "target assigned twice");
                seen[*a] = true;
            }
            assert!(seen.iter().all(|&s| s), "uncovered target");
            let got = assignment_cost(&cost, &m);
            let best = brute_force_min(&cost);
            assert!(
                (got - best).abs() < 1e-9,
                "assignment cost {got} vs brute force {best}"
            );
        }
    }

    #[test]
    fn scaling_the_costs_leaves_the_assignment_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..50 {
            let cost = Arr::new(
                vec![5, 3],
                (0..15).map(|_| rng.gen_range(0.1..5.0)).collect(),
            );
            let base = hungarian_match(&cost);
            let scaled = hungarian_match(&cost.scale(7.3));
            assert_eq!(base, scaled);
        }
    }

    fn targets_for(classes: &[usize]) -> Vec<MatchTarget> {
        classes
            .iter()
            .map(|&c| MatchTarget {
                class_index: c,
                center: 0.5,
                width: 0.2,
            })
            .collect()
    }

    #[test]
    fn classification_loss_examples() {
        let tape = Tape::new();
        let w = LossWeights::default();
        let bg = 4usize; // 4 categories + background in this toy
        // two queries: one matched to class 1 with probability ~1, one
        // background with p(bg) = 0.5
        let big = 50.0;
        let logits = tape.constant(Arr::new(
            vec![2, 5],
            vec![
                0.0, big, 0.0, 0.0, 0.0, // q0: p(class1) ≈ 1
                0.0, (2.0f64).ln(), 0.0, 0.0, (2.0f64).ln(), // q1: p(bg) = 1/3? adjust below
            ],
        ));
        let _ = logits;
        // exact p(bg) = 0.5: logits (0, 0, ln 3) over 3 classes gives p = 3/5;
        // simplest exact construction: two classes with equal logits plus bg
        // matching their sum
        let logits = tape.constant(Arr::new(
            vec![2, 3],
            vec![50.0, 0.0, 0.0, 0.0, 0.0, (2.0f64).ln()],
        ));
        // q1 row (0, 0, ln2): p(bg) = 2/(1+1+2) = 0.5
        let assignment = vec![Some(0), None];
        let targets = targets_for(&[0]);
        let loss = classification_loss(&tape, logits, &assignment, &targets, 2, &w);
        let expect = 0.1 * (2.0f64).ln(); // matched term ≈ 0
        assert!(
            (loss.value_scalar() - expect).abs() < 1e-9,
            "{} vs {}",
            loss.value_scalar(),
            expect
        );
        let _ = bg;
    }

    #[test]
    fn classification_loss_decreases_as_target_probability_rises() {
        let w = LossWeights::default();
        let targets = targets_for(&[1]);
        let run = |l1: Real| -> Real {
            let tape = Tape::new();
            let logits = tape.constant(Arr::new(vec![1, 3], vec![0.0, l1, 0.0]));
            classification_loss(&tape, logits, &vec![Some(0)], &targets, 2, &w).value_scalar()
        };
        assert!(run(2.0) < run(1.0));
        assert!(run(1.0) < run(0.0));
    }

    #[test]
    fn position_loss_examples() {
        let tape = Tape::new();
        // exact localization
        let loc = tape.constant(Arr::new(vec![1, 2], vec![0.5, 0.4]));
        let targets = vec![MatchTarget {
            class_index: 0,
            center: 0.5,
            width: 0.4,
        }];
        let loss = position_loss(&tape, loc, &vec![Some(0)], &targets);
        assert!(loss.value_scalar().abs() < 1e-12);

        // Δx = 0.1, width 0.4 both: IoU = 0.3/0.5, loss = 0.1 + (1 - 0.6)
        let loc = tape.constant(Arr::new(vec![1, 2], vec![0.6, 0.4]));
        let loss = position_loss(&tape, loc, &vec![Some(0)], &targets);
        assert!((loss.value_scalar() - 0.5).abs() < 1e-12);

        // empty assignment
        let loss = position_loss(&tape, loc, &vec![None], &targets);
        assert_eq!(loss.value_scalar(), 0.0);
    }

    #[test]
    fn position_loss_gradients_match_finite_differences() {
        let targets = vec![MatchTarget {
            class_index: 0,
            center: 0.45,
            width: 0.3,
        }];
        let assignment = vec![Some(0)];
        let run = |x: Real, w: Real| -> Real {
            let tape = Tape::new();
            let loc = tape.constant(Arr::new(vec![1, 2], vec![x, w]));
            position_loss(&tape, loc, &assignment, &targets).value_scalar()
        };
        let tape = Tape::new();
        let mut params = crate::Params::new();
        params.insert("loc", Arr::new(vec![1, 2], vec![0.61, 0.22]));
        let bound = params.bind(&tape);
        let loss = position_loss(&tape, bound.var("loc"), &assignment, &targets);
        let grads = tape.backward(loss);
        let g = &grads["loc"];
        let eps = 1e-6;
        let gx = (run(0.61 + eps, 0.22) - run(0.61 - eps, 0.22)) / (2.0 * eps);
        let gw = (run(0.61, 0.22 + eps) - run(0.61, 0.22 - eps)) / (2.0 * eps);
        assert!((g.data()[0] - gx).abs() < 1e-6);
        assert!((g.data()[1] - gw).abs() < 1e-6);
    }

    /// Exhaustive CTC by enumerating every alignment path.
    fn ctc_brute_force(log_probs: &Arr, targets: &[usize], blank: usize) -> Real {
        let (steps, classes) = log_probs.dims2();
        let mut total = 0.0f64;
        let mut path = vec![0usize; steps];
        fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
            let mut out = Vec::new();
            let mut prev = usize::MAX;
            for &p in path {
                if p != prev && p != blank {
                    out.push(p);
                }
                prev = p;
            }
            out
        }
        fn rec(
            log_probs: &Arr,
            t: usize,
            steps: usize,
            classes: usize,
            path: &mut Vec<usize>,
            targets: &[usize],
            blank: usize,
            total: &mut f64,
        ) {
            if t == steps {
                if collapse(path, blank) == targets {
                    let lp: f64 = path
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| log_probs.at2(i, c))
                        .sum();
                    *total += lp.exp();
                }
                return;
            }
            for c in 0..classes {
                path[t] = c;
                rec(log_probs, t + 1, steps, classes, path, targets, blank, total);
            }
        }
        rec(
            log_probs, 0, steps, classes, &mut path, targets, blank, &mut total,
        );
        -total.ln()
    }

    #[test]
    fn ctc_forward_matches_brute_force_enumeration() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for trial in 0..20 {
            let steps = rng.gen_range(2..=8);
            let classes = 4usize;
            let blank = 3usize;
            let raw = Arr::randn(&[steps, classes], 1.0, &mut rng);
            let log_probs = {
                let tape = Tape::new();
                tape.constant(raw.clone()).log_softmax_rows().value()
            };
            let max_len = steps.min(4);
            let len = rng.gen_range(1..=max_len);
            let mut targets = Vec::new();
            for _ in 0..len {
                targets.push(rng.gen_range(0..3));
            }
            if ctc_min_steps(&targets) > steps {
                continue;
            }
            let tape = Tape::new();
            let lp = tape.constant(log_probs.clone());
            let fast = tape.ctc_loss(lp, &targets, blank).value_scalar();
            let slow = ctc_brute_force(&log_probs, &targets, blank);
            assert!(
                (fast - slow).abs() < 1e-6,
                "trial {trial}: forward {fast} vs enumeration {slow}"
            );
        }
    }

    #[test]
    fn query_ctc_assembles_matched_rows_in_center_order() {
        let tape = Tape::new();
        let n = 3;
        let classes = 4;
        let blank = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let logits_arr = Arr::randn(&[n, classes], 1.0, &mut rng);
        let logits = tape.constant(logits_arr.clone());
        let probs = logits_arr.softmax(1);
        // q0 and q2 matched; q2 predicted earlier than q0
        let loc = Arr::new(vec![n, 2], vec![0.8, 0.1, 0.5, 0.1, 0.2, 0.1]);
        let assignment: MatchAssignment = vec![Some(1), None, Some(0)];
        let win = CtcWindow {
            logits,
            probs: &probs,
            loc: &loc,
            assignment: &assignment,
        };
        let loss = query_ctc_loss(&tape, &[win], &[2, 1], blank).unwrap();
        // oracle: emissions are rows (q2, q0) of the log-softmax
        let lp = logits_arr.softmax(1).map(|v| v.ln());
        let mut emissions = Arr::zeros(&[2, classes]);
        emissions.data_mut()[..classes].copy_from_slice(lp.row(2));
        emissions.data_mut()[classes..].copy_from_slice(lp.row(0));
        let oracle = ctc_brute_force(&emissions, &[2, 1], blank);
        assert!((loss.value_scalar() - oracle).abs() < 1e-9);
    }

    #[test]
    fn infeasible_targets_are_reported_not_crashed() {
        let tape = Tape::new();
        let logits = tape.constant(Arr::zeros(&[2, 4]));
        let probs = Arr::filled(&[2, 4], 0.25);
        let loc = Arr::filled(&[2, 2], 0.5);
        let assignment: MatchAssignment = vec![None, None];
        let win = CtcWindow {
            logits,
            probs: &probs,
            loc: &loc,
            assignment: &assignment,
        };
        match query_ctc_loss(&tape, &[win], &[0, 1, 2], 3) {
            Err(err) => assert_eq!(
                err,
                CtcError::InfeasibleAlignment {
                    needed: 3,
                    available: 1
                }
            ),
            Ok(_) => panic!("expected infeasible alignment"),
        }
    }

    #[test]
    fn total_loss_combination() {
        let w = LossWeights::default();
        let tape = Tape::new();
        let zero = tape.constant(Arr::scalar(0.0));
        assert_eq!(total_loss(zero, zero, Some(zero), &w).value_scalar(), 0.0);
        let one = tape.constant(Arr::scalar(1.0));
        let total = total_loss(one, one, Some(one), &w).value_scalar();
        assert!((total - 7.2).abs() < 1e-12);
        let no_ctc = total_loss(one, one, None, &w).value_scalar();
        assert!((no_ctc - 7.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_gradient_is_weighted_sum_of_component_gradients() {
        let w = LossWeights::default();
        let tape = Tape::new();
        let mut params = crate::Params::new();
        params.insert("v", Arr::scalar(0.7));
        let bound = params.bind(&tape);
        let v = bound.var("v");
        // components v², 2v, v³
        let cls = v.mul(v);
        let pos = v.scale(2.0);
        let ctc = v.mul(v).mul(v);
        let loss = total_loss(cls, pos, Some(ctc), &w);
        let grads = tape.backward(loss);
        let expect = w.cls * 2.0 * 0.7 + w.pos * 2.0 + w.qctc * 3.0 * 0.7 * 0.7;
        assert!((grads["v"].data()[0] - expect).abs() < 1e-12);
    }
}
