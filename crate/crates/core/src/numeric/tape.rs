//! Reverse-mode automatic differentiation over [`Array`].
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] replays the
//! recording in reverse and returns per-parameter gradients. Node ids are
//! append-ordered, so reverse id order is already a topological order.
//!
//! Ops cover exactly what the recognition model composes: dense algebra,
//! row softmax / layer norm, the two graph-convolution primitives, and a
//! CTC negative log-likelihood with an analytic vector-Jacobian product.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use super::array::Array;
use super::scalar::Scalar;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<F: Scalar> {
    Leaf { param: Option<String> },
    Add(usize, usize),
    /// Broadcast-add a row vector `b` (shape [n] or [1, n]) over every row of `a`.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, F),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNormRows { x: usize, gain: usize, bias: usize },
    SumAll(usize),
    MeanRows(usize),
    /// Mean over the middle axis of a rank-3 array: [t, j, c] -> [t, c].
    MeanAxisMid(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize, end: usize },
    SliceCols { x: usize, start: usize, end: usize },
    Pick { x: usize, row: usize, col: usize },
    Reshape(usize),
    /// Left-multiply each leading slice of a rank-3 array by a fixed matrix:
    /// out[t] = adj · x[t].
    AdjMix { x: usize, adj: Arc<Array<F>> },
    /// Per-joint temporal convolution with same-padding and full channel
    /// mixing; weight is the flattened [k·c_in, c_out] kernel.
    TemporalConv { x: usize, w: usize, b: usize, k: usize },
    /// CTC negative log-likelihood of `targets` given row log-probabilities.
    CtcLoss { logp: usize, targets: Arc<Vec<usize>>, blank: usize },
}

struct Node<F: Scalar> {
    op: Op<F>,
    value: Array<F>,
}

pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    tape: &'t Tape<F>,
    id: usize,
}

/// Per-parameter gradients keyed by parameter name; BTreeMap keeps the
/// reduction order deterministic.
pub type GradientMap<F> = BTreeMap<String, Array<F>>;

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<F>, value: Array<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Array<F> {
        self.nodes.borrow()[id].value.clone()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Array<F>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    pub fn constant(&self, value: Array<F>) -> Var<'_, F> {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn param(&self, name: &str, value: Array<F>) -> Var<'_, F> {
        self.push(
            Op::Leaf {
                param: Some(name.to_string()),
            },
            value,
        )
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, F>]) -> Var<'t, F> {
        assert!(!parts.is_empty(), "concat_rows of zero arrays");
        let nodes = self.nodes.borrow();
        let n = nodes[parts[0].id].value.dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = &nodes[p.id].value;
            let (m, nn) = v.dims2();
            assert_eq!(nn, n, "concat_rows column mismatch");
            rows += m;
            data.extend_from_slice(v.data());
        }
        drop(nodes);
        self.push(
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            Array::new(vec![rows, n], data),
        )
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, F>]) -> Var<'t, F> {
        assert!(!parts.is_empty(), "concat_cols of zero arrays");
        let nodes = self.nodes.borrow();
        let m = nodes[parts[0].id].value.dims2().0;
        let total: usize = parts
            .iter()
            .map(|p| {
                let (mm, nn) = nodes[p.id].value.dims2();
                assert_eq!(mm, m, "concat_cols row mismatch");
                nn
            })
            .sum();
        let mut data = vec![F::zero(); m * total];
        let mut col = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            let (_, nn) = v.dims2();
            for r in 0..m {
                data[r * total + col..r * total + col + nn].copy_from_slice(v.row(r));
            }
            col += nn;
        }
        drop(nodes);
        self.push(
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            Array::new(vec![m, total], data),
        )
    }

    /// CTC negative log-likelihood. `logp` holds per-step log-probabilities
    /// (rows sum to one in probability space); `blank` is the blank label.
    /// The target must fit in the available steps: callers check
    /// [`ctc_min_steps`] first.
    pub fn ctc_loss<'t>(
        &'t self,
        logp: Var<'t, F>,
        targets: &[usize],
        blank: usize,
    ) -> Var<'t, F> {
        let (steps, classes) = self.with_value(logp.id, |v| v.dims2());
        assert!(
            targets.iter().all(|&t| t < classes && t != blank),
            "ctc target out of range or equal to blank"
        );
        assert!(
            ctc_min_steps(targets) <= steps,
            "ctc target needs {} steps, only {} available",
            ctc_min_steps(targets),
            steps
        );
        let nll = self.with_value(logp.id, |v| ctc_forward_nll(v, targets, blank));
        self.push(
            Op::CtcLoss {
                logp: logp.id,
                targets: Arc::new(targets.to_vec()),
                blank,
            },
            Array::scalar(nll),
        )
    }

    /// Reverse pass from a scalar loss; returns gradients for every reachable
    /// named parameter. Calling repeatedly and merging maps accumulates.
    pub fn backward(&self, loss: Var<'_, F>) -> GradientMap<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.numel(),
            1,
            "backward requires a scalar loss node"
        );
        let mut grads: Vec<Option<Array<F>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array::filled(nodes[loss.id].value.shape(), F::one()));
        let mut out = GradientMap::new();

        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(name) = param {
                        out.entry(name.clone())
                            .and_modify(|acc| acc.add_assign(&g))
                            .or_insert(g);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let bshape = nodes[*b].value.shape().to_vec();
                    let (m, n) = g.dims2();
                    let mut gb = vec![F::zero(); n];
                    for r in 0..m {
                        for (acc, &v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, Array::new(bshape, gb));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(-F::one()));
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&nodes[*b].value);
                    let gb = g.mul(&nodes[*a].value);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let ga = g.zip_map(bv, |gv, b| gv / b);
                    let gb = g
                        .zip_map(av, |gv, a| gv * a)
                        .zip_map(bv, |t, b| -t / (b * b));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_a_bt(&nodes[*b].value);
                    let gb = nodes[*a].value.matmul_at_b(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Relu(a) => {
                    let mask = node.value.map(|v| if v > F::zero() { F::one() } else { F::zero() });
                    accumulate(&mut grads, *a, g.mul(&mask));
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    let gx = g.zip_map(s, |gv, sv| gv * sv * (F::one() - sv));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Ln(a) => {
                    let gx = g.zip_map(&nodes[*a].value, |gv, xv| gv / xv);
                    accumulate(&mut grads, *a, gx);
                }
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let (m, n) = s.dims2();
                    let mut gx = g.mul(s);
                    for r in 0..m {
                        let dot: F = gx.row(r).iter().copied().sum();
                        let srow = s.row(r).to_vec();
                        for (x, sv) in gx.data_mut()[r * n..(r + 1) * n].iter_mut().zip(srow) {
                            *x -= dot * sv;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = node.value.dims2();
                    let mut gx = g.clone();
                    for r in 0..m {
                        let gsum: F = g.row(r).iter().copied().sum();
                        let logrow = node.value.row(r).to_vec();
                        for (x, lp) in gx.data_mut()[r * n..(r + 1) * n].iter_mut().zip(logrow) {
                            *x -= gsum * lp.exp();
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let (gx, ggain, gbias) =
                        layer_norm_backward(&nodes[*x].value, &nodes[*gain].value, &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Array::filled(nodes[*a].value.shape(), gv));
                }
                Op::MeanRows(a) => {
                    let (m, n) = nodes[*a].value.dims2();
                    let inv = F::one() / F::from_usize_c(m);
                    let mut gx = Array::zeros(&[m, n]);
                    for r in 0..m {
                        for (x, &gv) in gx.data_mut()[r * n..(r + 1) * n].iter_mut().zip(g.row(0)) {
                            *x = gv * inv;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::MeanAxisMid(a) => {
                    let (t, j, c) = nodes[*a].value.dims3();
                    let inv = F::one() / F::from_usize_c(j);
                    let mut gx = Array::zeros(&[t, j, c]);
                    for ti in 0..t {
                        for ji in 0..j {
                            let base = (ti * j + ji) * c;
                            for ci in 0..c {
                                gx.data_mut()[base + ci] = g.data()[ti * c + ci] * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let (_, n) = g.dims2();
                    let mut row = 0;
                    for &p in parts {
                        let (m, _) = nodes[p].value.dims2();
                        let slice = g.data()[row * n..(row + m) * n].to_vec();
                        accumulate(&mut grads, p, Array::new(vec![m, n], slice));
                        row += m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = g.dims2();
                    let mut col = 0;
                    for &p in parts {
                        let (_, n) = nodes[p].value.dims2();
                        let mut gp = Array::zeros(&[m, n]);
                        for r in 0..m {
                            gp.data_mut()[r * n..(r + 1) * n]
                                .copy_from_slice(&g.data()[r * total + col..r * total + col + n]);
                        }
                        accumulate(&mut grads, p, gp);
                        col += n;
                    }
                }
                Op::SliceRows { x, start, end } => {
                    let (m, n) = nodes[*x].value.dims2();
                    let mut gx = Array::zeros(&[m, n]);
                    gx.data_mut()[start * n..end * n].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start, end } => {
                    let (m, n) = nodes[*x].value.dims2();
                    let w = end - start;
                    let mut gx = Array::zeros(&[m, n]);
                    for r in 0..m {
                        gx.data_mut()[r * n + start..r * n + end]
                            .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Pick { x, row, col } => {
                    let (m, n) = nodes[*x].value.dims2();
                    let mut gx = Array::zeros(&[m, n]);
                    gx.data_mut()[row * n + col] = g.data()[0];
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, g.clone().reshaped(&shape));
                }
                Op::AdjMix { x, adj } => {
                    let (t, j, c) = nodes[*x].value.dims3();
                    let mut gx = Array::zeros(&[t, j, c]);
                    for ti in 0..t {
                        let gslice = Array::new(
                            vec![j, c],
                            g.data()[ti * j * c..(ti + 1) * j * c].to_vec(),
                        );
                        let part = adj.matmul_at_b(&gslice);
                        gx.data_mut()[ti * j * c..(ti + 1) * j * c].copy_from_slice(part.data());
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::TemporalConv { x, w, b, k } => {
                    let (gx, gw, gb) =
                        temporal_conv_backward(&nodes[*x].value, &nodes[*w].value, *k, &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::CtcLoss {
                    logp,
                    targets,
                    blank,
                } => {
                    let glp = ctc_backward(&nodes[*logp].value, targets, *blank, g.data()[0]);
                    accumulate(&mut grads, *logp, glp);
                }
            }
        }
        out
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Array<F>>], id: usize, g: Array<F>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

impl<'t, F: Scalar> Var<'t, F> {
    pub fn value(&self) -> Array<F> {
        self.tape.value_of(self.id)
    }

    pub fn value_scalar(&self) -> F {
        let v = self.value();
        assert_eq!(v.numel(), 1, "value_scalar on non-scalar node");
        v.data()[0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn add(self, other: Self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| self.tape.with_value(other.id, |b| a.add(b)));
        self.tape.push(Op::Add(self.id, other.id), v)
    }

    pub fn add_row(self, row: Self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            self.tape.with_value(row.id, |b| {
                let (m, n) = a.dims2();
                assert_eq!(b.numel(), n, "add_row width mismatch");
                let mut out = a.clone();
                for r in 0..m {
                    for (x, &bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                        *x += bv;
                    }
                }
                out
            })
        });
        self.tape.push(Op::AddRow(self.id, row.id), v)
    }

    pub fn sub(self, other: Self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| self.tape.with_value(other.id, |b| a.sub(b)));
        self.tape.push(Op::Sub(self.id, other.id), v)
    }

    pub fn mul(self, other: Self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| self.tape.with_value(other.id, |b| a.mul(b)));
        self.tape.push(Op::Mul(self.id, other.id), v)
    }

    pub fn div(self, other: Self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            self.tape
                .with_value(other.id, |b| a.zip_map(b, |x, y| x / y))
        });
        self.tape.push(Op::Div(self.id, other.id), v)
    }

    pub fn scale(self, c: F) -> Self {
        let v = self.tape.with_value(self.id, |a| a.scale(c));
        self.tape.push(Op::Scale(self.id, c), v)
    }

    pub fn matmul(self, other: Self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| self.tape.with_value(other.id, |b| a.matmul(b)));
        self.tape.push(Op::MatMul(self.id, other.id), v)
    }

    pub fn transpose(self) -> Self {
        let v = self.tape.with_value(self.id, |a| a.transpose());
        self.tape.push(Op::Transpose(self.id), v)
    }

    pub fn relu(self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| a.map(|x| if x > F::zero() { x } else { F::zero() }));
        self.tape.push(Op::Relu(self.id), v)
    }

    pub fn sigmoid(self) -> Self {
        let v = self
            .tape
            .with_value(self.id, |a| a.map(|x| F::one() / (F::one() + (-x).exp())));
        self.tape.push(Op::Sigmoid(self.id), v)
    }

    pub fn ln(self) -> Self {
        let v = self.tape.with_value(self.id, |a| a.map(|x| x.ln()));
        self.tape.push(Op::Ln(self.id), v)
    }

    pub fn softmax_rows(self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "softmax_rows expects rank-2");
            a.softmax(1)
        });
        self.tape.push(Op::SoftmaxRows(self.id), v)
    }

    pub fn log_softmax_rows(self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (m, n) = a.dims2();
            let mut out = a.clone();
            for r in 0..m {
                let row = &mut out.data_mut()[r * n..(r + 1) * n];
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = max
                    + row
                        .iter()
                        .map(|&v| (v - max).exp())
                        .sum::<F>()
                        .ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            out
        });
        self.tape.push(Op::LogSoftmaxRows(self.id), v)
    }

    pub fn layer_norm_rows(self, gain: Self, bias: Self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            self.tape.with_value(gain.id, |gv| {
                self.tape.with_value(bias.id, |bv| {
                    let (m, n) = a.dims2();
                    assert_eq!(gv.numel(), n, "layer norm gain width mismatch");
                    assert_eq!(bv.numel(), n, "layer norm bias width mismatch");
                    let eps = F::from_f64_c(LAYER_NORM_EPS);
                    let mut out = a.clone();
                    for r in 0..m {
                        let row = &mut out.data_mut()[r * n..(r + 1) * n];
                        let mean = row.iter().copied().sum::<F>() / F::from_usize_c(n);
                        let var = row
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<F>()
                            / F::from_usize_c(n);
                        let inv = F::one() / (var + eps).sqrt();
                        for (x, (&g, &b)) in row.iter_mut().zip(gv.data().iter().zip(bv.data())) {
                            *x = (*x - mean) * inv * g + b;
                        }
                    }
                    out
                })
            })
        });
        self.tape.push(
            Op::LayerNormRows {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
            },
            v,
        )
    }

    pub fn sum_all(self) -> Self {
        let v = self.tape.with_value(self.id, |a| Array::scalar(a.sum()));
        self.tape.push(Op::SumAll(self.id), v)
    }

    /// Mean over rows of a rank-2 array -> [1, n].
    pub fn mean_rows(self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (m, n) = a.dims2();
            let inv = F::one() / F::from_usize_c(m);
            let mut out = vec![F::zero(); n];
            for r in 0..m {
                for (acc, &x) in out.iter_mut().zip(a.row(r)) {
                    *acc += x;
                }
            }
            out.iter_mut().for_each(|x| *x *= inv);
            Array::new(vec![1, n], out)
        });
        self.tape.push(Op::MeanRows(self.id), v)
    }

    pub fn mean_axis_mid(self) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (t, j, c) = a.dims3();
            let inv = F::one() / F::from_usize_c(j);
            let mut out = vec![F::zero(); t * c];
            for ti in 0..t {
                for ji in 0..j {
                    let base = (ti * j + ji) * c;
                    for ci in 0..c {
                        out[ti * c + ci] += a.data()[base + ci];
                    }
                }
            }
            out.iter_mut().for_each(|x| *x *= inv);
            Array::new(vec![t, c], out)
        });
        self.tape.push(Op::MeanAxisMid(self.id), v)
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (m, n) = a.dims2();
            assert!(start < end && end <= m, "slice_rows {}..{} of {}", start, end, m);
            Array::new(vec![end - start, n], a.data()[start * n..end * n].to_vec())
        });
        self.tape.push(
            Op::SliceRows {
                x: self.id,
                start,
                end,
            },
            v,
        )
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (m, n) = a.dims2();
            assert!(start < end && end <= n, "slice_cols {}..{} of {}", start, end, n);
            let w = end - start;
            let mut out = vec![F::zero(); m * w];
            for r in 0..m {
                out[r * w..(r + 1) * w].copy_from_slice(&a.data()[r * n + start..r * n + end]);
            }
            Array::new(vec![m, w], out)
        });
        self.tape.push(
            Op::SliceCols {
                x: self.id,
                start,
                end,
            },
            v,
        )
    }

    pub fn pick(self, row: usize, col: usize) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (m, n) = a.dims2();
            assert!(row < m && col < n, "pick ({}, {}) out of {}x{}", row, col, m, n);
            Array::scalar(a.data()[row * n + col])
        });
        self.tape.push(
            Op::Pick {
                x: self.id,
                row,
                col,
            },
            v,
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let v = self.tape.with_value(self.id, |a| a.clone().reshaped(shape));
        self.tape.push(Op::Reshape(self.id), v)
    }

    pub fn adj_mix(self, adj: Arc<Array<F>>) -> Self {
        let v = self.tape.with_value(self.id, |a| {
            let (t, j, c) = a.dims3();
            let (aj, aj2) = adj.dims2();
            assert!(aj == j && aj2 == j, "adjacency extents disagree with joints");
            let mut out = Array::zeros(&[t, j, c]);
            for ti in 0..t {
                let xs = Array::new(vec![j, c], a.data()[ti * j * c..(ti + 1) * j * c].to_vec());
                let part = adj.matmul(&xs);
                out.data_mut()[ti * j * c..(ti + 1) * j * c].copy_from_slice(part.data());
            }
            out
        });
        self.tape.push(
            Op::AdjMix {
                x: self.id,
                adj,
            },
            v,
        )
    }

    pub fn temporal_conv(self, w: Self, b: Self, k: usize) -> Self {
        let v = self.tape.with_value(self.id, |x| {
            self.tape.with_value(w.id, |wv| {
                self.tape
                    .with_value(b.id, |bv| temporal_conv_forward(x, wv, bv, k))
            })
        });
        self.tape.push(
            Op::TemporalConv {
                x: self.id,
                w: w.id,
                b: b.id,
                k,
            },
            v,
        )
    }

    /// −weight · log p(target) for a probability row vector.
    pub fn cross_entropy(self, target: usize, weight: F) -> Self {
        let flat = if self.shape().len() == 1 {
            let n = self.shape()[0];
            self.reshape(&[1, n])
        } else {
            self
        };
        flat.pick(0, target).ln().scale(-weight)
    }
}

fn layer_norm_backward<F: Scalar>(
    x: &Array<F>,
    gain: &Array<F>,
    g: &Array<F>,
) -> (Array<F>, Array<F>, Array<F>) {
    let (m, n) = x.dims2();
    let eps = F::from_f64_c(LAYER_NORM_EPS);
    let inv_n = F::one() / F::from_usize_c(n);
    let mut gx = Array::zeros(&[m, n]);
    let mut ggain = vec![F::zero(); n];
    let mut gbias = vec![F::zero(); n];
    for r in 0..m {
        let row = x.row(r);
        let grow = g.row(r);
        let mean = row.iter().copied().sum::<F>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
        let inv_std = F::one() / (var + eps).sqrt();
        let xhat: Vec<F> = row.iter().map(|&v| (v - mean) * inv_std).collect();
        let ghat: Vec<F> = grow
            .iter()
            .zip(gain.data())
            .map(|(&gv, &gn)| gv * gn)
            .collect();
        let m1 = ghat.iter().copied().sum::<F>() * inv_n;
        let m2 = ghat
            .iter()
            .zip(&xhat)
            .map(|(&a, &b)| a * b)
            .sum::<F>()
            * inv_n;
        for c in 0..n {
            gx.data_mut()[r * n + c] = (ghat[c] - m1 - xhat[c] * m2) * inv_std;
            ggain[c] += grow[c] * xhat[c];
            gbias[c] += grow[c];
        }
    }
    (gx, Array::new(vec![n], ggain), Array::new(vec![n], gbias))
}

fn temporal_conv_forward<F: Scalar>(
    x: &Array<F>,
    w: &Array<F>,
    b: &Array<F>,
    k: usize,
) -> Array<F> {
    assert!(k % 2 == 1, "temporal kernel must be odd");
    let (t, j, c_in) = x.dims3();
    let (kc, c_out) = w.dims2();
    assert_eq!(kc, k * c_in, "temporal kernel width disagrees with input channels");
    assert_eq!(b.numel(), c_out, "temporal bias width mismatch");
    let col = im2col_time(x, k);
    let mut out2 = col.matmul(w);
    let (rows, _) = out2.dims2();
    for r in 0..rows {
        for (o, &bv) in out2.data_mut()[r * c_out..(r + 1) * c_out]
            .iter_mut()
            .zip(b.data())
        {
            *o += bv;
        }
    }
    out2.reshaped(&[t, j, c_out])
}

fn temporal_conv_backward<F: Scalar>(
    x: &Array<F>,
    w: &Array<F>,
    k: usize,
    g: &Array<F>,
) -> (Array<F>, Array<F>, Array<F>) {
    let (t, j, c_in) = x.dims3();
    let (_, _, c_out) = g.dims3();
    let g2 = Array::new(vec![t * j, c_out], g.data().to_vec());
    let col = im2col_time(x, k);
    let gw = col.matmul_at_b(&g2);
    let mut gb = vec![F::zero(); c_out];
    for r in 0..t * j {
        for (acc, &v) in gb.iter_mut().zip(g2.row(r)) {
            *acc += v;
        }
    }
    let gcol = g2.matmul_a_bt(w);
    let pad = (k - 1) / 2;
    let mut gx = Array::zeros(&[t, j, c_in]);
    for ti in 0..t {
        for ji in 0..j {
            let crow = gcol.row(ti * j + ji);
            for dt in 0..k {
                let src = ti as isize + dt as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let base = (src as usize * j + ji) * c_in;
                for ci in 0..c_in {
                    gx.data_mut()[base + ci] += crow[dt * c_in + ci];
                }
            }
        }
    }
    (gx, gw, Array::new(vec![c_out], gb))
}

fn im2col_time<F: Scalar>(x: &Array<F>, k: usize) -> Array<F> {
    let (t, j, c_in) = x.dims3();
    let pad = (k - 1) / 2;
    let mut col = Array::zeros(&[t * j, k * c_in]);
    for ti in 0..t {
        for ji in 0..j {
            let dst = (ti * j + ji) * k * c_in;
            for dt in 0..k {
                let src = ti as isize + dt as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let s = (src as usize * j + ji) * c_in;
                col.data_mut()[dst + dt * c_in..dst + (dt + 1) * c_in]
                    .copy_from_slice(&x.data()[s..s + c_in]);
            }
        }
    }
    col
}

/// Minimum number of emission steps a CTC target needs (length plus one step
/// per adjacent repeated label).
pub fn ctc_min_steps(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

fn log_sum_exp<F: Scalar>(vals: &[F]) -> F {
    let max = vals.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return F::neg_infinity();
    }
    max + vals.iter().map(|&v| (v - max).exp()).sum::<F>().ln()
}

fn ctc_alpha<F: Scalar>(logp: &Array<F>, ext: &[usize]) -> Vec<Vec<F>> {
    let (steps, classes) = logp.dims2();
    let s_len = ext.len();
    let mut alpha = vec![vec![F::neg_infinity(); s_len]; steps];
    alpha[0][0] = logp.data()[ext[0]];
    if s_len > 1 {
        alpha[0][1] = logp.data()[ext[1]];
    }
    for t in 1..steps {
        for s in 0..s_len {
            let mut terms = vec![alpha[t - 1][s]];
            if s >= 1 {
                terms.push(alpha[t - 1][s - 1]);
            }
            if s >= 2 && ext[s] != ext[s - 2] {
                terms.push(alpha[t - 1][s - 2]);
            }
            let lse = log_sum_exp(&terms);
            alpha[t][s] = lse + logp.data()[t * classes + ext[s]];
        }
    }
    alpha
}

fn ctc_extended(targets: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * targets.len() + 1);
    ext.push(blank);
    for &t in targets {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

fn ctc_forward_nll<F: Scalar>(logp: &Array<F>, targets: &[usize], blank: usize) -> F {
    let ext = ctc_extended(targets, blank);
    let alpha = ctc_alpha(logp, &ext);
    let last = alpha.last().unwrap();
    let s_len = ext.len();
    let total = if s_len > 1 {
        log_sum_exp(&[last[s_len - 1], last[s_len - 2]])
    } else {
        last[0]
    };
    -total
}

fn ctc_backward<F: Scalar>(
    logp: &Array<F>,
    targets: &[usize],
    blank: usize,
    upstream: F,
) -> Array<F> {
    let (steps, classes) = logp.dims2();
    let ext = ctc_extended(targets, blank);
    let s_len = ext.len();
    let alpha = ctc_alpha(logp, &ext);
    // beta excludes the emission at its own step, so alpha + beta at any step
    // is a complete log path sum.
    let mut beta = vec![vec![F::neg_infinity(); s_len]; steps];
    beta[steps - 1][s_len - 1] = F::zero();
    if s_len > 1 {
        beta[steps - 1][s_len - 2] = F::zero();
    }
    for t in (0..steps - 1).rev() {
        for s in 0..s_len {
            let mut terms = vec![logp.data()[(t + 1) * classes + ext[s]] + beta[t + 1][s]];
            if s + 1 < s_len {
                terms.push(logp.data()[(t + 1) * classes + ext[s + 1]] + beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != ext[s] {
                terms.push(logp.data()[(t + 1) * classes + ext[s + 2]] + beta[t + 1][s + 2]);
            }
            beta[t][s] = log_sum_exp(&terms);
        }
    }
    let log_p_total = if s_len > 1 {
        log_sum_exp(&[
            alpha[steps - 1][s_len - 1],
            alpha[steps - 1][s_len - 2],
        ])
    } else {
        alpha[steps - 1][0]
    };
    let mut grad = Array::zeros(&[steps, classes]);
    for t in 0..steps {
        let mut per_class: Vec<Vec<F>> = vec![Vec::new(); classes];
        for s in 0..s_len {
            per_class[ext[s]].push(alpha[t][s] + beta[t][s]);
        }
        for (k, terms) in per_class.iter().enumerate() {
            if terms.is_empty() {
                continue;
            }
            let posterior = (log_sum_exp(terms) - log_p_total).exp();
            grad.data_mut()[t * classes + k] = -posterior * upstream;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type T = Tape<f64>;
    type A = Array<f64>;

    /// Central-difference gradient of `f` w.r.t. a named parameter value.
    fn numeric_grad(
        f: &dyn Fn(&A) -> f64,
        at: &A,
        eps: f64,
    ) -> A {
        let mut out = A::zeros(at.shape());
        for i in 0..at.numel() {
            let mut plus = at.clone();
            plus.data_mut()[i] += eps;
            let mut minus = at.clone();
            minus.data_mut()[i] -= eps;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        out
    }

    fn assert_grad_close(analytic: &A, numeric: &A, tol: f64) {
        for (a, d) in analytic.data().iter().zip(numeric.data()) {
            if (a - d).abs() < 1e-8 {
                continue; // below finite-difference noise floor
            }
            let rel = (a - d).abs() / (a.abs() + d.abs() + 1e-12);
            assert!(rel < tol, "analytic {} vs numeric {} (rel {})", a, d, rel);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = T::new();
        let p = tape.param("p", A::new(vec![3], vec![1.0, 2.0, 3.0]));
        let loss = p.sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads["p"].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let tape = T::new();
        let p = tape.param("p", A::new(vec![2], vec![1.0, 2.0]));
        let loss = p.mul(p).sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads["p"].data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = T::new();
        let p = tape.param("p", A::new(vec![2], vec![1.0, 2.0]));
        let loss = p.sum_all();
        let mut total = tape.backward(loss);
        let second = tape.backward(loss);
        for (k, v) in second {
            total.get_mut(&k).unwrap().add_assign(&v);
        }
        assert_eq!(total["p"].data(), &[2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_on_non_scalar_panics() {
        let tape = T::new();
        let p = tape.param("p", A::zeros(&[2, 2]));
        let _ = tape.backward(p);
    }

    #[test]
    fn matmul_softmax_ce_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let w0 = A::randn(&[3, 4], 0.5, &mut rng);
        let x = A::randn(&[2, 3], 1.0, &mut rng);
        let f = |w: &A| {
            let tape = T::new();
            let wv = tape.param("w", w.clone());
            let xv = tape.constant(x.clone());
            let probs = xv.matmul(wv).softmax_rows();
            probs
                .pick(0, 1)
                .ln()
                .scale(-1.0)
                .add(probs.pick(1, 2).ln().scale(-1.0))
                .value_scalar()
        };
        let tape = T::new();
        let wv = tape.param("w", w0.clone());
        let xv = tape.constant(x.clone());
        let probs = xv.matmul(wv).softmax_rows();
        let loss = probs
            .pick(0, 1)
            .ln()
            .scale(-1.0)
            .add(probs.pick(1, 2).ln().scale(-1.0));
        let grads = tape.backward(loss);
        let num = numeric_grad(&f, &w0, 1e-5);
        assert_grad_close(&grads["w"], &num, 1e-6);
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let x0 = A::randn(&[3, 5], 1.0, &mut rng);
        let gain0 = A::randn(&[5], 0.3, &mut rng).map(|v| v + 1.0);
        let bias0 = A::randn(&[5], 0.3, &mut rng);
        let run = |x: &A, g: &A, b: &A| -> f64 {
            let tape = T::new();
            let xv = tape.param("x", x.clone());
            let gv = tape.param("g", g.clone());
            let bv = tape.param("b", b.clone());
            let y = xv.layer_norm_rows(gv, bv);
            // weighted sum keeps the gradient non-uniform
            let w = tape.constant(A::new(
                vec![3, 5],
                (0..15).map(|i| (i as f64 * 0.37).sin()).collect(),
            ));
            y.mul(w).sum_all().value_scalar()
        };
        let tape = T::new();
        let xv = tape.param("x", x0.clone());
        let gv = tape.param("g", gain0.clone());
        let bv = tape.param("b", bias0.clone());
        let y = xv.layer_norm_rows(gv, bv);
        let w = tape.constant(A::new(
            vec![3, 5],
            (0..15).map(|i| (i as f64 * 0.37).sin()).collect(),
        ));
        let loss = y.mul(w).sum_all();
        let grads = tape.backward(loss);

        let fx = |x: &A| run(x, &gain0, &bias0);
        let fg = |g: &A| run(&x0, g, &bias0);
        let fb = |b: &A| run(&x0, &gain0, b);
        assert_grad_close(&grads["x"], &numeric_grad(&fx, &x0, 1e-5), 1e-5);
        assert_grad_close(&grads["g"], &numeric_grad(&fg, &gain0, 1e-5), 1e-5);
        assert_grad_close(&grads["b"], &numeric_grad(&fb, &bias0, 1e-5), 1e-5);
    }

    #[test]
    fn temporal_conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let (t, j, cin, cout, k) = (6, 3, 2, 4, 5);
        let x = A::randn(&[t, j, cin], 1.0, &mut rng);
        let w = A::randn(&[k * cin, cout], 0.5, &mut rng);
        let b = A::randn(&[cout], 0.2, &mut rng);
        let tape = T::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = tape.constant(b.clone());
        let out = xv.temporal_conv(wv, bv, k).value();
        let pad = (k - 1) / 2;
        for ti in 0..t {
            for ji in 0..j {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for dt in 0..k {
                        let src = ti as isize + dt as isize - pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x.data()[(src as usize * j + ji) * cin + ci]
                                * w.at2(dt * cin + ci, co);
                        }
                    }
                    let got = out.data()[(ti * j + ji) * cout + co];
                    assert!((got - acc).abs() < 1e-10, "{} vs {}", got, acc);
                }
            }
        }
    }

    #[test]
    fn temporal_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let (t, j, cin, cout, k) = (5, 2, 3, 2, 3);
        let x0 = A::randn(&[t, j, cin], 1.0, &mut rng);
        let w0 = A::randn(&[k * cin, cout], 0.5, &mut rng);
        let b0 = A::randn(&[cout], 0.2, &mut rng);
        let run = |x: &A, w: &A, b: &A| -> f64 {
            let tape = T::new();
            let xv = tape.param("x", x.clone());
            let wv = tape.param("w", w.clone());
            let bv = tape.param("b", b.clone());
            let y = xv.temporal_conv(wv, bv, k);
            let mask = tape.constant(A::new(
                vec![t, j, cout],
                (0..t * j * cout).map(|i| ((i * 7 % 5) as f64) - 2.0).collect(),
            ));
            y.mul(mask).sum_all().value_scalar()
        };
        let tape = T::new();
        let xv = tape.param("x", x0.clone());
        let wv = tape.param("w", w0.clone());
        let bv = tape.param("b", b0.clone());
        let y = xv.temporal_conv(wv, bv, k);
        let mask = tape.constant(A::new(
            vec![t, j, cout],
            (0..t * j * cout).map(|i| ((i * 7 % 5) as f64) - 2.0).collect(),
        ));
        let loss = y.mul(mask).sum_all();
        let grads = tape.backward(loss);
        assert_grad_close(&grads["x"], &numeric_grad(&|x| run(x, &w0, &b0), &x0, 1e-5), 1e-6);
        assert_grad_close(&grads["w"], &numeric_grad(&|w| run(&x0, w, &b0), &w0, 1e-5), 1e-6);
        assert_grad_close(&grads["b"], &numeric_grad(&|b| run(&x0, &w0, b), &b0, 1e-5), 1e-6);
    }

    #[test]
    fn adj_mix_matches_per_slice_matmul() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let adj = Arc::new(A::randn(&[4, 4], 0.7, &mut rng));
        let x = A::randn(&[3, 4, 2], 1.0, &mut rng);
        let tape = T::new();
        let xv = tape.constant(x.clone());
        let out = xv.adj_mix(adj.clone()).value();
        for t in 0..3 {
            let xs = A::new(vec![4, 2], x.data()[t * 8..(t + 1) * 8].to_vec());
            let expect = adj.matmul(&xs);
            let got = A::new(vec![4, 2], out.data()[t * 8..(t + 1) * 8].to_vec());
            assert!(got.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn ctc_single_step_single_target() {
        let tape = T::new();
        let p: f64 = 0.3;
        // classes: 0 = target, 1 = blank
        let logp = tape.constant(A::new(vec![1, 2], vec![p.ln(), (1.0 - p).ln()]));
        let loss = tape.ctc_loss(logp, &[0], 1);
        assert!((loss.value_scalar() - (-p.ln())).abs() < 1e-12);
    }

    #[test]
    fn ctc_two_steps_matches_path_enumeration() {
        let tape = T::new();
        // 3 classes, blank = 2; target [0]; paths: (0,blank), (blank,0), (0,0)
        let probs: [[f64; 3]; 2] = [[0.5, 0.2, 0.3], [0.1, 0.6, 0.3]];
        let logp: Vec<f64> = probs.iter().flatten().map(|v| v.ln()).collect();
        let lv = tape.constant(A::new(vec![2, 3], logp));
        let loss = tape.ctc_loss(lv, &[0], 2);
        let total = 0.5 * 0.3 + 0.3 * 0.1 + 0.5 * 0.1;
        assert!((loss.value_scalar() - (-(total as f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let raw = A::randn(&[6, 4], 1.0, &mut rng);
        let targets = vec![0usize, 2, 0];
        let run = |r: &A| {
            let tape = T::new();
            let rv = tape.param("r", r.clone());
            let lp = rv.log_softmax_rows();
            tape.ctc_loss(lp, &targets, 3).value_scalar()
        };
        let tape = T::new();
        let rv = tape.param("r", raw.clone());
        let lp = rv.log_softmax_rows();
        let loss = tape.ctc_loss(lp, &targets, 3);
        let grads = tape.backward(loss);
        let num = numeric_grad(&|r| run(r), &raw, 1e-6);
        assert_grad_close(&grads["r"], &num, 1e-5);
    }

    #[test]
    fn ctc_min_steps_counts_repeats() {
        assert_eq!(ctc_min_steps(&[1, 2, 3]), 3);
        assert_eq!(ctc_min_steps(&[1, 1, 2]), 4);
        assert_eq!(ctc_min_steps(&[]), 0);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let a0 = A::randn(&[2, 3], 1.0, &mut rng);
        let b0 = A::randn(&[1, 3], 1.0, &mut rng);
        let tape = T::new();
        let a = tape.param("a", a0.clone());
        let b = tape.param("b", b0.clone());
        let cat = tape.concat_rows(&[a, b]);
        let loss = cat.slice_rows(1, 3).sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads["a"].data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(grads["b"].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn attention_shaped_composition_rows_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let tape = T::new();
        let q = tape.constant(A::randn(&[5, 8], 1.0, &mut rng));
        let k = tape.constant(A::randn(&[7, 8], 1.0, &mut rng));
        let attn = q
            .matmul(k.transpose())
            .scale(1.0 / (8f64).sqrt())
            .softmax_rows();
        let v = attn.value();
        for r in 0..5 {
            let s: f64 = v.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
