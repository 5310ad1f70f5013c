//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] records every forward operation as a node holding its value
//! and the op that produced it. [`Graph::backward`] walks the tape in
//! reverse and accumulates parameter gradients into a [`Gradients`] sink
//! aligned with the [`ParamStore`](crate::params::ParamStore) slots.
//!
//! One graph is built per training instance and dropped after the backward
//! pass; graphs are cheap, single-threaded objects.

use std::cell::{Ref, RefCell};

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Mat;

/// Handle to a node in the tape. Carries its shape so callers can compose
/// ops without touching the graph.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    id: usize,
    pub rows: usize,
    pub cols: usize,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// matrix + column vector broadcast across columns
    AddColBias(usize, usize),
    /// matrix + row vector broadcast across rows
    AddRowBias(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Sigmoid(usize),
    Tanh(usize),
    Max0(usize),
    Sqrt(usize),
    Ln(usize),
    /// elementwise a / b
    Div(usize, usize),
    SoftmaxRows(usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    SumCols(usize),
    Sum(usize),
    /// row-wise max over columns; argmax per row recorded at forward time
    RowMax(usize, Vec<usize>),
    /// column-wise max over rows; argmax per column recorded at forward time
    ColMax(usize, Vec<usize>),
    BroadcastCol(usize),
    BroadcastRow(usize),
    /// rows of a table selected by index; `skip_zero` drops gradient flow
    /// into row 0 (reserved padding row)
    Gather {
        table: usize,
        indices: Vec<usize>,
        skip_zero: bool,
    },
    /// sliding windows of `width` consecutive rows, flattened per window
    Unfold(usize, usize),
    /// fused LSTM cell update; value is [h'; c'] stacked (2h x 1); the
    /// post-activation gates [i; f; o; g] are cached for the backward pass
    LstmStep {
        w: usize,
        b: usize,
        x: usize,
        h_in: usize,
        c_in: usize,
        hidden: usize,
        gates: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    bound_params: RefCell<std::collections::HashMap<usize, Var>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Mat, op: Op) -> Var {
        let rows = value.rows();
        let cols = value.cols();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            id: nodes.len() - 1,
            rows,
            cols,
        }
    }

    /// Clones out the forward value of `v`.
    pub fn value(&self, v: Var) -> Mat {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Borrow of the forward value, for read-only inspection.
    pub fn value_ref(&self, v: Var) -> Ref<'_, Mat> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    pub fn constant(&self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros(rows, cols))
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Mat::from_vec(1, 1, vec![v]))
    }

    /// Leaf bound to a parameter slot; gradients flow into that slot.
    /// Repeated binds of the same slot share one node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound_params.borrow().get(&id.index()) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.bound_params.borrow_mut().insert(id.index(), v);
        v
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.cols, b.rows, "matmul shape mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)
        };
        self.push(v, Op::MatMul(a.id, b.id))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "add shape mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.add(&nodes[b.id].value)
        };
        self.push(v, Op::Add(a.id, b.id))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "sub shape mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.sub(&nodes[b.id].value)
        };
        self.push(v, Op::Sub(a.id, b.id))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "mul shape mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.hadamard(&nodes[b.id].value)
        };
        self.push(v, Op::Mul(a.id, b.id))
    }

    /// `m + bias` where `bias` is a column vector replicated across columns.
    pub fn add_col_bias(&self, m: Var, bias: Var) -> Var {
        assert_eq!(bias.cols, 1);
        assert_eq!(m.rows, bias.rows, "column bias length mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            let mv = &nodes[m.id].value;
            let bv = &nodes[bias.id].value;
            Mat::from_fn(m.rows, m.cols, |i, j| mv.get(i, j) + bv.get(i, 0))
        };
        self.push(v, Op::AddColBias(m.id, bias.id))
    }

    /// `m + bias` where `bias` is a row vector replicated across rows.
    pub fn add_row_bias(&self, m: Var, bias: Var) -> Var {
        assert_eq!(bias.rows, 1);
        assert_eq!(m.cols, bias.cols, "row bias length mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            let mv = &nodes[m.id].value;
            let bv = &nodes[bias.id].value;
            Mat::from_fn(m.rows, m.cols, |i, j| mv.get(i, j) + bv.get(0, j))
        };
        self.push(v, Op::AddRowBias(m.id, bias.id))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.scale(s);
        self.push(v, Op::Scale(a.id, s))
    }

    pub fn add_const(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| x + c);
        self.push(v, Op::AddConst(a.id))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(sigmoid);
        self.push(v, Op::Sigmoid(a.id))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::tanh);
        self.push(v, Op::Tanh(a.id))
    }

    /// Elementwise `max(0, x)`; subgradient 0 at the kink.
    pub fn max0(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| x.max(0.0));
        self.push(v, Op::Max0(a.id))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::sqrt);
        self.push(v, Op::Sqrt(a.id))
    }

    pub fn ln(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::ln);
        self.push(v, Op::Ln(a.id))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "div shape mismatch");
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = &nodes[b.id].value;
            Mat::from_fn(a.rows, a.cols, |i, j| av.get(i, j) / bv.get(i, j))
        };
        self.push(v, Op::Div(a.id, b.id))
    }

    /// Softmax applied independently to each row.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let mut out = Mat::zeros(a.rows, a.cols);
            for i in 0..a.rows {
                let row = av.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    out.set(i, j, e / z);
                }
            }
            out
        };
        self.push(v, Op::SoftmaxRows(a.id))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.transpose();
        self.push(v, Op::Transpose(a.id))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let mats: Vec<&Mat> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Mat::concat_rows(&mats)
        };
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let mats: Vec<&Mat> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Mat::concat_cols(&mats)
        };
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= a.rows, "slice_rows out of range");
        let v = self.nodes.borrow()[a.id].value.slice_rows(start, len);
        self.push(v, Op::SliceRows(a.id, start))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= a.cols, "slice_cols out of range");
        let v = self.nodes.borrow()[a.id].value.slice_cols(start, len);
        self.push(v, Op::SliceCols(a.id, start))
    }

    /// Sum over columns, yielding a column vector.
    pub fn sum_cols(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            Mat::from_fn(a.rows, 1, |i, _| av.row(i).iter().sum())
        };
        self.push(v, Op::SumCols(a.id))
    }

    /// Sum of all entries, yielding a 1x1 matrix.
    pub fn sum(&self, a: Var) -> Var {
        let v = Mat::from_vec(1, 1, vec![self.nodes.borrow()[a.id].value.sum()]);
        self.push(v, Op::Sum(a.id))
    }

    /// Row-wise maximum over columns, yielding a column vector.
    pub fn row_max(&self, a: Var) -> Var {
        let (v, arg) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let mut out = Mat::zeros(a.rows, 1);
            let mut arg = vec![0usize; a.rows];
            for i in 0..a.rows {
                let mut best = f64::NEG_INFINITY;
                for j in 0..a.cols {
                    let x = av.get(i, j);
                    if x > best {
                        best = x;
                        arg[i] = j;
                    }
                }
                out.set(i, 0, best);
            }
            (out, arg)
        };
        self.push(v, Op::RowMax(a.id, arg))
    }

    /// Column-wise maximum over rows, yielding a row vector (max-over-time).
    pub fn col_max(&self, a: Var) -> Var {
        let (v, arg) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let mut out = Mat::zeros(1, a.cols);
            let mut arg = vec![0usize; a.cols];
            for j in 0..a.cols {
                let mut best = f64::NEG_INFINITY;
                for i in 0..a.rows {
                    let x = av.get(i, j);
                    if x > best {
                        best = x;
                        arg[j] = i;
                    }
                }
                out.set(0, j, best);
            }
            (out, arg)
        };
        self.push(v, Op::ColMax(a.id, arg))
    }

    /// Replicates a column vector across `n` columns.
    pub fn broadcast_col(&self, a: Var, n: usize) -> Var {
        assert_eq!(a.cols, 1, "broadcast_col expects a column vector");
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            Mat::from_fn(a.rows, n, |i, _| av.get(i, 0))
        };
        self.push(v, Op::BroadcastCol(a.id))
    }

    /// Replicates a row vector across `n` rows.
    pub fn broadcast_row(&self, a: Var, n: usize) -> Var {
        assert_eq!(a.rows, 1, "broadcast_row expects a row vector");
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            Mat::from_fn(n, a.cols, |_, j| av.get(0, j))
        };
        self.push(v, Op::BroadcastRow(a.id))
    }

    /// Selects rows of `table` by index. With `skip_zero`, no gradient is
    /// accumulated into row 0 (the padding row stays fixed).
    pub fn gather(&self, table: Var, indices: &[usize], skip_zero: bool) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.id].value;
            let mut out = Mat::zeros(indices.len(), table.cols);
            for (k, &idx) in indices.iter().enumerate() {
                assert!(idx < table.rows, "gather index out of range");
                out.data_mut()[k * table.cols..(k + 1) * table.cols].copy_from_slice(tv.row(idx));
            }
            out
        };
        self.push(
            v,
            Op::Gather {
                table: table.id,
                indices: indices.to_vec(),
                skip_zero,
            },
        )
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row of `width * cols` entries.
    pub fn unfold(&self, a: Var, width: usize) -> Var {
        assert!(width >= 1 && width <= a.rows, "unfold width out of range");
        let v = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let n_win = a.rows - width + 1;
            let mut out = Mat::zeros(n_win, width * a.cols);
            for p in 0..n_win {
                for q in 0..width {
                    let dst = p * width * a.cols + q * a.cols;
                    out.data_mut()[dst..dst + a.cols].copy_from_slice(av.row(p + q));
                }
            }
            out
        };
        self.push(v, Op::Unfold(a.id, width))
    }

    /// One fused LSTM cell update: gates from `w * [x; h_in] + b`, then the
    /// standard cell/hidden updates. Returns (h', c'). Gate rows are
    /// ordered [input; forget; output; candidate].
    pub fn lstm_step(&self, w: Var, b: Var, x: Var, h_in: Var, c_in: Var) -> (Var, Var) {
        let hidden = h_in.rows;
        debug_assert_eq!(w.rows, 4 * hidden);
        debug_assert_eq!(w.cols, x.rows + hidden);
        debug_assert_eq!(b.rows, 4 * hidden);
        let (value, gates) = {
            let nodes = self.nodes.borrow();
            let wv = &nodes[w.id].value;
            let bv = &nodes[b.id].value;
            let xv = &nodes[x.id].value;
            let hv = &nodes[h_in.id].value;
            let cv = &nodes[c_in.id].value;
            let in_dim = x.rows;
            let mut gates = Mat::zeros(4 * hidden, 1);
            for r in 0..4 * hidden {
                let row = wv.row(r);
                let mut z = bv.get(r, 0);
                for k in 0..in_dim {
                    z += row[k] * xv.get(k, 0);
                }
                for k in 0..hidden {
                    z += row[in_dim + k] * hv.get(k, 0);
                }
                let a = if r < 3 * hidden { sigmoid(z) } else { z.tanh() };
                gates.set(r, 0, a);
            }
            let mut value = Mat::zeros(2 * hidden, 1);
            for k in 0..hidden {
                let i = gates.get(k, 0);
                let f = gates.get(hidden + k, 0);
                let o = gates.get(2 * hidden + k, 0);
                let g = gates.get(3 * hidden + k, 0);
                let c_new = f * cv.get(k, 0) + i * g;
                value.set(hidden + k, 0, c_new);
                value.set(k, 0, o * c_new.tanh());
            }
            (value, gates)
        };
        let packed = self.push(
            value,
            Op::LstmStep {
                w: w.id,
                b: b.id,
                x: x.id,
                h_in: h_in.id,
                c_in: c_in.id,
                hidden,
                gates,
            },
        );
        let h = self.slice_rows(packed, 0, hidden);
        let c = self.slice_rows(packed, hidden, hidden);
        (h, c)
    }

    /// Backpropagates from a scalar `loss` node, accumulating parameter
    /// gradients into `sink`. Multiple calls accumulate (useful for
    /// mini-batch sums).
    pub fn backward(&self, loss: Var, sink: &mut Gradients) {
        assert_eq!(
            (loss.rows, loss.cols),
            (1, 1),
            "backward expects a scalar loss"
        );
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for id in (0..nodes.len()).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &nodes[id].op {
                Op::Input => {}
                Op::Param(pid) => sink.accumulate(*pid, &g),
                Op::MatMul(a, b) => {
                    let da = g.matmul(&nodes[*b].value.transpose());
                    let db = nodes[*a].value.transpose().matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(&nodes[*b].value);
                    let db = g.hadamard(&nodes[*a].value);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddColBias(m, b) => {
                    let mut db = Mat::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        db.set(i, 0, g.row(i).iter().sum());
                    }
                    acc(&mut grads, *m, g);
                    acc(&mut grads, *b, db);
                }
                Op::AddRowBias(m, b) => {
                    let mut db = Mat::zeros(1, g.cols());
                    for j in 0..g.cols() {
                        let mut s = 0.0;
                        for i in 0..g.rows() {
                            s += g.get(i, j);
                        }
                        db.set(0, j, s);
                    }
                    acc(&mut grads, *m, g);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let y = &nodes[id].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| {
                        let yy = y.get(i, j);
                        g.get(i, j) * yy * (1.0 - yy)
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &nodes[id].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| {
                        let yy = y.get(i, j);
                        g.get(i, j) * (1.0 - yy * yy)
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Max0(a) => {
                    let x = &nodes[*a].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| {
                        if x.get(i, j) > 0.0 {
                            g.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Sqrt(a) => {
                    let y = &nodes[id].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) / (2.0 * y.get(i, j))
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Ln(a) => {
                    let x = &nodes[*a].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) / x.get(i, j));
                    acc(&mut grads, *a, da);
                }
                Op::Div(a, b) => {
                    let bv = &nodes[*b].value;
                    let y = &nodes[id].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) / bv.get(i, j));
                    let db = Mat::from_fn(g.rows(), g.cols(), |i, j| {
                        -g.get(i, j) * y.get(i, j) / bv.get(i, j)
                    });
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::SoftmaxRows(a) => {
                    let y = &nodes[id].value;
                    let mut da = Mat::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let mut dot = 0.0;
                        for j in 0..g.cols() {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                        for j in 0..g.cols() {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let r = nodes[p].value.rows();
                        acc(&mut grads, p, g.slice_rows(start, r));
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        acc(&mut grads, p, g.slice_cols(start, c));
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = &nodes[*a].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            da.set(start + i, j, g.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let src = &nodes[*a].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            da.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SumCols(a) => {
                    let src = &nodes[*a].value;
                    let da = Mat::from_fn(src.rows(), src.cols(), |i, _| g.get(i, 0));
                    acc(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let src = &nodes[*a].value;
                    let da = Mat::from_fn(src.rows(), src.cols(), |_, _| g.get(0, 0));
                    acc(&mut grads, *a, da);
                }
                Op::RowMax(a, arg) => {
                    let src = &nodes[*a].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for i in 0..src.rows() {
                        da.set(i, arg[i], g.get(i, 0));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ColMax(a, arg) => {
                    let src = &nodes[*a].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for j in 0..src.cols() {
                        da.set(arg[j], j, g.get(0, j));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::BroadcastCol(a) => {
                    let mut da = Mat::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        da.set(i, 0, g.row(i).iter().sum());
                    }
                    acc(&mut grads, *a, da);
                }
                Op::BroadcastRow(a) => {
                    let mut da = Mat::zeros(1, g.cols());
                    for j in 0..g.cols() {
                        let mut s = 0.0;
                        for i in 0..g.rows() {
                            s += g.get(i, j);
                        }
                        da.set(0, j, s);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Gather {
                    table,
                    indices,
                    skip_zero,
                } => {
                    let src = &nodes[*table].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for (k, &idx) in indices.iter().enumerate() {
                        if *skip_zero && idx == 0 {
                            continue;
                        }
                        for j in 0..src.cols() {
                            da.set(idx, j, da.get(idx, j) + g.get(k, j));
                        }
                    }
                    acc(&mut grads, *table, da);
                }
                Op::LstmStep {
                    w,
                    b,
                    x,
                    h_in,
                    c_in,
                    hidden,
                    gates,
                } => {
                    let hidden = *hidden;
                    let wv = &nodes[*w].value;
                    let xv = &nodes[*x].value;
                    let hv = &nodes[*h_in].value;
                    let cv = &nodes[*c_in].value;
                    let in_dim = xv.rows();
                    let value = &nodes[id].value;

                    // Split incoming gradient into dh' and dc'.
                    let mut dz = Mat::zeros(4 * hidden, 1);
                    let mut dc_in = Mat::zeros(hidden, 1);
                    for k in 0..hidden {
                        let dh = g.get(k, 0);
                        let dc_out = g.get(hidden + k, 0);
                        let i = gates.get(k, 0);
                        let f = gates.get(hidden + k, 0);
                        let o = gates.get(2 * hidden + k, 0);
                        let gg = gates.get(3 * hidden + k, 0);
                        let c_new = value.get(hidden + k, 0);
                        let t = c_new.tanh();
                        let d_o = dh * t;
                        let dc_total = dc_out + dh * o * (1.0 - t * t);
                        let d_i = dc_total * gg;
                        let d_f = dc_total * cv.get(k, 0);
                        let d_g = dc_total * i;
                        dz.set(k, 0, d_i * i * (1.0 - i));
                        dz.set(hidden + k, 0, d_f * f * (1.0 - f));
                        dz.set(2 * hidden + k, 0, d_o * o * (1.0 - o));
                        dz.set(3 * hidden + k, 0, d_g * (1.0 - gg * gg));
                        dc_in.set(k, 0, dc_total * f);
                    }

                    // dW += dz * [x; h]^T, db += dz, d[x;h] += W^T dz.
                    let mut dw = Mat::zeros(4 * hidden, in_dim + hidden);
                    let mut dx = Mat::zeros(in_dim, 1);
                    let mut dh_in = Mat::zeros(hidden, 1);
                    for r in 0..4 * hidden {
                        let dzr = dz.get(r, 0);
                        if dzr == 0.0 {
                            continue;
                        }
                        let wrow = wv.row(r);
                        for k in 0..in_dim {
                            dw.set(r, k, dzr * xv.get(k, 0));
                            dx.set(k, 0, dx.get(k, 0) + wrow[k] * dzr);
                        }
                        for k in 0..hidden {
                            dw.set(r, in_dim + k, dzr * hv.get(k, 0));
                            dh_in.set(k, 0, dh_in.get(k, 0) + wrow[in_dim + k] * dzr);
                        }
                    }
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, dz);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *h_in, dh_in);
                    acc(&mut grads, *c_in, dc_in);
                }
                Op::Unfold(a, width) => {
                    let src = &nodes[*a].value;
                    let cols = src.cols();
                    let mut da = Mat::zeros(src.rows(), cols);
                    for p in 0..g.rows() {
                        for q in 0..*width {
                            for j in 0..cols {
                                let v = da.get(p + q, j) + g.get(p, q * cols + j);
                                da.set(p + q, j, v);
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Mat>], id: usize, g: Mat) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
