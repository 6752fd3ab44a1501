//! Reverse-mode automatic differentiation on 2-D `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! walks the record in reverse and accumulates partial derivatives of a
//! scalar loss into every node. Values are `ndarray::Array2<f64>`; batches of
//! sequences are laid out side by side along the column axis so channel-wise
//! matmuls stay single large GEMMs, and the sequence-aware operations
//! (convolution, attention, pooling, reversal) take the batch count
//! explicitly to respect segment boundaries.
//!
//! Complex quantities never appear on the tape: the kernel construction in
//! [`crate::graph`] expresses complex arithmetic as pairs of real tensors, so
//! the eigenvalue and weight components are ordinary real parameters here.
//!
//! Shape agreement between operands is asserted: a mismatch is a bug in the
//! graph builder, not a recoverable condition.

use ndarray::{s, Array2, Axis};

use crate::conv::{fft_conv, fft_full_conv};
use crate::error::{DssError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a + b with b an m x 1 column broadcast across columns.
    AddCol(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    /// a - b with b a 1 x n row broadcast across rows.
    SubRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    /// exp(x - rowmax(x)); the shift is treated as a constant, which is exact
    /// because it cancels in any softmax built on top.
    ExpNormRows(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Gelu(Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// m x n -> m x 1, summing each row.
    SumRows(Var),
    /// m x n -> 1 x n, averaging each column.
    ColMean(Var),
    SumAll(Var),
    SliceRows(Var, usize, usize),
    /// Stack `times` copies of the whole block vertically.
    TileRows(Var, usize),
    /// Repeat each row `times` times consecutively.
    RepeatRowsEach(Var, usize),
    /// out[h, k] = sum_i w[h, i] * rows[h*n + i, k].
    GroupWeightedSum { weights: Var, rows: Var, group: usize },
    /// Per-channel causal convolution of each batch segment with that
    /// channel's kernel (kernel length == segment length).
    CausalConvRows { kernel: Var, x: Var, batch: usize },
    /// Reverse each batch segment along time.
    RevSegments(Var, usize),
    /// Per-channel centered depthwise convolution (odd kernel width).
    DepthwiseConvRows { kernel: Var, x: Var, batch: usize },
    /// Scaled dot-product attention over each batch segment, split into
    /// heads along the row axis. Softmaxed scores are saved for backward.
    Mhsa {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        attn: Vec<Array2<f64>>,
    },
    /// d x (batch * len) -> d x batch, averaging each segment.
    SegmentMeanCols(Var, usize),
    /// Mean cross-entropy of column softmax against integer labels.
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
    /// Elementwise multiply by a fixed 0/(1/keep) mask.
    Dropout { x: Var, mask: Array2<f64> },
}

pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    /// Zero for nodes the loss does not depend on.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.values[v.0].dim()),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "add shapes");
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "sub shapes");
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "mul shapes");
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (m, 1), "add_col shapes");
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, Op::AddCol(a, b))
    }

    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (m, 1), "mul_col shapes");
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(v, Op::MulCol(a, b))
    }

    pub fn div_col(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (m, 1), "div_col shapes");
        let v = &self.values[a.0] / &self.values[b.0];
        self.push(v, Op::DivCol(a, b))
    }

    pub fn sub_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (1, n), "sub_row shapes");
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(v, Op::SubRow(a, b))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (1, n), "mul_row shapes");
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(v, Op::MulRow(a, b))
    }

    pub fn div_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.values[a.0].dim();
        assert_eq!(self.values[b.0].dim(), (1, n), "div_row shapes");
        let v = &self.values[a.0] / &self.values[b.0];
        self.push(v, Op::DivRow(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].mapv(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn exp_norm_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|p| (p - m).exp());
        }
        self.push(v, Op::ExpNormRows(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::sin);
        self.push(v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(sigmoid_scalar);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, ka) = self.values[a.0].dim();
        let (kb, _) = self.values[b.0].dim();
        assert_eq!(ka, kb, "matmul inner dims");
        let v = self.values[a.0].dot(&self.values[b.0]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.values[a.0].t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let v = x
            .sum_axis(Axis(1))
            .into_shape_with_order((x.nrows(), 1))
            .unwrap();
        self.push(v, Op::SumRows(a))
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let m = x.nrows() as f64;
        let v = (x.sum_axis(Axis(0)) / m)
            .into_shape_with_order((1, x.ncols()))
            .unwrap();
        self.push(v, Op::ColMean(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.values[a.0].sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start < end && end <= self.values[a.0].nrows(), "slice bounds");
        let v = self.values[a.0].slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let x = &self.values[a.0];
        let (m, n) = x.dim();
        let mut v = Array2::zeros((m * times, n));
        for t in 0..times {
            v.slice_mut(s![t * m..(t + 1) * m, ..]).assign(x);
        }
        self.push(v, Op::TileRows(a, times))
    }

    pub fn repeat_rows_each(&mut self, a: Var, times: usize) -> Var {
        let x = &self.values[a.0];
        let (m, n) = x.dim();
        let mut v = Array2::zeros((m * times, n));
        for i in 0..m {
            for t in 0..times {
                v.row_mut(i * times + t).assign(&x.row(i));
            }
        }
        self.push(v, Op::RepeatRowsEach(a, times))
    }

    pub fn group_weighted_sum(&mut self, weights: Var, rows: Var) -> Var {
        let (h, n) = self.values[weights.0].dim();
        let (hn, len) = self.values[rows.0].dim();
        assert_eq!(hn, h * n, "group_weighted_sum shapes");
        let w = &self.values[weights.0];
        let r = &self.values[rows.0];
        let mut v = Array2::zeros((h, len));
        for ch in 0..h {
            for i in 0..n {
                let wi = w[(ch, i)];
                let src = r.row(ch * n + i);
                let mut dst = v.row_mut(ch);
                dst.zip_mut_with(&src, |d, &s| *d += wi * s);
            }
        }
        self.push(
            v,
            Op::GroupWeightedSum {
                weights,
                rows,
                group: n,
            },
        )
    }

    /// Causal convolution of each batch segment of `x` with the matching
    /// channel's kernel. Kernel length must equal the segment length.
    pub fn causal_conv_rows(&mut self, kernel: Var, x: Var, batch: usize) -> Var {
        let (h, klen) = self.values[kernel.0].dim();
        let (hx, total) = self.values[x.0].dim();
        assert_eq!(h, hx, "conv channel count");
        assert_eq!(total % batch, 0, "conv batch layout");
        assert_eq!(total / batch, klen, "conv kernel length == segment length");
        let v = causal_conv_batch(&self.values[kernel.0], &self.values[x.0], batch)
            .expect("conv forward");
        self.push(v, Op::CausalConvRows { kernel, x, batch })
    }

    pub fn rev_segments(&mut self, a: Var, batch: usize) -> Var {
        let v = reverse_segments(&self.values[a.0], batch);
        self.push(v, Op::RevSegments(a, batch))
    }

    pub fn depthwise_conv_rows(&mut self, kernel: Var, x: Var, batch: usize) -> Var {
        let (h, klen) = self.values[kernel.0].dim();
        let (hx, total) = self.values[x.0].dim();
        assert_eq!(h, hx, "depthwise channel count");
        assert_eq!(total % batch, 0, "depthwise batch layout");
        assert!(klen % 2 == 1, "depthwise kernel width must be odd");
        let v = depthwise_forward(&self.values[kernel.0], &self.values[x.0], batch);
        self.push(v, Op::DepthwiseConvRows { kernel, x, batch })
    }

    pub fn mhsa(&mut self, q: Var, k: Var, v: Var, heads: usize, batch: usize) -> Var {
        let (inner, total) = self.values[q.0].dim();
        assert_eq!(self.values[k.0].dim(), (inner, total), "mhsa k shape");
        assert_eq!(self.values[v.0].dim(), (inner, total), "mhsa v shape");
        assert_eq!(inner % heads, 0, "mhsa head split");
        assert_eq!(total % batch, 0, "mhsa batch layout");
        let (out, attn) = mhsa_forward_raw(
            &self.values[q.0],
            &self.values[k.0],
            &self.values[v.0],
            heads,
            batch,
        );
        self.push(
            out,
            Op::Mhsa {
                q,
                k,
                v,
                heads,
                batch,
                attn,
            },
        )
    }

    pub fn segment_mean_cols(&mut self, a: Var, batch: usize) -> Var {
        let (d, total) = self.values[a.0].dim();
        assert_eq!(total % batch, 0, "segment mean layout");
        let len = total / batch;
        let x = &self.values[a.0];
        let mut v = Array2::zeros((d, batch));
        for b in 0..batch {
            for j in 0..len {
                for i in 0..d {
                    v[(i, b)] += x[(i, b * len + j)];
                }
            }
        }
        v /= len as f64;
        self.push(v, Op::SegmentMeanCols(a, batch))
    }

    /// Mean cross-entropy over columns; labels index rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (classes, cols) = self.values[logits.0].dim();
        assert_eq!(labels.len(), cols, "label count");
        assert!(labels.iter().all(|&l| l < classes), "label range");
        let z = &self.values[logits.0];
        let mut probs = Array2::zeros((classes, cols));
        let mut loss = 0.0;
        for b in 0..cols {
            let col = z.column(b);
            let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for i in 0..classes {
                let e = (z[(i, b)] - m).exp();
                probs[(i, b)] = e;
                denom += e;
            }
            for i in 0..classes {
                probs[(i, b)] /= denom;
            }
            loss -= (z[(labels[b], b)] - m - denom.ln()) / cols as f64;
        }
        let v = Array2::from_elem((1, 1), loss);
        self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Multiplies by a precomputed inverted-dropout mask (entries 0 or
    /// 1/keep). The mask is the caller's responsibility so that randomness
    /// stays outside the tape.
    pub fn dropout(&mut self, x: Var, mask: Array2<f64>) -> Var {
        assert_eq!(self.values[x.0].dim(), mask.dim(), "dropout mask shape");
        let v = &self.values[x.0] * &mask;
        self.push(v, Op::Dropout { x, mask })
    }

    /// Reverse pass from a scalar loss node. Gradients are then available
    /// through [`grad`](Self::grad) for leaves (intermediate gradients are
    /// consumed as the walk passes them).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.values.len() {
            return Err(DssError::Usage(
                "backward: node does not belong to this tape".into(),
            ));
        }
        if self.values[loss.0].dim() != (1, 1) {
            return Err(DssError::Usage(format!(
                "backward: loss must be 1x1, got {:?}",
                self.values[loss.0].dim()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            if matches!(self.ops[id], Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.apply_backward(id, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contribution: Array2<f64>) {
        match &mut self.grads[target.0] {
            Some(existing) => *existing += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    fn apply_backward(&mut self, id: usize, g: &Array2<f64>) {
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g * &self.values[b.0];
                let gb = g * &self.values[a.0];
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::AddCol(a, b) => {
                let (a, b) = (*a, *b);
                let gb = g
                    .sum_axis(Axis(1))
                    .into_shape_with_order((g.nrows(), 1))
                    .unwrap();
                self.accumulate(a, g.clone());
                self.accumulate(b, gb);
            }
            Op::MulCol(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g * &self.values[b.0];
                let gb = (g * &self.values[a.0])
                    .sum_axis(Axis(1))
                    .into_shape_with_order((g.nrows(), 1))
                    .unwrap();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::DivCol(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g / &self.values[b.0];
                let out = &self.values[id];
                let gb = (-(g * out) / &self.values[b.0])
                    .sum_axis(Axis(1))
                    .into_shape_with_order((g.nrows(), 1))
                    .unwrap();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::SubRow(a, b) => {
                let (a, b) = (*a, *b);
                let gb = (-g)
                    .sum_axis(Axis(0))
                    .into_shape_with_order((1, g.ncols()))
                    .unwrap();
                self.accumulate(a, g.clone());
                self.accumulate(b, gb);
            }
            Op::MulRow(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g * &self.values[b.0];
                let gb = (g * &self.values[a.0])
                    .sum_axis(Axis(0))
                    .into_shape_with_order((1, g.ncols()))
                    .unwrap();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::DivRow(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g / &self.values[b.0];
                let out = &self.values[id];
                let gb = (-(g * out) / &self.values[b.0])
                    .sum_axis(Axis(0))
                    .into_shape_with_order((1, g.ncols()))
                    .unwrap();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, g.mapv(|x| x * c));
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.accumulate(a, g.clone());
            }
            Op::Exp(a) | Op::ExpNormRows(a) => {
                let a = *a;
                let ga = g * &self.values[id];
                self.accumulate(a, ga);
            }
            Op::Sin(a) => {
                let a = *a;
                let ga = g * &self.values[a.0].mapv(f64::cos);
                self.accumulate(a, ga);
            }
            Op::Cos(a) => {
                let a = *a;
                let ga = g * &self.values[a.0].mapv(|x| -x.sin());
                self.accumulate(a, ga);
            }
            Op::Sqrt(a) => {
                let a = *a;
                let ga = g * &self.values[id].mapv(|y| 0.5 / y);
                self.accumulate(a, ga);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let ga = g * &self.values[id].mapv(|y| y * (1.0 - y));
                self.accumulate(a, ga);
            }
            Op::Gelu(a) => {
                let a = *a;
                let ga = g * &self.values[a.0].mapv(gelu_derivative);
                self.accumulate(a, ga);
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.dot(&self.values[b.0].t());
                let gb = self.values[a.0].t().dot(g);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.t().to_owned());
            }
            Op::SumRows(a) => {
                let a = *a;
                let (m, n) = self.values[a.0].dim();
                let mut ga = Array2::zeros((m, n));
                for i in 0..m {
                    ga.row_mut(i).fill(g[(i, 0)]);
                }
                self.accumulate(a, ga);
            }
            Op::ColMean(a) => {
                let a = *a;
                let (m, n) = self.values[a.0].dim();
                let mut ga = Array2::zeros((m, n));
                let inv = 1.0 / m as f64;
                for j in 0..n {
                    let gj = g[(0, j)] * inv;
                    ga.column_mut(j).fill(gj);
                }
                self.accumulate(a, ga);
            }
            Op::SumAll(a) => {
                let a = *a;
                let ga = Array2::from_elem(self.values[a.0].dim(), g[(0, 0)]);
                self.accumulate(a, ga);
            }
            Op::SliceRows(a, start, end) => {
                let (a, start, end) = (*a, *start, *end);
                let mut ga = Array2::zeros(self.values[a.0].dim());
                ga.slice_mut(s![start..end, ..]).assign(g);
                self.accumulate(a, ga);
            }
            Op::TileRows(a, times) => {
                let (a, times) = (*a, *times);
                let (m, n) = self.values[a.0].dim();
                let mut ga = Array2::zeros((m, n));
                for t in 0..times {
                    ga += &g.slice(s![t * m..(t + 1) * m, ..]);
                }
                self.accumulate(a, ga);
            }
            Op::RepeatRowsEach(a, times) => {
                let (a, times) = (*a, *times);
                let (m, n) = self.values[a.0].dim();
                let mut ga = Array2::zeros((m, n));
                for i in 0..m {
                    for t in 0..times {
                        let src = g.row(i * times + t);
                        ga.row_mut(i).zip_mut_with(&src, |d, &s| *d += s);
                    }
                }
                self.accumulate(a, ga);
            }
            Op::GroupWeightedSum {
                weights,
                rows,
                group,
            } => {
                let (weights, rows, n) = (*weights, *rows, *group);
                let w = &self.values[weights.0];
                let r = &self.values[rows.0];
                let (h, _) = w.dim();
                let mut gw = Array2::zeros(w.dim());
                let mut gr = Array2::zeros(r.dim());
                for ch in 0..h {
                    let grow = g.row(ch);
                    for i in 0..n {
                        let rrow = r.row(ch * n + i);
                        let mut dot = 0.0;
                        for (x, y) in grow.iter().zip(rrow.iter()) {
                            dot += x * y;
                        }
                        gw[(ch, i)] = dot;
                        let wi = w[(ch, i)];
                        gr.row_mut(ch * n + i)
                            .zip_mut_with(&grow, |d, &s| *d += wi * s);
                    }
                }
                self.accumulate(weights, gw);
                self.accumulate(rows, gr);
            }
            Op::CausalConvRows { kernel, x, batch } => {
                let (kernel, x, batch) = (*kernel, *x, *batch);
                let (gk, gx) =
                    causal_conv_backward(&self.values[kernel.0], &self.values[x.0], g, batch);
                self.accumulate(kernel, gk);
                self.accumulate(x, gx);
            }
            Op::RevSegments(a, batch) => {
                let (a, batch) = (*a, *batch);
                let ga = reverse_segments(g, batch);
                self.accumulate(a, ga);
            }
            Op::DepthwiseConvRows { kernel, x, batch } => {
                let (kernel, x, batch) = (*kernel, *x, *batch);
                let (gk, gx) =
                    depthwise_backward(&self.values[kernel.0], &self.values[x.0], g, batch);
                self.accumulate(kernel, gk);
                self.accumulate(x, gx);
            }
            Op::Mhsa {
                q,
                k,
                v,
                heads,
                batch,
                attn,
            } => {
                let (q, k, v, heads, batch) = (*q, *k, *v, *heads, *batch);
                let (gq, gk, gv) = mhsa_backward_raw(
                    &self.values[q.0],
                    &self.values[k.0],
                    &self.values[v.0],
                    attn,
                    g,
                    heads,
                    batch,
                );
                self.accumulate(q, gq);
                self.accumulate(k, gk);
                self.accumulate(v, gv);
            }
            Op::SegmentMeanCols(a, batch) => {
                let (a, batch) = (*a, *batch);
                let (d, total) = self.values[a.0].dim();
                let len = total / batch;
                let inv = 1.0 / len as f64;
                let mut ga = Array2::zeros((d, total));
                for b in 0..batch {
                    for j in 0..len {
                        for i in 0..d {
                            ga[(i, b * len + j)] = g[(i, b)] * inv;
                        }
                    }
                }
                self.accumulate(a, ga);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let cols = labels.len();
                let scale = g[(0, 0)] / cols as f64;
                let mut gl = probs.clone();
                for (b, &label) in labels.iter().enumerate() {
                    gl[(label, b)] -= 1.0;
                }
                gl *= scale;
                self.accumulate(logits, gl);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let ga = g * mask;
                self.accumulate(x, ga);
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU, the usual transformer approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn reverse_segments(x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let (rows, total) = x.dim();
    assert_eq!(total % batch, 0);
    let len = total / batch;
    let mut out = Array2::zeros((rows, total));
    for r in 0..rows {
        for b in 0..batch {
            for j in 0..len {
                out[(r, b * len + j)] = x[(r, b * len + (len - 1 - j))];
            }
        }
    }
    out
}

fn causal_conv_batch(kernels: &Array2<f64>, x: &Array2<f64>, batch: usize) -> Result<Array2<f64>> {
    let (h, klen) = kernels.dim();
    let total = x.ncols();
    let len = total / batch;
    debug_assert_eq!(klen, len);
    let mut out = Array2::zeros((h, total));
    let mut seg = vec![0.0; len];
    for ch in 0..h {
        let kern: Vec<f64> = kernels.row(ch).to_vec();
        for b in 0..batch {
            for (j, v) in seg.iter_mut().enumerate() {
                *v = x[(ch, b * len + j)];
            }
            let y = fft_conv(&kern, &seg)?;
            for (j, v) in y.into_iter().enumerate() {
                out[(ch, b * len + j)] = v;
            }
        }
    }
    Ok(out)
}

/// Adjoints of the causal convolution: with c = fullconv(g, rev(u)), the
/// kernel gradient is dK_j = c[j + L - 1], and symmetrically for the input.
fn causal_conv_backward(
    kernels: &Array2<f64>,
    x: &Array2<f64>,
    g: &Array2<f64>,
    batch: usize,
) -> (Array2<f64>, Array2<f64>) {
    let (h, len) = kernels.dim();
    let total = x.ncols();
    let mut gk = Array2::zeros((h, len));
    let mut gx = Array2::zeros((h, total));
    let mut gseg = vec![0.0; len];
    let mut xseg = vec![0.0; len];
    for ch in 0..h {
        let kern_rev: Vec<f64> = kernels.row(ch).iter().rev().copied().collect();
        for b in 0..batch {
            for j in 0..len {
                gseg[j] = g[(ch, b * len + j)];
                xseg[j] = x[(ch, b * len + (len - 1 - j))];
            }
            let ck = fft_full_conv(&gseg, &xseg).expect("conv adjoint");
            for j in 0..len {
                gk[(ch, j)] += ck[j + len - 1];
            }
            let cx = fft_full_conv(&gseg, &kern_rev).expect("conv adjoint");
            for j in 0..len {
                gx[(ch, b * len + j)] = cx[j + len - 1];
            }
        }
    }
    (gk, gx)
}

fn depthwise_forward(kernels: &Array2<f64>, x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let (h, klen) = kernels.dim();
    let total = x.ncols();
    let len = total / batch;
    let pad = (klen - 1) / 2;
    let mut out = Array2::zeros((h, total));
    for ch in 0..h {
        for b in 0..batch {
            let base = b * len;
            for m in 0..len {
                let mut acc = 0.0;
                for t in 0..klen {
                    let idx = m as isize + t as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < len {
                        acc += kernels[(ch, t)] * x[(ch, base + idx as usize)];
                    }
                }
                out[(ch, base + m)] = acc;
            }
        }
    }
    out
}

fn depthwise_backward(
    kernels: &Array2<f64>,
    x: &Array2<f64>,
    g: &Array2<f64>,
    batch: usize,
) -> (Array2<f64>, Array2<f64>) {
    let (h, klen) = kernels.dim();
    let total = x.ncols();
    let len = total / batch;
    let pad = (klen - 1) / 2;
    let mut gk = Array2::zeros((h, klen));
    let mut gx = Array2::zeros((h, total));
    for ch in 0..h {
        for b in 0..batch {
            let base = b * len;
            for m in 0..len {
                let gm = g[(ch, base + m)];
                if gm == 0.0 {
                    continue;
                }
                for t in 0..klen {
                    let idx = m as isize + t as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < len {
                        gk[(ch, t)] += gm * x[(ch, base + idx as usize)];
                        gx[(ch, base + idx as usize)] += gm * kernels[(ch, t)];
                    }
                }
            }
        }
    }
    (gk, gx)
}

type MhsaSaved = Vec<Array2<f64>>;

fn mhsa_forward_raw(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: usize,
    batch: usize,
) -> (Array2<f64>, MhsaSaved) {
    let (inner, total) = q.dim();
    let dk = inner / heads;
    let len = total / batch;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Array2::zeros((inner, total));
    let mut saved = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        for hd in 0..heads {
            let rows = hd * dk..(hd + 1) * dk;
            let cols = b * len..(b + 1) * len;
            let qh = q.slice(s![rows.clone(), cols.clone()]);
            let kh = k.slice(s![rows.clone(), cols.clone()]);
            let vh = v.slice(s![rows.clone(), cols.clone()]);
            // scores[i, j] = <q_i, k_j> / sqrt(dk)
            let mut scores = qh.t().dot(&kh);
            scores *= scale;
            for mut row in scores.rows_mut() {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - m).exp();
                    denom += *s;
                }
                for s in row.iter_mut() {
                    *s /= denom;
                }
            }
            let oh = vh.dot(&scores.t());
            out.slice_mut(s![rows, cols]).assign(&oh);
            saved.push(scores);
        }
    }
    (out, saved)
}

fn mhsa_backward_raw(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    attn: &MhsaSaved,
    g: &Array2<f64>,
    heads: usize,
    batch: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (inner, total) = q.dim();
    let dk = inner / heads;
    let len = total / batch;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut gq = Array2::zeros((inner, total));
    let mut gk = Array2::zeros((inner, total));
    let mut gv = Array2::zeros((inner, total));
    for b in 0..batch {
        for hd in 0..heads {
            let rows = hd * dk..(hd + 1) * dk;
            let cols = b * len..(b + 1) * len;
            let a = &attn[b * heads + hd];
            let qh = q.slice(s![rows.clone(), cols.clone()]);
            let kh = k.slice(s![rows.clone(), cols.clone()]);
            let vh = v.slice(s![rows.clone(), cols.clone()]);
            let go = g.slice(s![rows.clone(), cols.clone()]);
            // O = V A^T  =>  dV = dO A,  dA = dO^T V
            let gvh = go.dot(a);
            let mut ga = go.t().dot(&vh);
            // softmax backward per row: dS = (dA - (dA . A) 1) * A
            for (mut ga_row, a_row) in ga.rows_mut().into_iter().zip(a.rows()) {
                let dot: f64 = ga_row.iter().zip(a_row.iter()).map(|(x, y)| x * y).sum();
                for (gs, &av) in ga_row.iter_mut().zip(a_row.iter()) {
                    *gs = (*gs - dot) * av;
                }
            }
            ga *= scale;
            // S = Q^T K scaled  =>  dQ = K dS^T, dK = Q dS
            let gqh = kh.dot(&ga.t());
            let gkh = qh.dot(&ga);
            gq.slice_mut(s![rows.clone(), cols.clone()]).assign(&gqh);
            gk.slice_mut(s![rows.clone(), cols.clone()]).assign(&gkh);
            gv.slice_mut(s![rows, cols]).assign(&gvh);
        }
    }
    (gq, gk, gv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn backward_rejects_foreign_and_nonscalar_nodes() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        assert!(t.backward(Var(99)).is_err());
        assert!(t.backward(a).is_err()); // not 1x1
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[2.0]]);
        let b = t.leaf(array![[5.0]]);
        let loss = t.mul(a, a);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(b), array![[0.0]]);
        assert_eq!(t.grad(a), array![[4.0]]);
    }

    #[test]
    fn matmul_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.leaf(array![[0.5], [-1.0]]);
        let y = t.matmul(a, b);
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        // d(sum(A b))/dA = 1 b^T, /db = A^T 1
        assert_eq!(t.grad(a), array![[0.5, -1.0], [0.5, -1.0]]);
        assert_eq!(t.grad(b), array![[4.0], [6.0]]);
    }

    #[test]
    fn fft_conv_adjoint_is_correlation() {
        // loss = 0.5 ||y||^2 with y = conv(K, u): dL/du_m = sum_k y_k K_{k-m}.
        let kernel = array![[0.5, -0.25, 0.1, 0.7]];
        let u = array![[1.0, 2.0, -1.0, 0.5]];
        let mut t = Tape::new();
        let kv = t.leaf(kernel.clone());
        let uv = t.leaf(u.clone());
        let y = t.causal_conv_rows(kv, uv, 1);
        let y2 = t.mul(y, y);
        let s = t.sum_all(y2);
        let loss = t.scale(s, 0.5);
        t.backward(loss).unwrap();

        let yv = causal_conv_batch(&kernel, &u, 1).unwrap();
        let mut expected = Array2::<f64>::zeros((1, 4));
        for m in 0..4 {
            for k in m..4 {
                expected[(0, m)] += yv[(0, k)] * kernel[(0, k - m)];
            }
        }
        let gu = t.grad(uv);
        for m in 0..4 {
            assert!(
                (gu[(0, m)] - expected[(0, m)]).abs() < 1e-12,
                "m={m}: {} vs {}",
                gu[(0, m)],
                expected[(0, m)]
            );
        }
    }

    #[test]
    fn rev_segments_is_self_inverse() {
        let x = array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]];
        let r = reverse_segments(&x, 2);
        assert_eq!(r, array![[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]]);
        assert_eq!(reverse_segments(&r, 2), x);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let logits = t.leaf(Array2::zeros((4, 3)));
        let loss = t.softmax_cross_entropy(logits, &[0, 1, 2]);
        t.backward(loss).unwrap();
        assert!((t.value(loss)[(0, 0)] - 4f64.ln()).abs() < 1e-12);
        let g = t.grad(logits);
        // (p - onehot)/B with p = 1/4
        assert!((g[(0, 0)] - (0.25 - 1.0) / 3.0).abs() < 1e-12);
        assert!((g[(1, 0)] - 0.25 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mhsa_uniform_attention_for_equal_keys() {
        // All-equal keys give uniform weights, so output = mean of values.
        let len = 5;
        let mut t = Tape::new();
        let q = t.leaf(Array2::from_shape_fn((2, len), |(i, j)| {
            (i as f64 + 1.0) * (j as f64 - 2.0)
        }));
        let k = t.leaf(Array2::ones((2, len)));
        let v = t.leaf(Array2::from_shape_fn((2, len), |(i, j)| {
            i as f64 * 10.0 + j as f64
        }));
        let o = t.mhsa(q, k, v, 1, 1);
        let vv = t.value(v).clone();
        let mean = vv.mean_axis(Axis(1)).unwrap();
        for i in 0..2 {
            for j in 0..len {
                assert!((t.value(o)[(i, j)] - mean[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_zero_rate_mask_is_identity() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, -2.0], [0.5, 3.0]]);
        let y = t.dropout(x, Array2::ones((2, 2)));
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.value(y), t.value(x));
        assert_eq!(t.grad(x), Array2::<f64>::ones((2, 2)));
    }
}
