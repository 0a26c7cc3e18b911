//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and enough context to
//! push gradients back to its inputs. Parameters enter the tape by name from a
//! borrowed [`ParamStore`]; [`Graph::backward`] returns one gradient per stored
//! parameter, zero for those the loss never touched.

use std::collections::HashMap;

use super::ops::{self, LayerNormCache};
use super::{Gradients, NumericsError, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberately wrong backward rules, used to prove the gradient checker bites.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the tanh derivative by 1.01.
    TanhBackward,
}

enum Op {
    Constant,
    Param(String),
    MatMul { a: Var, b: Var, trans_b: bool },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, cache: LayerNormCache },
    Conv2d { x: Var, w: Var },
    ConvBias { y: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    WeightedRowSum { x: Var, weights: Vec<f64> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    GaussianLogProb { mean: Var, action: Tensor, std: f64 },
    ScaleCols { x: Var, scale: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
    fault: Option<Fault>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Which branch every piecewise op took: the max-pool winners and, per
    /// clamped element, below/inside/above. Two forward passes with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaxPool2 { argmax, .. } => sig.extend_from_slice(argmax),
                Op::Clamp { x, lo, hi } => sig.extend(self.value(*x).data().iter().map(|v| {
                    if v < lo {
                        0
                    } else if v > hi {
                        2
                    } else {
                        1
                    }
                })),
                _ => {}
            }
        }
        sig
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf for a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var, NumericsError> {
        if let Some(v) = self.param_vars.get(name) {
            return Ok(*v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Param(name.to_string()));
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }))
    }

    /// Adds `bias: [F]` to every row of `x: [.., F]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let f = *xv.shape().last().unwrap_or(&0);
        if bv.shape() != [f] {
            return Err(ops::mismatch("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(f) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    /// `x · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul_nt(x, w)?;
        self.add_bias(y, b)
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(ops::mismatch(op, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same("minimum", a, b, f64::min)?;
        Ok(self.push(out, Op::Minimum(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.map(x, |v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, ops::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(x, |v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Row softmax; masked-out columns get exactly zero probability.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        let out = ops::softmax_rows(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let (out, cache) = ops::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        let normed = self.push(out, Op::LayerNorm { x, gain, cache });
        self.bias_passthrough(normed, bias)
    }

    fn bias_passthrough(&mut self, y: Var, bias: Var) -> Result<Var, NumericsError> {
        // The layer-norm value already includes the bias; this node forwards it
        // unchanged and only exists to send row-summed gradients to `bias`.
        let out = self.value(y).clone();
        Ok(self.push(out, Op::AddBias { x: y, bias }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let zero_bias = Tensor::zeros(&[self.value(w).shape()[0]]);
        let out = ops::conv2d(self.value(x), self.value(w), &zero_bias)?;
        let y = self.push(out, Op::Conv2d { x, w });
        self.add_bias_channels(y, b)
    }

    fn add_bias_channels(&mut self, y: Var, b: Var) -> Result<Var, NumericsError> {
        // [N,C,H,W] + b[C]: reuse add_bias through a channel-last view
        let yv = self.value(y);
        let &[n, c, h, w] = yv.shape() else {
            unreachable!("conv output is rank 4")
        };
        let bv = self.value(b);
        if bv.shape() != [c] {
            return Err(ops::mismatch("conv2d bias", yv, bv));
        }
        let mut out = yv.clone();
        for s in 0..n {
            for (ch, bias) in bv.data().iter().enumerate() {
                let base = (s * c + ch) * h * w;
                for v in &mut out.data_mut()[base..base + h * w] {
                    *v += bias;
                }
            }
        }
        Ok(self.push(out, Op::ConvBias { y, b }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (out, argmax) = ops::maxpool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        let (rows, cols) = tv.dims2("embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                len: rows,
            });
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Same as [`Graph::embedding`] but for a computed matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
        let rows = self.value(*first).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2("concat_cols")?;
            if r != rows {
                return Err(ops::mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty("concat_rows"))?;
        let cols = self.value(*first).dims2("concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.value(*p).dims2("concat_rows")?;
            if c != cols {
                return Err(ops::mismatch("concat_rows", self.value(*first), self.value(*p)));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("slice_cols")?;
        if start + len > cols {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// `Σ_r weights[r] · x[r, :]`, giving `[1, C]`. With weights `1/k` on k
    /// selected rows this is a masked mean pool.
    pub fn weighted_row_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("weighted_row_sum")?;
        if weights.len() != rows {
            return Err(NumericsError::ShapeMismatch {
                op: "weighted_row_sum",
                left: xv.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let mut out = vec![0.0; cols];
        for (r, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += w * v;
            }
        }
        let out = Tensor::new(vec![1, cols], out)?;
        Ok(self.push(
            out,
            Op::WeightedRowSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Per-row log density `[N]` of actions under `N(mean, std²·I)`.
    pub fn gaussian_log_prob(
        &mut self,
        mean: Var,
        action: &Tensor,
        std: f64,
    ) -> Result<Var, NumericsError> {
        let mv = self.value(mean);
        let (n, d) = mv.dims2("gaussian_log_prob")?;
        if action.shape() != mv.shape() {
            return Err(ops::mismatch("gaussian_log_prob", mv, action));
        }
        let data = (0..n)
            .map(|r| ops::gaussian_log_prob(mv.row(r), &action.data()[r * d..(r + 1) * d], std))
            .collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(
            out,
            Op::GaussianLogProb {
                mean,
                action: action.clone(),
                std,
            },
        ))
    }

    /// `x[:, j] · scale[j] + shift[j]` for a constant per-column affine map.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (_, cols) = xv.dims2("affine_cols")?;
        if scale.len() != cols || shift.len() != cols {
            return Err(NumericsError::ShapeMismatch {
                op: "affine_cols",
                left: xv.shape().to_vec(),
                right: vec![scale.len()],
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for j in 0..cols {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        Ok(self.push(
            out,
            Op::ScaleCols {
                x,
                scale: scale.to_vec(),
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every stored parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    if let Some(t) = out.get_mut(name) {
                        t.add_assign(&g);
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if *trans_b {
                        // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                        accumulate(&mut grads, *a, ops::matmul(&g, bv)?);
                        accumulate(&mut grads, *b, ops::matmul_tn(&g, av)?);
                    } else {
                        accumulate(&mut grads, *a, ops::matmul_nt(&g, bv)?);
                        accumulate(&mut grads, *b, ops::matmul_tn(av, &g)?);
                    }
                }
                Op::AddBias { x, bias } => {
                    let f = self.value(*bias).len();
                    let mut db = vec![0.0; f];
                    for row in g.data().chunks(f) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::new(vec![f], db)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::ConvBias { y, b } => {
                    let shape = g.shape().to_vec();
                    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let mut db = vec![0.0; c];
                    for s in 0..n {
                        for (ch, d) in db.iter_mut().enumerate() {
                            let base = (s * c + ch) * hw;
                            *d += g.data()[base..base + hw].iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(vec![c], db)?);
                    accumulate(&mut grads, *y, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, scaled(&g, -1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, scaled(&g, *s)),
                Op::Tanh(x) => {
                    let k = if self.fault == Some(Fault::TanhBackward) { 1.01 } else { 1.0 };
                    let d = zip_map(&g, &node.value, |gi, y| k * gi * (1.0 - y * y));
                    accumulate(&mut grads, *x, d);
                }
                Op::Exp(x) => accumulate(&mut grads, *x, hadamard(&g, &node.value)),
                Op::Square(x) => {
                    let d = zip_map(&g, self.value(*x), |gi, v| 2.0 * v * gi);
                    accumulate(&mut grads, *x, d);
                }
                Op::Clamp { x, lo, hi } => {
                    let d = zip_map(&g, self.value(*x), |gi, v| {
                        if v >= *lo && v <= *hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, d);
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = g.clone();
                    let mut db = g;
                    for i in 0..av.len() {
                        if av.data()[i] <= bv.data()[i] {
                            db.data_mut()[i] = 0.0;
                        } else {
                            da.data_mut()[i] = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let cols = *p.shape().last().unwrap_or(&1);
                    let mut d = g.clone();
                    for (drow, (prow, grow)) in d
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(p.data().chunks(cols).zip(g.data().chunks(cols)))
                    {
                        let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            drow[j] = prow[j] * (grow[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::LayerNorm { x, gain, cache } => {
                    let gv = self.value(*gain);
                    let cols = gv.len();
                    let xhat = &cache.normalized;
                    let mut dgain = vec![0.0; cols];
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..g.len() / cols {
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        let hrow = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..cols {
                            dgain[j] += grow[j] * hrow[j];
                            let dh = grow[j] * gv.data()[j];
                            sum_d += dh;
                            sum_dh += dh * hrow[j];
                        }
                        let is = cache.inv_std[r];
                        for j in 0..cols {
                            let dh = grow[j] * gv.data()[j];
                            dx[r * cols + j] =
                                is / cols as f64 * (cols as f64 * dh - sum_d - hrow[j] * sum_dh);
                        }
                    }
                    accumulate(&mut grads, *gain, Tensor::new(vec![cols], dgain)?);
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                }
                Op::Conv2d { x, w } => {
                    let need_dx = self.needs_grad(*x);
                    let (dx, dw, _) =
                        ops::conv2d_backward(self.value(*x), self.value(*w), &g, need_dx)?;
                    accumulate(&mut grads, *w, dw);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    for (gi, &src) in g.data().iter().zip(argmax) {
                        d.data_mut()[src] += gi;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Embedding { table, ids } | Op::GatherRows { x: table, idx: ids } => {
                    let mut d = Tensor::zeros(self.value(*table).shape());
                    let cols = g.shape()[1];
                    for (r, &i) in ids.iter().enumerate() {
                        let dst = &mut d.data_mut()[i * cols..(i + 1) * cols];
                        for (a, b) in dst.iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *table, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.shape()[0];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).shape()[1];
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, *p, Tensor::new(vec![rows, w], d)?);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let n = self.value(*p).len();
                        let d = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        accumulate(&mut grads, *p, Tensor::new(shape, d)?);
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let cols = xv.shape()[1];
                    let len = g.shape()[1];
                    let mut d = Tensor::zeros(xv.shape());
                    for r in 0..g.shape()[0] {
                        d.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::WeightedRowSum { x, weights } => {
                    let xv = self.value(*x);
                    let cols = xv.shape()[1];
                    let mut d = Tensor::zeros(xv.shape());
                    for (r, w) in weights.iter().enumerate() {
                        for j in 0..cols {
                            d.data_mut()[r * cols + j] = w * g.data()[j];
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshaped(&shape)?);
                }
                Op::Sum(x) => {
                    let gi = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gi));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let gi = g.data()[0] / xv.len().max(1) as f64;
                    accumulate(&mut grads, *x, Tensor::full(xv.shape(), gi));
                }
                Op::GaussianLogProb { mean, action, std } => {
                    let mv = self.value(*mean);
                    let d = mv.shape()[1];
                    let inv_var = 1.0 / (std * std);
                    let mut dm = Tensor::zeros(mv.shape());
                    for (i, v) in dm.data_mut().iter_mut().enumerate() {
                        *v = g.data()[i / d] * (action.data()[i] - mv.data()[i]) * inv_var;
                    }
                    accumulate(&mut grads, *mean, dm);
                }
                Op::ScaleCols { x, scale } => {
                    let cols = scale.len();
                    let mut d = g;
                    for row in d.data_mut().chunks_mut(cols) {
                        for (v, s) in row.iter_mut().zip(scale) {
                            *v *= s;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
            }
        }
        Ok(out)
    }

    /// Whether any parameter lies upstream of `v`.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn scaled(a: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().map(|v| v * s).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}
