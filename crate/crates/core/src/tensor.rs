//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! Every operation appends a node to a [`Tape`]; nodes are created after their
//! inputs, so creation order is a topological order and [`Tape::backward`]
//! simply walks the tape in reverse. Ops work on 2-D values (`rows × cols`);
//! vector arguments such as biases are accepted in any shape with the right
//! element count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting inconsistent extents and non-finite data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn column(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Internal constructor for op outputs; extents are trusted.
    fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading extent; 1 for 0-D tensors.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.rows() {
            0 => self.shape[1..].iter().product(),
            r => self.data.len() / r,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    MulCol(Var, Var),
    /// Input and the sigmoid of each input entry.
    ShiftedSoftplus(Var, Vec<f64>),
    GatherMulScatter {
        x: Var,
        filter: Var,
        src: Vec<usize>,
        dst: Vec<usize>,
    },
    LeakyRelu(Var, f64),
    Abs(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn is_leaf(&self) -> bool {
        matches!(self, Op::Leaf)
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN2: f64 = std::f64::consts::LN_2;

/// ln(0.5·eˣ + 0.5), evaluated without overflow.
pub fn shifted_softplus(x: f64) -> f64 {
    ssp_and_sigmoid(x).0
}

/// `(ssp(x), sigmoid(x))`; sigmoid is the derivative of ssp.
fn ssp_and_sigmoid(x: f64) -> (f64, f64) {
    if x > 30.0 {
        // e^-x < 1e-13: the next terms are below f64 resolution
        let e = (-x).exp();
        (x - LN2 + e, 1.0 - e)
    } else {
        let y = 0.5 + 0.5 * x.exp();
        (y.ln(), 1.0 - 0.5 / y)
    }
}

fn check_indices(op: &'static str, index: &[usize], size: usize) -> Result<()> {
    match index.iter().enumerate().find(|(_, &i)| i >= size) {
        Some((position, &index)) => Err(Error::IndexOutOfRange {
            op,
            position,
            index,
            size,
        }),
        None => Ok(()),
    }
}

/// `c = op(a) · op(b)` accumulated with `beta`, all buffers row-major.
/// `a_t`/`b_t` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // a is m×k logically; stored k×m when transposed.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape.clone()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape_of(a), &self.shape_of(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value.data,
            false,
            &self.nodes[b.0].value.data,
            false,
            &mut out,
            0.0,
        );
        Ok(self.push(Tensor::raw(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let da = self.dims(a);
        if da != self.dims(b) || self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(op, &self.shape_of(a), &self.shape_of(b)));
        }
        Ok(da)
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, (usize, usize))> {
        let (r, c) = self.same_shape(op, a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((Tensor::raw(r, c, data), (r, c)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(bias).numel() != c {
            return Err(Error::shape("add_bias", &self.shape_of(x), &self.shape_of(bias)));
        }
        let b = &self.nodes[bias.0].value.data;
        let mut data = self.nodes[x.0].value.data.clone();
        for row in data.chunks_mut(c.max(1)) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
        Ok(self.push(Tensor::raw(r, c, data), Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x·W (+ b)`, the usual dense layer.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].value.data.iter().map(|v| v * factor).collect();
        self.push(Tensor::raw(r, c, data), Op::Scale(x, factor), &[x])
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if factors.len() != r {
            return Err(Error::shape("scale_rows", &self.shape_of(x), &[factors.len()]));
        }
        let mut data = self.nodes[x.0].value.data.clone();
        for (row, f) in data.chunks_mut(c.max(1)).zip(&factors) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(Tensor::raw(r, c, data), Op::ScaleRows(x, factors), &[x]))
    }

    /// Multiplies row `i` of `x` by the differentiable weight `w[i]`.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(w).numel() != r {
            return Err(Error::shape("mul_col", &self.shape_of(x), &self.shape_of(w)));
        }
        let wv = &self.nodes[w.0].value.data;
        let mut data = self.nodes[x.0].value.data.clone();
        for (row, f) in data.chunks_mut(c.max(1)).zip(wv) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(Tensor::raw(r, c, data), Op::MulCol(x, w), &[x, w]))
    }

    pub fn shifted_softplus(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let n = r * c;
        let mut data = Vec::with_capacity(n);
        let mut sig = Vec::with_capacity(if self.wants(x) { n } else { 0 });
        if self.wants(x) {
            for &v in &self.nodes[x.0].value.data {
                let (y, s) = ssp_and_sigmoid(v);
                data.push(y);
                sig.push(s);
            }
        } else {
            data.extend(self.nodes[x.0].value.data.iter().map(|&v| ssp_and_sigmoid(v).0));
        }
        self.push(Tensor::raw(r, c, data), Op::ShiftedSoftplus(x, sig), &[x])
    }

    /// `out[dst[e]] += x[src[e]] ⊙ filter[e]` over edges `e`: gather, product
    /// and scatter without materializing per-edge intermediates.
    pub fn gather_mul_scatter(
        &mut self,
        x: Var,
        filter: Var,
        src: Vec<usize>,
        dst: Vec<usize>,
        out_size: usize,
    ) -> Result<Var> {
        let (n, c) = self.dims(x);
        let (e, fc) = self.dims(filter);
        if fc != c || src.len() != e || dst.len() != e {
            return Err(Error::shape(
                "gather_mul_scatter",
                &[n, c],
                &[e, fc, src.len(), dst.len()],
            ));
        }
        check_indices("gather_mul_scatter", &src, n)?;
        check_indices("gather_mul_scatter", &dst, out_size)?;
        let xv = &self.nodes[x.0].value.data;
        let fv = &self.nodes[filter.0].value.data;
        let mut out = vec![0.0; out_size * c];
        for (k, (&s, &d)) in src.iter().zip(&dst).enumerate() {
            let o = &mut out[d * c..(d + 1) * c];
            let xs = &xv[s * c..(s + 1) * c];
            let fk = &fv[k * c..(k + 1) * c];
            for j in 0..c {
                o[j] += xs[j] * fk[j];
            }
        }
        Ok(self.push(
            Tensor::raw(out_size, c, out),
            Op::GatherMulScatter { x, filter, src, dst },
            &[x, filter],
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0]
            .value
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        self.push(Tensor::raw(r, c, data), Op::LeakyRelu(x, slope), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].value.data.iter().map(|v| v.abs()).collect();
        self.push(Tensor::raw(r, c, data), Op::Abs(x), &[x])
    }

    /// Row `e` of the output is row `index[e]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        check_indices("gather_rows", &index, r)?;
        let src = &self.nodes[x.0].value.data;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(Tensor::raw(index.len(), c, data), Op::GatherRows(x, index), &[x]))
    }

    /// Row `i` of the output is the sum of rows `j` of `values` with `index[j] == i`.
    pub fn scatter_add(&mut self, values: Var, index: Vec<usize>, out_size: usize) -> Result<Var> {
        let (e, c) = self.dims(values);
        if index.len() != e {
            return Err(Error::shape("scatter_add", &self.shape_of(values), &[index.len()]));
        }
        check_indices("scatter_add", &index, out_size)?;
        let src = &self.nodes[values.0].value.data;
        let mut data = vec![0.0; out_size * c];
        for (j, &i) in index.iter().enumerate() {
            let dst = &mut data[i * c..(i + 1) * c];
            dst.iter_mut().zip(&src[j * c..(j + 1) * c]).for_each(|(d, s)| *d += s);
        }
        Ok(self.push(Tensor::raw(out_size, c, data), Op::ScatterAdd(values, index), &[values]))
    }

    /// Max-subtracted softmax over each group of entries sharing a segment id.
    /// The logits are read as a flat vector; the output is a column.
    pub fn segment_softmax(&mut self, logits: Var, segment: Vec<usize>) -> Result<Var> {
        let x = &self.nodes[logits.0].value.data;
        if segment.len() != x.len() {
            return Err(Error::shape(
                "segment_softmax",
                &self.shape_of(logits),
                &[segment.len()],
            ));
        }
        let n_seg = segment.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&v, &s) in x.iter().zip(&segment) {
            if v > max[s] {
                max[s] = v;
            }
        }
        let mut out: Vec<f64> = x.iter().zip(&segment).map(|(&v, &s)| (v - max[s]).exp()).collect();
        let mut denom = vec![0.0; n_seg];
        for (&v, &s) in out.iter().zip(&segment) {
            denom[s] += v;
        }
        for (v, &s) in out.iter_mut().zip(&segment) {
            *v /= denom[s];
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segment_softmax".into()));
        }
        let n = out.len();
        Ok(self.push(Tensor::raw(n, 1, out), Op::SegmentSoftmax(logits, segment), &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = &self.nodes[x.0].value.data;
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::shape("concat_cols", &self.shape_of(a), &self.shape_of(b)));
        }
        let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        Ok(self.push(Tensor::raw(ra, ca + cb, data), Op::ConcatCols(a, b), &[a, b]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ca != cb {
            return Err(Error::shape("concat_rows", &self.shape_of(a), &self.shape_of(b)));
        }
        let mut data = self.nodes[a.0].value.data.clone();
        data.extend_from_slice(&self.nodes[b.0].value.data);
        Ok(self.push(Tensor::raw(ra + rb, ca, data), Op::ConcatRows(a, b), &[a, b]))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start > end || end > r {
            return Err(Error::IndexOutOfRange {
                op: "slice_rows",
                position: start,
                index: end,
                size: r,
            });
        }
        let data = self.nodes[x.0].value.data[start * c..end * c].to_vec();
        Ok(self.push(Tensor::raw(end - start, c, data), Op::SliceRows(x, start), &[x]))
    }

    /// Row-wise layer normalization with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape("layer_norm", &self.shape_of(x), &self.shape_of(gamma)));
        }
        let xv = &self.nodes[x.0].value.data;
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let mut normalized = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c.max(1)).take(r) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mu) * is;
                normalized.push(n);
                out.push(n * g[j] + b[j]);
            }
        }
        Ok(self.push(
            Tensor::raw(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`];
    /// intermediate gradients are recomputed from scratch each call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        for node in &mut self.nodes {
            if !node.op.is_leaf() {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.accumulate(loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].op.is_leaf() || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(i, &op, &grad);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn backward_op(&mut self, i: usize, op: &Op, g: &[f64]) {
        let (rows, cols) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let n = cols;
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &self.nodes[b.0].value.data, true, &mut da, 0.0);
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &self.nodes[a.0].value.data, true, g, false, &mut db, 0.0);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(b) {
                    self.accumulate(b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(b) {
                    self.accumulate(b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = g.iter().zip(&self.nodes[b.0].value.data).map(|(x, y)| x * y).collect();
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = g.iter().zip(&self.nodes[a.0].value.data).map(|(x, y)| x * y).collect();
                    self.accumulate(b, d);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(x) {
                    self.accumulate(x, g.to_vec());
                }
                if self.wants(b) {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Scale(x, f) => self.accumulate(x, g.iter().map(|v| v * f).collect()),
            Op::ScaleRows(x, ref factors) => {
                if self.wants(x) {
                    let mut d = g.to_vec();
                    for (row, f) in d.chunks_mut(cols.max(1)).zip(factors) {
                        row.iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(x, d);
                }
            }
            Op::MulCol(x, w) => {
                if self.wants(x) {
                    let wv = &self.nodes[w.0].value.data;
                    let mut d = g.to_vec();
                    for (row, f) in d.chunks_mut(cols.max(1)).zip(wv) {
                        row.iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(x, d);
                }
                if self.wants(w) {
                    let xv = &self.nodes[x.0].value.data;
                    let d = (0..rows)
                        .map(|r| {
                            let s = r * cols;
                            g[s..s + cols].iter().zip(&xv[s..s + cols]).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    self.accumulate(w, d);
                }
            }
            Op::ShiftedSoftplus(x, ref sig) => {
                let d = g.iter().zip(sig).map(|(gv, s)| gv * s).collect();
                self.accumulate(x, d);
            }
            Op::GatherMulScatter {
                x,
                filter,
                ref src,
                ref dst,
            } => {
                let xv = &self.nodes[x.0].value.data;
                let fv = &self.nodes[filter.0].value.data;
                let dx = self.wants(x).then(|| {
                    let mut d = vec![0.0; xv.len()];
                    for (k, (&s, &t)) in src.iter().zip(dst).enumerate() {
                        let gd = &g[t * cols..(t + 1) * cols];
                        let fk = &fv[k * cols..(k + 1) * cols];
                        let ds = &mut d[s * cols..(s + 1) * cols];
                        for j in 0..cols {
                            ds[j] += gd[j] * fk[j];
                        }
                    }
                    d
                });
                let df = self.wants(filter).then(|| {
                    let mut d = vec![0.0; fv.len()];
                    for (k, (&s, &t)) in src.iter().zip(dst).enumerate() {
                        let gd = &g[t * cols..(t + 1) * cols];
                        let xs = &xv[s * cols..(s + 1) * cols];
                        for (j, dk) in d[k * cols..(k + 1) * cols].iter_mut().enumerate() {
                            *dk = gd[j] * xs[j];
                        }
                    }
                    d
                });
                if let Some(d) = dx {
                    self.accumulate(x, d);
                }
                if let Some(d) = df {
                    self.accumulate(filter, d);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let d = g
                    .iter()
                    .zip(&self.nodes[x.0].value.data)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { gv * slope })
                    .collect();
                self.accumulate(x, d);
            }
            Op::Abs(x) => {
                let d = g
                    .iter()
                    .zip(&self.nodes[x.0].value.data)
                    .map(|(gv, &xv)| {
                        if xv > 0.0 {
                            *gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(x, d);
            }
            Op::GatherRows(x, ref index) => {
                if self.wants(x) {
                    let n = self.nodes[x.0].value.rows();
                    let mut d = vec![0.0; n * cols];
                    for (e, &src) in index.iter().enumerate() {
                        let dst = &mut d[src * cols..(src + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[e * cols..(e + 1) * cols])
                            .for_each(|(a, b)| *a += b);
                    }
                    self.accumulate(x, d);
                }
            }
            Op::ScatterAdd(x, ref index) => {
                if self.wants(x) {
                    let mut d = Vec::with_capacity(index.len() * cols);
                    for &dst in index {
                        d.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
                    }
                    self.accumulate(x, d);
                }
            }
            Op::SegmentSoftmax(x, ref segment) => {
                let y = &self.nodes[i].value.data;
                let n_seg = segment.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((yv, gv), &s) in y.iter().zip(g).zip(segment) {
                    dot[s] += yv * gv;
                }
                let d = y
                    .iter()
                    .zip(g)
                    .zip(segment)
                    .map(|((yv, gv), &s)| yv * (gv - dot[s]))
                    .collect();
                self.accumulate(x, d);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(x, vec![g[0] / n.max(1) as f64; n]);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                let cb = cols - ca;
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for row in g.chunks(cols.max(1)).take(rows) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::ConcatRows(a, b) => {
                let na = self.nodes[a.0].value.numel();
                self.accumulate(a, g[..na].to_vec());
                self.accumulate(b, g[na..].to_vec());
            }
            Op::SliceRows(x, start) => {
                if self.wants(x) {
                    let mut d = vec![0.0; self.nodes[x.0].value.numel()];
                    d[start * cols..start * cols + g.len()].copy_from_slice(g);
                    self.accumulate(x, d);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                ref normalized,
                ref inv_std,
            } => {
                if self.wants(beta) {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.accumulate(beta, db);
                }
                if self.wants(gamma) {
                    let mut dg = vec![0.0; cols];
                    for (row, nrow) in g.chunks(cols.max(1)).zip(normalized.chunks(cols.max(1))) {
                        for j in 0..cols {
                            dg[j] += row[j] * nrow[j];
                        }
                    }
                    self.accumulate(gamma, dg);
                }
                if self.wants(x) {
                    let gm = &self.nodes[gamma.0].value.data;
                    let mut dx = Vec::with_capacity(rows * cols);
                    let c = cols as f64;
                    for r in 0..rows {
                        let s = r * cols;
                        let nrow = &normalized[s..s + cols];
                        let dn: Vec<f64> = (0..cols).map(|j| g[s + j] * gm[j]).collect();
                        let mean_dn = dn.iter().sum::<f64>() / c;
                        let mean_dn_n = dn.iter().zip(nrow).map(|(a, b)| a * b).sum::<f64>() / c;
                        for j in 0..cols {
                            dx.push(inv_std[r] * (dn[j] - mean_dn - nrow[j] * mean_dn_n));
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(rows: usize, cols: usize, seed: &mut u64) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| lcg(seed)).collect()).unwrap()
    }

    /// Central-difference check of `f` with respect to every entry of `inputs`.
    fn fd_check(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars);
        let loss = tape.sum(out);
        tape.backward(loss).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]);
            let eval = |delta: f64, idx: usize| {
                let mut tp = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(kk, tt)| {
                        let mut tt = tt.clone();
                        if kk == k {
                            tt.data_mut()[idx] += delta;
                        }
                        tp.leaf(tt, false)
                    })
                    .collect();
                let o = f(&mut tp, &vs);
                let s = tp.sum(o);
                tp.value(s).data()[0]
            };
            let numeric: Vec<f64> = (0..t.numel())
                .map(|i| (eval(eps, i) - eval(-eps, i)) / (2.0 * eps))
                .collect();
            let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            let diff = analytic
                .iter()
                .zip(&numeric)
                .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            worst = worst.max(diff / scale);
        }
        worst
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let out = t.matmul(i, v).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 4.0]);

        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let out = t.matmul(a, v).unwrap();
        assert_eq!(t.value(out).data(), &[11.0]);
        assert_eq!(t.value(out).shape(), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut s = 7;
        let a = random(3, 4, &mut s);
        let b = random(4, 2, &mut s);
        let err = fd_check(vec![a, b], |t, v| t.matmul(v[0], v[1]).unwrap());
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn scatter_add_hand_cases() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let out = t.scatter_add(v, vec![0, 0, 1], 2).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 3.0]);

        let empty = t.constant(Tensor::zeros(&[0, 1]));
        let out = t.scatter_add(empty, vec![], 2).unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 0.0]);
        assert_eq!(t.value(out).shape(), &[2, 1]);
    }

    #[test]
    fn scatter_add_rejects_out_of_range_index() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::column(vec![1.0, 2.0]));
        match t.scatter_add(v, vec![0, 5], 2) {
            Err(Error::IndexOutOfRange { position, index, .. }) => {
                assert_eq!((position, index), (1, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn segment_softmax_cases() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::column(vec![5.0]));
        let out = t.segment_softmax(l, vec![0]).unwrap();
        assert_eq!(t.value(out).data(), &[1.0]);

        let l = t.constant(Tensor::column(vec![0.0, 0.0]));
        let out = t.segment_softmax(l, vec![0, 0]).unwrap();
        assert_eq!(t.value(out).data(), &[0.5, 0.5]);

        let l = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let out = t.segment_softmax(l, vec![0, 0, 1]).unwrap();
        let (e1, e2) = (1f64.exp(), 2f64.exp());
        let expect = [e1 / (e1 + e2), e2 / (e1 + e2), 1.0];
        for (a, b) in t.value(out).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::column(vec![1.0, 2.0, 3.0]), true);
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let w = t.leaf(Tensor::column(vec![1.0, 2.0]), true);
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0, 4.0]);
        // a second call accumulates into the leaf
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::column(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn tensor_rejects_non_finite_and_bad_extent() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut s = 11;
        let x = random(5, 3, &mut s);
        let y = random(5, 3, &mut s);
        let b = random(1, 3, &mut s);
        let w = random(5, 1, &mut s);
        let g = random(1, 3, &mut s);
        let idx = vec![4, 0, 0, 2, 3, 1, 4];
        let seg = vec![0, 1, 0, 2, 2];
        type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>);
        let cases: Vec<Case> = vec![
            (
                "add",
                vec![x.clone(), y.clone()],
                Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            ),
            (
                "sub",
                vec![x.clone(), y.clone()],
                Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            ),
            (
                "mul",
                vec![x.clone(), y.clone()],
                Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            ),
            (
                "add_bias",
                vec![x.clone(), b.clone()],
                Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap()),
            ),
            ("scale", vec![x.clone()], Box::new(|t, v| t.scale(v[0], -1.7))),
            (
                "scale_rows",
                vec![x.clone()],
                Box::new(|t, v| t.scale_rows(v[0], vec![0.5, -1.0, 2.0, 0.0, 3.0]).unwrap()),
            ),
            (
                "mul_col",
                vec![x.clone(), w.clone()],
                Box::new(|t, v| t.mul_col(v[0], v[1]).unwrap()),
            ),
            ("ssp", vec![x.clone()], Box::new(|t, v| t.shifted_softplus(v[0]))),
            ("leaky", vec![x.clone()], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
            ("abs", vec![x.clone()], Box::new(|t, v| t.abs(v[0]))),
            ("gather", vec![x.clone()], {
                let idx = idx.clone();
                Box::new(move |t, v| t.gather_rows(v[0], idx.clone()).unwrap())
            }),
            ("scatter", vec![random(7, 3, &mut s)], {
                let idx = idx.clone();
                Box::new(move |t, v| t.scatter_add(v[0], idx.clone(), 6).unwrap())
            }),
            ("segment_softmax", vec![w.clone()], {
                let seg = seg.clone();
                Box::new(move |t, v| {
                    let sm = t.segment_softmax(v[0], seg.clone()).unwrap();
                    // weight the outputs so the sum is not trivially constant
                    let c = t.constant(Tensor::column(vec![1.0, -2.0, 3.0, 0.5, 4.0]));
                    t.mul(sm, c).unwrap()
                })
            }),
            ("gather_mul_scatter", vec![x.clone(), random(7, 3, &mut s)], {
                let idx = idx.clone();
                Box::new(move |t, v| {
                    let dst = vec![1, 1, 0, 3, 2, 5, 0];
                    t.gather_mul_scatter(v[0], v[1], idx.clone(), dst, 6).unwrap()
                })
            }),
            ("mean", vec![x.clone()], Box::new(|t, v| t.mean(v[0]))),
            (
                "concat_cols",
                vec![x.clone(), w.clone()],
                Box::new(|t, v| {
                    let c = t.concat_cols(v[0], v[1]).unwrap();
                    t.mul(c, c).unwrap()
                }),
            ),
            (
                "concat_rows",
                vec![x.clone(), b.clone()],
                Box::new(|t, v| {
                    let c = t.concat_rows(v[0], v[1]).unwrap();
                    t.mul(c, c).unwrap()
                }),
            ),
            (
                "slice_rows",
                vec![x.clone()],
                Box::new(|t, v| {
                    let c = t.slice_rows(v[0], 1, 4).unwrap();
                    t.mul(c, c).unwrap()
                }),
            ),
            (
                "layer_norm",
                vec![x.clone(), g.clone(), b.clone()],
                Box::new(|t, v| {
                    let n = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                    let c = t.constant(Tensor::matrix(5, 3, (0..15).map(|i| (i as f64).sin()).collect()).unwrap());
                    t.mul(n, c).unwrap()
                }),
            ),
        ];
        for (name, inputs, f) in cases {
            let err = fd_check(inputs, f);
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn gather_mul_scatter_equals_composition() {
        let mut s = 5;
        let x = random(4, 3, &mut s);
        let f = random(6, 3, &mut s);
        let (src, dst) = (vec![0, 3, 3, 1, 2, 0], vec![2, 0, 2, 4, 4, 1]);
        let mut t = Tape::new();
        let (xv, fv) = (t.leaf(x, true), t.leaf(f, true));
        let fused = t.gather_mul_scatter(xv, fv, src.clone(), dst.clone(), 5).unwrap();
        let g = t.gather_rows(xv, src.clone()).unwrap();
        let m = t.mul(g, fv).unwrap();
        let composed = t.scatter_add(m, dst.clone(), 5).unwrap();
        assert_eq!(t.value(fused), t.value(composed));
        assert!(t
            .gather_mul_scatter(xv, fv, src.clone(), vec![0, 0, 0, 0, 0, 5], 5)
            .is_err());
        assert!(t
            .gather_mul_scatter(xv, fv, src[..5].to_vec(), dst[..5].to_vec(), 5)
            .is_err());
    }

    #[test]
    fn shifted_softplus_matches_reference_form() {
        for i in -400..=400 {
            let x = i as f64 * 0.1;
            let reference = x.max(0.0) + (-x.abs()).exp().ln_1p() - LN2;
            assert!((shifted_softplus(x) - reference).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn shifted_softplus_at_zero_is_zero() {
        assert_eq!(shifted_softplus(0.0), 0.0);
        assert!((shifted_softplus(800.0) - (800.0 - LN2)).abs() < 1e-9);
        assert!(shifted_softplus(-800.0).is_finite());
    }
}
