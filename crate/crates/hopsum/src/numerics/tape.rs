//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! Every forward operation appends a node to the tape; `backward` walks the
//! nodes in reverse and accumulates chain-rule contributions into per-node
//! gradient buffers. The graph is rebuilt from scratch for every batch, which
//! keeps data-dependent control flow (variable-length decoding, per-example
//! sentence counts) trivial.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Dot(Var, Var),
    Outer(Var, Var),
    AddRowBroadcast(Var, Var),
    ScaleRows(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    ClampMin(Var, F),
    Sum(Var),
    Mean(Var),
    RowMax { m: Var, argmax: Vec<usize> },
    VecMax { v: Var, argmax: usize },
    MaskedSoftmax { x: Var, mask: Vec<bool>, axis: usize },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    ConcatRows(Vec<Var>),
    Row(Var, usize),
    SliceVec { v: Var, start: usize },
    GatherRows { m: Var, ids: Vec<usize> },
    GatherVec { v: Var, ids: Vec<usize> },
    Index(Var, usize),
    ScatterAdd { v: Var, ids: Vec<usize> },
    PadZeros(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Min2(Var, Var),
    MulMask(Var, Vec<F>),
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recording tape for one forward/backward pass.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Tensor that participates in differentiation.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf, true)
    }

    /// Tensor treated as a constant; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: F) -> Var {
        self.push(vec![], vec![x], Op::Leaf, false)
    }

    pub fn zeros_vec(&mut self, n: usize) -> Var {
        self.push(vec![n], vec![F::ZERO; n], Op::Leaf, false)
    }

    // ---- accessors ----

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: Var) -> F {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::BadShape {
                op,
                expected: "2-d tensor".into(),
                got: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn dim1(&self, v: Var, op: &'static str) -> Result<usize> {
        let s = self.shape(v);
        if s.len() != 1 {
            return Err(Error::BadShape {
                op,
                expected: "1-d tensor".into(),
                got: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::Scale(a, c), rg)
    }

    /// Elementwise minimum; ties route the gradient to the first argument.
    pub fn min2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "min2")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| if x <= y { x } else { y })
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Min2(a, b), rg))
    }

    /// Elementwise product with a constant mask (dropout, padding masks).
    pub fn mul_mask(&mut self, a: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.nodes[a.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "mul_mask",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::MulMask(a, mask), rg))
    }

    // ---- unary ----

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| F::ONE / (F::ONE + (-x).exp()))
            .collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.exp()).collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.ln()).collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::Ln(a), rg)
    }

    /// `max(x, floor)` elementwise; gradient passes where `x >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: F) -> Var {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x < floor { floor } else { x })
            .collect();
        let rg = self.needs_grad(&[a]);
        self.push(self.nodes[a.0].shape.clone(), data, Op::ClampMin(a, floor), rg)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = F::ZERO;
        for &x in &self.nodes[a.0].data {
            s += x;
        }
        let rg = self.needs_grad(&[a]);
        self.push(vec![], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len();
        let mut s = F::ZERO;
        for &x in &self.nodes[a.0].data {
            s += x;
        }
        let rg = self.needs_grad(&[a]);
        self.push(
            vec![],
            vec![s / F::from_f64(n as f64)],
            Op::Mean(a),
            rg,
        )
    }

    /// Per-row maximum of a 2-d tensor; gradient flows to the argmax entry.
    pub fn row_max(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "row_max")?;
        if c == 0 {
            return Err(Error::BadShape {
                op: "row_max",
                expected: "at least one column".into(),
                got: vec![r, c],
            });
        }
        let mut out = Vec::with_capacity(r);
        let mut argmax = Vec::with_capacity(r);
        for i in 0..r {
            let row = &self.nodes[m.0].data[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(best);
        }
        let rg = self.needs_grad(&[m]);
        Ok(self.push(vec![r], out, Op::RowMax { m, argmax }, rg))
    }

    /// Maximum entry of a vector; gradient flows to the argmax entry.
    pub fn vec_max(&mut self, v: Var) -> Result<Var> {
        let n = self.dim1(v, "vec_max")?;
        if n == 0 {
            return Err(Error::BadShape {
                op: "vec_max",
                expected: "non-empty vector".into(),
                got: vec![0],
            });
        }
        let data = &self.nodes[v.0].data;
        let mut best = 0;
        for j in 1..n {
            if data[j] > data[best] {
                best = j;
            }
        }
        let rg = self.needs_grad(&[v]);
        let val = data[best];
        Ok(self.push(vec![], vec![val], Op::VecMax { v, argmax: best }, rg))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(vec![m, n], data, Op::MatMul(a, b), rg))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "matvec")?;
        let n = self.dim1(v, "matvec")?;
        if c != n {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: vec![r, c],
                rhs: vec![n],
            });
        }
        let md = &self.nodes[m.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = vec![F::ZERO; r];
        for i in 0..r {
            let mut s = F::ZERO;
            let row = &md[i * c..(i + 1) * c];
            for j in 0..c {
                s += row[j] * vd[j];
            }
            out[i] = s;
        }
        let rg = self.needs_grad(&[m, v]);
        Ok(self.push(vec![r], out, Op::MatVec(m, v), rg))
    }

    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let n = self.dim1(v, "vecmat")?;
        let (r, c) = self.dims2(m, "vecmat")?;
        if n != r {
            return Err(Error::ShapeMismatch {
                op: "vecmat",
                lhs: vec![n],
                rhs: vec![r, c],
            });
        }
        let md = &self.nodes[m.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = vec![F::ZERO; c];
        for i in 0..r {
            let vi = vd[i];
            let row = &md[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] += vi * row[j];
            }
        }
        let rg = self.needs_grad(&[v, m]);
        Ok(self.push(vec![c], out, Op::VecMat(v, m), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.dim1(a, "dot")?;
        let n2 = self.dim1(b, "dot")?;
        if n != n2 {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: vec![n],
                rhs: vec![n2],
            });
        }
        let mut s = F::ZERO;
        for (&x, &y) in self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data) {
            s += x * y;
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(vec![], vec![s], Op::Dot(a, b), rg))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let r = self.dim1(u, "outer")?;
        let c = self.dim1(v, "outer")?;
        let ud = &self.nodes[u.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(ud[i] * vd[j]);
            }
        }
        let rg = self.needs_grad(&[u, v]);
        Ok(self.push(vec![r, c], out, Op::Outer(u, v), rg))
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "add_row_broadcast")?;
        let n = self.dim1(v, "add_row_broadcast")?;
        if c != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: vec![r, c],
                rhs: vec![n],
            });
        }
        let md = &self.nodes[m.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(md[i * c + j] + vd[j]);
            }
        }
        let rg = self.needs_grad(&[m, v]);
        Ok(self.push(vec![r, c], out, Op::AddRowBroadcast(m, v), rg))
    }

    /// Scale row `i` of a matrix by `v[i]`.
    pub fn scale_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "scale_rows")?;
        let n = self.dim1(v, "scale_rows")?;
        if r != n {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: vec![r, c],
                rhs: vec![n],
            });
        }
        let md = &self.nodes[m.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(md[i * c + j] * vd[i]);
            }
        }
        let rg = self.needs_grad(&[m, v]);
        Ok(self.push(vec![r, c], out, Op::ScaleRows(m, v), rg))
    }

    pub fn transpose(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "transpose")?;
        let md = &self.nodes[m.0].data;
        let mut out = vec![F::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = md[i * c + j];
            }
        }
        let rg = self.needs_grad(&[m]);
        Ok(self.push(vec![c, r], out, Op::Transpose(m), rg))
    }

    // ---- softmax ----

    /// Numerically stable softmax over the unmasked entries of each group.
    ///
    /// For 1-d input the whole vector is one group (`axis` must be 0); for 2-d
    /// input `axis = 1` normalizes within rows and `axis = 0` within columns.
    /// Masked positions are exactly zero in the output. A group with no
    /// unmasked entry is an error, never a silent NaN.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool], axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if mask.len() != self.nodes[x.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        let (groups, group_len, stride_in_group, group_base): (usize, usize, usize, Box<dyn Fn(usize) -> usize>) =
            match (shape.len(), axis) {
                (1, 0) => (1, shape[0], 1, Box::new(|_| 0)),
                (2, 1) => {
                    let c = shape[1];
                    (shape[0], c, 1, Box::new(move |g| g * c))
                }
                (2, 0) => {
                    let c = shape[1];
                    (shape[1], shape[0], c, Box::new(move |g| g))
                }
                _ => {
                    return Err(Error::BadShape {
                        op: "masked_softmax",
                        expected: format!("1-d (axis 0) or 2-d (axis {axis} invalid)"),
                        got: shape,
                    })
                }
            };

        let xd = &self.nodes[x.0].data;
        let mut out = vec![F::ZERO; xd.len()];
        for g in 0..groups {
            let base = group_base(g);
            let idx = |k: usize| base + k * stride_in_group;
            let mut max: Option<F> = None;
            for k in 0..group_len {
                if mask[idx(k)] {
                    let v = xd[idx(k)];
                    max = Some(match max {
                        Some(m) => m.max(v),
                        None => v,
                    });
                }
            }
            let max = max.ok_or(Error::DegenerateSoftmaxGroup { group: g })?;
            let mut denom = F::ZERO;
            for k in 0..group_len {
                if mask[idx(k)] {
                    let e = (xd[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    denom += e;
                }
            }
            for k in 0..group_len {
                if mask[idx(k)] {
                    out[idx(k)] = out[idx(k)] / denom;
                }
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            out,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Softmax over a full vector (no masking).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.dim1(x, "softmax")?;
        let mask = vec![true; n];
        self.masked_softmax(x, &mask, 0)
    }

    // ---- structural ----

    /// Concatenate scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() > 1 {
                return Err(Error::BadShape {
                    op: "concat",
                    expected: "scalars or 1-d tensors".into(),
                    got: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.needs_grad(parts);
        let n = data.len();
        Ok(self.push(vec![n], data, Op::Concat(parts.to_vec()), rg))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::BadShape {
                op: "stack_rows",
                expected: "at least one row".into(),
                got: vec![0],
            });
        }
        let c = self.dim1(rows[0], "stack_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let rc = self.dim1(r, "stack_rows")?;
            if rc != c {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![c],
                    rhs: vec![rc],
                });
            }
            data.extend_from_slice(&self.nodes[r.0].data);
        }
        let rg = self.needs_grad(rows);
        Ok(self.push(vec![rows.len(), c], data, Op::StackRows(rows.to_vec()), rg))
    }

    /// Vertically concatenate matrices sharing a column count.
    pub fn concat_rows(&mut self, mats: &[Var]) -> Result<Var> {
        if mats.is_empty() {
            return Err(Error::BadShape {
                op: "concat_rows",
                expected: "at least one matrix".into(),
                got: vec![0],
            });
        }
        let (_, c) = self.dims2(mats[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &m in mats {
            let (r, mc) = self.dims2(m, "concat_rows")?;
            if mc != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: vec![r, mc],
                });
            }
            rows += r;
            data.extend_from_slice(&self.nodes[m.0].data);
        }
        let rg = self.needs_grad(mats);
        Ok(self.push(vec![rows, c], data, Op::ConcatRows(mats.to_vec()), rg))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let (r, c) = self.dims2(m, "row")?;
        if i >= r {
            return Err(Error::BadShape {
                op: "row",
                expected: format!("row index < {r}"),
                got: vec![i],
            });
        }
        let data = self.nodes[m.0].data[i * c..(i + 1) * c].to_vec();
        let rg = self.needs_grad(&[m]);
        Ok(self.push(vec![c], data, Op::Row(m, i), rg))
    }

    pub fn slice_vec(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.dim1(v, "slice_vec")?;
        if start + len > n {
            return Err(Error::BadShape {
                op: "slice_vec",
                expected: format!("slice within length {n}"),
                got: vec![start, len],
            });
        }
        let data = self.nodes[v.0].data[start..start + len].to_vec();
        let rg = self.needs_grad(&[v]);
        Ok(self.push(vec![len], data, Op::SliceVec { v, start }, rg))
    }

    /// Select rows of a matrix by index; duplicate indices accumulate
    /// gradient, which is what embedding lookups need.
    pub fn gather_rows(&mut self, m: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(m, "gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::BadShape {
                    op: "gather_rows",
                    expected: format!("row index < {r}"),
                    got: vec![id],
                });
            }
            data.extend_from_slice(&self.nodes[m.0].data[id * c..(id + 1) * c]);
        }
        let rg = self.needs_grad(&[m]);
        Ok(self.push(
            vec![ids.len(), c],
            data,
            Op::GatherRows {
                m,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn gather_vec(&mut self, v: Var, ids: &[usize]) -> Result<Var> {
        let n = self.dim1(v, "gather_vec")?;
        let mut data = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= n {
                return Err(Error::BadShape {
                    op: "gather_vec",
                    expected: format!("index < {n}"),
                    got: vec![id],
                });
            }
            data.push(self.nodes[v.0].data[id]);
        }
        let rg = self.needs_grad(&[v]);
        Ok(self.push(
            vec![ids.len()],
            data,
            Op::GatherVec {
                v,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn index(&mut self, v: Var, i: usize) -> Result<Var> {
        let n = self.dim1(v, "index")?;
        if i >= n {
            return Err(Error::BadShape {
                op: "index",
                expected: format!("index < {n}"),
                got: vec![i],
            });
        }
        let x = self.nodes[v.0].data[i];
        let rg = self.needs_grad(&[v]);
        Ok(self.push(vec![], vec![x], Op::Index(v, i), rg))
    }

    /// Scatter `v[k]` into slot `ids[k]` of a fresh zero vector of length
    /// `len`, adding contributions when indices repeat.
    pub fn scatter_add(&mut self, v: Var, ids: &[usize], len: usize) -> Result<Var> {
        let n = self.dim1(v, "scatter_add")?;
        if ids.len() != n {
            return Err(Error::ShapeMismatch {
                op: "scatter_add",
                lhs: vec![n],
                rhs: vec![ids.len()],
            });
        }
        let mut out = vec![F::ZERO; len];
        for (k, &id) in ids.iter().enumerate() {
            if id >= len {
                return Err(Error::BadShape {
                    op: "scatter_add",
                    expected: format!("target index < {len}"),
                    got: vec![id],
                });
            }
            out[id] += self.nodes[v.0].data[k];
        }
        let rg = self.needs_grad(&[v]);
        Ok(self.push(
            vec![len],
            out,
            Op::ScatterAdd {
                v,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn pad_zeros(&mut self, v: Var, new_len: usize) -> Result<Var> {
        let n = self.dim1(v, "pad_zeros")?;
        if new_len < n {
            return Err(Error::BadShape {
                op: "pad_zeros",
                expected: format!("new length >= {n}"),
                got: vec![new_len],
            });
        }
        let mut data = self.nodes[v.0].data.clone();
        data.resize(new_len, F::ZERO);
        let rg = self.needs_grad(&[v]);
        Ok(self.push(vec![new_len], data, Op::PadZeros(v), rg))
    }

    /// Multiply a tensor by a scalar node (gradient flows to both).
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.shape(s).is_empty() {
            return Err(Error::BadShape {
                op: "mul_scalar",
                expected: "scalar multiplier".into(),
                got: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data = self.nodes[x.0].data.iter().map(|&v| v * sv).collect();
        let rg = self.needs_grad(&[x, s]);
        Ok(self.push(self.nodes[x.0].shape.clone(), data, Op::MulScalar(x, s), rg))
    }

    /// Divide a tensor by a scalar node.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.shape(s).is_empty() {
            return Err(Error::BadShape {
                op: "div_scalar",
                expected: "scalar divisor".into(),
                got: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data = self.nodes[x.0].data.iter().map(|&v| v / sv).collect();
        let rg = self.needs_grad(&[x, s]);
        Ok(self.push(self.nodes[x.0].shape.clone(), data, Op::DivScalar(x, s), rg))
    }

    // ---- backward ----

    fn accumulate(grads: &mut [Option<Vec<F>>], target: usize, len: usize, f: impl FnOnce(&mut [F])) {
        let slot = grads[target].get_or_insert_with(|| vec![F::ZERO; len]);
        f(slot);
    }

    /// Reverse pass seeding `d(loss)/d(loss) = 1`; `loss` must be a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.shape(loss).is_empty() {
            return Err(Error::BadShape {
                op: "backward",
                expected: "scalar loss".into(),
                got: self.shape(loss).to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; n];
        grads[loss.0] = Some(vec![F::ONE]);

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let len_of = |v: Var| self.nodes[v.0].data.len();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                if wants(*a) {
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for (x, &y) in ga.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
                if wants(*b) {
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for (x, &y) in gb.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
            }

            Op::Sub(a, b) => {
                if wants(*a) {
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for (x, &y) in ga.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
                if wants(*b) {
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for (x, &y) in gb.iter_mut().zip(g) {
                            *x += -y;
                        }
                    });
                }
            }

            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = &self.nodes[b.0].data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * bd[k];
                        }
                    });
                }
                if wants(*b) {
                    let ad = &self.nodes[a.0].data;
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for k in 0..gb.len() {
                            gb[k] += g[k] * ad[k];
                        }
                    });
                }
            }

            Op::Scale(a, c) => {
                if wants(*a) {
                    let c = *c;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for (x, &y) in ga.iter_mut().zip(g) {
                            *x += y * c;
                        }
                    });
                }
            }

            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let nn = self.nodes[b.0].shape[1];
                if wants(*a) {
                    // dA = dC @ B^T
                    let bd = &self.nodes[b.0].data;
                    let mut bt = vec![F::ZERO; k * nn];
                    for p in 0..k {
                        for q in 0..nn {
                            bt[q * k + p] = bd[p * nn + q];
                        }
                    }
                    let da = matmul_raw(g, &bt, m, nn, k);
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for (x, y) in ga.iter_mut().zip(da) {
                            *x += y;
                        }
                    });
                }
                if wants(*b) {
                    // dB = A^T @ dC
                    let ad = &self.nodes[a.0].data;
                    let mut at = vec![F::ZERO; k * m];
                    for p in 0..m {
                        for q in 0..k {
                            at[q * m + p] = ad[p * k + q];
                        }
                    }
                    let db = matmul_raw(&at, g, k, m, nn);
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for (x, y) in gb.iter_mut().zip(db) {
                            *x += y;
                        }
                    });
                }
            }

            Op::MatVec(m, v) => {
                let (r, c) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                if wants(*m) {
                    let vd = &self.nodes[v.0].data;
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gm[i2 * c + j] += g[i2] * vd[j];
                            }
                        }
                    });
                }
                if wants(*v) {
                    let md = &self.nodes[m.0].data;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gv[j] += g[i2] * md[i2 * c + j];
                            }
                        }
                    });
                }
            }

            Op::VecMat(v, m) => {
                let (r, c) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                if wants(*v) {
                    let md = &self.nodes[m.0].data;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for i2 in 0..r {
                            let mut s = F::ZERO;
                            for j in 0..c {
                                s += g[j] * md[i2 * c + j];
                            }
                            gv[i2] += s;
                        }
                    });
                }
                if wants(*m) {
                    let vd = &self.nodes[v.0].data;
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gm[i2 * c + j] += vd[i2] * g[j];
                            }
                        }
                    });
                }
            }

            Op::Dot(a, b) => {
                if wants(*a) {
                    let bd = &self.nodes[b.0].data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[0] * bd[k];
                        }
                    });
                }
                if wants(*b) {
                    let ad = &self.nodes[a.0].data;
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for k in 0..gb.len() {
                            gb[k] += g[0] * ad[k];
                        }
                    });
                }
            }

            Op::Outer(u, v) => {
                let r = self.nodes[u.0].shape[0];
                let c = self.nodes[v.0].shape[0];
                if wants(*u) {
                    let vd = &self.nodes[v.0].data;
                    Self::accumulate(grads, u.0, len_of(*u), |gu| {
                        for i2 in 0..r {
                            let mut s = F::ZERO;
                            for j in 0..c {
                                s += g[i2 * c + j] * vd[j];
                            }
                            gu[i2] += s;
                        }
                    });
                }
                if wants(*v) {
                    let ud = &self.nodes[u.0].data;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gv[j] += g[i2 * c + j] * ud[i2];
                            }
                        }
                    });
                }
            }

            Op::AddRowBroadcast(m, v) => {
                let (r, c) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                if wants(*m) {
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for (x, &y) in gm.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
                if wants(*v) {
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gv[j] += g[i2 * c + j];
                            }
                        }
                    });
                }
            }

            Op::ScaleRows(m, v) => {
                let (r, c) = (self.nodes[m.0].shape[0], self.nodes[m.0].shape[1]);
                if wants(*m) {
                    let vd = &self.nodes[v.0].data;
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for i2 in 0..r {
                            for j in 0..c {
                                gm[i2 * c + j] += g[i2 * c + j] * vd[i2];
                            }
                        }
                    });
                }
                if wants(*v) {
                    let md = &self.nodes[m.0].data;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for i2 in 0..r {
                            let mut s = F::ZERO;
                            for j in 0..c {
                                s += g[i2 * c + j] * md[i2 * c + j];
                            }
                            gv[i2] += s;
                        }
                    });
                }
            }

            Op::Transpose(m) => {
                if wants(*m) {
                    let (c, r) = (node.shape[0], node.shape[1]);
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for i2 in 0..c {
                            for j in 0..r {
                                gm[j * c + i2] += g[i2 * r + j];
                            }
                        }
                    });
                }
            }

            Op::Tanh(a) => {
                if wants(*a) {
                    let yd = &node.data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * (F::ONE - yd[k] * yd[k]);
                        }
                    });
                }
            }

            Op::Sigmoid(a) => {
                if wants(*a) {
                    let yd = &node.data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * yd[k] * (F::ONE - yd[k]);
                        }
                    });
                }
            }

            Op::Exp(a) => {
                if wants(*a) {
                    let yd = &node.data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * yd[k];
                        }
                    });
                }
            }

            Op::Ln(a) => {
                if wants(*a) {
                    let xd = &self.nodes[a.0].data;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] / xd[k];
                        }
                    });
                }
            }

            Op::ClampMin(a, floor) => {
                if wants(*a) {
                    let xd = &self.nodes[a.0].data;
                    let floor = *floor;
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            if xd[k] >= floor {
                                ga[k] += g[k];
                            }
                        }
                    });
                }
            }

            Op::Sum(a) => {
                if wants(*a) {
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for x in ga.iter_mut() {
                            *x += g[0];
                        }
                    });
                }
            }

            Op::Mean(a) => {
                if wants(*a) {
                    let inv = F::ONE / F::from_f64(len_of(*a) as f64);
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for x in ga.iter_mut() {
                            *x += g[0] * inv;
                        }
                    });
                }
            }

            Op::RowMax { m, argmax } => {
                if wants(*m) {
                    let c = self.nodes[m.0].shape[1];
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for (i2, &j) in argmax.iter().enumerate() {
                            gm[i2 * c + j] += g[i2];
                        }
                    });
                }
            }

            Op::VecMax { v, argmax } => {
                if wants(*v) {
                    let argmax = *argmax;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        gv[argmax] += g[0];
                    });
                }
            }

            Op::MaskedSoftmax { x, mask, axis } => {
                if wants(*x) {
                    let shape = &self.nodes[x.0].shape;
                    let yd = &node.data;
                    let (groups, group_len, stride, base_of): (usize, usize, usize, Box<dyn Fn(usize) -> usize>) =
                        match (shape.len(), *axis) {
                            (1, 0) => (1, shape[0], 1, Box::new(|_| 0)),
                            (2, 1) => {
                                let c = shape[1];
                                (shape[0], c, 1, Box::new(move |g2| g2 * c))
                            }
                            (2, 0) => {
                                let c = shape[1];
                                (shape[1], shape[0], c, Box::new(move |g2| g2))
                            }
                            _ => unreachable!("validated in forward"),
                        };
                    Self::accumulate(grads, x.0, len_of(*x), |gx| {
                        for g2 in 0..groups {
                            let base = base_of(g2);
                            let idx = |k: usize| base + k * stride;
                            let mut dotp = F::ZERO;
                            for k in 0..group_len {
                                if mask[idx(k)] {
                                    dotp += g[idx(k)] * yd[idx(k)];
                                }
                            }
                            for k in 0..group_len {
                                if mask[idx(k)] {
                                    gx[idx(k)] += yd[idx(k)] * (g[idx(k)] - dotp);
                                }
                            }
                        }
                    });
                }
            }

            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pl = len_of(p);
                    if wants(p) {
                        let seg = &g[off..off + pl];
                        Self::accumulate(grads, p.0, pl, |gp| {
                            for (x, &y) in gp.iter_mut().zip(seg) {
                                *x += y;
                            }
                        });
                    }
                    off += pl;
                }
            }

            Op::StackRows(rows) => {
                let c = node.shape[1];
                for (i2, &r) in rows.iter().enumerate() {
                    if wants(r) {
                        let seg = &g[i2 * c..(i2 + 1) * c];
                        Self::accumulate(grads, r.0, c, |gr| {
                            for (x, &y) in gr.iter_mut().zip(seg) {
                                *x += y;
                            }
                        });
                    }
                }
            }

            Op::ConcatRows(mats) => {
                let mut off = 0;
                for &m in mats {
                    let ml = len_of(m);
                    if wants(m) {
                        let seg = &g[off..off + ml];
                        Self::accumulate(grads, m.0, ml, |gm| {
                            for (x, &y) in gm.iter_mut().zip(seg) {
                                *x += y;
                            }
                        });
                    }
                    off += ml;
                }
            }

            Op::Row(m, i2) => {
                if wants(*m) {
                    let c = self.nodes[m.0].shape[1];
                    let i2 = *i2;
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for j in 0..c {
                            gm[i2 * c + j] += g[j];
                        }
                    });
                }
            }

            Op::SliceVec { v, start } => {
                if wants(*v) {
                    let start = *start;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for (k, &y) in g.iter().enumerate() {
                            gv[start + k] += y;
                        }
                    });
                }
            }

            Op::GatherRows { m, ids } => {
                if wants(*m) {
                    let c = self.nodes[m.0].shape[1];
                    Self::accumulate(grads, m.0, len_of(*m), |gm| {
                        for (k, &id) in ids.iter().enumerate() {
                            for j in 0..c {
                                gm[id * c + j] += g[k * c + j];
                            }
                        }
                    });
                }
            }

            Op::GatherVec { v, ids } => {
                if wants(*v) {
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for (k, &id) in ids.iter().enumerate() {
                            gv[id] += g[k];
                        }
                    });
                }
            }

            Op::Index(v, i2) => {
                if wants(*v) {
                    let i2 = *i2;
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        gv[i2] += g[0];
                    });
                }
            }

            Op::ScatterAdd { v, ids } => {
                if wants(*v) {
                    Self::accumulate(grads, v.0, len_of(*v), |gv| {
                        for (k, &id) in ids.iter().enumerate() {
                            gv[k] += g[id];
                        }
                    });
                }
            }

            Op::PadZeros(v) => {
                if wants(*v) {
                    let n2 = len_of(*v);
                    Self::accumulate(grads, v.0, n2, |gv| {
                        for (x, &y) in gv.iter_mut().zip(&g[..n2]) {
                            *x += y;
                        }
                    });
                }
            }

            Op::MulScalar(x, s) => {
                let sv = self.nodes[s.0].data[0];
                if wants(*x) {
                    Self::accumulate(grads, x.0, len_of(*x), |gx| {
                        for (a, &y) in gx.iter_mut().zip(g) {
                            *a += y * sv;
                        }
                    });
                }
                if wants(*s) {
                    let xd = &self.nodes[x.0].data;
                    let mut s2 = F::ZERO;
                    for k in 0..xd.len() {
                        s2 += g[k] * xd[k];
                    }
                    Self::accumulate(grads, s.0, 1, |gs| {
                        gs[0] += s2;
                    });
                }
            }

            Op::DivScalar(x, s) => {
                let sv = self.nodes[s.0].data[0];
                if wants(*x) {
                    Self::accumulate(grads, x.0, len_of(*x), |gx| {
                        for (a, &y) in gx.iter_mut().zip(g) {
                            *a += y / sv;
                        }
                    });
                }
                if wants(*s) {
                    let xd = &self.nodes[x.0].data;
                    let mut s2 = F::ZERO;
                    for k in 0..xd.len() {
                        s2 += g[k] * xd[k];
                    }
                    Self::accumulate(grads, s.0, 1, |gs| {
                        gs[0] += -s2 / (sv * sv);
                    });
                }
            }

            Op::Min2(a, b) => {
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                if wants(*a) {
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            if ad[k] <= bd[k] {
                                ga[k] += g[k];
                            }
                        }
                    });
                }
                if wants(*b) {
                    Self::accumulate(grads, b.0, len_of(*b), |gb| {
                        for k in 0..gb.len() {
                            if bd[k] < ad[k] {
                                gb[k] += g[k];
                            }
                        }
                    });
                }
            }

            Op::MulMask(a, mask) => {
                if wants(*a) {
                    Self::accumulate(grads, a.0, len_of(*a), |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * mask[k];
                        }
                    });
                }
            }
        }
    }
}

fn matmul_raw<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::ZERO; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}
