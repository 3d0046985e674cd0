use super::tensor::{fl, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F: Real> {
    Leaf,
    Matmul { a: Var, b: Var },
    MatVec { mat: Var, vec: Var },
    Dot { a: Var, b: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Softmax { input: Var },
    CrossEntropy { logits: Var, target: usize },
    Tanh { input: Var },
    Sigmoid { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Select { input: Var, index: usize },
    Sum { input: Var },
    Scale { input: Var, factor: F },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Define-by-run record of primitive operations. Rebuilt per forward pass;
/// operations are appended in execution order, so inputs always precede
/// their consumers and [`Tape::backward`] walks the record in exact reverse.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

/// Gradients for one backward pass, indexed by the originating tape's vars.
pub struct GradientMap<F: Real> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> GradientMap<F> {
    /// Gradient of the loss w.r.t. `var`. Leaves the loss never touched get
    /// an explicit zero gradient of the right shape.
    pub fn get(&self, var: Var) -> Tensor<F> {
        match &self.grads[var.0] {
            Some(g) => Tensor::new(self.shapes[var.0].clone(), g.clone())
                .expect("gradient matches value shape"),
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }

    pub fn get_raw(&self, var: Var) -> Option<&[F]> {
        self.grads[var.0].as_deref()
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    /// Register an input value. Gradients flow to it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn scalar_value(&self, var: Var) -> F {
        debug_assert!(self.nodes[var.0].value.is_scalar());
        self.nodes[var.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ── Primitive operations ─────────────────────────────────────────

    /// C[m×n] = A[m×k] · B[k×n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2().map_err(|_| Error::Dimension {
            op: "matmul",
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        })?;
        let (kb, n) = self.value(b).dims2().map_err(|_| Error::Dimension {
            op: "matmul",
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        })?;
        if ka != kb {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, ka],
                rhs: vec![kb, n],
            });
        }
        let lhs = self.value(a).data();
        let rhs = self.value(b).data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for l in 0..ka {
                let aval = lhs[i * ka + l];
                let row = &rhs[l * n..(l + 1) * n];
                for (j, &bval) in row.iter().enumerate() {
                    out[i * n + j] = out[i * n + j] + aval * bval;
                }
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, needs))
    }

    /// y[m] = A[m×k] · x[k].
    pub fn matvec(&mut self, mat: Var, vec: Var) -> Result<Var> {
        let (m, k) = self.value(mat).dims2().map_err(|_| Error::Dimension {
            op: "matvec",
            lhs: self.value(mat).shape().to_vec(),
            rhs: self.value(vec).shape().to_vec(),
        })?;
        if self.value(vec).shape() != [k] {
            return Err(Error::Dimension {
                op: "matvec",
                lhs: vec![m, k],
                rhs: self.value(vec).shape().to_vec(),
            });
        }
        let a = self.value(mat).data();
        let x = self.value(vec).data();
        let mut out = vec![F::zero(); m];
        for i in 0..m {
            let row = &a[i * k..(i + 1) * k];
            let mut acc = F::zero();
            for (av, xv) in row.iter().zip(x.iter()) {
                acc = acc + *av * *xv;
            }
            out[i] = acc;
        }
        let needs = self.needs(&[mat, vec]);
        Ok(self.push(Tensor::vector(out)?, Op::MatVec { mat, vec }, needs))
    }

    /// Scalar inner product of two equally-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op: "dot",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut acc = F::zero();
        for (x, y) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc = acc + *x * *y;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(acc)?, Op::Dot { a, b }, needs))
    }

    /// Concatenate along `axis`; all parts must agree on every other axis.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Domain {
                op: "concat",
                msg: "no parts given".into(),
            });
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Index {
                op: "concat",
                index: axis,
                len: first.len(),
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![F::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            let a_len = s[axis];
            let data = self.value(p).data();
            for o in 0..outer {
                let src = &data[o * a_len * inner..(o + 1) * a_len * inner];
                let dst_start = (o * axis_total + offset) * inner;
                out[dst_start..dst_start + a_len * inner].copy_from_slice(src);
            }
            offset += a_len;
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Numerically-stable softmax of a vector (max subtraction before exp).
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input);
        if v.shape().len() != 1 {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        let x = v.data();
        if x.is_empty() {
            return Err(Error::Domain {
                op: "softmax",
                msg: "empty input".into(),
            });
        }
        let max = x.iter().fold(x[0], |m, &v| if v > m { v } else { m });
        let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
        let mut sum = F::zero();
        for &e in &exps {
            sum = sum + e;
        }
        let out: Vec<F> = exps.iter().map(|&e| e / sum).collect();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::vector(out)?, Op::Softmax { input }, needs))
    }

    /// −log softmax(logits)[target], via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.shape().len() != 1 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        let x = v.data();
        if target >= x.len() {
            return Err(Error::Index {
                op: "cross_entropy",
                index: target,
                len: x.len(),
            });
        }
        let max = x.iter().fold(x[0], |m, &v| if v > m { v } else { m });
        let mut sum = F::zero();
        for &v in x {
            sum = sum + (v - max).exp();
        }
        let lse = max + sum.ln();
        let loss = lse - x[target];
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss)?,
            Op::CrossEntropy { logits, target },
            needs,
        ))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let out: Vec<F> = self.value(input).data().iter().map(|&x| x.tanh()).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Tanh { input }, needs))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out: Vec<F> = self
            .value(input)
            .data()
            .iter()
            .map(|&x| F::one() / (F::one() + (-x).exp()))
            .collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sigmoid { input }, needs))
    }

    /// Elementwise sum. Shapes must match exactly, or one operand must be a
    /// scalar (the only broadcast supported).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    /// Elementwise product, same shape rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.is_scalar() {
            let s = vb.data()[0];
            let data = va.data().iter().map(|&x| f(x, s)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if va.is_scalar() {
            let s = va.data()[0];
            let data = vb.data().iter().map(|&y| f(s, y)).collect();
            Tensor::new(vb.shape().to_vec(), data)?
        } else {
            return Err(Error::Dimension {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, op, needs))
    }

    /// Extract one entry of a vector as a scalar.
    pub fn select(&mut self, input: Var, index: usize) -> Result<Var> {
        let v = self.value(input);
        if index >= v.numel() {
            return Err(Error::Index {
                op: "select",
                index,
                len: v.numel(),
            });
        }
        let x = v.data()[index];
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(x)?, Op::Select { input, index }, needs))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let mut acc = F::zero();
        for &x in self.value(input).data() {
            acc = acc + x;
        }
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(acc)?, Op::Sum { input }, needs))
    }

    /// Multiply by an untraced constant.
    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let factor: F = fl(factor);
        let out: Vec<F> = self
            .value(input)
            .data()
            .iter()
            .map(|&x| x * factor)
            .collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale { input, factor }, needs))
    }

    /// Mean of a list of scalars (used for loss aggregation).
    pub fn mean_of_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::Domain {
                op: "mean_of_scalars",
                msg: "no terms".into(),
            });
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        self.scale(acc, 1.0 / terms.len() as f64)
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Returns gradients for every var;
    /// leaves that do not participate in the loss get zeros from the map.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<F>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract {
                op: "backward",
                msg: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g_out = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backward_op(idx, &g_out, &mut grads);
        }

        Ok(GradientMap {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], var: Var, delta: &[F]) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta) {
                    *gi = *gi + d;
                }
            }
            None => grads[var.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, idx: usize, g_out: &[F], grads: &mut [Option<Vec<F>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let (_, n) = self.value(*b).dims2().unwrap();
                let adata = self.value(*a).data();
                let bdata = self.value(*b).data();
                // dA = dC · Bᵀ
                let mut da = vec![F::zero(); m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = F::zero();
                        for j in 0..n {
                            acc = acc + g_out[i * n + j] * bdata[l * n + j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                self.accumulate(grads, *a, &da);
                // dB = Aᵀ · dC
                let mut db = vec![F::zero(); k * n];
                for l in 0..k {
                    for i in 0..m {
                        let aval = adata[i * k + l];
                        for j in 0..n {
                            db[l * n + j] = db[l * n + j] + aval * g_out[i * n + j];
                        }
                    }
                }
                self.accumulate(grads, *b, &db);
            }

            Op::MatVec { mat, vec } => {
                let (m, k) = self.value(*mat).dims2().unwrap();
                let a = self.value(*mat).data();
                let x = self.value(*vec).data();
                // dA = g ⊗ x
                let mut da = vec![F::zero(); m * k];
                for i in 0..m {
                    let gi = g_out[i];
                    for j in 0..k {
                        da[i * k + j] = gi * x[j];
                    }
                }
                self.accumulate(grads, *mat, &da);
                // dx = Aᵀ · g
                let mut dx = vec![F::zero(); k];
                for i in 0..m {
                    let gi = g_out[i];
                    let row = &a[i * k..(i + 1) * k];
                    for (dj, &av) in dx.iter_mut().zip(row) {
                        *dj = *dj + av * gi;
                    }
                }
                self.accumulate(grads, *vec, &dx);
            }

            Op::Dot { a, b } => {
                let g = g_out[0];
                let da: Vec<F> = self.value(*b).data().iter().map(|&y| g * y).collect();
                self.accumulate(grads, *a, &da);
                let db: Vec<F> = self.value(*a).data().iter().map(|&x| g * x).collect();
                self.accumulate(grads, *b, &db);
            }

            Op::Concat { parts, axis } => {
                let shape = self.value(Var(idx)).shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let axis_total = shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let a_len = self.value(p).shape()[*axis];
                    let mut dp = vec![F::zero(); outer * a_len * inner];
                    for o in 0..outer {
                        let src_start = (o * axis_total + offset) * inner;
                        dp[o * a_len * inner..(o + 1) * a_len * inner]
                            .copy_from_slice(&g_out[src_start..src_start + a_len * inner]);
                    }
                    self.accumulate(grads, p, &dp);
                    offset += a_len;
                }
            }

            Op::Softmax { input } => {
                let s = self.value(Var(idx)).data();
                let mut dot = F::zero();
                for (&g, &si) in g_out.iter().zip(s) {
                    dot = dot + g * si;
                }
                let dx: Vec<F> = g_out
                    .iter()
                    .zip(s)
                    .map(|(&g, &si)| si * (g - dot))
                    .collect();
                self.accumulate(grads, *input, &dx);
            }

            Op::CrossEntropy { logits, target } => {
                let g = g_out[0];
                let x = self.value(*logits).data();
                let max = x.iter().fold(x[0], |m, &v| if v > m { v } else { m });
                let mut sum = F::zero();
                for &v in x {
                    sum = sum + (v - max).exp();
                }
                let mut dx: Vec<F> = x.iter().map(|&v| g * (v - max).exp() / sum).collect();
                dx[*target] = dx[*target] - g;
                self.accumulate(grads, *logits, &dx);
            }

            Op::Tanh { input } => {
                let y = self.value(Var(idx)).data();
                let dx: Vec<F> = g_out
                    .iter()
                    .zip(y)
                    .map(|(&g, &yi)| g * (F::one() - yi * yi))
                    .collect();
                self.accumulate(grads, *input, &dx);
            }

            Op::Sigmoid { input } => {
                let y = self.value(Var(idx)).data();
                let dx: Vec<F> = g_out
                    .iter()
                    .zip(y)
                    .map(|(&g, &yi)| g * yi * (F::one() - yi))
                    .collect();
                self.accumulate(grads, *input, &dx);
            }

            Op::Add { a, b } => {
                self.binary_backward(*a, *b, g_out, grads, |_x, _y, g| (g, g));
            }

            Op::Mul { a, b } => {
                self.binary_backward(*a, *b, g_out, grads, |x, y, g| (g * y, g * x));
            }

            Op::Select { input, index } => {
                let mut dx = vec![F::zero(); self.value(*input).numel()];
                dx[*index] = g_out[0];
                self.accumulate(grads, *input, &dx);
            }

            Op::Sum { input } => {
                let dx = vec![g_out[0]; self.value(*input).numel()];
                self.accumulate(grads, *input, &dx);
            }

            Op::Scale { input, factor } => {
                let dx: Vec<F> = g_out.iter().map(|&g| g * *factor).collect();
                self.accumulate(grads, *input, &dx);
            }
        }
    }

    /// Shared backward for elementwise binaries with scalar broadcast:
    /// scalar operands receive the sum of their pointwise contributions.
    fn binary_backward(
        &self,
        a: Var,
        b: Var,
        g_out: &[F],
        grads: &mut [Option<Vec<F>>],
        f: impl Fn(F, F, F) -> (F, F),
    ) {
        let va = self.value(a);
        let vb = self.value(b);
        let na = va.numel();
        let nb = vb.numel();
        let mut da = vec![F::zero(); na];
        let mut db = vec![F::zero(); nb];
        for (i, &g) in g_out.iter().enumerate() {
            let x = va.data()[if na == 1 { 0 } else { i }];
            let y = vb.data()[if nb == 1 { 0 } else { i }];
            let (dx, dy) = f(x, y, g);
            let ia = if na == 1 { 0 } else { i };
            let ib = if nb == 1 { 0 } else { i };
            da[ia] = da[ia] + dx;
            db[ib] = db[ib] + dy;
        }
        self.accumulate(grads, a, &da);
        self.accumulate(grads, b, &db);
    }
}
