//! Tape-based automatic differentiation over dense batches.
//!
//! Values are recorded eagerly on an append-only tape. Directional
//! derivatives (tangents) are recorded as ordinary tape values by the
//! `dual_*` helpers, so a single reverse sweep produces parameter
//! gradients for losses that read the tangent channel.
//!
//! The primitive set is fixed. Extending it means adding a primal rule,
//! a reverse rule, and a finite-difference test.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a recorded value on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// A primal/tangent pair. Both live on the same tape and have equal shapes.
#[derive(Debug, Clone, Copy)]
pub struct DualValue {
    pub primal: ValueId,
    pub tangent: ValueId,
}

/// Vector field hook for tape nodes: batched evaluation plus the Jacobian
/// used by the reverse rule.
pub trait TapeField: std::fmt::Debug {
    fn dim(&self) -> usize;
    /// Evaluates the field on each row of a `[S, n]` batch.
    fn eval_batch(&self, x: &Tensor) -> Tensor;
    /// Jacobian `[n, n]` at a single point.
    fn jacobian_at(&self, x: &[f64]) -> Tensor;
}

pub type FieldRef = Arc<dyn TapeField + Send + Sync>;

enum Op {
    Leaf { requires_grad: bool },
    /// `a · wᵀ` for `a: [S, k]`, `w: [m, k]`.
    MatMulBt { a: ValueId, w: ValueId },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    DivElem(ValueId, ValueId),
    Scale(ValueId, f64),
    /// Broadcast row vector `b: [n]` over `a: [S, n]`.
    AddRow { a: ValueId, b: ValueId },
    Tanh(ValueId),
    Relu(ValueId),
    /// `t` where the matching entry of `gate` is > 0, else 0.
    /// Reverse rule treats the gate as locally constant.
    GateBySign { gate: ValueId, t: ValueId },
    RowNorms(ValueId),
    RowDots(ValueId, ValueId),
    /// Divide each row of `a: [S, n]` by the matching entry of `s: [S]`.
    DivRows { a: ValueId, s: ValueId },
    SelectRows { a: ValueId, idx: Vec<usize> },
    Sum(ValueId),
    Field { field: usize, x: ValueId },
    /// `J_f(x) · t` per row. Gradients flow into `t` only; the evaluation
    /// point is treated as constant (all in-scope losses seed field
    /// derivatives at constant points).
    FieldJvp { field: usize, x: ValueId, t: ValueId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of a computation. Single-writer; independent tapes
/// per worker, gradient maps mergeable by summation.
pub struct Tape {
    nodes: Vec<Node>,
    fields: Vec<FieldRef>,
}

/// Per-node adjoints from a reverse sweep.
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the swept root with respect to the given value, if any
    /// path reached it. Leaves registered without gradients return `None`.
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.adjoints[id.0].as_ref()
    }

    /// Gradient for a parameter leaf, zero-filled if unreached.
    pub fn take_or_zeros(&mut self, id: ValueId, shape: &[usize]) -> Tensor {
        self.adjoints[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), fields: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: ValueId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        let needs_grad = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            Op::MatMulBt { a, w } => self.ng(*a) || self.ng(*w),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::DivElem(a, b) | Op::RowDots(a, b) => {
                self.ng(*a) || self.ng(*b)
            }
            Op::AddRow { a, b } => self.ng(*a) || self.ng(*b),
            Op::Scale(a, _) | Op::Tanh(a) | Op::Relu(a) | Op::RowNorms(a) | Op::Sum(a) => self.ng(*a),
            Op::GateBySign { gate: _, t } => self.ng(*t),
            Op::DivRows { a, s } => self.ng(*a) || self.ng(*s),
            Op::SelectRows { a, .. } => self.ng(*a),
            Op::Field { x, .. } => self.ng(*x),
            Op::FieldJvp { t, .. } => self.ng(*t),
        };
        self.nodes.push(Node { op, value, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn ng(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers a constant. No gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    /// Registers a parameter leaf; the reverse sweep reports its gradient.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    pub fn register_field(&mut self, field: FieldRef) -> usize {
        self.fields.push(field);
        self.fields.len() - 1
    }

    pub fn matmul_bt(&mut self, a: ValueId, w: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul_bt(self.value(w))?;
        Ok(self.push(Op::MatMulBt { a, w }, value))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn div_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).div(self.value(b))?;
        Ok(self.push(Op::DivElem(a, b), value))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let value = self.value(a).scale(k);
        self.push(Op::Scale(a, k), value)
    }

    pub fn add_row(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add_row(self.value(b))?;
        Ok(self.push(Op::AddRow { a, b }, value))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn gate_by_sign(&mut self, gate: ValueId, t: ValueId) -> Result<ValueId> {
        if !self.value(gate).same_shape(self.value(t)) {
            return Err(Error::ShapeMismatch {
                context: "gate_by_sign",
                expected: format!("{:?}", self.value(gate).shape()),
                got: format!("{:?}", self.value(t).shape()),
            });
        }
        let value = {
            let g = self.value(gate);
            let tv = self.value(t);
            let data = g
                .data()
                .iter()
                .zip(tv.data())
                .map(|(&gv, &tvv)| if gv > 0.0 { tvv } else { 0.0 })
                .collect();
            Tensor::new(tv.shape().to_vec(), data)
        };
        Ok(self.push(Op::GateBySign { gate, t }, value))
    }

    pub fn row_norms(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).row_norms();
        self.push(Op::RowNorms(a), value)
    }

    pub fn row_dots(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).row_dots(self.value(b))?;
        Ok(self.push(Op::RowDots(a, b), value))
    }

    pub fn div_rows(&mut self, a: ValueId, s: ValueId) -> Result<ValueId> {
        let value = self.value(a).div_rows(self.value(s))?;
        Ok(self.push(Op::DivRows { a, s }, value))
    }

    pub fn select_rows(&mut self, a: ValueId, idx: Vec<usize>) -> ValueId {
        let value = self.value(a).select_rows(&idx);
        self.push(Op::SelectRows { a, idx }, value)
    }

    /// Ordered full reduction to a `[1]` scalar.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let value = Tensor::scalar(self.value(a).sum_ordered());
        self.push(Op::Sum(a), value)
    }

    /// Field evaluation per row; reverse rule applies `J_fᵀ` row-wise.
    pub fn field(&mut self, field: usize, x: ValueId) -> ValueId {
        let value = self.fields[field].eval_batch(self.value(x));
        self.push(Op::Field { field, x }, value)
    }

    pub fn field_jvp(&mut self, field: usize, x: ValueId, t: ValueId) -> Result<ValueId> {
        if !self.value(x).same_shape(self.value(t)) {
            return Err(Error::ShapeMismatch {
                context: "field_jvp",
                expected: format!("{:?}", self.value(x).shape()),
                got: format!("{:?}", self.value(t).shape()),
            });
        }
        let value = {
            let xv = self.value(x);
            let tv = self.value(t);
            let mut out = Tensor::zeros(xv.shape().to_vec());
            for i in 0..xv.rows() {
                let jac = self.fields[field].jacobian_at(xv.row(i));
                let jt = jac.matvec(tv.row(i)).expect("field jacobian shape");
                out.row_mut(i).copy_from_slice(&jt);
            }
            out
        };
        Ok(self.push(Op::FieldJvp { field, x, t }, value))
    }

    // ── dual composites ──────────────────────────────────────────────

    pub fn dual_constant(&mut self, primal: Tensor, tangent: Tensor) -> DualValue {
        let primal = self.constant(primal);
        let tangent = self.constant(tangent);
        DualValue { primal, tangent }
    }

    /// Affine layer `x · Wᵀ + b` with tangent `t · Wᵀ`. Both channels use
    /// the same parameter leaves, so one reverse sweep accumulates the
    /// gradient contributions of both.
    pub fn dual_linear(&mut self, w: ValueId, b: ValueId, x: DualValue) -> Result<DualValue> {
        let p = self.matmul_bt(x.primal, w)?;
        let p = self.add_row(p, b)?;
        let t = self.matmul_bt(x.tangent, w)?;
        Ok(DualValue { primal: p, tangent: t })
    }

    /// ReLU with the tangent gated by the primal input sign. At exactly
    /// zero the subgradient 0 is used.
    pub fn dual_relu(&mut self, x: DualValue) -> Result<DualValue> {
        let p = self.relu(x.primal);
        let t = self.gate_by_sign(x.primal, x.tangent)?;
        Ok(DualValue { primal: p, tangent: t })
    }

    pub fn dual_tanh(&mut self, x: DualValue) -> Result<DualValue> {
        let p = self.tanh(x.primal);
        let ones = self.constant(self.value(p).map(|_| 1.0));
        let sq = self.mul(p, p)?;
        let deriv = self.sub(ones, sq)?;
        let t = self.mul(deriv, x.tangent)?;
        Ok(DualValue { primal: p, tangent: t })
    }

    pub fn dual_add(&mut self, a: DualValue, b: DualValue) -> Result<DualValue> {
        Ok(DualValue {
            primal: self.add(a.primal, b.primal)?,
            tangent: self.add(a.tangent, b.tangent)?,
        })
    }

    pub fn dual_sub(&mut self, a: DualValue, b: DualValue) -> Result<DualValue> {
        Ok(DualValue {
            primal: self.sub(a.primal, b.primal)?,
            tangent: self.sub(a.tangent, b.tangent)?,
        })
    }

    pub fn dual_mul(&mut self, a: DualValue, b: DualValue) -> Result<DualValue> {
        let primal = self.mul(a.primal, b.primal)?;
        let ta = self.mul(a.tangent, b.primal)?;
        let tb = self.mul(a.primal, b.tangent)?;
        let tangent = self.add(ta, tb)?;
        Ok(DualValue { primal, tangent })
    }

    pub fn dual_scale(&mut self, a: DualValue, k: f64) -> DualValue {
        DualValue { primal: self.scale(a.primal, k), tangent: self.scale(a.tangent, k) }
    }

    pub fn dual_field(&mut self, field: usize, x: DualValue) -> Result<DualValue> {
        let primal = self.field(field, x.primal);
        let tangent = self.field_jvp(field, x.primal, x.tangent)?;
        Ok(DualValue { primal, tangent })
    }

    // ── reverse sweep ────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Every node receives exactly one
    /// adjoint; gradients accumulate across all uses of a leaf, including
    /// uses inside tangent-channel computations.
    pub fn backward(&self, root: ValueId) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(format!("{:?}", root_val.shape())));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Tensor::new(root_val.shape().to_vec(), vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            if adjoints[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let adj = adjoints[i].take().unwrap();
            self.apply_vjp(i, &adj, &mut adjoints);
            adjoints[i] = Some(adj);
        }
        Ok(Gradients { adjoints })
    }

    fn accumulate(&self, adjoints: &mut [Option<Tensor>], id: ValueId, delta: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut adjoints[id.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_vjp(&self, i: usize, adj: &Tensor, adjoints: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMulBt { a, w } => {
                // value = a · wᵀ  →  da = adj · w, dw = adjᵀ · a
                let da = adj.matmul(self.value(*w)).expect("vjp matmul_bt/a");
                let dw = adj.matmul_tn(self.value(*a)).expect("vjp matmul_bt/w");
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *w, dw);
            }
            Op::Add(a, b) => {
                self.accumulate(adjoints, *a, adj.clone());
                self.accumulate(adjoints, *b, adj.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adjoints, *a, adj.clone());
                self.accumulate(adjoints, *b, adj.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let da = adj.mul(self.value(*b)).expect("vjp mul/a");
                let db = adj.mul(self.value(*a)).expect("vjp mul/b");
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *b, db);
            }
            Op::DivElem(a, b) => {
                let bv = self.value(*b);
                let da = adj.div(bv).expect("vjp div/a");
                let av = self.value(*a);
                let db = Tensor::new(
                    bv.shape().to_vec(),
                    adj.data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((&g, &a_), &b_)| -g * a_ / (b_ * b_))
                        .collect(),
                );
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *b, db);
            }
            Op::Scale(a, k) => {
                self.accumulate(adjoints, *a, adj.scale(*k));
            }
            Op::AddRow { a, b } => {
                self.accumulate(adjoints, *a, adj.clone());
                self.accumulate(adjoints, *b, adj.col_sums());
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    y.shape().to_vec(),
                    adj.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &yv)| g * (1.0 - yv * yv))
                        .collect(),
                );
                self.accumulate(adjoints, *a, da);
            }
            Op::Relu(a) => {
                let z = self.value(*a);
                let da = Tensor::new(
                    z.shape().to_vec(),
                    adj.data()
                        .iter()
                        .zip(z.data())
                        .map(|(&g, &zv)| if zv > 0.0 { g } else { 0.0 })
                        .collect(),
                );
                self.accumulate(adjoints, *a, da);
            }
            Op::GateBySign { gate, t } => {
                let g = self.value(*gate);
                let dt = Tensor::new(
                    g.shape().to_vec(),
                    adj.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&gr, &gv)| if gv > 0.0 { gr } else { 0.0 })
                        .collect(),
                );
                self.accumulate(adjoints, *t, dt);
            }
            Op::RowNorms(a) => {
                let av = self.value(*a);
                let norms = &self.nodes[i].value;
                let mut da = Tensor::zeros(av.shape().to_vec());
                for r in 0..av.rows() {
                    let nv = norms.data()[r];
                    if nv == 0.0 {
                        continue;
                    }
                    let g = adj.data()[r];
                    for (o, &x) in da.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = g * x / nv;
                    }
                }
                self.accumulate(adjoints, *a, da);
            }
            Op::RowDots(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = Tensor::zeros(av.shape().to_vec());
                let mut db = Tensor::zeros(bv.shape().to_vec());
                for r in 0..av.rows() {
                    let g = adj.data()[r];
                    for ((o, &x), (p, &y)) in da
                        .row_mut(r)
                        .iter_mut()
                        .zip(bv.row(r))
                        .zip(db.row_mut(r).iter_mut().zip(av.row(r)))
                    {
                        *o = g * x;
                        *p = g * y;
                    }
                }
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *b, db);
            }
            Op::DivRows { a, s } => {
                let av = self.value(*a);
                let sv = self.value(*s);
                let mut da = Tensor::zeros(av.shape().to_vec());
                let mut ds = Tensor::zeros(sv.shape().to_vec());
                for r in 0..av.rows() {
                    let d = sv.data()[r];
                    let mut dot = 0.0;
                    for ((o, &g), &x) in da.row_mut(r).iter_mut().zip(adj.row(r)).zip(av.row(r)) {
                        *o = g / d;
                        dot += g * x;
                    }
                    ds.data_mut()[r] = -dot / (d * d);
                }
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *s, ds);
            }
            Op::SelectRows { a, idx } => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.shape().to_vec());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, &g) in da.row_mut(r).iter_mut().zip(adj.row(k)) {
                        *o += g;
                    }
                }
                self.accumulate(adjoints, *a, da);
            }
            Op::Sum(a) => {
                let g = adj.data()[0];
                let da = self.value(*a).map(|_| g);
                self.accumulate(adjoints, *a, da);
            }
            Op::Field { field, x } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                for r in 0..xv.rows() {
                    let jac = self.fields[*field].jacobian_at(xv.row(r));
                    // dx_row = J_fᵀ · adj_row
                    let n = jac.rows();
                    for c in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += jac.at(k, c) * adj.row(r)[k];
                        }
                        dx.row_mut(r)[c] = acc;
                    }
                }
                self.accumulate(adjoints, *x, dx);
            }
            Op::FieldJvp { field, x, t } => {
                let xv = self.value(*x);
                let mut dt = Tensor::zeros(xv.shape().to_vec());
                for r in 0..xv.rows() {
                    let jac = self.fields[*field].jacobian_at(xv.row(r));
                    let n = jac.rows();
                    for c in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += jac.at(k, c) * adj.row(r)[k];
                        }
                        dt.row_mut(r)[c] = acc;
                    }
                }
                self.accumulate(adjoints, *t, dt);
            }
        }
    }
}

/// Jacobian-vector product `∂f/∂x|ₓ · v` of a recorded map via one
/// tangent-propagated forward pass. No full Jacobian is materialized.
pub fn jvp_of<F>(f: F, x: &Tensor, v: &Tensor) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, DualValue) -> Result<DualValue>,
{
    if !x.same_shape(v) {
        return Err(Error::ShapeMismatch {
            context: "jvp",
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", v.shape()),
        });
    }
    let mut tape = Tape::new();
    let dual = tape.dual_constant(x.clone(), v.clone());
    let out = f(&mut tape, dual)?;
    Ok(tape.value(out.tangent).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Central finite difference of a scalar function of one tensor entry.
    fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    }

    #[test]
    fn dual_linear_identity_map() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::identity(2));
        let b = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let x = tape.dual_constant(
            Tensor::matrix(1, 2, vec![1.0, 2.0]),
            Tensor::matrix(1, 2, vec![3.0, 4.0]),
        );
        let y = tape.dual_linear(w, b, x).unwrap();
        assert_eq!(tape.value(y.primal).data(), &[1.0, 2.0]);
        assert_eq!(tape.value(y.tangent).data(), &[3.0, 4.0]);
    }

    #[test]
    fn dual_linear_hand_case() {
        // W = [[0,1],[1,0]], b = (1,1), primal (1,2), tangent (1,0).
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
        let b = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let x = tape.dual_constant(
            Tensor::matrix(1, 2, vec![1.0, 2.0]),
            Tensor::matrix(1, 2, vec![1.0, 0.0]),
        );
        let y = tape.dual_linear(w, b, x).unwrap();
        assert_eq!(tape.value(y.primal).data(), &[3.0, 2.0]);
        assert_eq!(tape.value(y.tangent).data(), &[0.0, 1.0]);
    }

    #[test]
    fn dual_linear_zero_weight_is_constant() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(vec![2, 2]));
        let b = tape.param(Tensor::vector(vec![5.0, -1.0]));
        let x = tape.dual_constant(
            Tensor::matrix(1, 2, vec![9.0, 9.0]),
            Tensor::matrix(1, 2, vec![4.0, 4.0]),
        );
        let y = tape.dual_linear(w, b, x).unwrap();
        assert_eq!(tape.value(y.primal).data(), &[5.0, -1.0]);
        assert_eq!(tape.value(y.tangent).data(), &[0.0, 0.0]);
    }

    #[test]
    fn dual_relu_gates_tangent_by_sign() {
        let mut tape = Tape::new();
        let x = tape.dual_constant(
            Tensor::matrix(1, 2, vec![1.0, -1.0]),
            Tensor::matrix(1, 2, vec![5.0, 5.0]),
        );
        let y = tape.dual_relu(x).unwrap();
        assert_eq!(tape.value(y.primal).data(), &[1.0, 0.0]);
        assert_eq!(tape.value(y.tangent).data(), &[5.0, 0.0]);
    }

    #[test]
    fn dual_relu_zero_uses_subgradient_zero() {
        let mut tape = Tape::new();
        let x = tape.dual_constant(
            Tensor::matrix(1, 1, vec![0.0]),
            Tensor::matrix(1, 1, vec![7.0]),
        );
        let y = tape.dual_relu(x).unwrap();
        assert_eq!(tape.value(y.primal).data(), &[0.0]);
        assert_eq!(tape.value(y.tangent).data(), &[0.0]);
    }

    #[test]
    fn backward_of_sum_wx_is_ones_outer_x() {
        // root = sum(x · Wᵀ) with x fixed → ∂root/∂W = 1 ⊗ x (each row is x).
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 0.7]));
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.5, -2.5]));
        let y = tape.matmul_bt(x, w).unwrap();
        let root = tape.sum(y);
        let grads = tape.backward(root).unwrap();
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.data(), &[1.5, -2.5, 1.5, -2.5]);
    }

    #[test]
    fn backward_independent_param_gets_no_gradient() {
        let mut tape = Tape::new();
        let _unused = tape.param(Tensor::vector(vec![1.0]));
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let dots = tape.row_dots(x, x).unwrap();
        let root = tape.sum(dots);
        let grads = tape.backward(root).unwrap();
        assert!(grads.get(_unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn gradient_through_tangent_only_loss() {
        // loss = ‖x·Wᵀ tangent of v‖² = ‖v·Wᵀ‖² → ∂/∂W = 2 (W v) vᵀ.
        let v = vec![0.7, -0.3];
        let wdata = vec![0.4, 0.1, -0.2, 0.6];
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 2, wdata.clone()));
        let x = tape.dual_constant(
            Tensor::matrix(1, 2, vec![0.9, 1.1]),
            Tensor::matrix(1, 2, v.clone()),
        );
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.dual_linear(w, b, x).unwrap();
        let sq = tape.row_dots(y.tangent, y.tangent).unwrap();
        let root = tape.sum(sq);
        let grads = tape.backward(root).unwrap();
        let gw = grads.get(w).unwrap();
        let wv = [
            wdata[0] * v[0] + wdata[1] * v[1],
            wdata[2] * v[0] + wdata[3] * v[1],
        ];
        let expected = [
            2.0 * wv[0] * v[0],
            2.0 * wv[0] * v[1],
            2.0 * wv[1] * v[0],
            2.0 * wv[1] * v[1],
        ];
        for (g, e) in gw.data().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn jvp_identity_returns_direction() {
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]);
        let v = Tensor::matrix(1, 3, vec![0.5, -0.5, 2.0]);
        let out = jvp_of(|_, d| Ok(d), &x, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn jvp_hand_derivative() {
        // f(x) = (x₁², x₂) at x = (3, 1), v = (1, 0) → (6, 0).
        let x = Tensor::matrix(1, 2, vec![3.0, 1.0]);
        let v = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let out = jvp_of(
            |tape, d| {
                let mask = tape.dual_constant(
                    Tensor::matrix(1, 2, vec![1.0, 0.0]),
                    Tensor::zeros(vec![1, 2]),
                );
                let anti = tape.dual_constant(
                    Tensor::matrix(1, 2, vec![0.0, 1.0]),
                    Tensor::zeros(vec![1, 2]),
                );
                let sq = tape.dual_mul(d, d)?;
                let first = tape.dual_mul(sq, mask)?;
                let second = tape.dual_mul(d, anti)?;
                tape.dual_add(first, second)
            },
            &x,
            &v,
        )
        .unwrap();
        assert!((out.data()[0] - 6.0).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
    }

    #[test]
    fn tanh_tangent_matches_finite_difference() {
        let xs = [0.3, -1.2, 0.0, 2.5];
        for &x0 in &xs {
            let x = Tensor::matrix(1, 1, vec![x0]);
            let v = Tensor::matrix(1, 1, vec![1.0]);
            let out = jvp_of(|tape, d| tape.dual_tanh(d), &x, &v).unwrap();
            let fd = central_diff(f64::tanh, x0, 1e-6);
            assert!((out.data()[0] - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn div_rows_vjp_matches_finite_difference() {
        // loss = sum(a / s) over a 2x2 batch; check ds numerically.
        let a0 = Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 1.5]);
        let s0 = [2.0, 0.8];
        let loss = |s: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let a = tape.constant(a0.clone());
            let s = tape.param(Tensor::vector(s.to_vec()));
            let d = tape.div_rows(a, s).unwrap();
            let r = tape.sum(d);
            tape.scalar_value(r)
        };
        let mut tape = Tape::new();
        let a = tape.constant(a0.clone());
        let s = tape.param(Tensor::vector(s0.to_vec()));
        let d = tape.div_rows(a, s).unwrap();
        let root = tape.sum(d);
        let grads = tape.backward(root).unwrap();
        let gs = grads.get(s).unwrap();
        for i in 0..2 {
            let fd = central_diff(
                |v| {
                    let mut sv = s0;
                    sv[i] = v;
                    loss(&sv)
                },
                s0[i],
                1e-6,
            );
            assert!((gs.data()[i] - fd).abs() < 1e-8, "{} vs {}", gs.data()[i], fd);
        }
    }

    #[test]
    fn row_norms_vjp_matches_finite_difference() {
        let x0 = vec![0.6, -1.1, 0.4, 2.0];
        let loss = |xd: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::matrix(2, 2, xd.to_vec()));
            let n = tape.row_norms(x);
            let r = tape.sum(n);
            tape.scalar_value(r)
        };
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(2, 2, x0.clone()));
        let n = tape.row_norms(x);
        let root = tape.sum(n);
        let grads = tape.backward(root).unwrap();
        let gx = grads.get(x).unwrap();
        for i in 0..4 {
            let fd = central_diff(
                |v| {
                    let mut xd = x0.clone();
                    xd[i] = v;
                    loss(&xd)
                },
                x0[i],
                1e-6,
            );
            assert!((gx.data()[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn select_rows_vjp_scatters() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let sel = tape.select_rows(x, vec![2, 0]);
        let dots = tape.row_dots(sel, sel).unwrap();
        let root = tape.sum(dots);
        let grads = tape.backward(root).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.data(), &[2., 4., 0., 0., 10., 12.]);
    }

    #[test]
    fn tape_is_deterministic() {
        let run = || -> Vec<f64> {
            let mut tape = Tape::new();
            let w = tape.param(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
            let x = tape.dual_constant(
                Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]),
                Tensor::matrix(2, 2, vec![0.3, 0.3, -0.7, 0.1]),
            );
            let b = tape.constant(Tensor::vector(vec![0.01, -0.02]));
            let y = tape.dual_linear(w, b, x).unwrap();
            let r = tape.dual_relu(y).unwrap();
            let d = tape.row_dots(r.tangent, r.primal).unwrap();
            let root = tape.sum(d);
            let grads = tape.backward(root).unwrap();
            grads.get(w).unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical inputs must produce bitwise-identical gradients");
    }
}
