//! Autonomous vector fields used as alignment subjects: planar analytic
//! systems, linear systems with controlled eigenstructure, random
//! low-rank RNNs, and context RNNs loaded from weight files.
//!
//! Every field exposes an analytic Jacobian so it can sit inside autodiff
//! graphs (the target field is evaluated at network outputs during
//! training, so gradients must flow through it).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tape::TapeField;
use crate::tensor::Tensor;

const WEIGHTS_VERSION: i64 = 1;

type EvalFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(&[f64]) -> Tensor + Send + Sync>;

#[derive(Clone)]
pub enum VectorField {
    /// `ẋ₁ = x₂`, `ẋ₂ = μ(1 − x₁²)x₂ − x₁`.
    VanDerPol { mu: f64 },
    /// `ẋ₁ = μx₁ − x₁³`, `ẋ₂ = −x₂`.
    Pitchfork { mu: f64 },
    /// `ẋ = Ax (+ bias)`.
    Linear { a: Tensor, bias: Option<Vec<f64>> },
    /// `ẋ = −x + W·tanh(x)`.
    LowRankRnn { w: Tensor },
    /// `τẋ = −x + W_eff·tanh(x) + input`, with `W_eff = W + Γ` and the
    /// frozen input term precomputed as `input = B1·u`.
    ContextRnn { tau: f64, w_eff: Tensor, input: Vec<f64> },
    /// `y ↦ Q·f(Q⁻¹y)` for a stored base field.
    LinearConjugate { base: Box<VectorField>, q: Tensor, q_inv: Tensor },
    Custom { dim: usize, eval: EvalFn, jac: JacFn },
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VectorField::VanDerPol { mu } => write!(f, "VanDerPol(mu={mu})"),
            VectorField::Pitchfork { mu } => write!(f, "Pitchfork(mu={mu})"),
            VectorField::Linear { a, bias } => {
                write!(f, "Linear(dim={}, bias={})", a.rows(), bias.is_some())
            }
            VectorField::LowRankRnn { w } => write!(f, "LowRankRnn(dim={})", w.rows()),
            VectorField::ContextRnn { tau, w_eff, .. } => {
                write!(f, "ContextRnn(dim={}, tau={tau})", w_eff.rows())
            }
            VectorField::LinearConjugate { base, .. } => write!(f, "LinearConjugate({base:?})"),
            VectorField::Custom { dim, .. } => write!(f, "Custom(dim={dim})"),
        }
    }
}

impl VectorField {
    pub fn dim(&self) -> usize {
        match self {
            VectorField::VanDerPol { .. } | VectorField::Pitchfork { .. } => 2,
            VectorField::Linear { a, .. } => a.rows(),
            VectorField::LowRankRnn { w } => w.rows(),
            VectorField::ContextRnn { w_eff, .. } => w_eff.rows(),
            VectorField::LinearConjugate { base, .. } => base.dim(),
            VectorField::Custom { dim, .. } => *dim,
        }
    }

    /// Velocity `f(x)` at a single point.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                context: "vector field eval",
                expected: format!("[{}]", self.dim()),
                got: format!("[{}]", x.len()),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            VectorField::VanDerPol { mu } => {
                vec![x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]]
            }
            VectorField::Pitchfork { mu } => {
                vec![mu * x[0] - x[0] * x[0] * x[0], -x[1]]
            }
            VectorField::Linear { a, bias } => {
                let mut v = a.matvec(x).expect("linear field shape");
                if let Some(b) = bias {
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi += bi;
                    }
                }
                v
            }
            VectorField::LowRankRnn { w } => {
                let th: Vec<f64> = x.iter().map(|&v| v.tanh()).collect();
                let wt = w.matvec(&th).expect("rnn field shape");
                x.iter().zip(wt).map(|(&xi, wi)| -xi + wi).collect()
            }
            VectorField::ContextRnn { tau, w_eff, input } => {
                let th: Vec<f64> = x.iter().map(|&v| v.tanh()).collect();
                let wt = w_eff.matvec(&th).expect("context rnn shape");
                x.iter()
                    .zip(wt)
                    .zip(input)
                    .map(|((&xi, wi), &ui)| (-xi + wi + ui) / tau)
                    .collect()
            }
            VectorField::LinearConjugate { base, q, q_inv } => {
                let back = q_inv.matvec(x).expect("conjugate shape");
                let v = base.eval_unchecked(&back);
                q.matvec(&v).expect("conjugate shape")
            }
            VectorField::Custom { eval, .. } => eval(x),
        }
    }

    /// Analytic Jacobian `∂f/∂x` at a point, `[n, n]`.
    pub fn jacobian(&self, x: &[f64]) -> Tensor {
        match self {
            VectorField::VanDerPol { mu } => Tensor::matrix(
                2,
                2,
                vec![
                    0.0,
                    1.0,
                    -2.0 * mu * x[0] * x[1] - 1.0,
                    mu * (1.0 - x[0] * x[0]),
                ],
            ),
            VectorField::Pitchfork { mu } => {
                Tensor::matrix(2, 2, vec![mu - 3.0 * x[0] * x[0], 0.0, 0.0, -1.0])
            }
            VectorField::Linear { a, .. } => a.clone(),
            VectorField::LowRankRnn { w } => {
                let n = w.rows();
                let mut j = Tensor::zeros(vec![n, n]);
                for i in 0..n {
                    for c in 0..n {
                        let sech2 = 1.0 - x[c].tanh().powi(2);
                        let mut v = w.at(i, c) * sech2;
                        if i == c {
                            v -= 1.0;
                        }
                        j.set(i, c, v);
                    }
                }
                j
            }
            VectorField::ContextRnn { tau, w_eff, .. } => {
                let n = w_eff.rows();
                let mut j = Tensor::zeros(vec![n, n]);
                for i in 0..n {
                    for c in 0..n {
                        let sech2 = 1.0 - x[c].tanh().powi(2);
                        let mut v = w_eff.at(i, c) * sech2;
                        if i == c {
                            v -= 1.0;
                        }
                        j.set(i, c, v / tau);
                    }
                }
                j
            }
            VectorField::LinearConjugate { base, q, q_inv } => {
                let back = q_inv.matvec(x).expect("conjugate shape");
                let jb = base.jacobian(&back);
                q.matmul(&jb).unwrap().matmul(q_inv).unwrap()
            }
            VectorField::Custom { jac, .. } => jac(x),
        }
    }

    /// The field `α·f` for a positive constant. Rescaling leaves the
    /// orbital similarity loss unchanged.
    pub fn scaled(&self, alpha: f64) -> VectorField {
        let base = self.clone();
        let base_j = self.clone();
        VectorField::Custom {
            dim: self.dim(),
            eval: Arc::new(move |x| {
                base.eval_unchecked(x).into_iter().map(|v| v * alpha).collect()
            }),
            jac: Arc::new(move |x| base_j.jacobian(x).scale(alpha)),
        }
    }

    pub fn as_field_ref(&self) -> crate::tape::FieldRef {
        Arc::new(self.clone())
    }
}

impl TapeField for VectorField {
    fn dim(&self) -> usize {
        VectorField::dim(self)
    }

    fn eval_batch(&self, x: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(x.shape().to_vec());
        for i in 0..x.rows() {
            let v = self.eval_unchecked(x.row(i));
            out.row_mut(i).copy_from_slice(&v);
        }
        out
    }

    fn jacobian_at(&self, x: &[f64]) -> Tensor {
        self.jacobian(x)
    }
}

/// `f₂(y) := Q·f(Q⁻¹y)`, the conjugate of `field` under `y = Qx`. The
/// ground-truth aligning map is `H(x) = Qx`. `Q` must be safely invertible
/// with positive determinant.
pub fn make_conjugate(field: &VectorField, q: &Tensor) -> Result<VectorField> {
    let n = field.dim();
    if q.rank() != 2 || q.rows() != n || q.cols() != n {
        return Err(Error::ShapeMismatch {
            context: "make_conjugate",
            expected: format!("[{n}, {n}]"),
            got: format!("{:?}", q.shape()),
        });
    }
    let lu = linalg::Lu::factor(q)?;
    let d = lu.det();
    if d.abs() <= 1e-9 {
        return Err(Error::Singular(format!(
            "conjugation matrix is near-singular (det = {d:.3e})"
        )));
    }
    if d < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "conjugation matrix must have positive determinant, got det = {d:.3e}"
        )));
    }
    let q_inv = lu.inverse()?;
    Ok(VectorField::LinearConjugate {
        base: Box::new(field.clone()),
        q: q.clone(),
        q_inv,
    })
}

/// Random conjugation matrix with standard-normal entries and det > 0
/// (a row is flipped when the draw comes out negative).
pub fn random_conjugacy(rng: &mut impl Rng, n: usize) -> Tensor {
    loop {
        let mut q = linalg::gaussian_matrix(rng, n, n, 1.0);
        let det = match linalg::det(&q) {
            Ok(d) => d,
            Err(_) => continue,
        };
        if det.abs() <= 1e-6 {
            continue;
        }
        if det < 0.0 {
            for j in 0..n {
                let v = -q.at(0, j);
                q.set(0, j, v);
            }
        }
        return q;
    }
}

/// The push-forward of `base` through an invertible network: at a point
/// `y`, evaluates `J_H(x)·f(x)` with `x = H⁻¹(y)`. The result is exactly
/// conjugate to `base` under `H`, which makes it a ground-truth partner
/// for nonlinear-warp experiments.
pub fn pushforward_field(net: &crate::iresnet::IResNet, base: &VectorField) -> VectorField {
    let dim = base.dim();
    assert_eq!(net.dim(), dim, "warp and base field dimensions differ");
    let tol = 1e-12;
    let max_iter = 200;
    let eval_net = net.clone();
    let eval_base = base.clone();
    let jac_net = net.clone();
    let jac_base = base.clone();
    VectorField::Custom {
        dim,
        eval: Arc::new(move |y: &[f64]| {
            let yb = Tensor::matrix(1, dim, y.to_vec());
            let x = eval_net.inverse(&yb, tol, max_iter).expect("warp inverse");
            let fx = eval_base.eval(x.row(0)).expect("base field eval");
            let (_, t) = eval_net
                .forward_with_tangent(&x, &Tensor::matrix(1, dim, fx))
                .expect("warp tangent");
            t.data().to_vec()
        }),
        jac: Arc::new(move |y: &[f64]| {
            // J_g(y) = A · J_f(x) · A⁻¹ with A = J_H(x), x = H⁻¹(y).
            let yb = Tensor::matrix(1, dim, y.to_vec());
            let x = jac_net.inverse(&yb, tol, max_iter).expect("warp inverse");
            let (_, jt) = jac_net.forward_with_jacobian_t(x.row(0)).expect("warp jacobian pass");
            let a = jt.transpose();
            let jf = jac_base.jacobian(x.row(0));
            let a_inv = linalg::inverse(&a).expect("warp jacobian is nonsingular");
            a.matmul(&jf).unwrap().matmul(&a_inv).unwrap()
        }),
    }
}

/// The pull-back of `target` through an invertible network: at a point
/// `x`, solves `J_H(x)·f(x) = g(H(x))`. The pair `(f, target)` is exactly
/// conjugate under `H` with only forward/tangent passes — no fixed-point
/// inversion — so `H` can be arbitrarily deep. The Jacobian closure uses
/// central differences (the analytic form needs second derivatives of
/// the warp).
pub fn pullback_field(net: &crate::iresnet::IResNet, target: &VectorField) -> VectorField {
    let dim = target.dim();
    assert_eq!(net.dim(), dim, "warp and target field dimensions differ");
    let net = net.clone();
    let target = target.clone();
    let eval = move |x: &[f64]| -> Vec<f64> {
        let (y, jt) = net.forward_with_jacobian_t(x).expect("warp jacobian pass");
        let gy = target.eval(&y).expect("target field eval");
        linalg::Lu::factor(&jt.transpose())
            .and_then(|lu| lu.solve(&gy))
            .expect("warp jacobian is nonsingular")
    };
    let eval_for_jac = eval.clone();
    VectorField::Custom {
        dim,
        eval: Arc::new(eval),
        jac: Arc::new(move |x: &[f64]| {
            let eps = 1e-6;
            let mut j = Tensor::zeros(vec![dim, dim]);
            for c in 0..dim {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += eps;
                xm[c] -= eps;
                let fp = eval_for_jac(&xp);
                let fm = eval_for_jac(&xm);
                for r in 0..dim {
                    j.set(r, c, (fp[r] - fm[r]) / (2.0 * eps));
                }
            }
            j
        }),
    }
}

// ── linear systems with controlled eigenstructure ────────────────────

#[derive(Debug, Clone)]
pub struct LinearSystemSpec {
    pub a: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl LinearSystemSpec {
    pub fn field(&self) -> VectorField {
        VectorField::Linear { a: self.a.clone(), bias: self.bias.clone() }
    }
}

/// How requested eigenvalue signs are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenPairing {
    /// All eigenvalues real.
    Real,
    /// All eigenvalues in complex-conjugate pairs; sign counts must be even.
    Complex,
}

/// Counts of eigenvalues by type and half-plane. Complex entries count
/// conjugate pairs (two eigenvalues each).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EigenSignature {
    pub pos_real: usize,
    pub neg_real: usize,
    pub pos_complex_pairs: usize,
    pub neg_complex_pairs: usize,
}

impl EigenSignature {
    pub fn dim(&self) -> usize {
        self.pos_real + self.neg_real + 2 * (self.pos_complex_pairs + self.neg_complex_pairs)
    }

    pub fn n_pos(&self) -> usize {
        self.pos_real + 2 * self.pos_complex_pairs
    }
}

/// `A = P·D·P⁻¹` with `D` block-diagonal realizing the signature. Real
/// eigenvalue magnitudes and complex real/imaginary parts are drawn from
/// `[0.5, 2]` to keep systems away from degeneracy; `P` is random with
/// singular values in `[0.75, 1.5]`.
pub fn random_linear_with_signature(
    sig: &EigenSignature,
    rng: &mut impl Rng,
) -> LinearSystemSpec {
    let n = sig.dim();
    let mut d = Tensor::zeros(vec![n, n]);
    let mag = |rng: &mut dyn rand::RngCore| 0.5 + 1.5 * rng.gen::<f64>();
    let mut idx = 0;
    for _ in 0..sig.pos_real {
        d.set(idx, idx, mag(rng));
        idx += 1;
    }
    for _ in 0..sig.neg_real {
        d.set(idx, idx, -mag(rng));
        idx += 1;
    }
    for sign in [1.0, -1.0] {
        let pairs = if sign > 0.0 { sig.pos_complex_pairs } else { sig.neg_complex_pairs };
        for _ in 0..pairs {
            let re = sign * mag(rng);
            let im = mag(rng);
            d.set(idx, idx, re);
            d.set(idx, idx + 1, -im);
            d.set(idx + 1, idx, im);
            d.set(idx + 1, idx + 1, re);
            idx += 2;
        }
    }
    let p = linalg::random_well_conditioned(rng, n, 0.75, 1.5);
    let p_inv = linalg::inverse(&p).expect("well-conditioned by construction");
    let a = p.matmul(&d).unwrap().matmul(&p_inv).unwrap();
    LinearSystemSpec { a, bias: None }
}

/// Linear system with `n_pos` of `n` eigenvalues in the right half plane.
pub fn random_linear_with_signs(
    n: usize,
    n_pos: usize,
    pairing: EigenPairing,
    rng: &mut impl Rng,
) -> Result<LinearSystemSpec> {
    if n_pos > n {
        return Err(Error::InvalidArgument(format!(
            "requested {n_pos} positive eigenvalues in dimension {n}"
        )));
    }
    let n_neg = n - n_pos;
    let sig = match pairing {
        EigenPairing::Real => EigenSignature {
            pos_real: n_pos,
            neg_real: n_neg,
            pos_complex_pairs: 0,
            neg_complex_pairs: 0,
        },
        EigenPairing::Complex => {
            if n_pos % 2 != 0 || n_neg % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "complex pairing needs even sign counts, got {n_pos} positive / {n_neg} negative \
                     (odd count of complex eigenvalues)"
                )));
            }
            EigenSignature {
                pos_real: 0,
                neg_real: 0,
                pos_complex_pairs: n_pos / 2,
                neg_complex_pairs: n_neg / 2,
            }
        }
    };
    Ok(random_linear_with_signature(&sig, rng))
}

// ── low-rank RNNs ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LowRankRnnSpec {
    pub j: Tensor,
    pub m: Tensor,
    pub nvec: Tensor,
}

impl LowRankRnnSpec {
    /// `W = J + m·nᵀ`.
    pub fn connectivity(&self) -> Tensor {
        if self.m.cols() == 0 {
            return self.j.clone();
        }
        let low = self.m.matmul_bt(&self.nvec).unwrap();
        self.j.add(&low).unwrap()
    }

    pub fn field(&self) -> VectorField {
        VectorField::LowRankRnn { w: self.connectivity() }
    }
}

/// Random-plus-low-rank connectivity. With `scale_j_by_dim` (the default
/// reading) `J` entries have std `0.5/√n`, putting the spectral radius of
/// the random part near 0.5; the raw reading uses std 0.5 directly.
pub fn random_lowrank_rnn(
    n: usize,
    k: usize,
    rng: &mut impl Rng,
    scale_j_by_dim: bool,
) -> LowRankRnnSpec {
    let j_std = if scale_j_by_dim { 0.5 / (n as f64).sqrt() } else { 0.5 };
    LowRankRnnSpec {
        j: linalg::gaussian_matrix(rng, n, n, j_std),
        m: linalg::gaussian_matrix(rng, n, k, 1.0),
        nvec: linalg::gaussian_matrix(rng, n, k, 1.0 / (n as f64).sqrt()),
    }
}

// ── context RNNs from weight files ───────────────────────────────────

#[derive(Debug, Clone)]
pub struct ContextRnnSpec {
    pub tau: f64,
    pub w: Tensor,
    pub b1: Tensor,
    pub u: Vec<f64>,
    pub gamma: Option<Tensor>,
}

impl ContextRnnSpec {
    pub fn field(&self) -> VectorField {
        let w_eff = match &self.gamma {
            Some(g) => self.w.add(g).expect("gamma shape checked on load"),
            None => self.w.clone(),
        };
        let input = self.b1.matvec(&self.u).expect("input shape checked on load");
        VectorField::ContextRnn { tau: self.tau, w_eff, input }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "format_version": WEIGHTS_VERSION,
            "tau": self.tau,
            "W": self.w.to_rows(),
            "B1": self.b1.to_rows(),
            "u": self.u,
            "Gamma": self.gamma.as_ref().map(|g| g.to_rows()),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("weights serialization");
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Parses the RNN weights schema, reporting the offending field path on
/// any violation.
pub fn load_rnn_weights(path: &std::path::Path) -> Result<ContextRnnSpec> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    rnn_weights_from_json(&v)
}

pub fn rnn_weights_from_json(v: &serde_json::Value) -> Result<ContextRnnSpec> {
    let version = v.get("format_version").and_then(|x| x.as_i64()).ok_or(Error::Parse {
        path: "format_version".into(),
        message: "missing or not an integer".into(),
    })?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: WEIGHTS_VERSION });
    }
    let tau = v.get("tau").and_then(|x| x.as_f64()).ok_or(Error::Parse {
        path: "tau".into(),
        message: "missing or not a number".into(),
    })?;
    if tau <= 0.0 {
        return Err(Error::Parse { path: "tau".into(), message: "time constant must be positive".into() });
    }
    let w = json_to_matrix(v.get("W"), "W")?;
    let n = w.rows();
    if w.cols() != n {
        return Err(Error::ShapeMismatch {
            context: "rnn weights W",
            expected: format!("[{n}, {n}]"),
            got: format!("{:?}", w.shape()),
        });
    }
    let b1 = json_to_matrix(v.get("B1"), "B1")?;
    if b1.rows() != n {
        return Err(Error::Parse {
            path: "B1".into(),
            message: format!("expected {n} rows to match W, got {}", b1.rows()),
        });
    }
    let u = v
        .get("u")
        .and_then(|x| x.as_array())
        .ok_or(Error::Parse { path: "u".into(), message: "missing or not an array".into() })?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64().ok_or_else(|| Error::Parse {
                path: format!("u[{i}]"),
                message: "not a number".into(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if u.len() != b1.cols() {
        return Err(Error::Parse {
            path: "u".into(),
            message: format!("length {} does not match B1 columns {}", u.len(), b1.cols()),
        });
    }
    let gamma = match v.get("Gamma") {
        None | Some(serde_json::Value::Null) => None,
        Some(g) => {
            let g = json_to_matrix(Some(g), "Gamma")?;
            if g.rows() != n || g.cols() != n {
                return Err(Error::Parse {
                    path: "Gamma".into(),
                    message: format!("expected [{n}, {n}], got {:?}", g.shape()),
                });
            }
            Some(g)
        }
    };
    Ok(ContextRnnSpec { tau, w, b1, u, gamma })
}

fn json_to_matrix(v: Option<&serde_json::Value>, path: &str) -> Result<Tensor> {
    let arr = v.and_then(|x| x.as_array()).ok_or_else(|| Error::Parse {
        path: path.into(),
        message: "missing or not an array".into(),
    })?;
    if arr.is_empty() {
        return Err(Error::Parse { path: path.into(), message: "matrix has no rows".into() });
    }
    let cols = arr[0].as_array().map(|r| r.len()).ok_or_else(|| Error::Parse {
        path: format!("{path}[0]"),
        message: "row is not an array".into(),
    })?;
    let mut rows = Vec::with_capacity(arr.len());
    for (i, row) in arr.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| Error::Parse {
            path: format!("{path}[{i}]"),
            message: "row is not an array".into(),
        })?;
        if row.len() != cols {
            return Err(Error::Parse {
                path: format!("{path}[{i}]"),
                message: format!("ragged row: expected {cols} entries, got {}", row.len()),
            });
        }
        let mut out = Vec::with_capacity(cols);
        for (j, x) in row.iter().enumerate() {
            out.push(x.as_f64().ok_or_else(|| Error::Parse {
                path: format!("{path}[{i}][{j}]"),
                message: "not a number".into(),
            })?);
        }
        rows.push(out);
    }
    Ok(Tensor::from_rows(&rows))
}

// ── system spec files for the experiment runner ──────────────────────

/// Tagged union used in experiment configs to name a system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    VanDerPol { mu: f64 },
    Pitchfork { mu: f64 },
    Linear {
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    LowRankRnn { n: usize, k: usize, seed: u64 },
    RnnWeights { path: String },
}

impl SystemSpec {
    pub fn build(&self) -> Result<VectorField> {
        match self {
            SystemSpec::VanDerPol { mu } => Ok(VectorField::VanDerPol { mu: *mu }),
            SystemSpec::Pitchfork { mu } => Ok(VectorField::Pitchfork { mu: *mu }),
            SystemSpec::Linear { a, bias } => {
                if a.is_empty() || a.iter().any(|r| r.len() != a.len()) {
                    return Err(Error::InvalidArgument("linear system matrix must be square".into()));
                }
                if let Some(b) = bias {
                    if b.len() != a.len() {
                        return Err(Error::InvalidArgument("bias length must match dimension".into()));
                    }
                }
                Ok(VectorField::Linear { a: Tensor::from_rows(a), bias: bias.clone() })
            }
            SystemSpec::LowRankRnn { n, k, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                Ok(random_lowrank_rnn(*n, *k, &mut rng, true).field())
            }
            SystemSpec::RnnWeights { path } => {
                Ok(load_rnn_weights(std::path::Path::new(path))?.field())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vdp_origin_is_an_equilibrium() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn vdp_hand_evaluation() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        assert_eq!(f.eval(&[1.0, 1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn pitchfork_outer_equilibria_at_sqrt_mu() {
        let f = VectorField::Pitchfork { mu: 4.0 };
        assert_eq!(f.eval(&[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(f.eval(&[-2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn pitchfork_stability_structure() {
        // Saddle at the origin (one positive eigenvalue), stable outer points.
        let f = VectorField::Pitchfork { mu: 4.0 };
        let j0 = f.jacobian(&[0.0, 0.0]);
        assert!(j0.at(0, 0) > 0.0 && j0.at(1, 1) < 0.0);
        let j_out = f.jacobian(&[2.0, 0.0]);
        assert!(j_out.at(0, 0) < 0.0 && j_out.at(1, 1) < 0.0);
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        let f = VectorField::VanDerPol { mu: 1.0 };
        assert!(f.eval(&[1.0]).is_err());
    }

    #[test]
    fn conjugate_by_identity_is_the_same_field() {
        let f = VectorField::VanDerPol { mu: 2.5 };
        let g = make_conjugate(&f, &Tensor::identity(2)).unwrap();
        for x in [[0.3, -1.1], [2.0, 0.5]] {
            assert_eq!(f.eval(&x).unwrap(), g.eval(&x).unwrap());
        }
    }

    #[test]
    fn scalar_conjugation_commutes_for_linear_fields() {
        let a = Tensor::matrix(2, 2, vec![0.5, -1.0, 1.0, -0.5]);
        let f = VectorField::Linear { a: a.clone(), bias: None };
        let g = make_conjugate(&f, &Tensor::identity(2).scale(2.0)).unwrap();
        for x in [[1.0, 2.0], [-0.4, 0.9]] {
            let fa = f.eval(&x).unwrap();
            let ga = g.eval(&x).unwrap();
            for (a, b) in fa.iter().zip(&ga) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_conjugate_matches_direct_composition() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let c = (std::f64::consts::FRAC_PI_2).cos();
        let s = (std::f64::consts::FRAC_PI_2).sin();
        let q = Tensor::matrix(2, 2, vec![c, -s, s, c]);
        let g = make_conjugate(&f, &q).unwrap();
        let q_inv = linalg::inverse(&q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let y = linalg::gaussian_vector(&mut rng, 2, 1.5);
            let lhs = g.eval(&y).unwrap();
            let back = q_inv.matvec(&y).unwrap();
            let rhs = q.matvec(&f.eval(&back).unwrap()).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_rejects_bad_matrices() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let singular = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(make_conjugate(&f, &singular).is_err());
        let negdet = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(make_conjugate(&f, &negdet).is_err());
    }

    #[test]
    fn conjugation_preserves_equilibria() {
        let f = VectorField::Pitchfork { mu: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_conjugacy(&mut rng, 2);
        let g = make_conjugate(&f, &q).unwrap();
        let r = 3.0_f64.sqrt();
        for eq in [[0.0, 0.0], [r, 0.0], [-r, 0.0]] {
            let mapped = q.matvec(&eq).unwrap();
            let v = g.eval(&mapped).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-9), "field at mapped equilibrium: {v:?}");
        }
    }

    #[test]
    fn sign_constructor_two_dim_negative_pair() {
        // Both eigenvalues negative ⟺ trace < 0 and det > 0 for 2x2.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let spec = random_linear_with_signs(2, 0, EigenPairing::Real, &mut rng).unwrap();
            let tr = spec.a.at(0, 0) + spec.a.at(1, 1);
            let det = linalg::det(&spec.a).unwrap();
            assert!(tr < 0.0 && det > 0.0, "trace {tr}, det {det}");
        }
    }

    #[test]
    fn sign_constructor_negation_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = random_linear_with_signs(4, 4, EigenPairing::Real, &mut rng).unwrap();
        // All-positive spectrum ⟹ -A has an all-negative one: check via
        // the sign of the characteristic polynomial at 0 and the trace.
        let neg = spec.a.scale(-1.0);
        let tr: f64 = (0..4).map(|i| neg.at(i, i)).sum();
        assert!(tr < 0.0);
    }

    #[test]
    fn complex_pairing_rejects_odd_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        assert!(random_linear_with_signs(4, 3, EigenPairing::Complex, &mut rng).is_err());
        assert!(random_linear_with_signs(4, 2, EigenPairing::Complex, &mut rng).is_ok());
    }

    #[test]
    fn lowrank_rnn_zero_rank_is_pure_random_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = random_lowrank_rnn(6, 0, &mut rng, true);
        let w = spec.connectivity();
        assert_eq!(w, spec.j);
        let f = spec.field();
        let x: Vec<f64> = vec![0.2; 6];
        let th: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        let expected: Vec<f64> = spec
            .j
            .matvec(&th)
            .unwrap()
            .iter()
            .zip(&x)
            .map(|(w, x)| w - x)
            .collect();
        let got = f.eval(&x).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lowrank_rnn_is_deterministic_under_seed() {
        let a = random_lowrank_rnn(5, 2, &mut ChaCha8Rng::seed_from_u64(77), true);
        let b = random_lowrank_rnn(5, 2, &mut ChaCha8Rng::seed_from_u64(77), true);
        assert_eq!(a.j, b.j);
        assert_eq!(a.m, b.m);
        assert_eq!(a.nvec, b.nvec);
    }

    #[test]
    fn rnn_weights_round_trip() {
        let spec = ContextRnnSpec {
            tau: 0.5,
            w: Tensor::matrix(2, 2, vec![0.1, -0.4, 0.3, 0.2]),
            b1: Tensor::matrix(2, 3, vec![1.0, 0.0, 0.5, 0.0, 1.0, -0.5]),
            u: vec![1.0, 0.0, 2.0],
            gamma: Some(Tensor::matrix(2, 2, vec![0.05, 0.0, 0.0, -0.05])),
        };
        let dir = std::env::temp_dir().join("vfalign_dynsys_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("weights.json");
        spec.save(&path).unwrap();
        let loaded = load_rnn_weights(&path).unwrap();
        let f0 = spec.field();
        let f1 = loaded.field();
        for x in [[0.3, -0.7], [1.5, 0.2]] {
            assert_eq!(f0.eval(&x).unwrap(), f1.eval(&x).unwrap());
        }
    }

    #[test]
    fn rnn_weights_reduce_without_gamma_and_input() {
        let spec = ContextRnnSpec {
            tau: 2.0,
            w: Tensor::matrix(2, 2, vec![0.5, 0.1, -0.2, 0.3]),
            b1: Tensor::matrix(2, 1, vec![1.0, 1.0]),
            u: vec![0.0],
            gamma: None,
        };
        let f = spec.field();
        let x: [f64; 2] = [0.4, -0.9];
        let th: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        let wt = spec.w.matvec(&th).unwrap();
        for (i, got) in f.eval(&x).unwrap().iter().enumerate() {
            let expected = (-x[i] + wt[i]) / 2.0;
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn w_type_weights_use_modified_connectivity() {
        // Hand-computed 2D case: W + Γ enters the tanh term.
        let spec = ContextRnnSpec {
            tau: 1.0,
            w: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            b1: Tensor::matrix(2, 1, vec![0.0, 0.0]),
            u: vec![0.0],
            gamma: Some(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0])),
        };
        let f = spec.field();
        let x = [0.5, 0.25];
        let got = f.eval(&x).unwrap();
        let t0 = 0.5_f64.tanh();
        let t1 = 0.25_f64.tanh();
        assert!((got[0] - (-0.5 + t0 + t1)).abs() < 1e-12);
        assert!((got[1] - (-0.25 + t1)).abs() < 1e-12);
    }

    #[test]
    fn rnn_weights_reject_non_square_w() {
        let json = serde_json::json!({
            "format_version": 1,
            "tau": 1.0,
            "W": [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            "B1": [[1.0], [1.0]],
            "u": [0.0],
            "Gamma": null,
        });
        let err = rnn_weights_from_json(&json).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "got {err}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let fields: Vec<VectorField> = vec![
            VectorField::VanDerPol { mu: 1.7 },
            VectorField::Pitchfork { mu: 3.1 },
            VectorField::Linear {
                a: linalg::gaussian_matrix(&mut rng, 2, 2, 1.0),
                bias: Some(vec![0.3, -0.2]),
            },
            random_lowrank_rnn(2, 1, &mut rng, true).field(),
            make_conjugate(&VectorField::VanDerPol { mu: 2.0 }, &random_conjugacy(&mut rng, 2))
                .unwrap(),
        ];
        for f in &fields {
            let x = linalg::gaussian_vector(&mut rng, 2, 0.8);
            let j = f.jacobian(&x);
            let eps = 1e-6;
            for c in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += eps;
                xm[c] -= eps;
                let fp = f.eval(&xp).unwrap();
                let fm = f.eval(&xm).unwrap();
                for r in 0..2 {
                    let fd = (fp[r] - fm[r]) / (2.0 * eps);
                    assert!(
                        (j.at(r, c) - fd).abs() < 1e-6,
                        "{f:?} J[{r}][{c}] = {} vs fd {fd}",
                        j.at(r, c)
                    );
                }
            }
        }
    }
}
