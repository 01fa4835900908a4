//! Invertible residual network: a stack of Lipschitz-constrained residual
//! blocks `x ↦ x + g(x)` with `g(x) = relu(x·W1ᵀ + b1)·W2ᵀ + b2`.
//!
//! Keeping the spectral norms of `W1` and `W2` below a cap `c < 1` bounds
//! `Lip(g) ≤ c² < 1`, which makes every block bijective and gives the
//! fixed-point inversion a guaranteed contraction rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tape::{DualValue, Tape, ValueId};
use crate::tensor::Tensor;

const CHECKPOINT_VERSION: i64 = 1;

/// One residual branch. Widths are `(n, 2n, n)`: `w1: [2n, n]`, `w2: [n, 2n]`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ResidualBlock {
    /// Residual branch value `g(x)` for a `[S, n]` batch.
    fn branch(&self, x: &Tensor) -> Tensor {
        let z = x.matmul_bt(&self.w1).unwrap().add_row(&self.b1).unwrap();
        let r = z.map(|v| v.max(0.0));
        r.matmul_bt(&self.w2).unwrap().add_row(&self.b2).unwrap()
    }

    fn branch_with_tangent(&self, x: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
        let z = x.matmul_bt(&self.w1).unwrap().add_row(&self.b1).unwrap();
        let r = z.map(|val| val.max(0.0));
        let tz = v.matmul_bt(&self.w1).unwrap();
        let tr = Tensor::new(
            tz.shape().to_vec(),
            tz.data()
                .iter()
                .zip(z.data())
                .map(|(&t, &zv)| if zv > 0.0 { t } else { 0.0 })
                .collect(),
        );
        let g = r.matmul_bt(&self.w2).unwrap().add_row(&self.b2).unwrap();
        let tg = tr.matmul_bt(&self.w2).unwrap();
        (g, tg)
    }
}

/// Persistent power-iteration vectors, one left vector per weight matrix.
#[derive(Debug, Clone)]
struct PowerState {
    u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct IResNet {
    blocks: Vec<ResidualBlock>,
    dim: usize,
    cap: f64,
    power: PowerState,
}

impl IResNet {
    /// Identity-initialized network: `w1 ~ N(0, 1/n)` projected to the cap,
    /// `w2` and biases zero, so `forward` is exactly the identity until the
    /// first weight update.
    pub fn init(dim: usize, layers: usize, cap: f64, seed: u64) -> Result<IResNet> {
        if dim < 1 || layers < 1 {
            return Err(Error::InvalidArgument(format!(
                "network needs dim >= 1 and layers >= 1, got dim={dim}, layers={layers}"
            )));
        }
        if !(0.0 < cap && cap < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lipschitz cap must lie in (0, 1), got {cap}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = 2 * dim;
        let std = 1.0 / (dim as f64).sqrt();
        let mut blocks = Vec::with_capacity(layers);
        let mut u = Vec::with_capacity(2 * layers);
        for _ in 0..layers {
            let w1 = Tensor::matrix(
                hidden,
                dim,
                (0..hidden * dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                    .collect(),
            );
            blocks.push(ResidualBlock {
                w1,
                b1: Tensor::zeros(vec![hidden]),
                w2: Tensor::zeros(vec![dim, hidden]),
                b2: Tensor::zeros(vec![dim]),
            });
            u.push(random_unit(&mut rng, hidden));
            u.push(random_unit(&mut rng, dim));
        }
        let mut net = IResNet { blocks, dim, cap, power: PowerState { u } };
        net.project_spectral_norms();
        Ok(net)
    }

    pub fn from_blocks(dim: usize, cap: f64, blocks: Vec<ResidualBlock>) -> Result<IResNet> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one block".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            let h = b.w1.rows();
            if b.w1.cols() != dim || b.w2.rows() != dim || b.w2.cols() != h
                || b.b1.len() != h || b.b2.len() != dim
            {
                return Err(Error::InvalidArgument(format!(
                    "block {i} has inconsistent shapes for dim {dim}"
                )));
            }
        }
        let u = blocks
            .iter()
            .flat_map(|b| [vec![1.0; b.w1.rows()], vec![1.0; b.w2.rows()]])
            .collect();
        Ok(IResNet { blocks, dim, cap, power: PowerState { u } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// Parameters in fixed order: per block `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.w1, &b.b1, &b.w2, &b.b2])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2])
            .collect()
    }

    fn check_dim(&self, x: &Tensor, context: &'static str) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("[S, {}]", self.dim),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Sequential block application on a `[S, n]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_dim(x, "iresnet forward")?;
        let mut cur = x.clone();
        for b in &self.blocks {
            let g = b.branch(&cur);
            cur = cur.add(&g)?;
        }
        Ok(cur)
    }

    pub fn forward_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward(&Tensor::matrix(1, x.len(), x.to_vec()))?;
        Ok(out.data().to_vec())
    }

    /// Forward pass carrying a directional derivative: returns
    /// `(H(x), ∂H/∂x·v)` per row without touching a tape.
    pub fn forward_with_tangent(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_dim(x, "iresnet forward_with_tangent")?;
        if !x.same_shape(v) {
            return Err(Error::ShapeMismatch {
                context: "iresnet forward_with_tangent",
                expected: format!("{:?}", x.shape()),
                got: format!("{:?}", v.shape()),
            });
        }
        let mut cur = x.clone();
        let mut tan = v.clone();
        for b in &self.blocks {
            let (g, tg) = b.branch_with_tangent(&cur, &tan);
            cur = cur.add(&g)?;
            tan = tan.add(&tg)?;
        }
        Ok((cur, tan))
    }

    /// Forward pass at one point together with the full Jacobian, built
    /// by propagating the identity basis through the tangent channel in
    /// a single sweep. Row `j` of the returned matrix is `∂H/∂x · e_j`,
    /// i.e. the matrix is `J_Hᵀ` in row-major reading; callers index it
    /// as `jac.at(j, i) = ∂H_i/∂x_j`.
    pub fn forward_with_jacobian_t(&self, x: &[f64]) -> Result<(Vec<f64>, Tensor)> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                context: "iresnet forward_with_jacobian_t",
                expected: format!("[{}]", self.dim),
                got: format!("[{}]", x.len()),
            });
        }
        let n = self.dim;
        let mut cur = Tensor::matrix(1, n, x.to_vec());
        let mut jt = Tensor::identity(n);
        for b in &self.blocks {
            let z = cur.matmul_bt(&b.w1)?.add_row(&b.b1)?;
            let r = z.map(|v| v.max(0.0));
            let g = r.matmul_bt(&b.w2)?.add_row(&b.b2)?;
            let tz = jt.matmul_bt(&b.w1)?;
            let mut tzm = tz;
            for row in 0..n {
                for (t, &zv) in tzm.row_mut(row).iter_mut().zip(z.row(0)) {
                    if zv <= 0.0 {
                        *t = 0.0;
                    }
                }
            }
            let tg = tzm.matmul_bt(&b.w2)?;
            cur = cur.add(&g)?;
            jt = jt.add(&tg)?;
        }
        Ok((cur.data().to_vec(), jt))
    }

    /// Per-block fixed-point inversion, last block first: iterate
    /// `x ← y − g(x)` from `x₀ = y` until the update drops below `tol`
    /// in the ∞-norm. Error contracts by at least `Lip(g) ≤ cap²` per
    /// iteration; failure to converge indicates a cap violation.
    pub fn inverse(&self, y: &Tensor, tol: f64, max_iter: usize) -> Result<Tensor> {
        self.check_dim(y, "iresnet inverse")?;
        let mut cur = y.clone();
        for b in self.blocks.iter().rev() {
            let target = cur.clone();
            let mut x = target.clone();
            let mut converged = false;
            for _ in 0..max_iter {
                let g = b.branch(&x);
                let next = target.sub(&g)?;
                let delta = next.sub(&x)?.norm_inf();
                x = next;
                if delta < tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence {
                    what: "residual block inversion".into(),
                    iterations: max_iter,
                });
            }
            cur = x;
        }
        Ok(cur)
    }

    /// Estimates each weight matrix's spectral norm by power iteration
    /// (persistent start vectors, σ change < 1e-6 or 50 iterations) and
    /// rescales matrices exceeding the cap. Biases are untouched; they do
    /// not affect the Lipschitz constant.
    pub fn project_spectral_norms(&mut self) {
        let cap = self.cap;
        for (bi, b) in self.blocks.iter_mut().enumerate() {
            project_to_cap(&mut b.w1, &mut self.power.u[2 * bi], cap);
            project_to_cap(&mut b.w2, &mut self.power.u[2 * bi + 1], cap);
        }
    }

    /// Current spectral-norm estimates per block `(σ(w1), σ(w2))`.
    pub fn spectral_norms(&mut self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for (bi, b) in self.blocks.iter().enumerate() {
            let s1 = power_iteration(&b.w1, &mut self.power.u[2 * bi]);
            let s2 = power_iteration(&b.w2, &mut self.power.u[2 * bi + 1]);
            out.push((s1, s2));
        }
        out
    }

    // ── checkpoint io ────────────────────────────────────────────────

    pub fn to_checkpoint_json(&self) -> serde_json::Value {
        let blocks: Vec<serde_json::Value> = self
            .blocks
            .iter()
            .map(|b| {
                serde_json::json!({
                    "W1": b.w1.to_rows(),
                    "b1": b.b1.data(),
                    "W2": b.w2.to_rows(),
                    "b2": b.b2.data(),
                })
            })
            .collect();
        serde_json::json!({
            "format_version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "cap": self.cap,
            "blocks": blocks,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint_json())
            .expect("checkpoint serialization cannot fail");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_checkpoint_json(v: &serde_json::Value) -> Result<IResNet> {
        let version = json_i64(v, "format_version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let dim = json_i64(v, "dim")? as usize;
        let cap = json_f64(v, "cap")?;
        if !(0.0 < cap && cap < 1.0) {
            return Err(Error::Parse {
                path: "cap".into(),
                message: format!("lipschitz cap must lie in (0, 1), got {cap}"),
            });
        }
        let blocks_v = v.get("blocks").and_then(|b| b.as_array()).ok_or(Error::Parse {
            path: "blocks".into(),
            message: "missing or non-array".into(),
        })?;
        if blocks_v.is_empty() {
            return Err(Error::Parse {
                path: "blocks".into(),
                message: "checkpoint has no blocks".into(),
            });
        }
        let hidden = 2 * dim;
        let mut blocks = Vec::with_capacity(blocks_v.len());
        for (i, bv) in blocks_v.iter().enumerate() {
            let w1 = json_matrix(bv, &format!("blocks[{i}].W1"), hidden, dim)?;
            let b1 = json_vector(bv, "b1", &format!("blocks[{i}].b1"), hidden)?;
            let w2 = json_matrix_key(bv, "W2", &format!("blocks[{i}].W2"), dim, hidden)?;
            let b2 = json_vector(bv, "b2", &format!("blocks[{i}].b2"), dim)?;
            blocks.push(ResidualBlock { w1, b1, w2, b2 });
        }
        IResNet::from_blocks(dim, cap, blocks)
    }

    pub fn load(path: &std::path::Path) -> Result<IResNet> {
        let text = std::fs::read_to_string(path)?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        IResNet::from_checkpoint_json(&v)
    }
}

fn random_unit(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Power-iteration estimate of the largest singular value, refining the
/// persistent left vector in place. The estimate sequence is monotone
/// from below, so a tight stopping tolerance keeps the cap guarantee
/// honest; warm starts make later calls cost a handful of iterations.
pub fn power_iteration(w: &Tensor, u: &mut Vec<f64>) -> f64 {
    let (rows, cols) = (w.rows(), w.cols());
    if u.len() != rows {
        *u = vec![1.0; rows];
    }
    let mut sigma_prev = -1.0;
    let mut sigma = 0.0;
    for _ in 0..500 {
        // v = normalize(Wᵀu); u = normalize(Wv); σ = ‖Wv‖.
        let mut v = vec![0.0; cols];
        for i in 0..rows {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for (vj, &wij) in v.iter_mut().zip(w.row(i)) {
                *vj += ui * wij;
            }
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn < 1e-300 {
            return 0.0;
        }
        for x in v.iter_mut() {
            *x /= vn;
        }
        let wv: Vec<f64> = (0..rows)
            .map(|i| w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        sigma = wv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma < 1e-300 {
            return 0.0;
        }
        for (ui, &x) in u.iter_mut().zip(&wv) {
            *ui = x / sigma;
        }
        if (sigma - sigma_prev).abs() < 1e-11 * sigma.max(1.0) {
            break;
        }
        sigma_prev = sigma;
    }
    sigma
}

/// Scales `w` down when its spectral norm exceeds the cap, re-estimating
/// after each rescale so the post-projection norm actually sits at or
/// below the cap. Returns the first estimate.
pub fn project_to_cap(w: &mut Tensor, u: &mut Vec<f64>, cap: f64) -> f64 {
    let first = power_iteration(w, u);
    let mut sigma = first;
    for _ in 0..10 {
        // Dead band keeps repeated projections from nibbling at weights.
        if sigma <= cap + 1e-12 {
            break;
        }
        w.scale_assign(cap / sigma);
        sigma = power_iteration(w, u);
    }
    first
}

/// Tape bindings for one network: parameter leaves registered once so all
/// uses in a batch (primal and tangent channels) share gradients.
pub struct TapeNet {
    ids: Vec<[ValueId; 4]>,
}

impl TapeNet {
    pub fn bind(tape: &mut Tape, net: &IResNet) -> TapeNet {
        let ids = net
            .blocks
            .iter()
            .map(|b| {
                [
                    tape.param(b.w1.clone()),
                    tape.param(b.b1.clone()),
                    tape.param(b.w2.clone()),
                    tape.param(b.b2.clone()),
                ]
            })
            .collect();
        TapeNet { ids }
    }

    /// Records the forward pass with its tangent channel. This tangent is
    /// the Lie-derivative path: seeding it with `f(x)` yields `∂H/∂x·f(x)`.
    pub fn forward_dual(&self, tape: &mut Tape, x: DualValue) -> Result<DualValue> {
        let mut cur = x;
        for [w1, b1, w2, b2] in &self.ids {
            let z = tape.dual_linear(*w1, *b1, cur)?;
            let r = tape.dual_relu(z)?;
            let gp = tape.matmul_bt(r.primal, *w2)?;
            let gp = tape.add_row(gp, *b2)?;
            let gt = tape.matmul_bt(r.tangent, *w2)?;
            cur = DualValue {
                primal: tape.add(cur.primal, gp)?,
                tangent: tape.add(cur.tangent, gt)?,
            };
        }
        Ok(cur)
    }

    /// Parameter leaf ids in the same order as `IResNet::params()`.
    pub fn param_ids(&self) -> Vec<ValueId> {
        self.ids.iter().flatten().copied().collect()
    }
}

// ── json field extraction with path-bearing errors ──────────────────

fn json_i64(v: &serde_json::Value, key: &str) -> Result<i64> {
    v.get(key).and_then(|x| x.as_i64()).ok_or_else(|| Error::Parse {
        path: key.into(),
        message: "missing or not an integer".into(),
    })
}

fn json_f64(v: &serde_json::Value, key: &str) -> Result<f64> {
    v.get(key).and_then(|x| x.as_f64()).ok_or_else(|| Error::Parse {
        path: key.into(),
        message: "missing or not a number".into(),
    })
}

fn json_matrix(bv: &serde_json::Value, path: &str, rows: usize, cols: usize) -> Result<Tensor> {
    json_matrix_key(bv, "W1", path, rows, cols)
}

fn json_matrix_key(
    bv: &serde_json::Value,
    key: &str,
    path: &str,
    rows: usize,
    cols: usize,
) -> Result<Tensor> {
    let arr = bv.get(key).and_then(|x| x.as_array()).ok_or_else(|| Error::Parse {
        path: path.into(),
        message: "missing or not an array".into(),
    })?;
    if arr.len() != rows {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("expected {rows} rows, got {}", arr.len()),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, row) in arr.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| Error::Parse {
            path: format!("{path}[{i}]"),
            message: "row is not an array".into(),
        })?;
        if row.len() != cols {
            return Err(Error::Parse {
                path: format!("{path}[{i}]"),
                message: format!("expected {cols} columns, got {}", row.len()),
            });
        }
        for (j, x) in row.iter().enumerate() {
            data.push(x.as_f64().ok_or_else(|| Error::Parse {
                path: format!("{path}[{i}][{j}]"),
                message: "not a number".into(),
            })?);
        }
    }
    Ok(Tensor::matrix(rows, cols, data))
}

fn json_vector(bv: &serde_json::Value, key: &str, path: &str, len: usize) -> Result<Tensor> {
    let arr = bv.get(key).and_then(|x| x.as_array()).ok_or_else(|| Error::Parse {
        path: path.into(),
        message: "missing or not an array".into(),
    })?;
    if arr.len() != len {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("expected length {len}, got {}", arr.len()),
        });
    }
    let mut data = Vec::with_capacity(len);
    for (i, x) in arr.iter().enumerate() {
        data.push(x.as_f64().ok_or_else(|| Error::Parse {
            path: format!("{path}[{i}]"),
            message: "not a number".into(),
        })?);
    }
    Ok(Tensor::vector(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D block with `g(x) = 0.5·x` for `x ≥ 0`, built under the cap:
    /// `w1 = (0.7, 0.7)ᵀ`, `w2 = (5/14, 5/14)`.
    fn half_slope_block() -> IResNet {
        let w2v = 0.5 / 1.4;
        IResNet::from_blocks(
            1,
            0.99,
            vec![ResidualBlock {
                w1: Tensor::matrix(2, 1, vec![0.7, 0.7]),
                b1: Tensor::zeros(vec![2]),
                w2: Tensor::matrix(1, 2, vec![w2v, w2v]),
                b2: Tensor::zeros(vec![1]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_at_init() {
        let net = IResNet::init(3, 10, 0.99, 42).unwrap();
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn init_is_deterministic() {
        let a = IResNet::init(4, 3, 0.99, 7).unwrap();
        let b = IResNet::init(4, 3, 0.99, 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn init_rejects_bad_hyperparameters() {
        assert!(IResNet::init(0, 10, 0.99, 0).is_err());
        assert!(IResNet::init(2, 0, 0.99, 0).is_err());
        assert!(IResNet::init(2, 10, 1.0, 0).is_err());
        assert!(IResNet::init(2, 10, 0.0, 0).is_err());
    }

    #[test]
    fn half_slope_forward_and_inverse() {
        let net = half_slope_block();
        let y = net.forward_point(&[1.0]).unwrap();
        assert!((y[0] - 1.5).abs() < 1e-12);
        let x = net
            .inverse(&Tensor::matrix(1, 1, vec![1.5]), 1e-12, 100)
            .unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_net_inverts_in_one_iteration() {
        let net = IResNet::init(2, 5, 0.99, 11).unwrap();
        let y = Tensor::matrix(1, 2, vec![0.4, -0.8]);
        let x = net.inverse(&y, 1e-10, 1).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn forward_equals_manual_block_composition() {
        let mut net = IResNet::init(2, 4, 0.99, 5).unwrap();
        // Give the branches nonzero weights, then re-project.
        for b in net.blocks.iter_mut() {
            for v in b.w2.data_mut().iter_mut() {
                *v = 0.3;
            }
            b.b2 = Tensor::vector(vec![0.05, -0.02]);
        }
        net.project_spectral_norms();
        let x = Tensor::matrix(1, 2, vec![0.7, -0.4]);
        let direct = net.forward(&x).unwrap();
        let mut manual = x;
        for b in net.blocks() {
            let one = IResNet::from_blocks(2, 0.99, vec![b.clone()]).unwrap();
            manual = one.forward(&manual).unwrap();
        }
        assert_eq!(direct.data(), manual.data());
    }

    #[test]
    fn projection_scales_diagonal_matrix() {
        let mut w = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]);
        let mut u = vec![1.0, 1.0];
        let sigma = project_to_cap(&mut w, &mut u, 0.99);
        assert!((sigma - 2.0).abs() < 1e-5);
        assert!((w.at(0, 0) - 0.99).abs() < 1e-5);
        assert!((w.at(1, 1) - 0.495).abs() < 1e-5);
    }

    #[test]
    fn projection_leaves_small_matrices_alone() {
        let mut w = Tensor::matrix(2, 2, vec![0.5, 0.0, 0.0, 0.1]);
        let orig = w.clone();
        let mut u = vec![1.0, 0.5];
        project_to_cap(&mut w, &mut u, 0.99);
        assert_eq!(w, orig);
        // Zero matrix: σ = 0, untouched.
        let mut z = Tensor::zeros(vec![3, 2]);
        let mut uz = vec![1.0; 3];
        assert_eq!(project_to_cap(&mut z, &mut uz, 0.99), 0.0);
        assert_eq!(z, Tensor::zeros(vec![3, 2]));
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut w = crate::linalg::gaussian_matrix(&mut rng, 5, 5, 1.0);
        let mut u = random_unit(&mut rng, 5);
        project_to_cap(&mut w, &mut u, 0.99);
        let after_once = w.clone();
        let sigma = project_to_cap(&mut w, &mut u, 0.99);
        assert!(sigma <= 0.99 + 1e-6);
        let diff = w.sub(&after_once).unwrap().norm_inf();
        assert!(diff < 1e-6, "second projection moved weights by {diff}");
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut net = IResNet::init(3, 4, 0.99, 23).unwrap();
        for b in net.blocks.iter_mut() {
            for v in b.w2.data_mut().iter_mut() {
                *v = 0.1234567890123456789;
            }
        }
        net.project_spectral_norms();
        let json = net.to_checkpoint_json();
        let text = serde_json::to_string(&json).unwrap();
        let back = IResNet::from_checkpoint_json(&serde_json::from_str(&text).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let x = crate::linalg::gaussian_matrix(&mut rng, 1, 3, 1.0);
            let a = net.forward(&x).unwrap();
            let b = back.forward(&x).unwrap();
            assert_eq!(a.data(), b.data(), "round-trip must reproduce forward bitwise");
        }
    }

    #[test]
    fn checkpoint_missing_block_field_names_index() {
        let net = IResNet::init(2, 2, 0.99, 1).unwrap();
        let mut json = net.to_checkpoint_json();
        json["blocks"][1].as_object_mut().unwrap().remove("W2");
        let err = IResNet::from_checkpoint_json(&json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("blocks[1].W2"), "unexpected error: {msg}");
    }

    #[test]
    fn checkpoint_version_mismatch_is_explicit() {
        let net = IResNet::init(2, 2, 0.99, 1).unwrap();
        let mut json = net.to_checkpoint_json();
        json["format_version"] = serde_json::json!(2);
        let err = IResNet::from_checkpoint_json(&json).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, .. }));
    }

    #[test]
    fn tangent_matches_finite_difference_through_deep_net() {
        let mut net = IResNet::init(4, 10, 0.99, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for b in net.blocks.iter_mut() {
            b.w2 = crate::linalg::gaussian_matrix(&mut rng, 4, 8, 0.2);
            b.b1 = Tensor::vector(crate::linalg::gaussian_vector(&mut rng, 8, 0.1));
        }
        net.project_spectral_norms();
        let x = Tensor::matrix(1, 4, crate::linalg::gaussian_vector(&mut rng, 4, 1.0));
        let v = Tensor::matrix(1, 4, crate::linalg::gaussian_vector(&mut rng, 4, 1.0));
        let (_, tan) = net.forward_with_tangent(&x, &v).unwrap();
        let eps = 1e-5;
        let xp = x.add(&v.scale(eps)).unwrap();
        let xm = x.sub(&v.scale(eps)).unwrap();
        let fd = net
            .forward(&xp)
            .unwrap()
            .sub(&net.forward(&xm).unwrap())
            .unwrap()
            .scale(1.0 / (2.0 * eps));
        let denom = tan.norm2().max(1e-12);
        let rel = tan.sub(&fd).unwrap().norm2() / denom;
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn single_pass_jacobian_matches_per_column_tangents() {
        let mut net = IResNet::init(3, 6, 0.99, 55).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for b in net.blocks.iter_mut() {
            b.w2 = crate::linalg::gaussian_matrix(&mut rng, 3, 6, 0.3);
            b.b1 = Tensor::vector(crate::linalg::gaussian_vector(&mut rng, 6, 0.2));
        }
        net.project_spectral_norms();
        let x = crate::linalg::gaussian_vector(&mut rng, 3, 1.0);
        let (y, jt) = net.forward_with_jacobian_t(&x).unwrap();
        assert_eq!(y, net.forward_point(&x).unwrap());
        let xb = Tensor::matrix(1, 3, x.clone());
        for j in 0..3 {
            let mut e = Tensor::zeros(vec![1, 3]);
            e.row_mut(0)[j] = 1.0;
            let (_, col) = net.forward_with_tangent(&xb, &e).unwrap();
            for i in 0..3 {
                assert!((jt.at(j, i) - col.data()[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tape_forward_matches_numeric_forward() {
        let mut net = IResNet::init(3, 6, 0.99, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for b in net.blocks.iter_mut() {
            b.w2 = crate::linalg::gaussian_matrix(&mut rng, 3, 6, 0.2);
        }
        net.project_spectral_norms();
        let x = crate::linalg::gaussian_matrix(&mut rng, 5, 3, 1.0);
        let v = crate::linalg::gaussian_matrix(&mut rng, 5, 3, 1.0);
        let (py, pt) = net.forward_with_tangent(&x, &v).unwrap();
        let mut tape = Tape::new();
        let bound = TapeNet::bind(&mut tape, &net);
        let dual = tape.dual_constant(x, v);
        let out = bound.forward_dual(&mut tape, dual).unwrap();
        assert_eq!(tape.value(out.primal).data(), py.data());
        assert_eq!(tape.value(out.tangent).data(), pt.data());
    }
}
