//! Small dense linear-algebra kernels: LU solves, QR, symmetric Jacobi
//! eigendecomposition. Sized for the moderate dimensions used here.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Tensor,
    piv: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &Tensor) -> Result<Lu> {
        let n = a.rows();
        if a.rank() != 2 || a.cols() != n {
            return Err(Error::InvalidArgument("LU requires a square matrix".into()));
        }
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut max = lu.at(k, k).abs();
            for i in k + 1..n {
                let v = lu.at(i, k).abs();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    let t = lu.at(k, j);
                    lu.set(k, j, lu.at(p, j));
                    lu.set(p, j, t);
                }
                piv.swap(k, p);
                sign = -sign;
            }
            let pivot = lu.at(k, k);
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let m = lu.at(i, k) / pivot;
                lu.set(i, k, m);
                for j in k + 1..n {
                    let v = lu.at(i, j) - m * lu.at(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Lu { lu, piv, sign })
    }

    pub fn det(&self) -> f64 {
        let n = self.lu.rows();
        (0..n).fold(self.sign, |acc, i| acc * self.lu.at(i, i))
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(Error::InvalidArgument("solve: rhs length mismatch".into()));
        }
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu.at(i, j) * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu.at(i, j) * x[j];
            }
            let d = self.lu.at(i, i);
            if d == 0.0 {
                return Err(Error::Singular("LU solve hit a zero pivot".into()));
            }
            x[i] /= d;
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Tensor> {
        let n = self.lu.rows();
        let mut inv = Tensor::zeros(vec![n, n]);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        Ok(inv)
    }
}

pub fn det(a: &Tensor) -> Result<f64> {
    Ok(Lu::factor(a)?.det())
}

pub fn inverse(a: &Tensor) -> Result<Tensor> {
    Lu::factor(a)?.inverse()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching orthonormal column vectors.
pub fn sym_eig(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = a.rows();
    if a.rank() != 2 || a.cols() != n {
        return Err(Error::InvalidArgument("sym_eig requires a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Tensor::identity(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.at(i, j) * m.at(i, j);
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.norm2()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (m.at(i, i), i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let eigvals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vecs = Tensor::zeros(vec![n, n]);
    for (new_j, &(_, old_j)) in pairs.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, new_j, v.at(i, old_j));
        }
    }
    Ok((eigvals, vecs))
}

/// Thin QR via modified Gram-Schmidt. Returns Q with orthonormal columns.
pub fn qr_q(a: &Tensor) -> Result<Tensor> {
    let (m, n) = (a.rows(), a.cols());
    if a.rank() != 2 || m < n {
        return Err(Error::InvalidArgument("qr_q expects a tall or square matrix".into()));
    }
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.at(i, j)).collect())
        .collect();
    for j in 0..n {
        for k in 0..j {
            let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let qk = cols[k].clone();
            for (v, q) in cols[j].iter_mut().zip(&qk) {
                *v -= proj * q;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Singular("rank-deficient matrix in QR".into()));
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut q = Tensor::zeros(vec![m, n]);
    for j in 0..n {
        for i in 0..m {
            q.set(i, j, cols[j][i]);
        }
    }
    Ok(q)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect();
    Tensor::matrix(rows, cols, data)
}

pub fn gaussian_vector(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect()
}

/// Random orthogonal matrix from the QR of a Gaussian draw, with the sign
/// convention that makes the factorization unique.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Tensor {
    loop {
        let g = gaussian_matrix(rng, n, n, 1.0);
        if let Ok(q) = qr_q(&g) {
            return q;
        }
    }
}

/// Random orthogonal matrix with determinant +1.
pub fn random_rotation(rng: &mut impl Rng, n: usize) -> Tensor {
    let mut q = random_orthogonal(rng, n);
    if det(&q).map(|d| d < 0.0).unwrap_or(false) {
        for i in 0..n {
            let v = -q.at(i, 0);
            q.set(i, 0, v);
        }
    }
    q
}

/// Random invertible matrix with singular values in `[lo, hi]`:
/// `Q1 · diag(s) · Q2` for independent random orthogonal factors.
pub fn random_well_conditioned(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    let q1 = random_orthogonal(rng, n);
    let q2 = random_orthogonal(rng, n);
    let mut d = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        d.set(i, i, lo + (hi - lo) * rng.gen::<f64>());
    }
    q1.matmul(&d).unwrap().matmul(&q2).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_solves_and_dets() {
        let a = Tensor::matrix(2, 2, vec![2., 1., 1., 3.]);
        let lu = Lu::factor(&a).unwrap();
        assert!((lu.det() - 5.0).abs() < 1e-12);
        let x = lu.solve(&[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
        let inv = lu.inverse().unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.sub(&Tensor::identity(2)).unwrap().norm_inf() < 1e-12);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // A = V diag(5, 2, -1) Vᵀ for a fixed rotation V.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_orthogonal(&mut rng, 3);
        let mut d = Tensor::zeros(vec![3, 3]);
        for (i, &l) in [5.0, 2.0, -1.0].iter().enumerate() {
            d.set(i, i, l);
        }
        let a = v.matmul(&d).unwrap().matmul(&v.transpose()).unwrap();
        let (vals, vecs) = sym_eig(&a).unwrap();
        assert!((vals[0] - 5.0).abs() < 1e-10);
        assert!((vals[1] - 2.0).abs() < 1e-10);
        assert!((vals[2] + 1.0).abs() < 1e-10);
        // Reconstruction A = W diag(vals) Wᵀ.
        let mut dd = Tensor::zeros(vec![3, 3]);
        for (i, &l) in vals.iter().enumerate() {
            dd.set(i, i, l);
        }
        let rec = vecs.matmul(&dd).unwrap().matmul(&vecs.transpose()).unwrap();
        assert!(rec.sub(&a).unwrap().norm_inf() < 1e-10);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(&mut rng, 5);
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.sub(&Tensor::identity(5)).unwrap().norm_inf() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Tensor::matrix(2, 2, vec![1., 2., 2., 4.]);
        let lu = Lu::factor(&a).unwrap();
        assert!(lu.det().abs() < 1e-12);
        assert!(lu.solve(&[1.0, 1.0]).is_err());
    }
}
