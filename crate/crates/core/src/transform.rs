//! Coordinate transformations that can align two systems: learned
//! networks and exact linear maps share one interface so closed-form
//! ground truth can stand in for a trained network.

use crate::error::{Error, Result};
use crate::iresnet::IResNet;
use crate::linalg;
use crate::tensor::Tensor;

pub trait Transform: std::fmt::Debug {
    fn dim(&self) -> usize;
    /// `H(x)` on a `[S, n]` batch.
    fn forward_batch(&self, x: &Tensor) -> Result<Tensor>;
    /// `(H(x), ∂H/∂x·v)` per row.
    fn forward_with_tangent(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)>;
    fn inverse_batch(&self, y: &Tensor, tol: f64, max_iter: usize) -> Result<Tensor>;
}

impl Transform for IResNet {
    fn dim(&self) -> usize {
        IResNet::dim(self)
    }

    fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn forward_with_tangent(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        IResNet::forward_with_tangent(self, x, v)
    }

    fn inverse_batch(&self, y: &Tensor, tol: f64, max_iter: usize) -> Result<Tensor> {
        self.inverse(y, tol, max_iter)
    }
}

/// Exact affine map `H(x) = Ax + b`; the oracle transformation for
/// pairs conjugate under a known matrix.
#[derive(Debug, Clone)]
pub struct LinearMap {
    a: Tensor,
    a_inv: Tensor,
    bias: Option<Vec<f64>>,
}

impl LinearMap {
    pub fn new(a: Tensor, bias: Option<Vec<f64>>) -> Result<LinearMap> {
        if a.rank() != 2 || a.rows() != a.cols() {
            return Err(Error::InvalidArgument("linear map matrix must be square".into()));
        }
        let lu = linalg::Lu::factor(&a)?;
        if lu.det().abs() <= 1e-12 {
            return Err(Error::Singular("linear map is not invertible".into()));
        }
        let a_inv = lu.inverse()?;
        Ok(LinearMap { a, a_inv, bias })
    }

    pub fn identity(n: usize) -> LinearMap {
        LinearMap { a: Tensor::identity(n), a_inv: Tensor::identity(n), bias: None }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    /// The inverse map as its own `LinearMap`.
    pub fn inverse_map(&self) -> LinearMap {
        let bias = self.bias.as_ref().map(|b| {
            self.a_inv
                .matvec(b)
                .expect("shape checked at construction")
                .into_iter()
                .map(|v| -v)
                .collect()
        });
        LinearMap { a: self.a_inv.clone(), a_inv: self.a.clone(), bias }
    }
}

impl Transform for LinearMap {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul_bt(&self.a)?;
        match &self.bias {
            Some(b) => y.add_row(&Tensor::vector(b.clone())),
            None => Ok(y),
        }
    }

    fn forward_with_tangent(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.forward_batch(x)?, v.matmul_bt(&self.a)?))
    }

    fn inverse_batch(&self, y: &Tensor, _tol: f64, _max_iter: usize) -> Result<Tensor> {
        let centered = match &self.bias {
            Some(b) => y.add_row(&Tensor::vector(b.iter().map(|v| -v).collect()))?,
            None => y.clone(),
        };
        centered.matmul_bt(&self.a_inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_round_trips() {
        let a = Tensor::matrix(2, 2, vec![2.0, 1.0, 0.0, 1.0]);
        let m = LinearMap::new(a, Some(vec![0.5, -0.5])).unwrap();
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, -0.5, 0.25, 3.0, -1.0]);
        let y = m.forward_batch(&x).unwrap();
        let back = m.inverse_batch(&y, 0.0, 0).unwrap();
        assert!(back.sub(&x).unwrap().norm_inf() < 1e-12);
        let inv = m.inverse_map();
        let back2 = inv.forward_batch(&y).unwrap();
        assert!(back2.sub(&x).unwrap().norm_inf() < 1e-12);
    }

    #[test]
    fn linear_map_rejects_singular_matrices() {
        let a = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!(LinearMap::new(a, None).is_err());
    }

    #[test]
    fn tangent_of_linear_map_is_the_matrix_action() {
        let a = Tensor::matrix(2, 2, vec![0.0, -1.0, 1.0, 0.0]);
        let m = LinearMap::new(a, None).unwrap();
        let x = Tensor::matrix(1, 2, vec![5.0, 5.0]);
        let v = Tensor::matrix(1, 2, vec![1.0, 2.0]);
        let (_, t) = m.forward_with_tangent(&x, &v).unwrap();
        assert_eq!(t.data(), &[-2.0, 1.0]);
    }
}
