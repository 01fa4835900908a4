//! Dense rank-1/rank-2 double-precision arrays, row-major.
//!
//! Batches follow the rows-as-samples convention: a batch of S points in
//! n dimensions is stored as shape `[S, n]`, so each sample occupies a
//! contiguous row.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(
            shape.len() == 1 || shape.len() == 2,
            "only rank-1/rank-2 tensors are supported, got rank {}",
            shape.len()
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        assert!(r > 0, "from_rows requires at least one row");
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor::matrix(r, c, data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        assert_eq!(self.rank(), 2);
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "div")?;
        Ok(self.zip(other, |a, b| a / b))
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in self.data.iter_mut() {
            *a *= k;
        }
    }

    /// `A · B` for rank-2 operands, `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 || self.rank() != 2 || other.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: format!("[{m}, {k}] x [{k}, ?]"),
                got: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor::matrix(m, n, out))
    }

    /// `A · Bᵀ`, `[m, k] x [n, k] -> [m, n]`. Inner loops run over contiguous rows.
    pub fn matmul_bt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 || self.rank() != 2 || other.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context: "matmul_bt",
                expected: format!("[{m}, {k}] x [?, {k}]"),
                got: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(Tensor::matrix(m, n, out))
    }

    /// `Aᵀ · B`, `[k, m] x [k, n] -> [m, n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 || self.rank() != 2 || other.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context: "matmul_tn",
                expected: format!("[{k}, {m}] x [{k}, ?]"),
                got: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor::matrix(m, n, out))
    }

    /// Matrix-vector product `A · x`, `[m, n] x [n] -> [m]`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = (self.rows(), self.cols());
        if self.rank() != 2 || x.len() != n {
            return Err(Error::ShapeMismatch {
                context: "matvec",
                expected: format!("[{m}, {n}] x [{n}]"),
                got: format!("{:?} x [{}]", self.shape, x.len()),
            });
        }
        Ok((0..m)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// Euclidean norm over all entries.
    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Per-row Euclidean norms of a `[S, n]` batch, returned as `[S]`.
    pub fn row_norms(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let vals = (0..self.rows())
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Tensor::vector(vals)
    }

    /// Per-row dot products of two same-shape `[S, n]` batches, returned as `[S]`.
    pub fn row_dots(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "row_dots")?;
        assert_eq!(self.rank(), 2);
        let vals = (0..self.rows())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(other.row(i))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        Ok(Tensor::vector(vals))
    }

    /// Divides each row of a `[S, n]` batch by the matching entry of `s: [S]`.
    pub fn div_rows(&self, s: &Tensor) -> Result<Tensor> {
        assert_eq!(self.rank(), 2);
        if s.rank() != 1 || s.len() != self.rows() {
            return Err(Error::ShapeMismatch {
                context: "div_rows",
                expected: format!("[{}]", self.rows()),
                got: format!("{:?}", s.shape),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows() {
            let d = s.data[i];
            for v in out.row_mut(i) {
                *v /= d;
            }
        }
        Ok(out)
    }

    /// Broadcast-adds a rank-1 row vector `b: [n]` to every row of `[S, n]`.
    pub fn add_row(&self, b: &Tensor) -> Result<Tensor> {
        assert_eq!(self.rank(), 2);
        if b.rank() != 1 || b.len() != self.cols() {
            return Err(Error::ShapeMismatch {
                context: "add_row",
                expected: format!("[{}]", self.cols()),
                got: format!("{:?}", b.shape),
            });
        }
        let mut out = self.clone();
        for i in 0..out.rows() {
            for (v, bv) in out.row_mut(i).iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
        Ok(out)
    }

    /// Sums each column of `[S, n]` into `[n]`.
    pub fn col_sums(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let mut out = vec![0.0; self.cols()];
        for i in 0..self.rows() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Tensor::vector(out)
    }

    /// Keeps the listed rows of a `[S, n]` batch, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        assert_eq!(self.rank(), 2);
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), c, data)
    }

    /// Ordered sum of all entries: row-wise partial sums, then across rows.
    pub fn sum_ordered(&self) -> f64 {
        match self.rank() {
            1 => self.data.iter().sum(),
            _ => (0..self.rows())
                .map(|i| self.row(i).iter().sum::<f64>())
                .sum(),
        }
    }
}
