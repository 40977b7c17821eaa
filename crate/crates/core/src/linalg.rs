//! Small dense square matrices, a thin wrapper over `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Panics if the rows are not all of length `rows.len()`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.row(i)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        Self(&self.0 * &other.0)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        Self(&self.0 - &other.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// `None` if singular.
    pub fn inverse(&self) -> Option<Matrix> {
        self.0.clone().try_inverse().map(Self)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, ij: (usize, usize)) -> &mut f64 {
        &mut self.0[ij]
    }
}

/// Solves `a x = b` for a `k × k` system stored row-major in `a`, leaving
/// `x` in `b`. Returns `false` if the system is numerically singular.
pub fn solve_in_place(a: &[f64], b: &mut [f64], k: usize) -> bool {
    let lu = DMatrix::from_row_slice(k, k, a).lu();
    let mut rhs = DVector::from_column_slice(b);
    if !lu.solve_mut(&mut rhs) {
        return false;
    }
    b.copy_from_slice(rhs.as_slice());
    true
}
