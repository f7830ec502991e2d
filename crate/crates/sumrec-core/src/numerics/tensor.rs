use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 64-bit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector construction".into(),
            });
        }
        Ok(Vector { data })
    }

    /// Construction without the finiteness scan, for values produced internally.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(n: usize) -> Self {
        Vector { data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape("dot", self.len(), other.len()));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Vector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape("axpy", self.len(), other.len()));
        }
        axpy(&mut self.data, c, &other.data);
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector::from_raw(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// [a_0..a_n, b_0..b_m]
    pub fn concat(a: &Vector, b: &Vector) -> Vector {
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Vector { data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major 64-bit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix construction", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix construction".into(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = self * x
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        let mut y = vec![0.0; self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            *out = dot(self.row(r), x.as_slice());
        }
        Ok(Vector::from_raw(y))
    }

    /// out += self^T * y  (accumulates, used when backpropagating through matvec)
    pub fn matvec_t_acc(&self, y: &Vector, out: &mut Vector) -> Result<()> {
        if y.len() != self.rows {
            return Err(Error::shape("matvec_t", self.rows, y.len()));
        }
        if out.len() != self.cols {
            return Err(Error::shape("matvec_t out", self.cols, out.len()));
        }
        for r in 0..self.rows {
            axpy(out.as_mut_slice(), y[r], self.row(r));
        }
        Ok(())
    }

    /// self += u ⊗ v  (rank-one update; u indexes rows, v indexes columns)
    pub fn outer_acc(&mut self, u: &Vector, v: &Vector) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::shape(
                "outer_acc",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", u.len(), v.len()),
            ));
        }
        let cols = self.cols;
        for r in 0..self.rows {
            axpy(&mut self.data[r * cols..(r + 1) * cols], u[r], v.as_slice());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(out: &mut [f64], c: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += c * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn matvec_identity() {
        let m = Matrix::identity(3);
        let x = Vector::new(vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(m.matvec(&x).unwrap().as_slice(), x.as_slice());
    }

    #[test]
    fn matvec_shape_checked() {
        let m = Matrix::zeros(2, 3);
        let x = Vector::zeros(2);
        assert!(m.matvec(&x).is_err());
    }

    #[test]
    fn outer_and_transpose_consistency() {
        // d(Wx)/dW contracted both ways: y = Wx, dW = dy ⊗ x, dx = W^T dy
        let w = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Vector::new(vec![1.0, 0.0, -1.0]).unwrap();
        let y = w.matvec(&x).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, -2.0]);

        let dy = Vector::new(vec![1.0, 1.0]).unwrap();
        let mut dx = Vector::zeros(3);
        w.matvec_t_acc(&dy, &mut dx).unwrap();
        assert_eq!(dx.as_slice(), &[5.0, 7.0, 9.0]);

        let mut dw = Matrix::zeros(2, 3);
        dw.outer_acc(&dy, &x).unwrap();
        assert_eq!(dw.row(0), &[1.0, 0.0, -1.0]);
        assert_eq!(dw.row(1), &[1.0, 0.0, -1.0]);
    }
}
