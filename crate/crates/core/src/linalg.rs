//! Dense row-major matrix and the few vector kernels the engines need.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Aᵀ y, accumulated row by row to stay cache friendly.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// In place A ← (I − u uᵀ) A (I − v vᵀ) for unit vectors u, v.
    pub fn project_rank_one(&mut self, u: &[f64], v: &[f64]) {
        // left: A ← A − u (uᵀA)
        let ut_a = self.matvec_t(u);
        for i in 0..self.rows {
            let ui = u[i];
            if ui != 0.0 {
                let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
                axpy(-ui, &ut_a, row);
            }
        }
        // right: A ← A − (A v) vᵀ
        let av = self.matvec(v);
        for i in 0..self.rows {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            axpy(-av[i], v, row);
        }
    }

    /// Largest singular value by power iteration on AᵀA.
    pub fn spectral_norm(&self, iters: usize) -> f64 {
        let mut v = vec![1.0 / (self.cols as f64).sqrt(); self.cols];
        let mut sigma = 0.0;
        for _ in 0..iters {
            let w = self.matvec_t(&self.matvec(&v));
            let nw = norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            sigma = nw.sqrt();
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
        }
        sigma
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y ← y + a x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// x − Σ_k ⟨x, q_k⟩ q_k applied twice (classical Gram–Schmidt with one
/// reorthogonalization pass), for orthonormal `basis`.
pub fn project_out(x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut y = x.to_vec();
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, &y)).collect();
        for (c, q) in coeffs.iter().zip(basis) {
            axpy(-c, q, &mut y);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Matrix {
        Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()
    }

    #[test]
    fn products() {
        let a = small();
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert_eq!(a.transpose().get(2, 1), 6.0);
        assert_eq!(a.column(1), vec![2.0, 5.0]);
        assert!(Matrix::from_row_major(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), 91.0);
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Matrix::from_row_major(3, 2, vec![3.0, 0.0, 0.0, -5.0, 0.0, 0.0]).unwrap();
        assert!((a.spectral_norm(200) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn rank_one_projection_annihilates() {
        let mut a = Matrix::from_row_major(
            3,
            3,
            vec![1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.7, 0.1, -0.4],
        )
        .unwrap();
        let s = 1.0 / 3f64.sqrt();
        let u = vec![s, s, s];
        let v = vec![1.0, 0.0, 0.0];
        a.project_rank_one(&u, &v);
        assert!(norm(&a.matvec_t(&u)) < 1e-15);
        assert!(norm(&a.matvec(&v)) < 1e-15);
    }

    #[test]
    fn project_out_is_orthogonal() {
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]];
        let y = project_out(&[1.0, 2.0, 3.0], &basis);
        for q in &basis {
            assert!(dot(q, &y).abs() < 1e-15);
        }
    }
}
