//! Small dense matrices (d ≤ 16 expected). Row-major, grown for the Jacobian
//! flows, Gram matrices and Malliavin accumulators — not a general library.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.a
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// uᵀ M u for a row vector u (M square).
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        let mv = self.matvec(u);
        u.iter().zip(&mv).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().zip(&other.a).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().zip(&other.a).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.a.iter_mut().zip(&other.a) {
            *a += b * s;
        }
    }

    /// v vᵀ (column times row).
    pub fn outer(v: &[f64]) -> Mat {
        Mat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j])
    }

    /// M Mᵀ.
    pub fn gram_of(&self) -> Mat {
        self.matmul(&self.transpose())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Mat> {
        assert!(self.is_square(), "inverse of non-square matrix");
        let n = self.rows;
        let mut work = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut pivot = col;
            let mut best = work[(col, col)].abs();
            for r in col + 1..n {
                let v = work[(r, col)].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularMatrix(format!(
                    "pivot {col} vanished during inversion"
                )));
            }
            if pivot != col {
                for j in 0..n {
                    work.a.swap(col * n + j, pivot * n + j);
                    inv.a.swap(col * n + j, pivot * n + j);
                }
            }
            let p = work[(col, col)];
            for j in 0..n {
                work[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = work[(r, col)];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    work[(r, j)] -= factor * work[(col, j)];
                    inv[(r, j)] -= factor * inv[(col, j)];
                }
            }
        }
        Ok(inv)
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut lu = self.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut pivot = col;
            let mut best = lu[(col, col)].abs();
            for r in col + 1..n {
                let v = lu[(r, col)].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    lu.a.swap(col * n + j, pivot * n + j);
                }
                det = -det;
            }
            let p = lu[(col, col)];
            det *= p;
            for r in col + 1..n {
                let factor = lu[(r, col)] / p;
                for j in col..n {
                    lu[(r, j)] -= factor * lu[(col, j)];
                }
            }
        }
        det
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
    /// off-diagonal tolerance 1e-12 relative to the Frobenius norm.
    /// Returned ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square());
        let n = self.rows;
        if n == 1 {
            return vec![self[(0, 0)]];
        }
        let mut m = self.clone();
        // symmetrize against accumulation noise
        for i in 0..n {
            for j in i + 1..n {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        let scale = m.frobenius().max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    off = off.max(m[(i, j)].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= tol * 1e-3 {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = m[(k, p)];
                        let akq = m[(k, q)];
                        m[(k, p)] = c * akp - s * akq;
                        m[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = m[(p, k)];
                        let aqk = m[(q, k)];
                        m[(p, k)] = c * apk - s * aqk;
                        m[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        eig
    }

    pub fn min_sym_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues()[0]
    }

    /// Positive semidefinite up to `slack` on the smallest eigenvalue.
    pub fn is_psd(&self, slack: f64) -> bool {
        self.min_sym_eigenvalue() >= -slack
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * self.cols + j]
    }
}
