//! Small dense linear algebra.
//!
//! Everything here works on row-major `f64` matrices of desk-scale size
//! (d ≤ 64): the strain/vorticity split of a Jacobian, Frobenius norms, a
//! cyclic Jacobi eigensolver for symmetric matrices, the logarithmic norm,
//! symmetric square roots and a matrix exponential.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Maximum number of cyclic Jacobi sweeps before giving up on convergence.
const MAX_JACOBI_SWEEPS: usize = 100;

/// Symmetry tolerance (per entry, relative to `max(1, max|a_ij|)`).
const SYMMETRY_TOL: f64 = 1e-12;

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// `Q diag(values) Qᵀ` with `Q` given column-wise.
    ///
    /// Entry `(i, j)` is accumulated as `values[k] * (q_ik * q_jk)` so the
    /// result is symmetric bit for bit.
    pub fn from_eigen(vectors: &Mat, values: &[f64]) -> Self {
        let n = vectors.rows;
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, &lambda) in values.iter().enumerate() {
                    acc += lambda * (vectors[(i, k)] * vectors[(j, k)]);
                }
                m[(i, j)] = acc;
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

    /// Side length of a square matrix.
    pub fn dim(&self) -> usize {
        self.rows
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    fn max_asymmetry(&self) -> f64 {
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(A + Aᵀ)/2`, exactly symmetric.
    fn symmetrized(&self) -> Mat {
        let n = self.rows;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = self[(i, i)];
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Strain (symmetric) and vorticity (antisymmetric) parts of a Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianSplit {
    pub strain: Mat,
    pub vorticity: Mat,
}

impl JacobianSplit {
    pub fn strain_sq(&self) -> f64 {
        frobenius_sq(&self.strain)
    }

    pub fn vorticity_sq(&self) -> f64 {
        frobenius_sq(&self.vorticity)
    }
}

/// Splits `A` into `S = (A + Aᵀ)/2` and `Ω = (A − Aᵀ)/2`.
///
/// Both parts are assembled from the same half-sums so that `S = Sᵀ` and
/// `Ω = −Ωᵀ` hold exactly.
pub fn split_jacobian(a: &Mat) -> Result<JacobianSplit> {
    a.require_square()?;
    let n = a.dim();
    let mut strain = Mat::zeros(n, n);
    let mut vorticity = Mat::zeros(n, n);
    for i in 0..n {
        strain[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            let w = 0.5 * (a[(i, j)] - a[(j, i)]);
            strain[(i, j)] = s;
            strain[(j, i)] = s;
            vorticity[(i, j)] = w;
            vorticity[(j, i)] = -w;
        }
    }
    Ok(JacobianSplit { strain, vorticity })
}

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

/// Eigen-decomposition of a symmetric matrix; `vectors` holds eigenvectors
/// column-wise, `values` is sorted in descending order.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl SymmetricEigen {
    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }
}

/// Cyclic Jacobi eigensolver.
///
/// The input is symmetrized first; asymmetry beyond the tolerance is a
/// contract violation.
pub fn symmetric_eigen(s: &Mat) -> Result<SymmetricEigen> {
    s.require_square()?;
    if !s.is_finite() {
        return Err(Error::NonFinite("symmetric_eigen input".into()));
    }
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_TOL * s.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let n = s.dim();
    let mut a = s.symmetrized();
    let mut v = Mat::identity(n);
    let total = frobenius_sq(&a).sqrt();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off == 0.0 || off < 1e-14 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Applies the Jacobi rotation annihilating `a[p][q]`, keeping `a` symmetric.
fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let n = a.dim();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let apq = a[(p, q)];
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_eig_max(s: &Mat) -> Result<f64> {
    Ok(symmetric_eigen(s)?.max())
}

/// Logarithmic 2-norm `μ₂(A) = λ_max((A + Aᵀ)/2)`.
pub fn log_norm(a: &Mat) -> Result<f64> {
    a.require_square()?;
    symmetric_eig_max(&a.symmetrized())
}

/// Symmetric positive-definite square root.
pub fn sym_sqrt(p: &Mat) -> Result<Mat> {
    let eig = symmetric_eigen(p)?;
    if eig.min() <= 1e-12 {
        return Err(Error::NotPositiveDefinite(eig.min()));
    }
    let roots: Vec<f64> = eig.values.iter().map(|v| v.sqrt()).collect();
    Ok(Mat::from_eigen(&eig.vectors, &roots))
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &Mat) -> Result<Mat> {
    a.require_square()?;
    let n = a.dim();
    let norm = frobenius_sq(a).sqrt();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a.scale(scale);
    let mut result = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..=20 {
        term = term.matmul(&scaled)?.scale(1.0 / k as f64);
        result = result.add(&term)?;
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
