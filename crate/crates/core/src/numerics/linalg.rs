//! Cholesky factorization, cyclic Jacobi eigensolver and SPD square roots.

use serde::{Deserialize, Serialize};

use super::mat::{axpy, dot, Mat};
use crate::error::{Error, Result};

/// Pivots at or below this value are treated as "not positive definite".
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Relative asymmetry accepted by [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// A symmetric positive-definite matrix stored with its Cholesky factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdMat {
    full: Mat,
    chol: Mat,
    log_det: f64,
}

impl SpdMat {
    pub fn identity(dim: usize) -> Self {
        SpdMat { full: Mat::identity(dim), chol: Mat::identity(dim), log_det: 0.0 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.full.rows()
    }

    #[inline]
    pub fn full(&self) -> &Mat {
        &self.full
    }

    /// Lower-triangular factor `L` with `full = L Lᵀ`.
    #[inline]
    pub fn chol(&self) -> &Mat {
        &self.chol
    }

    #[inline]
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let l = &self.chol;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = l.row(i);
            let s = dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let l = &self.chol;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let xi = x[i] / l.get(i, i);
            x[i] = xi;
            // eliminate x_i from the remaining rows: column i of Lᵀ is row i of L
            let row = l.row(i);
            for j in 0..i {
                x[j] -= row[j] * xi;
            }
        }
        x
    }

    /// `full⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `rᵀ full⁻¹ r`.
    pub fn mahalanobis_sq(&self, r: &[f64]) -> f64 {
        let y = self.solve_lower(r);
        dot(&y, &y)
    }

    pub fn inverse(&self) -> Mat {
        let n = self.dim();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv.symmetrize()
    }

    /// `L⁻¹`, lower triangular, so that `full⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn chol_inverse(&self) -> Mat {
        let n = self.dim();
        let l = &self.chol;
        let mut inv = Mat::zeros(n, n);
        let mut acc = vec![0.0; n];
        for i in 0..n {
            let row = l.row(i);
            // row i of L⁻¹ is (e_i − Σ_{k<i} L_ik row_k(L⁻¹)) / L_ii
            acc[..i].iter_mut().for_each(|v| *v = 0.0);
            for (k, &lik) in row[..i].iter().enumerate() {
                axpy(lik, &inv.row(k)[..=k], &mut acc[..=k]);
            }
            let out = inv.row_mut(i);
            for j in 0..i {
                out[j] = -acc[j] / row[i];
            }
            out[i] = 1.0 / row[i];
        }
        inv
    }

    /// `L v` (maps standard normal noise to this covariance).
    pub fn chol_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| dot(&self.chol.row(i)[..=i], &v[..=i])).collect()
    }
}

/// Cholesky factorization of a symmetric matrix.
pub fn cholesky(m: &Mat) -> Result<SpdMat> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("cholesky of {}x{}", m.rows(), m.cols())));
    }
    let n = m.rows();
    let scale = m.data().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut max_asym = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            max_asym = max_asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asym });
    }
    let full = m.symmetrize();
    let mut l = Mat::zeros(n, n);
    let mut log_det = 0.0;
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let pivot = full.get(j, j) - dot(&lj, &lj);
        if !(pivot > PIVOT_FLOOR) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        log_det += 2.0 * d.ln();
        for i in j + 1..n {
            let s = dot(&l.row(i)[..j], &lj);
            l.set(i, j, (full.get(i, j) - s) / d);
        }
    }
    Ok(SpdMat { full, chol: l, log_det })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in ascending order; eigenvectors are the columns of
/// the returned matrix in the same order.
pub fn sym_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("eigen of {}x{}", m.rows(), m.cols())));
    }
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Mat::identity(n);
    let total = a.frobenius_norm();
    let target = (f64::EPSILON * total).powi(2);

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a.get(i, j).powi(2))
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: JACOBI_MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, v.get(r, src));
        }
    }
    Ok((values, vectors))
}

/// Reassembles `V diag(f(λ)) Vᵀ`.
pub fn eigen_map(values: &[f64], vectors: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let n = values.len();
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        for i in 0..n {
            let vik = vectors.get(i, k) * w;
            for j in 0..n {
                let cur = out.get(i, j);
                out.set(i, j, cur + vik * vectors.get(j, k));
            }
        }
    }
    out.symmetrize()
}

/// Principal square root of an SPD matrix.
pub fn sqrt_spd(m: &SpdMat) -> Result<Mat> {
    let (values, vectors) = sym_eigen(m.full())?;
    if let Some((index, &pivot)) = values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(Error::NotPositiveDefinite { index, pivot });
    }
    Ok(eigen_map(&values, &vectors, f64::sqrt))
}
