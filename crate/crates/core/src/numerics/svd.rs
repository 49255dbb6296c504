//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs are swept in a fixed cyclic order, so the factorization is a
//! pure function of the input bits. Wide inputs are handled through their
//! transpose, which keeps the rotated dimension equal to `min(rows, cols)`.

use crate::error::{Error, Result};

use super::matrix::dot;
use super::Matrix;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `m = U · diag(σ) · Vᵀ` with `k = min(rows, cols)` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.singular_values) {
                *v *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

/// Singular value decomposition by cyclic one-sided Jacobi rotations.
///
/// Each right singular vector is sign-canonicalized so that its
/// largest-magnitude entry (first one on ties) is positive; the matching
/// left vector is flipped with it.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Shape(format!(
            "svd needs a non-empty matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() >= m.cols() {
        let (u, s, v) = jacobi_tall(m);
        Ok(canonicalize(u, s, v))
    } else {
        // m = (mᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let (u_t, s, v_t) = jacobi_tall(&m.transpose());
        Ok(canonicalize(v_t, s, u_t))
    }
}

/// Works on column-major copies: `a` holds the k = cols columns of the input.
fn jacobi_tall(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let rows = m.rows();
    let k = m.cols();
    let mut a: Vec<Vec<f64>> = (0..k).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut e = vec![0.0; k];
            e[c] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (rows as f64).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // stable: equal singular values keep their column order
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = order.first().map_or(0.0, |&i| norms[i]);
    let negligible = sigma_max * f64::EPSILON * (rows.max(k) as f64);

    let mut u = Matrix::zeros(rows, k);
    let mut vm = Matrix::zeros(k, k);
    let mut sigma = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (j, &src) in order.iter().enumerate() {
        let s = norms[src];
        if s > negligible && s > 0.0 {
            sigma.push(s);
            for r in 0..rows {
                u.set(r, j, a[src][r] / s);
            }
        } else {
            sigma.push(if s > 0.0 { s } else { 0.0 });
            missing.push(j);
        }
        for r in 0..k {
            vm.set(r, j, v[src][r]);
        }
    }
    complete_orthonormal(&mut u, &missing);
    (u, sigma, vm)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column, drawing candidates from the standard basis in order.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0;
    for &j in missing {
        while basis < rows {
            let mut cand = vec![0.0; rows];
            cand[basis] = 1.0;
            basis += 1;
            // two passes of Gram-Schmidt for numerical orthogonality
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.column(f);
                    let proj = dot(&cand, &col);
                    for (c, x) in cand.iter_mut().zip(&col) {
                        *c -= proj * x;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                for (r, c) in cand.iter().enumerate() {
                    u.set(r, j, c / norm);
                }
                filled.push(j);
                break;
            }
        }
    }
}

fn canonicalize(mut u: Matrix, sigma: Vec<f64>, mut v: Matrix) -> SvdResult {
    for j in 0..v.cols() {
        let mut best = 0;
        for r in 0..v.rows() {
            if v.get(r, j).abs() > v.get(best, j).abs() {
                best = r;
            }
        }
        if v.get(best, j) < 0.0 {
            for r in 0..v.rows() {
                v.set(r, j, -v.get(r, j));
            }
            for r in 0..u.rows() {
                u.set(r, j, -u.get(r, j));
            }
        }
    }
    SvdResult {
        u,
        singular_values: sigma,
        v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_gaussian;

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&Matrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn diagonal_matrix() {
        let r = svd(&Matrix::from_diag(&[3.0, 0.0])).unwrap();
        assert_eq!(r.singular_values, vec![3.0, 0.0]);
        assert!(orthonormality_error(&r.u) < 1e-12);
        assert!(orthonormality_error(&r.v) < 1e-12);
    }

    #[test]
    fn identity() {
        let r = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(r.singular_values, vec![1.0; 4]);
    }

    #[test]
    fn random_wide_reconstructs() {
        let m = seeded_gaussian(3, 5, 17, 1.0);
        let r = svd(&m).unwrap();
        let err = r.reconstruct().sub(&m).unwrap().max_abs();
        assert!(err < 1e-10 * r.sigma_max(), "err = {err}");
        assert!(orthonormality_error(&r.u) < 1e-10);
        assert!(orthonormality_error(&r.v) < 1e-10);
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficient_tall() {
        // rank 1: every column is a multiple of the first
        let m = Matrix::from_fn(6, 3, |r, c| (r as f64 + 1.0) * (c as f64 + 1.0));
        let r = svd(&m).unwrap();
        assert!(r.singular_values[1] < 1e-12 * r.singular_values[0]);
        assert!(orthonormality_error(&r.u) < 1e-10);
        let err = r.reconstruct().sub(&m).unwrap().max_abs();
        assert!(err < 1e-10 * r.sigma_max());
    }

    #[test]
    fn sign_convention_is_applied() {
        let m = seeded_gaussian(4, 7, 3, 1.0);
        let r = svd(&m).unwrap();
        for j in 0..r.v.cols() {
            let col = r.v.column(j);
            let best = col
                .iter()
                .copied()
                .fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn zero_matrix() {
        let r = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(r.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_error(&r.u) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m.set(0, 1, f64::NAN);
        assert!(matches!(svd(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn deterministic() {
        let m = seeded_gaussian(9, 4, 5, 2.0);
        assert_eq!(svd(&m).unwrap(), svd(&m).unwrap());
    }
}
