//! Orthogonal projectors onto the null space of a last-layer map.
//!
//! The map is always `M ∈ R^{c×h}` acting as `y = M·h + b`; the projector is
//! the `h×h` matrix `P` with `M·P = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::svd::svd;
use super::Matrix;

/// Gram matrices with a larger condition number are rejected by the closed form.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct NullProjector {
    p: Matrix,
    source_rank: usize,
    tolerance: f64,
}

/// Rank bookkeeping for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorInfo {
    pub source_rank: usize,
    pub hidden_dim: usize,
    pub null_dim: usize,
}

impl NullProjector {
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn source_rank(&self) -> usize {
        self.source_rank
    }

    /// Width `h` of the space the projector acts on.
    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// Singular-value threshold used to decide the rank.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn null_dim(&self) -> usize {
        self.dim() - self.source_rank
    }

    pub fn is_trivial(&self) -> bool {
        self.source_rank == self.dim()
    }

    pub fn info(&self) -> ProjectorInfo {
        ProjectorInfo {
            source_rank: self.source_rank,
            hidden_dim: self.dim(),
            null_dim: self.null_dim(),
        }
    }

    /// Projects every row of `g` (`n × h`) into the null space: `g · Pᵀ`.
    pub fn project_rows(&self, g: &Matrix) -> Result<Matrix> {
        g.matmul_t(&self.p)
    }
}

/// Default numerical-rank threshold `σ_max · max(rows, cols) · ε_machine`.
pub fn default_rank_tolerance(sigma_max: f64, shape: (usize, usize)) -> f64 {
    sigma_max * (shape.0.max(shape.1) as f64) * f64::EPSILON
}

/// Counts singular values strictly above the threshold. `tol = 0` selects
/// the default rule for a matrix of the given shape.
pub fn rank_from_singular_values(sigma: &[f64], tol: f64, shape: (usize, usize)) -> usize {
    let threshold = if tol > 0.0 {
        tol
    } else {
        default_rank_tolerance(sigma.first().copied().unwrap_or(0.0), shape)
    };
    sigma.iter().filter(|&&s| s > threshold).count()
}

/// `P = I_h − V_r·V_rᵀ` from the right singular vectors of `m` whose singular
/// value exceeds the threshold.
pub fn null_projector_svd(m: &Matrix, tol: f64) -> Result<NullProjector> {
    let dec = svd(m)?;
    let threshold = if tol > 0.0 {
        tol
    } else {
        default_rank_tolerance(dec.sigma_max(), m.shape())
    };
    let rank = rank_from_singular_values(&dec.singular_values, threshold, m.shape());
    let h = m.cols();
    let p = if rank == h {
        // empty null space: exactly zero rather than I − VVᵀ rounding noise
        Matrix::zeros(h, h)
    } else {
        let vr = dec.v.leading_columns(rank);
        Matrix::identity(h).sub(&vr.matmul_t(&vr)?)?
    };
    Ok(NullProjector {
        p: symmetrize(p),
        source_rank: rank,
        tolerance: threshold,
    })
}

/// `P = I_h − Mᵀ (M Mᵀ)⁻¹ M`, valid when `m` has full row rank.
pub fn null_projector_closed_form(m: &Matrix) -> Result<NullProjector> {
    if !m.is_finite() {
        return Err(Error::NonFinite("closed-form projector input"));
    }
    let (c, h) = m.shape();
    if c > h {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let gram = m.matmul_t(m)?;
    let condition = symmetric_condition(&gram)?;
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let chol = cholesky(&gram).ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    // X = (M Mᵀ)⁻¹ M, solved column by column
    let mut x = Matrix::zeros(c, h);
    for col in 0..h {
        let sol = cholesky_solve(&chol, &m.column(col));
        for (r, v) in sol.into_iter().enumerate() {
            x.set(r, col, v);
        }
    }
    let p = Matrix::identity(h).sub(&m.t_matmul(&x)?)?;
    Ok(NullProjector {
        p: symmetrize(p),
        source_rank: c,
        tolerance: 0.0,
    })
}

fn symmetrize(p: Matrix) -> Matrix {
    let n = p.rows();
    Matrix::from_fn(n, n, |i, j| 0.5 * (p.get(i, j) + p.get(j, i)))
}

fn symmetric_condition(gram: &Matrix) -> Result<f64> {
    let s = svd(gram)?.singular_values;
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}
