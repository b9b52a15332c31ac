//! One-sided Jacobi SVD, used as a *test oracle* for the orthogonalization
//! diagnostics (singular bands, subspace preservation). Never on the
//! optimizer hot path; capped at 512×512 by contract.

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Largest dimension the oracle accepts.
pub const SVD_MAX_DIM: usize = 512;

const MAX_SWEEPS: usize = 60;

/// Thin SVD A = U·diag(σ)·Vᵀ with r = min(rows, cols).
///
/// σ is non-negative and descending; U (m×r) and V (n×r) have orthonormal
/// columns; the first nonzero entry of each U column is non-negative (V's
/// column sign is slaved to U's so the product is unchanged).
#[derive(Debug, Clone)]
pub struct SvdResult<T: Scalar> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SvdError {
    #[error("svd_oracle accepts matrices up to {SVD_MAX_DIM} per side, got {rows}x{cols}")]
    TooLarge { rows: usize, cols: usize },
    #[error("svd_oracle requires a non-empty matrix")]
    Empty,
    #[error(
        "one-sided Jacobi did not converge after {sweeps} sweeps; \
         worst remaining column coherence {residual:.3e}"
    )]
    NotConverged { sweeps: usize, residual: f64 },
}

/// One-sided Jacobi SVD of a small dense matrix.
pub fn svd_oracle<T: Scalar>(a: &Matrix<T>) -> Result<SvdResult<T>, SvdError> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(SvdError::Empty);
    }
    if m > SVD_MAX_DIM || n > SVD_MAX_DIM {
        return Err(SvdError::TooLarge { rows: m, cols: n });
    }
    let mut result = if m >= n {
        svd_tall(a)?
    } else {
        // A = (AᵀSVD) swapped: Aᵀ = U'ΣV'ᵀ ⇒ A = V'ΣU'ᵀ.
        let t = svd_tall(&a.transpose())?;
        SvdResult { u: t.v, sigma: t.sigma, v: t.u }
    };
    apply_sign_convention(&mut result);
    Ok(result)
}

/// Jacobi on a tall (m ≥ n) matrix: rotate column pairs of a working copy W
/// until all pairs are orthogonal; then σ_j = ‖w_j‖, u_j = w_j/σ_j, and V
/// accumulates the rotations.
fn svd_tall<T: Scalar>(a: &Matrix<T>) -> Result<SvdResult<T>, SvdError> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    // Column-major working set for cache-friendly pair rotations.
    let mut w: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let tol = T::epsilon() * T::from_f64(50.0);
    let mut worst = 0.0f64;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        worst = 0.0;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for i in 0..m {
                    alpha += w[p][i] * w[p][i];
                    beta += w[q][i] * w[q][i];
                    gamma += w[p][i] * w[q][i];
                }
                let denom = (alpha * beta).sqrt();
                if denom == T::zero() {
                    continue; // a zero column is orthogonal to everything
                }
                let coherence = (gamma.abs() / denom).to_f64();
                worst = worst.max(coherence);
                if gamma.abs() <= tol * denom {
                    continue;
                }
                // Classic stable rotation solving the 2×2 symmetric eigenproblem.
                let zeta = (beta - alpha) / (T::from_f64(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[p][i];
                    let wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if worst <= tol.to_f64() {
            converged = true;
            break;
        }
    }
    if !converged && n > 1 {
        return Err(SvdError::NotConverged { sweeps: MAX_SWEEPS, residual: worst });
    }

    // Singular values and descending order.
    let sigma_unsorted: Vec<T> = w
        .iter()
        .map(|col| {
            let mut s = T::zero();
            for &x in col {
                s += x * x;
            }
            s.sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sigma_unsorted[j].partial_cmp(&sigma_unsorted[i]).expect("finite singular values")
    });
    let w: Vec<Vec<T>> = order.iter().map(|&j| std::mem::take(&mut w[j])).collect();
    let v: Vec<Vec<T>> = order.iter().map(|&j| std::mem::take(&mut v[j])).collect();
    let sigma: Vec<T> = order.iter().map(|&j| sigma_unsorted[j]).collect();

    // Normalize U columns; orthonormally complete the numerically-zero ones.
    let max_sigma = sigma.first().copied().unwrap_or_else(T::zero);
    let rank_tol = max_sigma * T::epsilon() * T::from_f64(m.max(n) as f64);
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    for (j, col) in w.iter().enumerate() {
        if sigma[j] > rank_tol && sigma[j] > T::zero() {
            u_cols.push(col.iter().map(|&x| x / sigma[j]).collect());
        } else {
            u_cols.push(complete_orthonormal(&u_cols, m));
        }
    }

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v[j][i]);
    Ok(SvdResult { u, sigma, v })
}

/// Return a unit vector orthogonal to all `existing` columns: start from the
/// canonical basis vector least captured by their span — its residual norm is
/// at least √((m−k)/m) > 0 for k < m columns — then Gram-Schmidt it twice.
fn complete_orthonormal<T: Scalar>(existing: &[Vec<T>], m: usize) -> Vec<T> {
    debug_assert!(existing.len() < m, "span is already complete");
    // With orthonormal columns, ‖proj(eᵢ)‖² = Σ_j col_j[i]², so the row with
    // the smallest sum of squares has the largest residual.
    let mut captured = vec![T::zero(); m];
    for col in existing {
        for i in 0..m {
            captured[i] += col[i] * col[i];
        }
    }
    let mut best = 0;
    for i in 1..m {
        if captured[i] < captured[best] {
            best = i;
        }
    }
    let mut cand = vec![T::zero(); m];
    cand[best] = T::one();
    for _ in 0..2 {
        for col in existing {
            let mut dot = T::zero();
            for i in 0..m {
                dot += cand[i] * col[i];
            }
            for i in 0..m {
                cand[i] = cand[i] - dot * col[i];
            }
        }
    }
    let mut norm = T::zero();
    for &x in &cand {
        norm += x * x;
    }
    let norm = norm.sqrt();
    cand.iter().map(|&x| x / norm).collect()
}

/// First nonzero entry of each U column made non-negative; V flipped in step.
fn apply_sign_convention<T: Scalar>(r: &mut SvdResult<T>) {
    let (m, rank) = r.u.shape();
    let n = r.v.rows();
    for j in 0..rank {
        let mut flip = false;
        for i in 0..m {
            let x = r.u.get(i, j);
            if x != T::zero() {
                flip = x < T::zero();
                break;
            }
        }
        if flip {
            for i in 0..m {
                let x = r.u.get(i, j);
                r.u.set(i, j, -x);
            }
            for i in 0..n {
                let x = r.v.get(i, j);
                r.v.set(i, j, -x);
            }
        }
    }
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal-column matrices of equal shape.
///
/// Computed through the sine: θ_max = asin(σ_max((I − A·Aᵀ)·B)), which keeps
/// full precision for nearly-identical subspaces where the cosine route
/// would cancel catastrophically.
pub fn max_principal_angle<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64, SvdError> {
    debug_assert_eq!(a.shape(), b.shape());
    let atb = a.transpose().matmul(b).expect("shapes checked");
    let proj = a.matmul(&atb).expect("shapes checked");
    let e = b.sub(&proj).expect("shapes checked");
    let sigma_max = svd_oracle(&e)?.sigma[0].to_f64();
    Ok(sigma_max.clamp(0.0, 1.0).asin())
}
