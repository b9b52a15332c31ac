//! Newton-Schulz orthogonalization — the nonlinear heart of the Muon/MONA
//! update.
//!
//! The iteration normalizes the input to unit Frobenius norm and applies T
//! quintic steps X ← aX + (bG + cG²)X with G = XXᵀ. It is an odd polynomial
//! in the singular values: singular subspaces are preserved exactly while
//! every singular value is driven into a band around 1 (the default
//! coefficients oscillate in roughly [0.68, 1.14] for normalized inputs —
//! they do not converge tightly to 1, and the tests assert band membership,
//! not exact polar convergence).

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::svd::{max_principal_angle, svd_oracle, SvdError};

/// Newton-Schulz iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    /// Number of quintic iterations T.
    pub steps: usize,
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_c: f64,
    /// Inputs with Frobenius norm below this are treated as degenerate.
    pub epsilon: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self { steps: 5, coeff_a: 3.4445, coeff_b: -4.7750, coeff_c: 2.0315, epsilon: 1e-12 }
    }
}

impl NsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps == 0 {
            return Err("ns.steps must be ≥ 1".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("ns.epsilon must be > 0".into());
        }
        for (name, v) in
            [("coeff_a", self.coeff_a), ("coeff_b", self.coeff_b), ("coeff_c", self.coeff_c)]
        {
            if !v.is_finite() {
                return Err(format!("ns.{name} must be finite"));
            }
        }
        Ok(())
    }
}

/// Orthogonalize `m`: returns (X_T, degenerate).
///
/// Degenerate inputs (‖m‖_F < epsilon) return a zero matrix of the same
/// shape with the flag set — step 1 of a fresh run with zero gradient must
/// be a no-op rather than an error. Tall inputs (rows > cols) are handled by
/// transposing, iterating, and transposing back, which keeps every Gram
/// product at the smaller dimension; the result is bit-identical to running
/// the wide case on the transpose. Normalization multiplies by the
/// reciprocal of the Frobenius norm.
pub fn newton_schulz<T: Scalar>(m: &Matrix<T>, cfg: &NsConfig) -> (Matrix<T>, bool) {
    let norm = m.frobenius_norm();
    if norm.to_f64() < cfg.epsilon {
        return (Matrix::zeros(m.rows(), m.cols()), true);
    }
    let transpose_back = m.rows() > m.cols();
    let mut x = if transpose_back { m.transpose() } else { m.clone() };
    x.scale_in_place(T::one() / norm);

    let a = T::from_f64(cfg.coeff_a);
    let b = T::from_f64(cfg.coeff_b);
    let c = T::from_f64(cfg.coeff_c);
    for _ in 0..cfg.steps {
        let g = x.gram(); // X·Xᵀ, r×r at the smaller dimension
        let b2 = g.gram(); // G·Gᵀ = G² bitwise (G is exactly symmetric)
        let p = g.scale(b).add(&b2.scale(c)).expect("same shape");
        let px = p.matmul(&x).expect("conforming");
        x = x.scale(a).add(&px).expect("same shape");
    }
    if transpose_back {
        x = x.transpose();
    }
    (x, false)
}

/// Diagnostic bundle around one orthogonalization, computed with the SVD
/// oracle (test/verification use only; input must fit the oracle).
#[derive(Debug, Clone)]
pub struct NsReport<T: Scalar> {
    pub output: Matrix<T>,
    pub degenerate: bool,
    /// Numerical rank of the input (σ > 1e-10·σ_max).
    pub rank: usize,
    /// (min, max) of the output's singular values on the rank subspace.
    pub singular_band: (f64, f64),
    /// ‖OᵀO − I_r‖_F restricted to the rank subspace: √Σ_{i≤r}(σᵢ² − 1)².
    pub ns_error: f64,
    /// Largest principal angle between input and output top-r left
    /// singular subspaces, radians.
    pub u_angle: f64,
    /// Same for the right singular subspaces.
    pub v_angle: f64,
}

/// Run [`newton_schulz`] and measure how well the output approximates an
/// orthogonal factor sharing the input's singular subspaces.
pub fn ns_diagnostics<T: Scalar>(
    m: &Matrix<T>,
    cfg: &NsConfig,
) -> Result<NsReport<T>, SvdError> {
    let (output, degenerate) = newton_schulz(m, cfg);
    if degenerate {
        return Ok(NsReport {
            output,
            degenerate,
            rank: 0,
            singular_band: (0.0, 0.0),
            ns_error: 0.0,
            u_angle: 0.0,
            v_angle: 0.0,
        });
    }
    let svd_in = svd_oracle(m)?;
    let svd_out = svd_oracle(&output)?;
    let sigma_max = svd_in.sigma[0].to_f64();
    let rank = svd_in.sigma.iter().filter(|&&s| s.to_f64() > 1e-10 * sigma_max).count();
    debug_assert!(rank >= 1, "non-degenerate input has positive rank");

    let out_band: Vec<f64> = svd_out.sigma[..rank].iter().map(|&s| s.to_f64()).collect();
    let band_min = out_band.iter().copied().fold(f64::INFINITY, f64::min);
    let band_max = out_band.iter().copied().fold(0.0, f64::max);
    let ns_error = out_band.iter().map(|s| (s * s - 1.0).powi(2)).sum::<f64>().sqrt();

    let u_angle = max_principal_angle(&take_columns(&svd_in.u, rank), &take_columns(&svd_out.u, rank))?;
    let v_angle = max_principal_angle(&take_columns(&svd_in.v, rank), &take_columns(&svd_out.v, rank))?;
    Ok(NsReport {
        output,
        degenerate,
        rank,
        singular_band: (band_min, band_max),
        ns_error,
        u_angle,
        v_angle,
    })
}

fn take_columns<T: Scalar>(m: &Matrix<T>, r: usize) -> Matrix<T> {
    Matrix::from_fn(m.rows(), r, |i, j| m.get(i, j))
}

/// The scalar recurrence every singular value follows under the quintic
/// iteration, written in the exact arithmetic order of the matrix code so
/// diagonal fixtures match bit-for-bit.
pub fn scalar_quintic_step(x: f64, cfg: &NsConfig) -> f64 {
    let g = x * x;
    let b2 = g * g;
    let p = cfg.coeff_b * g + cfg.coeff_c * b2;
    cfg.coeff_a * x + p * x
}

/// T applications of [`scalar_quintic_step`].
pub fn scalar_quintic_trajectory(x0: f64, cfg: &NsConfig) -> Vec<f64> {
    let mut xs = Vec::with_capacity(cfg.steps + 1);
    let mut x = x0;
    xs.push(x);
    for _ in 0..cfg.steps {
        x = scalar_quintic_step(x, cfg);
        xs.push(x);
    }
    xs
}
