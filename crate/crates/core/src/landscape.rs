//! Synthetic differentiable objectives with known geometry, plus a
//! stochastic gradient oracle with bounded noise and almost-sure norm
//! clipping, and the sharp-minimum escape experiment.

use crate::matrix::{Matrix, MatrixError};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerKind, StepError};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LandscapeError {
    #[error("landscape field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> LandscapeError {
    LandscapeError::Invalid { field, message: message.into() }
}

/// A differentiable objective: loss and exact gradient at a point.
pub trait Landscape<T: Scalar> {
    fn eval(&self, w: &Matrix<T>) -> Result<(T, Matrix<T>), LandscapeError>;
    /// Parameter shape this landscape is defined over.
    fn shape(&self) -> (usize, usize);
}

/// f(W) = ½⟨W−W*, H*(W−W*)⟩ with H* = QΛQᵀ acting on the vectorized
/// parameter. The minimum value f* is exactly 0 at W = W*.
#[derive(Debug, Clone)]
pub struct QuadraticLandscape<T: Scalar> {
    target: Matrix<T>,
    eigs: Vec<f64>,
    basis: Matrix<T>,
    basis_t: Matrix<T>,
}

impl<T: Scalar> QuadraticLandscape<T> {
    /// `eigs` and `basis` describe the Hessian in vectorized coordinates;
    /// `basis` must be numel×numel and orthogonal to 1e−10, eigenvalues
    /// strictly positive.
    pub fn new(
        target: Matrix<T>,
        eigs: Vec<f64>,
        basis: Matrix<T>,
    ) -> Result<Self, LandscapeError> {
        let n = target.numel();
        if n == 0 {
            return Err(invalid("target", "empty parameter"));
        }
        if eigs.len() != n {
            return Err(invalid(
                "hessian_eigs",
                format!("expected {} eigenvalues, got {}", n, eigs.len()),
            ));
        }
        if let Some(bad) = eigs.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
            return Err(invalid("hessian_eigs", format!("eigenvalue {bad} is not positive")));
        }
        if basis.shape() != (n, n) {
            return Err(invalid(
                "basis",
                format!("expected {n}x{n}, got {}x{}", basis.rows(), basis.cols()),
            ));
        }
        let gram = basis.transpose().matmul(&basis)?;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.get(i, j).to_f64() - want).abs());
            }
        }
        if worst > 1e-10 {
            return Err(invalid("basis", format!("not orthogonal: max |QᵀQ−I| = {worst:.3e}")));
        }
        let basis_t = basis.transpose();
        Ok(Self { target, eigs, basis, basis_t })
    }

    /// Diagonal Hessian (Q = I) over the target's vectorized coordinates.
    pub fn diagonal(target: Matrix<T>, eigs: Vec<f64>) -> Result<Self, LandscapeError> {
        let n = target.numel();
        Self::new(target, eigs, Matrix::identity(n))
    }

    pub fn target(&self) -> &Matrix<T> {
        &self.target
    }

    pub fn eigs(&self) -> &[f64] {
        &self.eigs
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    /// Exact smoothness constant: the largest Hessian eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        self.eigs.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigs.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Minimum objective value (exactly 0 by construction).
    pub fn f_star(&self) -> f64 {
        0.0
    }

    /// H*·vec(d), reshaped back to the parameter shape.
    pub fn hessian_apply(&self, d: &Matrix<T>) -> Result<Matrix<T>, LandscapeError> {
        let n = self.target.numel();
        let v = Matrix::from_vec(n, 1, d.as_slice().to_vec())?;
        let mut coords = self.basis_t.matmul(&v)?;
        for (c, &l) in coords.as_mut_slice().iter_mut().zip(&self.eigs) {
            *c = *c * T::from_f64(l);
        }
        let hv = self.basis.matmul(&coords)?;
        Ok(Matrix::from_vec(self.target.rows(), self.target.cols(), hv.as_slice().to_vec())?)
    }
}

impl<T: Scalar> Landscape<T> for QuadraticLandscape<T> {
    fn eval(&self, w: &Matrix<T>) -> Result<(T, Matrix<T>), LandscapeError> {
        if !w.same_shape(&self.target) {
            return Err(MatrixError::DimMismatch {
                op: "quad_eval",
                lhs_rows: w.rows(),
                lhs_cols: w.cols(),
                rhs_rows: self.target.rows(),
                rhs_cols: self.target.cols(),
            }
            .into());
        }
        let diff = w.sub(&self.target)?;
        let grad = self.hessian_apply(&diff)?;
        let loss = T::from_f64(0.5) * diff.frobenius_dot(&grad)?;
        Ok((loss, grad))
    }

    fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }
}

/// A negative Gaussian mixture with one sharp and one flat well:
/// f(x) = −A_s·exp(−‖x−c_s‖²/(2s_s²)) − A_f·exp(−‖x−c_f‖²/(2s_f²)).
/// Curvature at a well center is ≈ depth/width².
#[derive(Debug, Clone)]
pub struct DoubleWellLandscape<T: Scalar> {
    sharp_center: Matrix<T>,
    flat_center: Matrix<T>,
    depth_sharp: f64,
    depth_flat: f64,
    width_sharp: f64,
    width_flat: f64,
}

impl<T: Scalar> DoubleWellLandscape<T> {
    pub fn new(
        sharp_center: Matrix<T>,
        flat_center: Matrix<T>,
        depth_sharp: f64,
        depth_flat: f64,
        width_sharp: f64,
        width_flat: f64,
    ) -> Result<Self, LandscapeError> {
        if !sharp_center.same_shape(&flat_center) {
            return Err(invalid("centers", "sharp and flat centers must share a shape"));
        }
        for (field, v) in [
            ("depth_sharp", depth_sharp),
            ("depth_flat", depth_flat),
            ("width_sharp", width_sharp),
            ("width_flat", width_flat),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(field, format!("must be positive and finite, got {v}")));
            }
        }
        let l = Self {
            sharp_center,
            flat_center,
            depth_sharp,
            depth_flat,
            width_sharp,
            width_flat,
        };
        if l.curvature_sharp() < 10.0 * l.curvature_flat() {
            return Err(invalid(
                "widths",
                format!(
                    "sharp-well curvature {:.3e} must be ≥ 10× flat-well curvature {:.3e}",
                    l.curvature_sharp(),
                    l.curvature_flat()
                ),
            ));
        }
        Ok(l)
    }

    pub fn sharp_center(&self) -> &Matrix<T> {
        &self.sharp_center
    }

    pub fn flat_center(&self) -> &Matrix<T> {
        &self.flat_center
    }

    /// Curvature at the sharp center: depth/width².
    pub fn curvature_sharp(&self) -> f64 {
        self.depth_sharp / (self.width_sharp * self.width_sharp)
    }

    pub fn curvature_flat(&self) -> f64 {
        self.depth_flat / (self.width_flat * self.width_flat)
    }

    /// Whether `x` is strictly closer to the flat center than the sharp one.
    pub fn closer_to_flat(&self, x: &Matrix<T>) -> Result<bool, LandscapeError> {
        let ds = x.sub(&self.sharp_center)?.frobenius_norm().to_f64();
        let df = x.sub(&self.flat_center)?.frobenius_norm().to_f64();
        Ok(df < ds)
    }

}

impl<T: Scalar> Landscape<T> for DoubleWellLandscape<T> {
    fn eval(&self, x: &Matrix<T>) -> Result<(T, Matrix<T>), LandscapeError> {
        if !x.same_shape(&self.sharp_center) {
            return Err(MatrixError::DimMismatch {
                op: "doublewell_eval",
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: self.sharp_center.rows(),
                rhs_cols: self.sharp_center.cols(),
            }
            .into());
        }
        let wells = [
            (x.sub(&self.sharp_center)?, self.depth_sharp, self.width_sharp),
            (x.sub(&self.flat_center)?, self.depth_flat, self.width_flat),
        ];
        let mut loss = 0.0f64;
        let mut grad = Matrix::zeros(x.rows(), x.cols());
        for (u, depth, width) in wells {
            let s2 = width * width;
            let sq = u.frobenius_norm().to_f64().powi(2);
            let e = (-sq / (2.0 * s2)).exp();
            loss -= depth * e;
            let coef = T::from_f64(depth / s2 * e);
            grad.add_scaled_in_place(coef, &u)?;
        }
        Ok((T::from_f64(loss), grad))
    }

    fn shape(&self) -> (usize, usize) {
        self.sharp_center.shape()
    }
}

/// Wraps a landscape with per-entry Gaussian noise (total Frobenius
/// variance σ²) and an almost-sure Frobenius clip at `clip_bound`. Draws
/// are a pure function of (rng_seed, step), so runs replay exactly.
#[derive(Debug, Clone)]
pub struct StochasticGradientOracle<L> {
    pub base: L,
    pub noise_sigma: f64,
    pub clip_bound: f64,
    pub rng_seed: u64,
}

impl<L> StochasticGradientOracle<L> {
    pub fn new(base: L, noise_sigma: f64, clip_bound: f64, rng_seed: u64) -> Result<Self, LandscapeError> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(invalid("noise_sigma", format!("must be ≥ 0 and finite, got {noise_sigma}")));
        }
        if !(clip_bound > 0.0) || !clip_bound.is_finite() {
            return Err(invalid("clip_bound", format!("must be positive and finite, got {clip_bound}")));
        }
        Ok(Self { base, noise_sigma, clip_bound, rng_seed })
    }

    /// True loss plus a clipped noisy gradient for this (seed, step).
    pub fn noisy_grad<T: Scalar>(
        &self,
        w: &Matrix<T>,
        step: u64,
    ) -> Result<(T, Matrix<T>), LandscapeError>
    where
        L: Landscape<T>,
    {
        let (loss, mut grad) = self.base.eval(w)?;
        if self.noise_sigma > 0.0 {
            let mut rng = stream_rng(self.rng_seed, step);
            let scale = T::from_f64(self.noise_sigma / (grad.numel() as f64).sqrt());
            for g in grad.as_mut_slice() {
                *g = *g + scale * T::standard_normal(&mut rng);
            }
        }
        let bound = T::from_f64(self.clip_bound);
        // One rescale brings the norm to the bound up to rounding; the loop
        // guarantees the ≤ postcondition exactly even in the 1-ulp-over case.
        for _ in 0..4 {
            let n = grad.frobenius_norm();
            if n <= bound {
                break;
            }
            grad.scale_in_place(bound / n);
        }
        Ok((loss, grad))
    }
}

/// Outcome of a paired-seed escape experiment for one optimizer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EscapeOutcome {
    /// Fraction of seeds whose final iterate is closer to the flat center.
    pub escape_rate: f64,
    /// Per-seed escape flags, in the order the seeds were given.
    pub escaped: Vec<bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum EscapeError {
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Run `kind` for `steps` iterations from `init` (a point inside one of the
/// wells) once per seed, and report the fraction of seeds whose final
/// iterate ends closer to the flat center than the sharp one. The parameter
/// is treated as a matrix group so the Muon family's own update applies.
pub fn escape_experiment<T: Scalar>(
    kind: OptimizerKind,
    cfg: &OptimizerConfig,
    well: &DoubleWellLandscape<T>,
    noise_sigma: f64,
    clip_bound: f64,
    init: &Matrix<T>,
    seeds: &[u64],
    steps: u64,
) -> Result<EscapeOutcome, EscapeError> {
    use crate::optim::{ParamGroup, ParamKind};
    let mut escaped = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let oracle =
            StochasticGradientOracle::new(well.clone(), noise_sigma, clip_bound, seed)?;
        let mut group = ParamGroup::new("x", ParamKind::Matrix, init.clone());
        for step in 1..=steps {
            let (_, grad) = oracle.noisy_grad(&group.weights, step)?;
            optimizer_step(kind, &mut group, &grad, cfg)?;
        }
        escaped.push(well.closer_to_flat(&group.weights)?);
    }
    let rate = escaped.iter().filter(|&&e| e).count() as f64 / seeds.len().max(1) as f64;
    Ok(EscapeOutcome { escape_rate: rate, escaped })
}

/// Central finite-difference gradient with step `h`, for test oracles.
pub fn finite_difference_grad<T: Scalar, L: Landscape<T>>(
    l: &L,
    w: &Matrix<T>,
    h: f64,
) -> Result<Matrix<T>, LandscapeError> {
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let hh = T::from_f64(h);
    for idx in 0..w.numel() {
        let mut wp = w.clone();
        wp.as_mut_slice()[idx] += hh;
        let (lp, _) = l.eval(&wp)?;
        let mut wm = w.clone();
        wm.as_mut_slice()[idx] -= hh;
        let (lm, _) = l.eval(&wm)?;
        grad.as_mut_slice()[idx] = (lp - lm) / (hh + hh);
    }
    Ok(grad)
}
