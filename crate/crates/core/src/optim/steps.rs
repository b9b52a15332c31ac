//! The optimizer step functions.
//!
//! All five steppers share per-element update expressions so the contract
//! identities hold bit-for-bit: MONA with α = 0 matches Muon, AdamW-Acc with
//! α = 0 matches AdamW, and fp32 streaming matches fp32 buffered. Every
//! reduction (norm accumulators included) runs in ascending element order.

use std::time::Instant;

use crate::matrix::Matrix;
use crate::optim::config::{AdamConfig, OptimizerConfig, Precision};
use crate::optim::group::{AccelState, GradSlot, ParamGroup, ParamKind};
use crate::orthogonalize::newton_schulz;
use crate::scalar::Scalar;

/// Per-step diagnostics: the pre-orthogonalization norms bounded by the
/// acceleration/momentum lemmas, the realized update size, and timing.
#[derive(Debug, Clone)]
pub struct StepTrace<T: Scalar> {
    pub grad_norm: T,
    /// ‖D_k‖_F (0 for steppers that form no gradient difference).
    pub diff_norm: T,
    /// ‖A_k‖_F (0 for steppers with no acceleration state).
    pub accel_norm: T,
    /// ‖G̃_k‖_F; equals ‖G_k‖_F where no acceleration is mixed in.
    pub tilde_norm: T,
    /// ‖M_k‖_F after the momentum update (first Adam moment for AdamW).
    pub momentum_norm: T,
    /// ‖ΔW‖_F actually applied this step (decay included).
    pub update_norm: T,
    /// ‖O_k‖_F of the applied direction (pre-γ/η scaling).
    pub direction_norm: T,
    pub ns_degenerate: bool,
    /// Set when a Muon-family optimizer routed this parameter through the
    /// AdamW fallback (vector parameters).
    pub fallback_adamw: bool,
    /// Wall time of the optimizer step body, nanoseconds.
    pub inner_nanos: u64,
    /// The direction matrix, captured only when
    /// `OptimizerConfig::capture_directions` is set.
    pub direction: Option<Matrix<T>>,
}

impl<T: Scalar> StepTrace<T> {
    fn zeroed() -> Self {
        Self {
            grad_norm: T::zero(),
            diff_norm: T::zero(),
            accel_norm: T::zero(),
            tilde_norm: T::zero(),
            momentum_norm: T::zero(),
            update_norm: T::zero(),
            direction_norm: T::zero(),
            ns_degenerate: false,
            fallback_adamw: false,
            inner_nanos: 0,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("parameter `{param}`: gradient contains a non-finite value; step rejected")]
    NonFiniteGradient { param: String },
    #[error("parameter `{param}`: gradient shape {grad_rows}x{grad_cols} does not match weights {rows}x{cols}")]
    ShapeMismatch { param: String, rows: usize, cols: usize, grad_rows: usize, grad_cols: usize },
    #[error("parameter `{param}`: {op} requires a matrix-kind parameter")]
    WrongKind { param: String, op: &'static str },
    #[error("parameter `{param}`: {op} requires precision {expected}")]
    WrongPrecision { param: String, op: &'static str, expected: &'static str },
    #[error("parameter `{param}`: existing state buffer has the wrong layout or shape for {op}")]
    StateLayout { param: String, op: &'static str },
}

/// Which concrete stepper a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "mona")]
    Mona,
    #[serde(rename = "muon")]
    Muon,
    #[serde(rename = "mona_lite")]
    MonaLite,
    #[serde(rename = "adamw")]
    AdamW,
    #[serde(rename = "adamw_acc")]
    AdamWAcc,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Mona => "mona",
            OptimizerKind::Muon => "muon",
            OptimizerKind::MonaLite => "mona_lite",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::AdamWAcc => "adamw_acc",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Route one parameter through the configured optimizer: matrix parameters
/// take the family's own update, vector parameters fall back to AdamW under
/// the Muon family (flagged in the trace), and the AdamW family handles all
/// parameters uniformly.
pub fn optimizer_step<T: Scalar>(
    kind: OptimizerKind,
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    cfg: &OptimizerConfig,
) -> Result<StepTrace<T>, StepError> {
    match kind {
        OptimizerKind::AdamW => adamw_step(group, grad, &cfg.adam, cfg.learning_rate),
        OptimizerKind::AdamWAcc => adamw_acc_step(
            group,
            grad,
            &cfg.adam,
            (cfg.accel_beta, cfg.accel_alpha),
            cfg.learning_rate,
        ),
        OptimizerKind::Mona | OptimizerKind::Muon | OptimizerKind::MonaLite => {
            if group.kind == ParamKind::Vector {
                let mut trace = adamw_step(group, grad, &cfg.adam, cfg.learning_rate)?;
                trace.fallback_adamw = true;
                return Ok(trace);
            }
            match kind {
                OptimizerKind::Mona => mona_step(group, grad, cfg),
                OptimizerKind::Muon => muon_step(group, grad, cfg),
                OptimizerKind::MonaLite => mona_lite_step(group, grad, cfg),
                _ => unreachable!(),
            }
        }
    }
}

fn validate_grad<T: Scalar>(
    op: &'static str,
    group: &ParamGroup<T>,
    grad: &Matrix<T>,
    require_matrix: bool,
) -> Result<(), StepError> {
    if require_matrix && group.kind != ParamKind::Matrix {
        return Err(StepError::WrongKind { param: group.name.clone(), op });
    }
    if !group.weights.same_shape(grad) {
        return Err(StepError::ShapeMismatch {
            param: group.name.clone(),
            rows: group.weights.rows(),
            cols: group.weights.cols(),
            grad_rows: grad.rows(),
            grad_cols: grad.cols(),
        });
    }
    if grad.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(StepError::NonFiniteGradient { param: group.name.clone() });
    }
    Ok(())
}

/// Fused weight update W ← W − η(γO + λW); returns ‖ΔW‖_F.
fn apply_orthogonalized_update<T: Scalar>(
    weights: &mut Matrix<T>,
    o: &Matrix<T>,
    eta: T,
    gamma: T,
    lambda: T,
) -> T {
    let mut ss = T::zero();
    for (w, &ov) in weights.as_mut_slice().iter_mut().zip(o.as_slice()) {
        let du = eta * (gamma * ov + lambda * *w);
        *w = *w - du;
        ss += du * du;
    }
    ss.sqrt()
}

/// Pre-orthogonalization squared-norm accumulators from the state-update
/// phase (already summed in ascending element order).
struct MonaNorms<T> {
    grad_ss: T,
    diff_ss: T,
    accel_ss: T,
    tilde_ss: T,
    momentum_ss: T,
}

/// Shared tail of every Muon-family matrix step: orthogonalize the momentum
/// and apply the scaled update with decay.
fn mona_tail<T: Scalar>(
    weights: &mut Matrix<T>,
    momentum: &Matrix<T>,
    cfg: &OptimizerConfig,
    norms: MonaNorms<T>,
    fallback: bool,
    t0: Instant,
) -> StepTrace<T> {
    let (o, ns_degenerate) = newton_schulz(momentum, &cfg.ns);
    let gamma = T::from_f64(cfg.gamma(weights.rows(), weights.cols()));
    let eta = T::from_f64(cfg.learning_rate);
    let lambda = T::from_f64(cfg.weight_decay);
    let update_norm = apply_orthogonalized_update(weights, &o, eta, gamma, lambda);
    let direction_norm = o.frobenius_norm();
    StepTrace {
        grad_norm: norms.grad_ss.sqrt(),
        diff_norm: norms.diff_ss.sqrt(),
        accel_norm: norms.accel_ss.sqrt(),
        tilde_norm: norms.tilde_ss.sqrt(),
        momentum_norm: norms.momentum_ss.sqrt(),
        update_norm,
        direction_norm,
        ns_degenerate,
        fallback_adamw: fallback,
        inner_nanos: t0.elapsed().as_nanos() as u64,
        direction: cfg.capture_directions.then_some(o),
    }
}

fn ensure_matrix_buffer<T: Scalar>(
    slot: &mut Option<Matrix<T>>,
    rows: usize,
    cols: usize,
    param: &str,
    op: &'static str,
) -> Result<(), StepError> {
    match slot {
        None => {
            *slot = Some(Matrix::zeros(rows, cols));
            Ok(())
        }
        Some(m) if m.shape() == (rows, cols) => Ok(()),
        Some(_) => Err(StepError::StateLayout { param: param.into(), op }),
    }
}

/// MONA (buffered): D ← G − G_prev; A ← β_a A + (1−β_a) D; G̃ ← G + αA;
/// M ← μM + G̃; O ← NS(M); W ← W − η(γO + λW); G_prev ← G.
pub fn mona_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    cfg: &OptimizerConfig,
) -> Result<StepTrace<T>, StepError> {
    let t0 = Instant::now();
    const OP: &str = "mona_step";
    validate_grad(OP, group, grad, true)?;
    if cfg.precision != Precision::Fp32Buffered {
        return Err(StepError::WrongPrecision {
            param: group.name.clone(),
            op: OP,
            expected: "fp32_buffered",
        });
    }
    let (rows, cols) = group.weights.shape();
    let name = group.name.clone();
    let state = &mut group.state;
    ensure_matrix_buffer(&mut state.momentum, rows, cols, &name, OP)?;
    match &mut state.accel {
        slot @ None => *slot = Some(AccelState::Full(Matrix::zeros(rows, cols))),
        Some(AccelState::Full(m)) if m.shape() == (rows, cols) => {}
        Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
    }
    match &mut state.prev_grad {
        slot @ None => *slot = Some(GradSlot::Buffered(Matrix::zeros(rows, cols))),
        Some(GradSlot::Buffered(m)) if m.shape() == (rows, cols) => {}
        Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
    }
    let momentum = state.momentum.as_mut().expect("ensured");
    let Some(AccelState::Full(accel)) = state.accel.as_mut() else { unreachable!() };
    let Some(GradSlot::Buffered(prev)) = state.prev_grad.as_mut() else { unreachable!() };

    let beta = T::from_f64(cfg.accel_beta);
    let omb = T::one() - beta;
    let alpha = T::from_f64(cfg.accel_alpha);
    let mu = T::from_f64(cfg.momentum);

    let mut grad_ss = T::zero();
    let mut diff_ss = T::zero();
    let mut accel_ss = T::zero();
    let mut tilde_ss = T::zero();
    let mut momentum_ss = T::zero();
    // Four buffered passes; each per-element expression matches the fused
    // streaming pass of mona_lite_step exactly.
    for (&g, _) in grad.as_slice().iter().zip(0..) {
        grad_ss += g * g;
    }
    let mut diff = Matrix::zeros(rows, cols);
    for ((d, &g), &p) in diff.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(prev.as_slice())
    {
        *d = g - p;
        diff_ss += *d * *d;
    }
    for (a, &d) in accel.as_mut_slice().iter_mut().zip(diff.as_slice()) {
        *a = beta * *a + omb * d;
        accel_ss += *a * *a;
    }
    let mut tilde = Matrix::zeros(rows, cols);
    for ((t, &g), &a) in tilde.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(accel.as_slice())
    {
        *t = g + alpha * a;
        tilde_ss += *t * *t;
    }
    for (m, &t) in momentum.as_mut_slice().iter_mut().zip(tilde.as_slice()) {
        *m = mu * *m + t;
        momentum_ss += *m * *m;
    }
    prev.as_mut_slice().copy_from_slice(grad.as_slice());
    state.step += 1;

    let momentum = state.momentum.as_ref().expect("ensured");
    let norms = MonaNorms { grad_ss, diff_ss, accel_ss, tilde_ss, momentum_ss };
    Ok(mona_tail(&mut group.weights, momentum, cfg, norms, false, t0))
}

/// Muon: M ← μM + G; O ← NS(M); W ← W − η(γO + λW). No acceleration state.
pub fn muon_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    cfg: &OptimizerConfig,
) -> Result<StepTrace<T>, StepError> {
    let t0 = Instant::now();
    const OP: &str = "muon_step";
    validate_grad(OP, group, grad, true)?;
    let (rows, cols) = group.weights.shape();
    let name = group.name.clone();
    let state = &mut group.state;
    ensure_matrix_buffer(&mut state.momentum, rows, cols, &name, OP)?;
    let momentum = state.momentum.as_mut().expect("ensured");

    let mu = T::from_f64(cfg.momentum);
    let mut grad_ss = T::zero();
    let mut momentum_ss = T::zero();
    for (m, &g) in momentum.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        grad_ss += g * g;
        *m = mu * *m + g;
        momentum_ss += *m * *m;
    }
    state.step += 1;

    let momentum = state.momentum.as_ref().expect("ensured");
    let norms = MonaNorms {
        grad_ss,
        diff_ss: T::zero(),
        accel_ss: T::zero(),
        tilde_ss: grad_ss, // G̃ ≡ G when no acceleration is mixed in
        momentum_ss,
    };
    Ok(mona_tail(&mut group.weights, momentum, cfg, norms, false, t0))
}

/// MONA-Lite: identical control flow to [`mona_step`] with the gradient
/// difference computed in one fused in-place pass — the slot holding
/// G_{k−1} is read and then overwritten with G_k element by element, so no
/// dedicated difference buffer exists. In `bf16_streaming` the acceleration
/// EMA and the slot are stored as bfloat16 after each update and decoded on
/// read; within a step, G̃ uses the freshly computed full-precision A_k
/// (rounding is a storage effect for the *next* read).
pub fn mona_lite_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    cfg: &OptimizerConfig,
) -> Result<StepTrace<T>, StepError> {
    let t0 = Instant::now();
    const OP: &str = "mona_lite_step";
    validate_grad(OP, group, grad, true)?;
    let (rows, cols) = group.weights.shape();
    let name = group.name.clone();
    let state = &mut group.state;
    ensure_matrix_buffer(&mut state.momentum, rows, cols, &name, OP)?;

    let beta = T::from_f64(cfg.accel_beta);
    let omb = T::one() - beta;
    let alpha = T::from_f64(cfg.accel_alpha);
    let mu = T::from_f64(cfg.momentum);

    let mut grad_ss = T::zero();
    let mut diff_ss = T::zero();
    let mut accel_ss = T::zero();
    let mut tilde_ss = T::zero();
    let mut momentum_ss = T::zero();

    match cfg.precision {
        Precision::Fp32Buffered => {
            return Err(StepError::WrongPrecision {
                param: name,
                op: OP,
                expected: "fp32_streaming or bf16_streaming",
            });
        }
        Precision::Fp32Streaming => {
            match &mut state.accel {
                slot @ None => *slot = Some(AccelState::Full(Matrix::zeros(rows, cols))),
                Some(AccelState::Full(m)) if m.shape() == (rows, cols) => {}
                Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
            }
            match &mut state.prev_grad {
                slot @ None => *slot = Some(GradSlot::Streaming(Matrix::zeros(rows, cols))),
                Some(GradSlot::Streaming(m)) if m.shape() == (rows, cols) => {}
                Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
            }
            let momentum = state.momentum.as_mut().expect("ensured");
            let Some(AccelState::Full(accel)) = state.accel.as_mut() else { unreachable!() };
            let Some(GradSlot::Streaming(slot)) = state.prev_grad.as_mut() else { unreachable!() };
            for (((&g, s), a), m) in grad
                .as_slice()
                .iter()
                .zip(slot.as_mut_slice())
                .zip(accel.as_mut_slice())
                .zip(momentum.as_mut_slice())
            {
                grad_ss += g * g;
                let d = g - *s; // read the slot for D_k …
                *s = g; // … then overwrite it with G_k
                diff_ss += d * d;
                *a = beta * *a + omb * d;
                accel_ss += *a * *a;
                let t = g + alpha * *a;
                tilde_ss += t * t;
                *m = mu * *m + t;
                momentum_ss += *m * *m;
            }
        }
        Precision::Bf16Streaming => {
            match &mut state.accel {
                slot @ None => {
                    *slot =
                        Some(AccelState::Packed(crate::optim::group::PackedBf16::zeros(rows, cols)))
                }
                Some(AccelState::Packed(p)) if (p.rows, p.cols) == (rows, cols) => {}
                Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
            }
            match &mut state.prev_grad {
                slot @ None => {
                    *slot = Some(GradSlot::PackedStreaming(
                        crate::optim::group::PackedBf16::zeros(rows, cols),
                    ))
                }
                Some(GradSlot::PackedStreaming(p)) if (p.rows, p.cols) == (rows, cols) => {}
                Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
            }
            let momentum = state.momentum.as_mut().expect("ensured");
            let Some(AccelState::Packed(accel)) = state.accel.as_mut() else { unreachable!() };
            let Some(GradSlot::PackedStreaming(slot)) = state.prev_grad.as_mut() else {
                unreachable!()
            };
            for (idx, (&g, m)) in
                grad.as_slice().iter().zip(momentum.as_mut_slice()).enumerate()
            {
                grad_ss += g * g;
                let prev: T = slot.decode_at(idx);
                let d = g - prev;
                slot.encode_at(idx, g);
                diff_ss += d * d;
                let a = beta * slot_decode_guard(accel, idx) + omb * d;
                accel.encode_at(idx, a);
                accel_ss += a * a;
                let t = g + alpha * a;
                tilde_ss += t * t;
                *m = mu * *m + t;
                momentum_ss += *m * *m;
            }
        }
    }
    state.step += 1;

    let momentum = state.momentum.as_ref().expect("ensured");
    let norms = MonaNorms { grad_ss, diff_ss, accel_ss, tilde_ss, momentum_ss };
    Ok(mona_tail(&mut group.weights, momentum, cfg, norms, false, t0))
}

#[inline]
fn slot_decode_guard<T: Scalar>(p: &crate::optim::group::PackedBf16, idx: usize) -> T {
    p.decode_at(idx)
}

/// Shared AdamW inner-update constants for step k.
struct AdamConsts<T> {
    beta1: T,
    omb1: T,
    beta2: T,
    omb2: T,
    bc1: T,
    bc2: T,
    eps: T,
    wd_factor: T,
    lr: T,
}

impl<T: Scalar> AdamConsts<T> {
    fn new(acfg: &AdamConfig, lr: f64, k: u64) -> Self {
        let beta1 = T::from_f64(acfg.beta1);
        let beta2 = T::from_f64(acfg.beta2);
        Self {
            beta1,
            omb1: T::one() - beta1,
            beta2,
            omb2: T::one() - beta2,
            bc1: T::one() - beta1.powi(k as i32),
            bc2: T::one() - beta2.powi(k as i32),
            eps: T::from_f64(acfg.eps),
            wd_factor: T::one() - T::from_f64(lr) * T::from_f64(acfg.weight_decay),
            lr: T::from_f64(lr),
        }
    }
}

/// One AdamW coordinate update: moment EMAs with bias correction, decoupled
/// decay applied to the weight *before* the moment term. Returns
/// (applied change w_old − w_new, direction m̂/(√v̂+ε)).
#[inline]
fn adam_element<T: Scalar>(w: &mut T, m: &mut T, v: &mut T, g: T, c: &AdamConsts<T>) -> (T, T) {
    *m = c.beta1 * *m + c.omb1 * g;
    *v = c.beta2 * *v + c.omb2 * (g * g);
    let mhat = *m / c.bc1;
    let vhat = *v / c.bc2;
    let w_old = *w;
    *w = *w * c.wd_factor;
    let dir = mhat / (vhat.sqrt() + c.eps);
    *w = *w - c.lr * dir;
    (w_old - *w, dir)
}

/// Standard decoupled-weight-decay Adam with bias correction.
pub fn adamw_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    acfg: &AdamConfig,
    lr: f64,
) -> Result<StepTrace<T>, StepError> {
    let t0 = Instant::now();
    const OP: &str = "adamw_step";
    validate_grad(OP, group, grad, false)?;
    let (rows, cols) = group.weights.shape();
    let name = group.name.clone();
    let state = &mut group.state;
    ensure_matrix_buffer(&mut state.adam_m, rows, cols, &name, OP)?;
    ensure_matrix_buffer(&mut state.adam_v, rows, cols, &name, OP)?;
    let k = state.step + 1;
    let c = AdamConsts::new(acfg, lr, k);
    let adam_m = state.adam_m.as_mut().expect("ensured");
    let adam_v = state.adam_v.as_mut().expect("ensured");

    let mut grad_ss = T::zero();
    let mut m_ss = T::zero();
    let mut du_ss = T::zero();
    let mut dir_ss = T::zero();
    for (((w, m), v), &g) in group
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(adam_m.as_mut_slice())
        .zip(adam_v.as_mut_slice())
        .zip(grad.as_slice())
    {
        grad_ss += g * g;
        let (du, dir) = adam_element(w, m, v, g, &c);
        m_ss += *m * *m;
        du_ss += du * du;
        dir_ss += dir * dir;
    }
    state.step = k;

    let grad_norm = grad_ss.sqrt();
    Ok(StepTrace {
        grad_norm,
        tilde_norm: grad_norm, // the moments were fed the raw gradient
        momentum_norm: m_ss.sqrt(),
        update_norm: du_ss.sqrt(),
        direction_norm: dir_ss.sqrt(),
        inner_nanos: t0.elapsed().as_nanos() as u64,
        ..StepTrace::zeroed()
    })
}

/// AdamW with the gradient-difference acceleration: D, A, G̃ are formed
/// exactly as in MONA, then G̃ replaces the raw gradient in the AdamW
/// moment updates. Applies to all parameter kinds.
pub fn adamw_acc_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    grad: &Matrix<T>,
    acfg: &AdamConfig,
    accel_params: (f64, f64),
    lr: f64,
) -> Result<StepTrace<T>, StepError> {
    let t0 = Instant::now();
    const OP: &str = "adamw_acc_step";
    validate_grad(OP, group, grad, false)?;
    let (rows, cols) = group.weights.shape();
    let name = group.name.clone();
    let state = &mut group.state;
    ensure_matrix_buffer(&mut state.adam_m, rows, cols, &name, OP)?;
    ensure_matrix_buffer(&mut state.adam_v, rows, cols, &name, OP)?;
    match &mut state.accel {
        slot @ None => *slot = Some(AccelState::Full(Matrix::zeros(rows, cols))),
        Some(AccelState::Full(m)) if m.shape() == (rows, cols) => {}
        Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
    }
    match &mut state.prev_grad {
        slot @ None => *slot = Some(GradSlot::Buffered(Matrix::zeros(rows, cols))),
        Some(GradSlot::Buffered(m)) if m.shape() == (rows, cols) => {}
        Some(_) => return Err(StepError::StateLayout { param: name, op: OP }),
    }
    let k = state.step + 1;
    let c = AdamConsts::new(acfg, lr, k);
    let (beta_a, alpha_f) = accel_params;
    let beta = T::from_f64(beta_a);
    let omb = T::one() - beta;
    let alpha = T::from_f64(alpha_f);

    let adam_m = state.adam_m.as_mut().expect("ensured");
    let adam_v = state.adam_v.as_mut().expect("ensured");
    let Some(AccelState::Full(accel)) = state.accel.as_mut() else { unreachable!() };
    let Some(GradSlot::Buffered(prev)) = state.prev_grad.as_mut() else { unreachable!() };

    let mut grad_ss = T::zero();
    let mut diff_ss = T::zero();
    let mut accel_ss = T::zero();
    let mut tilde_ss = T::zero();
    let mut m_ss = T::zero();
    let mut du_ss = T::zero();
    let mut dir_ss = T::zero();
    for (((((w, m), v), &g), p), a) in group
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(adam_m.as_mut_slice())
        .zip(adam_v.as_mut_slice())
        .zip(grad.as_slice())
        .zip(prev.as_mut_slice())
        .zip(accel.as_mut_slice())
    {
        grad_ss += g * g;
        let d = g - *p;
        *p = g;
        diff_ss += d * d;
        *a = beta * *a + omb * d;
        accel_ss += *a * *a;
        let t = g + alpha * *a;
        tilde_ss += t * t;
        let (du, dir) = adam_element(w, m, v, t, &c);
        m_ss += *m * *m;
        du_ss += du * du;
        dir_ss += dir * dir;
    }
    state.step = k;

    Ok(StepTrace {
        grad_norm: grad_ss.sqrt(),
        diff_norm: diff_ss.sqrt(),
        accel_norm: accel_ss.sqrt(),
        tilde_norm: tilde_ss.sqrt(),
        momentum_norm: m_ss.sqrt(),
        update_norm: du_ss.sqrt(),
        direction_norm: dir_ss.sqrt(),
        inner_nanos: t0.elapsed().as_nanos() as u64,
        ..StepTrace::zeroed()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::config::{default_alpha, GammaRule};
    use crate::rng::stream_rng;

    type M = Matrix<f64>;

    fn cfg(lr: f64, mu: f64, beta_a: f64, alpha: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            momentum: mu,
            accel_beta: beta_a,
            accel_alpha: alpha,
            weight_decay: wd,
            ..OptimizerConfig::default()
        }
    }

    fn matrix_group(name: &str, w: M) -> ParamGroup<f64> {
        ParamGroup::new(name, ParamKind::Matrix, w)
    }

    fn random_mat(rows: usize, cols: usize, seed: u64, stream: u64) -> M {
        let mut rng = stream_rng(seed, stream);
        M::standard_normal(rows, cols, &mut rng)
    }

    fn bits(m: &M) -> Vec<u64> {
        m.as_slice().iter().map(|x| x.to_bits()).collect()
    }

    fn momentum_of(g: &ParamGroup<f64>) -> &M {
        g.state.momentum.as_ref().expect("momentum buffer")
    }

    fn accel_of(g: &ParamGroup<f64>) -> &M {
        match g.state.accel.as_ref().expect("accel buffer") {
            AccelState::Full(m) => m,
            AccelState::Packed(_) => panic!("expected full-precision accel"),
        }
    }

    fn prev_of(g: &ParamGroup<f64>) -> &M {
        match g.state.prev_grad.as_ref().expect("prev-grad slot") {
            GradSlot::Buffered(m) | GradSlot::Streaming(m) => m,
            GradSlot::PackedStreaming(_) => panic!("expected full-precision slot"),
        }
    }

    /// Hand-unrolled two-step MONA state recursion on diagonal gradients.
    /// The expected values are computed with the identical scalar
    /// expressions the stepper uses per element, so the comparison is
    /// bitwise.
    #[test]
    fn mona_two_step_state_oracle() {
        let mu = 0.9f64;
        let beta = 0.99f64;
        let alpha = -50.0f64;
        let c = cfg(0.1, mu, beta, alpha, 0.0);
        let mut g = matrix_group("w", M::zeros(2, 2));

        let g1 = M::identity(2);
        let g2 = M::identity(2).scale(2.0);
        let t1 = mona_step(&mut g, &g1, &c).unwrap();
        let t2 = mona_step(&mut g, &g2, &c).unwrap();

        // Scalar replay of one diagonal entry through both steps.
        let omb = 1.0 - beta;
        let (mut a, mut m, mut p) = (0.0f64, 0.0f64, 0.0f64);
        let replay = |gv: f64, a: &mut f64, m: &mut f64, p: &mut f64| {
            let d = gv - *p;
            *a = beta * *a + omb * d;
            let t = gv + alpha * *a;
            *m = mu * *m + t;
            *p = gv;
            t
        };
        let t1_tilde = replay(1.0, &mut a, &mut m, &mut p);
        let (a1, m1) = (a, m);
        let t2_tilde = replay(2.0, &mut a, &mut m, &mut p);
        let (a2, m2) = (a, m);

        // First step realizes G̃₁ = (1 + α(1−β_a))·G₁ ≈ 0.5·G₁ here.
        assert!((t1_tilde - 0.5).abs() < 1e-14);
        assert_eq!(accel_of(&g).get(0, 0).to_bits(), a2.to_bits());
        assert_eq!(momentum_of(&g).get(0, 0).to_bits(), m2.to_bits());
        assert_eq!(momentum_of(&g).get(1, 1).to_bits(), m2.to_bits());
        assert_eq!(prev_of(&g).get(0, 0).to_bits(), 2.0f64.to_bits());
        assert_eq!(accel_of(&g).get(0, 1).to_bits(), 0.0f64.to_bits());
        assert_eq!(g.state.step, 2);

        // Trace norms are the same accumulations: diag entries contribute
        // value² twice, off-diagonals contribute zero.
        let two = 2.0f64.sqrt();
        assert!((t1.accel_norm - a1.abs() * two).abs() < 1e-15 * (1.0 + a1.abs()));
        assert!((t1.tilde_norm - t1_tilde.abs() * two).abs() < 1e-15 * (1.0 + t1_tilde.abs()));
        assert!((t1.momentum_norm - m1.abs() * two).abs() < 1e-15 * (1.0 + m1.abs()));
        assert!((t2.tilde_norm - t2_tilde.abs() * two).abs() < 1e-14 * (1.0 + t2_tilde.abs()));
        assert!((t2.grad_norm - 2.0 * two).abs() < 1e-15);
        assert!((t2.diff_norm - two).abs() < 1e-15);
    }

    /// A momentum of diag(0.5, 0.5) orthogonalizes to ≈1.1085·I, so with
    /// γ = 1, η = 1, λ = 0 the realized ΔW is ≈ −1.1085·I.
    #[test]
    fn muon_weight_update_identity_fixture() {
        let mut c = cfg(1.0, 0.95, 0.99, 0.0, 0.0);
        c.gamma_rule = GammaRule::Explicit { value: 1.0 };
        let mut g = matrix_group("w", M::zeros(2, 2));
        let grad = M::from_diag(&[0.5, 0.5]); // M₁ = μ·0 + G = G
        let trace = muon_step(&mut g, &grad, &c).unwrap();
        for i in 0..2 {
            assert!(
                (-g.weights.get(i, i) - 1.1085).abs() < 1e-3,
                "diag {} = {}",
                i,
                g.weights.get(i, i)
            );
        }
        assert!(g.weights.get(0, 1).abs() < 1e-12);
        assert!(g.weights.get(1, 0).abs() < 1e-12);
        assert!(!trace.ns_degenerate);
        assert!((trace.update_norm - trace.direction_norm).abs() < 1e-12);
    }

    /// With the Muon-RMS rule, ‖ΔW‖ = η·0.2√max(m,n)·‖O‖ when λ = 0, i.e.
    /// the update RMS is η·0.2√max(m,n)·‖O‖_F/√(mn).
    #[test]
    fn muon_update_rms_matches_rule() {
        let c = cfg(0.02, 0.95, 0.99, 0.0, 0.0);
        let (rows, cols) = (16, 8);
        let mut g = matrix_group("w", M::zeros(rows, cols));
        let grad = random_mat(rows, cols, 7, 0);
        let trace = muon_step(&mut g, &grad, &c).unwrap();
        let gamma = 0.2 * (rows.max(cols) as f64).sqrt();
        let expect_norm = 0.02 * gamma * trace.direction_norm;
        assert!(
            (trace.update_norm - expect_norm).abs() < 1e-12 * expect_norm,
            "update_norm {} vs {}",
            trace.update_norm,
            expect_norm
        );
        let rms = trace.update_norm / ((rows * cols) as f64).sqrt();
        let expect_rms =
            0.02 * gamma * trace.direction_norm / ((rows * cols) as f64).sqrt();
        assert!((rms - expect_rms).abs() < 1e-12 * expect_rms);
    }

    /// Zero gradient from zero state degenerates NS to the zero direction,
    /// leaving pure decoupled decay W(1 − ηλ).
    #[test]
    fn muon_zero_grad_pure_decay() {
        let c = cfg(0.02, 0.95, 0.99, 0.0, 0.1);
        let w0 = random_mat(4, 4, 11, 0);
        let mut g = matrix_group("w", w0.clone());
        let trace = muon_step(&mut g, &M::zeros(4, 4), &c).unwrap();
        assert!(trace.ns_degenerate);
        for (got, &old) in g.weights.as_slice().iter().zip(w0.as_slice()) {
            let expect = old * (1.0 - 0.02 * 0.1);
            assert!(
                (got - expect).abs() <= 1e-15 * expect.abs(),
                "{} vs {}",
                got,
                expect
            );
        }
    }

    /// Straight-line AdamW reference, written out independently with the
    /// documented operation order; three steps must match bit-for-bit.
    #[test]
    fn adamw_three_step_reference() {
        let acfg = AdamConfig { weight_decay: 0.1, ..AdamConfig::default() };
        let lr = 0.003;
        let w0 = random_mat(3, 2, 21, 0);
        let grads: Vec<M> = (1..=3).map(|s| random_mat(3, 2, 21, s)).collect();

        let mut g = ParamGroup::new("p", ParamKind::Vector, w0.clone());
        for gr in &grads {
            adamw_step(&mut g, gr, &acfg, lr).unwrap();
        }

        // Reference: element-wise loops, same formula order.
        let n = w0.numel();
        let mut w: Vec<f64> = w0.as_slice().to_vec();
        let mut m = vec![0.0f64; n];
        let mut v = vec![0.0f64; n];
        let (b1, b2, eps, wd) = (acfg.beta1, acfg.beta2, acfg.eps, acfg.weight_decay);
        for (k, gr) in grads.iter().enumerate() {
            let k = (k + 1) as i32;
            let bc1 = 1.0 - b1.powi(k);
            let bc2 = 1.0 - b2.powi(k);
            for i in 0..n {
                let gv = gr.as_slice()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gv;
                v[i] = b2 * v[i] + (1.0 - b2) * (gv * gv);
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] = w[i] * (1.0 - lr * wd);
                w[i] = w[i] - lr * (mhat / (vhat.sqrt() + eps));
            }
        }
        for i in 0..n {
            assert_eq!(g.weights.as_slice()[i].to_bits(), w[i].to_bits(), "w[{}]", i);
            assert_eq!(g.state.adam_m.as_ref().unwrap().as_slice()[i].to_bits(), m[i].to_bits());
            assert_eq!(g.state.adam_v.as_ref().unwrap().as_slice()[i].to_bits(), v[i].to_bits());
        }
        assert_eq!(g.state.step, 3);
    }

    /// AdamW-Acc with α = 0 reduces to plain AdamW bit-for-bit.
    #[test]
    fn adamw_acc_alpha_zero_matches_adamw() {
        let acfg = AdamConfig::default();
        let lr = 0.01;
        let w0 = random_mat(4, 3, 33, 0);
        let mut plain = ParamGroup::new("p", ParamKind::Matrix, w0.clone());
        let mut acc = ParamGroup::new("p", ParamKind::Matrix, w0);
        for s in 1..=5u64 {
            let gr = random_mat(4, 3, 33, s);
            adamw_step(&mut plain, &gr, &acfg, lr).unwrap();
            adamw_acc_step(&mut acc, &gr, &acfg, (0.99, 0.0), lr).unwrap();
        }
        assert_eq!(bits(&plain.weights), bits(&acc.weights));
        assert_eq!(
            bits(plain.state.adam_m.as_ref().unwrap()),
            bits(acc.state.adam_m.as_ref().unwrap())
        );
        assert_eq!(
            bits(plain.state.adam_v.as_ref().unwrap()),
            bits(acc.state.adam_v.as_ref().unwrap())
        );
    }

    /// With α = −1/(2(1−β_a)), the first accelerated gradient is ≈ G/2, so
    /// the first AdamW-Acc moment update sees half the raw gradient.
    #[test]
    fn adamw_acc_first_step_half_gradient_moments() {
        let beta_a = 0.99;
        let alpha = default_alpha(beta_a).unwrap();
        let acfg = AdamConfig::default();
        let mut g = ParamGroup::new("p", ParamKind::Matrix, M::zeros(3, 3));
        let grad = random_mat(3, 3, 5, 1);
        let trace = adamw_acc_step(&mut g, &grad, &acfg, (beta_a, alpha), 0.01).unwrap();
        assert!(
            (trace.tilde_norm - 0.5 * trace.grad_norm).abs() < 1e-13 * trace.grad_norm,
            "tilde {} vs half grad {}",
            trace.tilde_norm,
            0.5 * trace.grad_norm
        );
        // adam_m after one step = (1−β₁)·G̃ ≈ (1−β₁)·G/2 per element.
        let m = g.state.adam_m.as_ref().unwrap();
        for (mv, &gv) in m.as_slice().iter().zip(grad.as_slice()) {
            let expect = (1.0 - acfg.beta1) * 0.5 * gv;
            assert!((mv - expect).abs() < 1e-13 * (1.0 + expect.abs()));
        }
    }

    /// MONA with α = 0 is Muon, bit for bit: weights and momentum agree
    /// after every step across random fixtures.
    #[test]
    fn mona_matches_muon_when_alpha_zero() {
        for fixture in 0..10u64 {
            let rows = 2 + (fixture as usize % 4);
            let cols = 2 + ((fixture as usize / 2) % 3);
            let w0 = random_mat(rows, cols, 100 + fixture, 0);
            let c = cfg(0.02, 0.95, 0.99, 0.0, 0.1);
            let mut ma = matrix_group("w", w0.clone());
            let mut mu = matrix_group("w", w0);
            for s in 1..=10u64 {
                let gr = random_mat(rows, cols, 100 + fixture, s);
                mona_step(&mut ma, &gr, &c).unwrap();
                muon_step(&mut mu, &gr, &c).unwrap();
                assert_eq!(bits(&ma.weights), bits(&mu.weights), "fixture {fixture} step {s}");
                assert_eq!(bits(momentum_of(&ma)), bits(momentum_of(&mu)));
            }
        }
    }

    /// The fused streaming pass produces bitwise-identical state and
    /// weights to the buffered four-pass implementation.
    #[test]
    fn streaming_matches_buffered_bitwise() {
        let buffered_cfg = cfg(0.02, 0.95, 0.99, default_alpha(0.99).unwrap(), 0.1);
        let mut streaming_cfg = buffered_cfg.clone();
        streaming_cfg.precision = Precision::Fp32Streaming;
        let w0 = random_mat(5, 4, 55, 0);
        let mut buf = matrix_group("w", w0.clone());
        let mut st = matrix_group("w", w0);
        for s in 1..=10u64 {
            let gr = random_mat(5, 4, 55, s);
            let tb = mona_step(&mut buf, &gr, &buffered_cfg).unwrap();
            let ts = mona_lite_step(&mut st, &gr, &streaming_cfg).unwrap();
            assert_eq!(bits(&buf.weights), bits(&st.weights), "step {s}");
            assert_eq!(bits(momentum_of(&buf)), bits(momentum_of(&st)));
            assert_eq!(bits(accel_of(&buf)), bits(accel_of(&st)));
            assert_eq!(bits(prev_of(&buf)), bits(prev_of(&st)));
            assert_eq!(tb.grad_norm.to_bits(), ts.grad_norm.to_bits());
            assert_eq!(tb.diff_norm.to_bits(), ts.diff_norm.to_bits());
            assert_eq!(tb.accel_norm.to_bits(), ts.accel_norm.to_bits());
            assert_eq!(tb.tilde_norm.to_bits(), ts.tilde_norm.to_bits());
            assert_eq!(tb.momentum_norm.to_bits(), ts.momentum_norm.to_bits());
            assert_eq!(tb.update_norm.to_bits(), ts.update_norm.to_bits());
        }
    }

    /// bf16 streaming runs and keeps state within bf16 rounding of the
    /// full-precision trajectory over a few steps.
    #[test]
    fn bf16_streaming_tracks_fp32_coarsely() {
        let alpha = default_alpha(0.99).unwrap();
        let fp_cfg =
            cfg_with_precision(cfg(0.02, 0.95, 0.99, alpha, 0.0), Precision::Fp32Streaming);
        let bf_cfg =
            cfg_with_precision(cfg(0.02, 0.95, 0.99, alpha, 0.0), Precision::Bf16Streaming);
        let w0 = random_mat(4, 4, 77, 0);
        let mut fp = matrix_group("w", w0.clone());
        let mut bf = matrix_group("w", w0);
        for s in 1..=20u64 {
            let gr = random_mat(4, 4, 77, s);
            mona_lite_step(&mut fp, &gr, &fp_cfg).unwrap();
            mona_lite_step(&mut bf, &gr, &bf_cfg).unwrap();
        }
        let diff = fp.weights.sub(&bf.weights).unwrap().frobenius_norm();
        let scale = fp.weights.frobenius_norm().max(1e-12);
        assert!(diff / scale < 0.05, "relative drift {}", diff / scale);
        assert!(matches!(bf.state.accel, Some(AccelState::Packed(_))));
        assert!(matches!(bf.state.prev_grad, Some(GradSlot::PackedStreaming(_))));
    }

    fn cfg_with_precision(mut c: OptimizerConfig, p: Precision) -> OptimizerConfig {
        c.precision = p;
        c
    }

    /// Non-finite gradients reject the step with the parameter named and
    /// every state buffer untouched.
    #[test]
    fn non_finite_gradient_rejected_state_untouched() {
        let c = cfg(0.02, 0.95, 0.99, -50.0, 0.1);
        let mut g = matrix_group("blk.w", M::zeros(3, 3));
        for s in 1..=2u64 {
            mona_step(&mut g, &random_mat(3, 3, 9, s), &c).unwrap();
        }
        let w_before = bits(&g.weights);
        let m_before = bits(momentum_of(&g));
        let a_before = bits(accel_of(&g));
        let p_before = bits(prev_of(&g));
        let step_before = g.state.step;

        let mut bad = random_mat(3, 3, 9, 3);
        bad.set(1, 2, f64::NAN);
        let err = mona_step(&mut g, &bad, &c).unwrap_err();
        assert_eq!(err, StepError::NonFiniteGradient { param: "blk.w".into() });
        let mut bad_inf = random_mat(3, 3, 9, 4);
        bad_inf.set(0, 0, f64::INFINITY);
        assert!(matches!(
            mona_step(&mut g, &bad_inf, &c),
            Err(StepError::NonFiniteGradient { .. })
        ));

        assert_eq!(bits(&g.weights), w_before);
        assert_eq!(bits(momentum_of(&g)), m_before);
        assert_eq!(bits(accel_of(&g)), a_before);
        assert_eq!(bits(prev_of(&g)), p_before);
        assert_eq!(g.state.step, step_before);

        // Same contract for the AdamW family.
        let mut ag = ParamGroup::new("bias", ParamKind::Vector, M::zeros(3, 1));
        adamw_step(&mut ag, &random_mat(3, 1, 13, 1), &AdamConfig::default(), 0.01).unwrap();
        let aw_before = bits(&ag.weights);
        let mut bad_v = M::zeros(3, 1);
        bad_v.set(2, 0, f64::NEG_INFINITY);
        assert!(matches!(
            adamw_step(&mut ag, &bad_v, &AdamConfig::default(), 0.01),
            Err(StepError::NonFiniteGradient { .. })
        ));
        assert_eq!(bits(&ag.weights), aw_before);
    }

    /// One step from any shared state: MONA's NS input minus Muon's NS
    /// input equals α·A_k.
    #[test]
    fn ns_input_difference_is_alpha_times_accel() {
        let alpha = -20.0;
        let c = cfg(0.02, 0.95, 0.975, alpha, 0.0);
        // Build up a nontrivial shared state with some MONA steps.
        let mut base = matrix_group("w", random_mat(4, 4, 41, 0));
        for s in 1..=7u64 {
            mona_step(&mut base, &random_mat(4, 4, 41, s), &c).unwrap();
        }
        let mut as_muon = base.clone();
        let grad = random_mat(4, 4, 41, 8);
        mona_step(&mut base, &grad, &c).unwrap();
        muon_step(&mut as_muon, &grad, &c).unwrap();

        let m_mona = momentum_of(&base);
        let m_muon = momentum_of(&as_muon);
        let a_k = accel_of(&base);
        for i in 0..16 {
            let lhs = m_mona.as_slice()[i] - m_muon.as_slice()[i];
            let rhs = alpha * a_k.as_slice()[i];
            assert!(
                (lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()),
                "elt {}: {} vs {}",
                i,
                lhs,
                rhs
            );
        }
    }

    #[test]
    fn wrong_kind_and_precision_rejected() {
        let c = cfg(0.02, 0.95, 0.99, -50.0, 0.0);
        let mut vec_group = ParamGroup::new("bias", ParamKind::Vector, M::zeros(4, 1));
        assert!(matches!(
            mona_step(&mut vec_group, &M::zeros(4, 1), &c),
            Err(StepError::WrongKind { .. })
        ));
        let mut mg = matrix_group("w", M::zeros(2, 2));
        assert!(matches!(
            mona_lite_step(&mut mg, &M::zeros(2, 2), &c),
            Err(StepError::WrongPrecision { .. })
        ));
        let streaming = cfg_with_precision(c, Precision::Fp32Streaming);
        assert!(matches!(
            mona_step(&mut mg, &M::zeros(2, 2), &streaming),
            Err(StepError::WrongPrecision { .. })
        ));
        let mut shaped = matrix_group("w", M::zeros(2, 2));
        assert!(matches!(
            muon_step(&mut shaped, &M::zeros(3, 2), &OptimizerConfig::default()),
            Err(StepError::ShapeMismatch { .. })
        ));
    }

    /// The dispatcher sends vector parameters to AdamW under the Muon
    /// family (flagged), and matrix parameters to the family stepper.
    #[test]
    fn dispatcher_routes_vector_params_to_adamw() {
        let c = cfg(0.02, 0.95, 0.99, -50.0, 0.0);
        let mut bias = ParamGroup::new("bias", ParamKind::Vector, M::zeros(4, 1));
        let grad = random_mat(4, 1, 3, 1);
        let trace = optimizer_step(OptimizerKind::Mona, &mut bias, &grad, &c).unwrap();
        assert!(trace.fallback_adamw);
        assert!(bias.state.adam_m.is_some());
        assert!(bias.state.momentum.is_none());

        let mut w = matrix_group("w", M::zeros(4, 4));
        let trace = optimizer_step(OptimizerKind::Mona, &mut w, &random_mat(4, 4, 3, 2), &c)
            .unwrap();
        assert!(!trace.fallback_adamw);
        assert!(w.state.momentum.is_some());

        // AdamW-Acc applies its acceleration to vector params too.
        let mut bias2 = ParamGroup::new("bias", ParamKind::Vector, M::zeros(4, 1));
        let trace =
            optimizer_step(OptimizerKind::AdamWAcc, &mut bias2, &grad, &c).unwrap();
        assert!(!trace.fallback_adamw);
        assert!(bias2.state.accel.is_some());
    }

    #[test]
    fn optimizer_kind_serde_names() {
        for (kind, name) in [
            (OptimizerKind::Mona, "mona"),
            (OptimizerKind::Muon, "muon"),
            (OptimizerKind::MonaLite, "mona_lite"),
            (OptimizerKind::AdamW, "adamw"),
            (OptimizerKind::AdamWAcc, "adamw_acc"),
        ] {
            assert_eq!(kind.to_string(), name);
            assert_eq!(serde_json::to_string(&kind).unwrap(), format!("\"{name}\""));
            let back: OptimizerKind =
                serde_json::from_str(&format!("\"{name}\"")).unwrap();
            assert_eq!(back, kind);
        }
    }
}
