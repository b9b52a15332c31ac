//! A tiny fully-connected network with exact backprop, providing realistic
//! matrix/vector parameter mixtures for end-to-end optimizer runs, plus a
//! teacher-student regression task and the training loop that emits
//! per-step run records.

use std::time::Instant;

use crate::analysis::LemmaTracker;
use crate::matrix::{Matrix, MatrixError};
use crate::optim::{
    classify_param, optimizer_step, OptimizerConfig, OptimizerKind, ParamGroup, StepError,
};
use crate::record::RunRecord;
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use rand::Rng;

/// Training aborts (with a recorded status, not a crash) once the loss
/// exceeds this or turns non-finite.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Architecture + initialization recipe for an MLP.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Layer widths, input first; at least two entries, all positive.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    /// Parameters drawn from uniform(−init_scale, init_scale).
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToynetError {
    #[error("mlp spec `{field}`: {message}")]
    Spec { field: &'static str, message: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Step(#[from] StepError),
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), ToynetError> {
        if self.layer_dims.len() < 2 {
            return Err(ToynetError::Spec {
                field: "layer_dims",
                message: format!("need input and output dims, got {:?}", self.layer_dims),
            });
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(ToynetError::Spec {
                field: "layer_dims",
                message: "all layer dims must be positive".into(),
            });
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(ToynetError::Spec {
                field: "init_scale",
                message: format!("must be positive and finite, got {}", self.init_scale),
            });
        }
        Ok(())
    }
}

/// An instantiated MLP. Layer `l` owns `layer{l}.weight` (d_in×d_out,
/// applied as X·W) and `layer{l}.bias` (d_out×1, broadcast over the batch),
/// stored as parameter groups routed by [`classify_param`]. Hidden layers
/// apply the activation; the output layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp<T: Scalar> {
    pub activation: Activation,
    pub layer_dims: Vec<usize>,
    pub params: Vec<ParamGroup<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Weights and biases drawn from uniform(−s, s), each tensor from its
    /// own seeded stream so layer count does not shift other layers' draws.
    pub fn new(spec: &MlpSpec) -> Result<Self, ToynetError> {
        spec.validate()?;
        let mut params = Vec::new();
        for l in 0..spec.layer_dims.len() - 1 {
            let (d_in, d_out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
            let scale = T::from_f64(spec.init_scale);
            let draw = |rows: usize, cols: usize, stream: u64| {
                let mut rng = stream_rng(spec.init_seed, stream);
                Matrix::from_fn(rows, cols, |_, _| {
                    let u: f64 = rng.gen_range(-1.0..1.0);
                    scale * T::from_f64(u)
                })
            };
            let w_name = format!("layer{l}.weight");
            let w = draw(d_in, d_out, 2 * l as u64);
            params.push(ParamGroup::new(
                w_name.clone(),
                classify_param(&w_name, (d_in, d_out)),
                w,
            ));
            let b_name = format!("layer{l}.bias");
            let b = draw(d_out, 1, 2 * l as u64 + 1);
            params.push(ParamGroup::new(
                b_name.clone(),
                classify_param(&b_name, (d_out, 1)),
                b,
            ));
        }
        Ok(Self { activation: spec.activation, layer_dims: spec.layer_dims.clone(), params })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    fn weight(&self, l: usize) -> &Matrix<T> {
        &self.params[2 * l].weights
    }

    fn bias(&self, l: usize) -> &Matrix<T> {
        &self.params[2 * l + 1].weights
    }

    fn apply_activation(&self, z: &Matrix<T>) -> Matrix<T> {
        match self.activation {
            Activation::Tanh => z.map(|x| x.tanh()),
            Activation::Relu => z.map(|x| if x > T::zero() { x } else { T::zero() }),
        }
    }

    /// Derivative of the activation given pre-activation z and a = act(z).
    fn activation_prime(&self, z: T, a: T) -> T {
        match self.activation {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Forward pass on a batch (rows = examples, cols = input_dim).
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>, ToynetError> {
        Ok(self.forward_full(x)?.0.pop().expect("at least the input activation"))
    }

    /// All activations [A₀ = X, …, A_L] and pre-activations [Z₁, …, Z_L].
    fn forward_full(
        &self,
        x: &Matrix<T>,
    ) -> Result<(Vec<Matrix<T>>, Vec<Matrix<T>>), ToynetError> {
        if x.cols() != self.input_dim() {
            return Err(MatrixError::DimMismatch {
                op: "mlp_forward",
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: x.rows(),
                rhs_cols: self.input_dim(),
            }
            .into());
        }
        let n = self.n_layers();
        let mut acts = Vec::with_capacity(n + 1);
        let mut zs = Vec::with_capacity(n);
        acts.push(x.clone());
        for l in 0..n {
            let mut z = acts[l].matmul(self.weight(l))?;
            let bias = self.bias(l);
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    let v = z.get(i, j) + bias.get(j, 0);
                    z.set(i, j, v);
                }
            }
            let a = if l + 1 == n { z.clone() } else { self.apply_activation(&z) };
            zs.push(z);
            acts.push(a);
        }
        Ok((acts, zs))
    }
}

/// Mean-squared error over the batch: ‖pred − targets‖²_F / batch.
pub fn mse_loss<T: Scalar>(pred: &Matrix<T>, targets: &Matrix<T>) -> Result<T, ToynetError> {
    let diff = pred.sub(targets)?;
    let b = T::from_f64(pred.rows() as f64);
    Ok(diff.frobenius_norm().powi(2) / b)
}

/// Loss and exact gradients for every parameter group, in the order the
/// network stores its parameters (layer0.weight, layer0.bias, …).
pub fn forward_backward<T: Scalar>(
    net: &Mlp<T>,
    inputs: &Matrix<T>,
    targets: &Matrix<T>,
) -> Result<(T, Vec<Matrix<T>>), ToynetError> {
    if targets.rows() != inputs.rows() || targets.cols() != net.output_dim() {
        return Err(MatrixError::DimMismatch {
            op: "mlp_targets",
            lhs_rows: targets.rows(),
            lhs_cols: targets.cols(),
            rhs_rows: inputs.rows(),
            rhs_cols: net.output_dim(),
        }
        .into());
    }
    let n = net.n_layers();
    let (acts, zs) = net.forward_full(inputs)?;
    let pred = &acts[n];
    let loss = mse_loss(pred, targets)?;

    let batch = T::from_f64(inputs.rows() as f64);
    let two = T::from_f64(2.0);
    // dL/dZ_L for the linear output layer.
    let mut dz = pred.sub(targets)?.scale(two / batch);
    let mut grads: Vec<Option<Matrix<T>>> = (0..2 * n).map(|_| None).collect();
    for l in (0..n).rev() {
        let dw = acts[l].transpose().matmul(&dz)?;
        // Bias gradient: column sums of dZ.
        let mut db = Matrix::zeros(dz.cols(), 1);
        for i in 0..dz.rows() {
            for j in 0..dz.cols() {
                let v = db.get(j, 0) + dz.get(i, j);
                db.set(j, 0, v);
            }
        }
        grads[2 * l] = Some(dw);
        grads[2 * l + 1] = Some(db);
        if l > 0 {
            let da = dz.matmul_transposed(net.weight(l))?;
            let z_prev = &zs[l - 1];
            let a_prev = &acts[l];
            let mut next = Matrix::zeros(da.rows(), da.cols());
            for idx in 0..da.numel() {
                let z = z_prev.as_slice()[idx];
                let a = a_prev.as_slice()[idx];
                next.as_mut_slice()[idx] =
                    da.as_slice()[idx] * net.activation_prime(z, a);
            }
            dz = next;
        }
    }
    Ok((loss, grads.into_iter().map(|g| g.expect("filled")).collect()))
}

/// Teacher-student regression: targets are a frozen teacher's outputs on
/// seeded Gaussian inputs; the global optimum value is 0 when student
/// capacity ≥ teacher capacity.
#[derive(Debug, Clone)]
pub struct TeacherStudentTask<T: Scalar> {
    pub teacher: Mlp<T>,
    pub batch_size: usize,
    pub data_seed: u64,
}

/// Stream index reserved for the held-out batch; training steps count from
/// 1 and never reach it.
const HELD_OUT_STREAM: u64 = u64::MAX;

impl<T: Scalar> TeacherStudentTask<T> {
    pub fn new(teacher: Mlp<T>, batch_size: usize, data_seed: u64) -> Result<Self, ToynetError> {
        if batch_size == 0 {
            return Err(ToynetError::Spec {
                field: "batch_size",
                message: "batch size must be positive".into(),
            });
        }
        Ok(Self { teacher, batch_size, data_seed })
    }

    pub fn input_dim(&self) -> usize {
        self.teacher.input_dim()
    }

    fn batch_from_stream(&self, key: u64, stream: u64) -> Result<(Matrix<T>, Matrix<T>), ToynetError> {
        let mut rng = stream_rng(key, stream);
        let x = Matrix::standard_normal(self.batch_size, self.input_dim(), &mut rng);
        let y = self.teacher.forward(&x)?;
        Ok((x, y))
    }

    /// Training batch for (run seed, step): run seeds shift the data
    /// stream so paired runs across optimizers see identical data.
    pub fn train_batch(&self, run_seed: u64, step: u64) -> Result<(Matrix<T>, Matrix<T>), ToynetError> {
        self.batch_from_stream(self.data_seed ^ run_seed, step)
    }

    /// Fixed held-out batch, identical for every run of this task and
    /// disjoint from all training streams.
    pub fn held_out_batch(&self) -> Result<(Matrix<T>, Matrix<T>), ToynetError> {
        self.batch_from_stream(self.data_seed, HELD_OUT_STREAM)
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub records: Vec<RunRecord>,
    pub diverged: bool,
    /// Held-out loss after the final completed step (None if diverged).
    pub final_eval_loss: Option<f64>,
    /// Whether any step routed a parameter through the AdamW fallback.
    pub fallback_seen: bool,
    pub student: Mlp<T>,
}

/// Train `student` on the task with the given optimizer for `steps` steps.
/// Deterministic given (task, spec, optimizer, seed). Held-out loss is
/// recorded every `eval_every` steps (0 = never). Divergence (loss above
/// [`DIVERGENCE_LOSS`] or non-finite values) stops the run with a final
/// record carrying the offending loss.
pub fn train<T: Scalar>(
    task: &TeacherStudentTask<T>,
    student_spec: &MlpSpec,
    kind: OptimizerKind,
    cfg: &OptimizerConfig,
    steps: u64,
    eval_every: u64,
    seed: u64,
) -> Result<TrainOutcome<T>, ToynetError> {
    let mut student = Mlp::new(student_spec)?;
    let mut records = Vec::with_capacity(steps as usize);
    let mut tracker = LemmaTracker::new(cfg.accel_alpha, cfg.momentum);
    let mut diverged = false;
    let mut fallback_seen = false;

    for step in 1..=steps {
        let iter_t0 = Instant::now();
        let (x, y) = task.train_batch(seed, step)?;
        let (loss, grads) = forward_backward(&student, &x, &y)?;
        let loss_f = loss.to_f64();
        if !loss_f.is_finite() || loss_f > DIVERGENCE_LOSS {
            diverged = true;
            records.push(RunRecord {
                step,
                train_loss: loss_f,
                eval_loss: None,
                grad_norm: 0.0,
                diff_norm: 0.0,
                accel_norm: 0.0,
                tilde_norm: 0.0,
                momentum_norm: 0.0,
                update_norm: 0.0,
                ns_degenerate: false,
                adamw_fallback: false,
                lemma_accel_ok: true,
                lemma_tilde_ok: true,
                lemma_momentum_ok: true,
                inner_ns: 0,
                iter_ns: iter_t0.elapsed().as_nanos() as u64,
            });
            break;
        }

        // Aggregate trace norms over the parameters on the optimizer's
        // primary path; fallback parameters surface through the flag only.
        let mut ss = [0.0f64; 6]; // grad, diff, accel, tilde, momentum, update
        let mut ns_degenerate = false;
        let mut any_fallback = false;
        let mut inner_ns = 0u64;
        let mut step_failed: Option<StepError> = None;
        for (group, grad) in student.params.iter_mut().zip(&grads) {
            let trace = match optimizer_step(kind, group, grad, cfg) {
                Ok(t) => t,
                Err(e @ StepError::NonFiniteGradient { .. }) => {
                    step_failed = Some(e);
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            inner_ns += trace.inner_nanos;
            if trace.fallback_adamw {
                any_fallback = true;
                continue;
            }
            ns_degenerate |= trace.ns_degenerate;
            for (acc, v) in ss.iter_mut().zip([
                trace.grad_norm.to_f64(),
                trace.diff_norm.to_f64(),
                trace.accel_norm.to_f64(),
                trace.tilde_norm.to_f64(),
                trace.momentum_norm.to_f64(),
                trace.update_norm.to_f64(),
            ]) {
                *acc += v * v;
            }
        }
        if step_failed.is_some() {
            // Non-finite gradients are a divergence symptom; stop with the
            // status recorded rather than crash.
            diverged = true;
            records.push(RunRecord {
                step,
                train_loss: loss_f,
                eval_loss: None,
                grad_norm: f64::NAN,
                diff_norm: 0.0,
                accel_norm: 0.0,
                tilde_norm: 0.0,
                momentum_norm: 0.0,
                update_norm: 0.0,
                ns_degenerate: false,
                adamw_fallback: false,
                lemma_accel_ok: true,
                lemma_tilde_ok: true,
                lemma_momentum_ok: true,
                inner_ns: 0,
                iter_ns: iter_t0.elapsed().as_nanos() as u64,
            });
            break;
        }
        fallback_seen |= any_fallback;
        let [g, d, a, t, m, u] = ss.map(f64::sqrt);
        let flags = tracker.observe(g, a, t, m);
        let eval_loss = if eval_every > 0 && step % eval_every == 0 {
            let (hx, hy) = task.held_out_batch()?;
            Some(mse_loss(&student.forward(&hx)?, &hy)?.to_f64())
        } else {
            None
        };
        records.push(RunRecord {
            step,
            train_loss: loss_f,
            eval_loss,
            grad_norm: g,
            diff_norm: d,
            accel_norm: a,
            tilde_norm: t,
            momentum_norm: m,
            update_norm: u,
            ns_degenerate,
            adamw_fallback: any_fallback,
            lemma_accel_ok: flags.accel_ok,
            lemma_tilde_ok: flags.tilde_ok,
            lemma_momentum_ok: flags.momentum_ok,
            inner_ns,
            iter_ns: iter_t0.elapsed().as_nanos() as u64,
        });
    }

    let final_eval_loss = if diverged {
        None
    } else {
        let (hx, hy) = task.held_out_batch()?;
        Some(mse_loss(&student.forward(&hx)?, &hy)?.to_f64())
    };
    Ok(TrainOutcome { records, diverged, final_eval_loss, fallback_seen, student })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::ParamKind;
    use crate::record::csv_string;

    type M = Matrix<f64>;

    fn spec(dims: &[usize], seed: u64) -> MlpSpec {
        MlpSpec {
            layer_dims: dims.to_vec(),
            activation: Activation::Tanh,
            init_seed: seed,
            init_scale: 0.5,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(Mlp::<f64>::new(&spec(&[4], 1)).is_err());
        assert!(Mlp::<f64>::new(&spec(&[4, 0, 2], 1)).is_err());
        let mut s = spec(&[4, 2], 1);
        s.init_scale = 0.0;
        assert!(Mlp::<f64>::new(&s).is_err());
        let net = Mlp::<f64>::new(&spec(&[4, 8, 2], 1)).unwrap();
        assert_eq!(net.params.len(), 4);
        assert_eq!(net.params[0].name, "layer0.weight");
        assert_eq!(net.params[0].kind, ParamKind::Matrix);
        assert_eq!(net.params[1].name, "layer0.bias");
        assert_eq!(net.params[1].kind, ParamKind::Vector);
        assert_eq!(net.params[0].weights.shape(), (4, 8));
        assert_eq!(net.params[1].weights.shape(), (8, 1));
        // Init respects the scale bound.
        assert!(net.params[0].weights.max_abs() <= 0.5);
    }

    #[test]
    fn zero_student_zero_targets_zero_loss() {
        let mut net = Mlp::<f64>::new(&spec(&[3, 2], 7)).unwrap();
        for p in &mut net.params {
            p.weights.scale_in_place(0.0);
        }
        let x = M::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let y = M::zeros(2, 2);
        let (loss, grads) = forward_backward(&net, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        for g in grads {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn single_layer_matches_least_squares_oracle() {
        let mut net = Mlp::<f64>::new(&spec(&[3, 2], 9)).unwrap();
        // Zero the bias so the closed form Xᵀ(XW−Y)·(2/B) applies exactly.
        net.params[1].weights.scale_in_place(0.0);
        let mut rng = stream_rng(91, 0);
        let x = M::standard_normal(8, 3, &mut rng);
        let y = M::standard_normal(8, 2, &mut rng);
        let (loss, grads) = forward_backward(&net, &x, &y).unwrap();

        let w = &net.params[0].weights;
        let resid = x.matmul(w).unwrap().sub(&y).unwrap();
        let expect_loss = resid.frobenius_norm().powi(2) / 8.0;
        assert!((loss - expect_loss).abs() <= 1e-12 * expect_loss);
        let expect_dw = x.transpose().matmul(&resid).unwrap().scale(2.0 / 8.0);
        let err = grads[0].sub(&expect_dw).unwrap().max_abs();
        assert!(err <= 1e-10, "least-squares gradient error {err}");
        // Bias gradient: column sums of (2/B)(XW−Y).
        for j in 0..2 {
            let mut s = 0.0;
            for i in 0..8 {
                s += resid.get(i, j) * (2.0 / 8.0);
            }
            assert!((grads[1].get(j, 0) - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_4_8_4_tanh() {
        let net = Mlp::<f64>::new(&spec(&[4, 8, 4], 13)).unwrap();
        let mut rng = stream_rng(14, 0);
        let x = M::standard_normal(6, 4, &mut rng);
        let y = M::standard_normal(6, 4, &mut rng);
        let (_, grads) = forward_backward(&net, &x, &y).unwrap();
        let h = 1e-5;
        for (pi, group) in net.params.iter().enumerate() {
            for idx in 0..group.weights.numel() {
                let mut plus = net.clone();
                plus.params[pi].weights.as_mut_slice()[idx] += h;
                let (lp, _) = forward_backward(&plus, &x, &y).unwrap();
                let mut minus = net.clone();
                minus.params[pi].weights.as_mut_slice()[idx] -= h;
                let (lm, _) = forward_backward(&minus, &x, &y).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let err = (grads[pi].as_slice()[idx] - fd).abs();
                assert!(err <= 1e-5, "param {pi} elt {idx}: error {err}");
            }
        }
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        let mut s = spec(&[3, 6, 2], 15);
        s.activation = Activation::Relu;
        let net = Mlp::<f64>::new(&s).unwrap();
        let mut rng = stream_rng(16, 0);
        let x = M::standard_normal(5, 3, &mut rng);
        let y = M::standard_normal(5, 2, &mut rng);
        let (_, grads) = forward_backward(&net, &x, &y).unwrap();
        let h = 1e-6;
        for (pi, group) in net.params.iter().enumerate() {
            for idx in 0..group.weights.numel() {
                let mut plus = net.clone();
                plus.params[pi].weights.as_mut_slice()[idx] += h;
                let (lp, _) = forward_backward(&plus, &x, &y).unwrap();
                let mut minus = net.clone();
                minus.params[pi].weights.as_mut_slice()[idx] -= h;
                let (lm, _) = forward_backward(&minus, &x, &y).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let err = (grads[pi].as_slice()[idx] - fd).abs();
                // ReLU kinks can inflate fd error; the fixture avoids
                // activations within h of zero with overwhelming probability.
                assert!(err <= 1e-4, "param {pi} elt {idx}: error {err}");
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Mlp::<f64>::new(&spec(&[4, 2], 1)).unwrap();
        let x = M::zeros(3, 5);
        assert!(net.forward(&x).is_err());
        let x = M::zeros(3, 4);
        let y = M::zeros(3, 3);
        assert!(forward_backward(&net, &x, &y).is_err());
    }

    fn toy_task(seed: u64) -> TeacherStudentTask<f64> {
        let teacher = Mlp::new(&spec(&[4, 8, 4], seed)).unwrap();
        TeacherStudentTask::new(teacher, 16, 1000 + seed).unwrap()
    }

    #[test]
    fn lr_zero_keeps_loss_constant() {
        let task = toy_task(21);
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            accel_alpha: 0.0,
            ..OptimizerConfig::default()
        };
        let out = train(&task, &spec(&[4, 8, 4], 22), OptimizerKind::Muon, &cfg, 20, 5, 3)
            .unwrap();
        assert!(!out.diverged);
        // λ = 0 and lr = 0: weights never move, bit for bit.
        let fresh = Mlp::<f64>::new(&spec(&[4, 8, 4], 22)).unwrap();
        for (trained, init) in out.student.params.iter().zip(&fresh.params) {
            for (a, b) in trained.weights.as_slice().iter().zip(init.weights.as_slice()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // The evaluation trajectory (fixed held-out batch) is constant.
        let evals: Vec<f64> =
            out.records.iter().filter_map(|r| r.eval_loss).collect();
        assert_eq!(evals.len(), 4);
        for e in &evals {
            assert_eq!(e.to_bits(), evals[0].to_bits());
        }
        let (hx, hy) = task.held_out_batch().unwrap();
        let base = mse_loss(&fresh.forward(&hx).unwrap(), &hy).unwrap();
        assert_eq!(out.final_eval_loss.unwrap().to_bits(), base.to_bits());
    }

    #[test]
    fn same_seed_byte_identical_records() {
        let task = toy_task(23);
        let cfg = OptimizerConfig::default();
        let run = |_: u32| {
            train(&task, &spec(&[4, 8, 4], 24), OptimizerKind::Mona, &cfg, 30, 10, 77)
                .unwrap()
        };
        let a = run(0);
        let b = run(1);
        assert_eq!(csv_string(&a.records, false), csv_string(&b.records, false));
        // A different seed must differ.
        let c = train(&task, &spec(&[4, 8, 4], 24), OptimizerKind::Mona, &cfg, 30, 10, 78)
            .unwrap();
        assert_ne!(csv_string(&a.records, false), csv_string(&c.records, false));
    }

    #[test]
    fn divergence_recorded_not_crashed() {
        let task = toy_task(25);
        let cfg = OptimizerConfig {
            learning_rate: 1000.0,
            adam: crate::optim::AdamConfig { weight_decay: 0.0, ..Default::default() },
            ..OptimizerConfig::default()
        };
        let out = train(&task, &spec(&[4, 8, 4], 26), OptimizerKind::AdamW, &cfg, 200, 0, 5)
            .unwrap();
        assert!(out.diverged);
        assert!(out.final_eval_loss.is_none());
        let last = out.records.last().unwrap();
        assert!(
            !last.train_loss.is_finite() || last.train_loss > DIVERGENCE_LOSS,
            "last loss {}",
            last.train_loss
        );
        assert!((out.records.len() as u64) < 200);
    }

    #[test]
    fn vector_params_take_adamw_fallback_every_step() {
        let task = toy_task(27);
        let cfg = OptimizerConfig::default();
        let out = train(&task, &spec(&[4, 8, 4], 28), OptimizerKind::Mona, &cfg, 15, 0, 2)
            .unwrap();
        assert!(out.fallback_seen);
        for r in &out.records {
            assert!(r.adamw_fallback, "step {} missing the fallback flag", r.step);
        }
        // AdamW runs never set the flag.
        let out = train(&task, &spec(&[4, 8, 4], 28), OptimizerKind::AdamW, &cfg, 15, 0, 2)
            .unwrap();
        assert!(!out.fallback_seen);
    }

    #[test]
    fn short_muon_run_reduces_trailing_loss() {
        let task = toy_task(29);
        let cfg = OptimizerConfig::default();
        let out = train(&task, &spec(&[4, 8, 4], 30), OptimizerKind::Muon, &cfg, 500, 0, 9)
            .unwrap();
        assert!(!out.diverged);
        let mean = |range: std::ops::Range<usize>| {
            let slice = &out.records[range];
            slice.iter().map(|r| r.train_loss).sum::<f64>() / slice.len() as f64
        };
        let early = mean(50..100);
        let late = mean(450..500);
        assert!(late < early, "late {late} not below early {early}");
        // Lemma flags hold throughout.
        for r in &out.records {
            assert!(r.lemma_accel_ok && r.lemma_tilde_ok && r.lemma_momentum_ok);
        }
    }
}
