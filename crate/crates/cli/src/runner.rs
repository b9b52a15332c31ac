//! Experiment orchestration: executes every (optimizer, seed) cell of a
//! validated config, persists per-cell CSVs and checkpoints, and writes
//! the summary and verification report.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mona::analysis::{check_lemma_bounds, AlignmentSample, CheckReport, CheckStatus, LemmaTracker};
use mona::checkpoint::checkpoint_from_groups;
use mona::landscape::{Landscape, StochasticGradientOracle};
use mona::optim::{optimizer_step, OptimizerConfig, OptimizerKind, ParamGroup, ParamKind, StepError};
use mona::record::{steps_strictly_increasing, write_csv, RunRecord};
use mona::toynet::{train, DIVERGENCE_LOSS};
use mona::Mat;
use serde::Serialize;

use crate::config::{CliError, ExperimentConfig, ResolvedRun, TaskInstance};

/// Result of one (optimizer, seed) cell.
pub struct CellOutcome {
    pub optimizer: String,
    pub kind: OptimizerKind,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub final_eval_loss: Option<f64>,
    pub diverged: bool,
    /// (accel_alpha, momentum) the run used, for lemma re-checks.
    pub alpha_mu: (f64, f64),
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerSummary {
    pub name: String,
    pub kind: OptimizerKind,
    /// Final held-out (toynet) or final true (landscape) loss per seed,
    /// in seed order; null for diverged runs.
    pub final_losses: Vec<Option<f64>>,
    pub mean_final_loss: Option<f64>,
    /// Sample standard deviation over non-diverged seeds (n ≥ 2).
    pub std_final_loss: Option<f64>,
    pub n_diverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub optimizers: Vec<OptimizerSummary>,
}

pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub reports: Vec<CheckReport>,
    pub cells: Vec<CellOutcome>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Run a full experiment. `root_override` (used by tests) takes precedence
/// over the `MONA_OUTPUT_ROOT` environment variable, which takes
/// precedence over the config's `output_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    root_override: Option<&Path>,
) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    let resolved = cfg.resolve()?;
    let out_dir = cfg.output_root(root_override).join(&cfg.experiment);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let echo = cfg.echo()?;
    write_file(&out_dir.join("config.json"), echo.as_bytes())?;

    let mut cells = Vec::new();
    for run in &resolved {
        for &seed in &cfg.seeds {
            let cell = execute_cell(cfg, run, seed, &out_dir, &echo)?;
            cells.push(cell);
        }
    }

    let summary = summarize(cfg, &resolved, &cells);
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Io(format!("serializing summary: {e}")))?;
    write_file(&out_dir.join("summary.json"), summary_json.as_bytes())?;

    let reports = verification_reports(&cells);
    let report_json = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Io(format!("serializing report: {e}")))?;
    write_file(&out_dir.join("report.json"), report_json.as_bytes())?;

    Ok(ExperimentOutput { out_dir, summary, reports, cells })
}

fn execute_cell(
    cfg: &ExperimentConfig,
    run: &ResolvedRun,
    seed: u64,
    out_dir: &Path,
    echo: &str,
) -> Result<CellOutcome, CliError> {
    let (records, final_eval_loss, diverged, groups) = match cfg.task.build()? {
        TaskInstance::TeacherStudent { task, student } => {
            // Mix the run seed into the student init so seeds vary both
            // initialization and batches, identically across optimizers.
            let mut spec = student;
            spec.init_seed ^= seed;
            let out =
                train(&task, &spec, run.kind, &run.config, cfg.steps, cfg.eval_every, seed)
                    .map_err(|e| CliError::Check(format!("run {}/{seed}: {e}", run.name)))?;
            (out.records, out.final_eval_loss, out.diverged, out.student.params)
        }
        TaskInstance::Quadratic { landscape, init, noise_sigma, clip_bound } => {
            let opts = LandscapeRunOptions { eval_every: cfg.eval_every, ..Default::default() };
            let out = run_landscape(
                &landscape, run.kind, &run.config, noise_sigma, clip_bound, &init, seed,
                cfg.steps, &opts,
            )?;
            let final_eval = (!out.diverged).then_some(out.final_loss);
            (out.records, final_eval, out.diverged, vec![out.group])
        }
        TaskInstance::DoubleWell { landscape, init, noise_sigma, clip_bound } => {
            let opts = LandscapeRunOptions { eval_every: cfg.eval_every, ..Default::default() };
            let out = run_landscape(
                &landscape, run.kind, &run.config, noise_sigma, clip_bound, &init, seed,
                cfg.steps, &opts,
            )?;
            let final_eval = (!out.diverged).then_some(out.final_loss);
            (out.records, final_eval, out.diverged, vec![out.group])
        }
    };

    let csv_path = out_dir.join(format!("{}-seed{}.csv", run.name, seed));
    let mut csv = Vec::new();
    write_csv(&mut csv, &records, cfg.include_timing)
        .map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e))?;
    write_file(&csv_path, &csv)?;

    let checkpoint_path = out_dir.join(format!("{}-seed{}.ckpt", run.name, seed));
    let meta = serde_json::json!({
        "experiment": cfg.experiment,
        "optimizer": run.name,
        "seed": seed,
        "diverged": diverged,
        "config_echo": serde_json::from_str::<serde_json::Value>(echo)
            .map_err(|e| CliError::Io(format!("re-parsing echo: {e}")))?,
    });
    checkpoint_from_groups(meta, &groups)
        .save(&checkpoint_path)
        .map_err(|e| CliError::io(format!("writing {}", checkpoint_path.display()), e))?;

    Ok(CellOutcome {
        optimizer: run.name.clone(),
        kind: run.kind,
        seed,
        records,
        final_eval_loss,
        diverged,
        alpha_mu: (run.config.accel_alpha, run.config.momentum),
        csv_path,
        checkpoint_path,
    })
}

fn summarize(cfg: &ExperimentConfig, resolved: &[ResolvedRun], cells: &[CellOutcome]) -> Summary {
    let mut optimizers = Vec::new();
    for run in resolved {
        let mine: Vec<&CellOutcome> =
            cells.iter().filter(|c| c.optimizer == run.name).collect();
        let final_losses: Vec<Option<f64>> = mine.iter().map(|c| c.final_eval_loss).collect();
        let finite: Vec<f64> = final_losses.iter().flatten().copied().collect();
        let mean = (!finite.is_empty())
            .then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let std = (finite.len() >= 2).then(|| {
            let m = mean.expect("non-empty");
            (finite.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (finite.len() - 1) as f64)
                .sqrt()
        });
        optimizers.push(OptimizerSummary {
            name: run.name.clone(),
            kind: run.kind,
            final_losses,
            mean_final_loss: mean,
            std_final_loss: std,
            n_diverged: mine.iter().filter(|c| c.diverged).count(),
        });
    }
    Summary {
        experiment: cfg.experiment.clone(),
        steps: cfg.steps,
        seeds: cfg.seeds.clone(),
        optimizers,
    }
}

/// Post-run verification: per-optimizer lemma bounds (Muon-family runs)
/// and strict step monotonicity for every cell.
fn verification_reports(cells: &[CellOutcome]) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let mut seen = Vec::new();
    for cell in cells {
        if seen.contains(&&cell.optimizer) {
            continue;
        }
        seen.push(&cell.optimizer);
        if !matches!(
            cell.kind,
            OptimizerKind::Mona | OptimizerKind::Muon | OptimizerKind::MonaLite
        ) {
            reports.push(
                CheckReport::new(
                    format!("lemma_bounds_{}", cell.optimizer),
                    CheckStatus::Skipped {
                        reason: format!(
                            "{} is outside the Muon family; the norm bounds target the \
                             acceleration recursion",
                            cell.kind.name()
                        ),
                    },
                ),
            );
            continue;
        }
        let mut total_steps = 0u64;
        let mut violations = 0usize;
        let mut g_max = 0.0f64;
        for c in cells.iter().filter(|c| c.optimizer == cell.optimizer) {
            let rep = check_lemma_bounds(&c.records, c.alpha_mu.0, c.alpha_mu.1);
            total_steps += rep.total_steps;
            violations += rep.violations.len();
            g_max = g_max.max(rep.g_max);
        }
        let status = if violations == 0 { CheckStatus::Pass } else { CheckStatus::Fail };
        reports.push(
            CheckReport::new(format!("lemma_bounds_{}", cell.optimizer), status)
                .metric("total_steps", total_steps as f64)
                .metric("violations", violations as f64)
                .metric("g_max", g_max),
        );
    }
    let monotone = cells.iter().all(|c| steps_strictly_increasing(&c.records));
    reports.push(CheckReport::new(
        "steps_strictly_increasing",
        if monotone { CheckStatus::Pass } else { CheckStatus::Fail },
    ));
    reports
}

/// Options for the generic landscape driver.
#[derive(Debug, Clone, Default)]
pub struct LandscapeRunOptions {
    /// Record an eval loss every this many steps (0 = never).
    pub eval_every: u64,
    /// Capture per-step orthogonalized directions and true-gradient
    /// alignment samples (costs one matrix copy per step).
    pub capture_alignment: bool,
    /// Snapshot the acceleration state after every step.
    pub collect_accel: bool,
}

/// Everything a landscape run produces beyond its records.
pub struct LandscapeRun {
    pub records: Vec<RunRecord>,
    /// ⟨∇f(W_k), O_k⟩ and ‖∇f(W_k)‖² per step (capture_alignment).
    pub align: Vec<AlignmentSample>,
    /// Acceleration snapshots per step (collect_accel).
    pub accel_snaps: Vec<Mat>,
    pub f0: f64,
    pub final_loss: f64,
    /// (1/K)·Σ ‖∇f(W_{k−1})‖² over true (noise-free) gradients.
    pub mean_true_grad_sq: f64,
    /// max over steps of ‖O_k‖²_F (capture_alignment).
    pub max_o_sq: f64,
    /// Largest noisy-gradient norm fed to the optimizer.
    pub max_noisy_grad_norm: f64,
    pub group: ParamGroup<f64>,
    pub diverged: bool,
}

/// Drive one optimizer over a stochastic landscape for `steps` steps.
/// Loss divergence (non-finite or above the toynet divergence threshold)
/// ends the run early with `diverged` set, mirroring the toynet driver.
#[allow(clippy::too_many_arguments)]
pub fn run_landscape<L>(
    landscape: &L,
    kind: OptimizerKind,
    cfg: &OptimizerConfig,
    noise_sigma: f64,
    clip_bound: f64,
    init: &Mat,
    seed: u64,
    steps: u64,
    opts: &LandscapeRunOptions,
) -> Result<LandscapeRun, CliError>
where
    L: Landscape<f64> + Clone,
{
    let invalid = |e: &dyn Display| CliError::Validation(format!("landscape run: {e}"));
    let oracle = StochasticGradientOracle::new(landscape.clone(), noise_sigma, clip_bound, seed)
        .map_err(|e| invalid(&e))?;
    let mut step_cfg = cfg.clone();
    step_cfg.capture_directions = opts.capture_alignment;
    let mut group = ParamGroup::new("w".to_string(), ParamKind::Matrix, init.clone());
    let mut tracker = LemmaTracker::new(cfg.accel_alpha, cfg.momentum);
    let mut out = LandscapeRun {
        records: Vec::with_capacity(steps as usize),
        align: Vec::new(),
        accel_snaps: Vec::new(),
        f0: 0.0,
        final_loss: 0.0,
        mean_true_grad_sq: 0.0,
        max_o_sq: 0.0,
        max_noisy_grad_norm: 0.0,
        group: ParamGroup::new("placeholder".to_string(), ParamKind::Matrix, Mat::zeros(1, 1)),
        diverged: false,
    };

    for k in 1..=steps {
        let iter_start = Instant::now();
        let (loss, true_grad) = oracle.base.eval(&group.weights).map_err(|e| invalid(&e))?;
        if k == 1 {
            out.f0 = loss;
        }
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            out.records.push(divergence_record(k, loss));
            out.diverged = true;
            break;
        }
        out.mean_true_grad_sq += true_grad.frobenius_norm().powi(2);
        let (_, noisy) = oracle.noisy_grad(&group.weights, k).map_err(|e| invalid(&e))?;
        let trace = match optimizer_step(kind, &mut group, &noisy, &step_cfg) {
            Ok(t) => t,
            Err(StepError::NonFiniteGradient { .. }) => {
                out.records.push(divergence_record(k, f64::NAN));
                out.diverged = true;
                break;
            }
            Err(e) => return Err(invalid(&e)),
        };
        out.max_noisy_grad_norm = out.max_noisy_grad_norm.max(trace.grad_norm);
        if opts.capture_alignment {
            if let Some(dir) = &trace.direction {
                let inner = true_grad.frobenius_dot(dir).map_err(|e| invalid(&e))?;
                let grad_sq = true_grad.frobenius_norm().powi(2);
                out.align.push(AlignmentSample { inner, grad_sq });
                out.max_o_sq = out.max_o_sq.max(dir.frobenius_norm().powi(2));
            }
        }
        if opts.collect_accel {
            if let Some(mona::optim::AccelState::Full(a)) = &group.state.accel {
                out.accel_snaps.push(a.clone());
            }
        }
        let flags = tracker.observe(
            trace.grad_norm,
            trace.accel_norm,
            trace.tilde_norm,
            trace.momentum_norm,
        );
        let eval_loss = if opts.eval_every > 0 && k % opts.eval_every == 0 {
            Some(oracle.base.eval(&group.weights).map_err(|e| invalid(&e))?.0)
        } else {
            None
        };
        out.records.push(RunRecord {
            step: k,
            train_loss: loss,
            eval_loss,
            grad_norm: trace.grad_norm,
            diff_norm: trace.diff_norm,
            accel_norm: trace.accel_norm,
            tilde_norm: trace.tilde_norm,
            momentum_norm: trace.momentum_norm,
            update_norm: trace.update_norm,
            ns_degenerate: trace.ns_degenerate,
            adamw_fallback: trace.fallback_adamw,
            lemma_accel_ok: flags.accel_ok,
            lemma_tilde_ok: flags.tilde_ok,
            lemma_momentum_ok: flags.momentum_ok,
            inner_ns: trace.inner_nanos,
            iter_ns: iter_start.elapsed().as_nanos() as u64,
        });
    }

    let completed = out.records.iter().filter(|r| !r.grad_norm.is_nan()).count();
    out.mean_true_grad_sq /= completed.max(1) as f64;
    out.final_loss = oracle.base.eval(&group.weights).map_err(|e| invalid(&e))?.0;
    out.group = group;
    Ok(out)
}

fn divergence_record(step: u64, loss: f64) -> RunRecord {
    RunRecord {
        step,
        train_loss: loss,
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
        iter_ns: 0,
    }
}
