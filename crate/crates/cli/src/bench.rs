//! Optimizer overhead micro-benchmark.
//!
//! Measures MONA's cost over Muon on identical synthetic workloads: same
//! matrix shape, same gradient rule, same Newton-Schulz budget. The three
//! arms — Muon, a second Muon serving as the noise control, and MONA —
//! advance in lockstep, one step each per round, so slow drift in host
//! speed (frequency scaling, noisy neighbors) lands on every arm alike
//! instead of skewing whichever arm ran last. Reports median per-step
//! inner (optimizer body) and end-to-end iteration times, plus the
//! Muon-vs-Muon control delta that validates the noise floor.

use std::time::Instant;

use mona::optim::{
    optimizer_step, GammaRule, OptimizerConfig, OptimizerKind, ParamGroup, ParamKind,
};
use mona::rng::stream_rng;
use mona::Mat;
use serde::{Deserialize, Serialize};

use crate::config::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    /// Measured steps per optimizer (after warmup); at least 1000.
    pub steps: u64,
    /// Unmeasured leading steps, excluded from every statistic.
    pub warmup: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { rows: 1024, cols: 1024, steps: 1000, warmup: 16, seed: 0 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CliError::Validation("bench: rows and cols must be positive".into()));
        }
        if self.steps < 1000 {
            return Err(CliError::Validation(format!(
                "bench: steps must be at least 1000 for stable medians, got {}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Median per-step timings for one optimizer, nanoseconds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchEntry {
    pub median_inner_ns: u64,
    pub median_iter_ns: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: usize,
    pub cols: usize,
    pub steps: u64,
    pub warmup: u64,
    pub muon: BenchEntry,
    /// Second, independent Muon measurement: the noise control.
    pub muon_control: BenchEntry,
    pub mona: BenchEntry,
    /// (mona − muon)/muon on the optimizer body.
    pub inner_overhead_mona_vs_muon: f64,
    /// (mona − muon)/muon end to end, gradient production included.
    pub iter_overhead_mona_vs_muon: f64,
    /// |control − muon|/muon on the optimizer body.
    pub control_inner_delta: f64,
    /// |control − muon|/muon end to end.
    pub control_iter_delta: f64,
    /// The e2e gate: twice the noise bound, where the bound is the larger
    /// of the measured control delta and the ±1% the control is held to.
    pub noise_band: f64,
}

impl BenchReport {
    pub fn inner_gate_passed(&self) -> bool {
        self.inner_overhead_mona_vs_muon <= 0.05
    }

    pub fn iter_gate_passed(&self) -> bool {
        self.iter_overhead_mona_vs_muon <= self.noise_band
    }

    pub fn control_gate_passed(&self) -> bool {
        self.control_inner_delta <= 0.01 && self.control_iter_delta <= 0.01
    }
}

fn median(mut xs: Vec<u64>) -> u64 {
    assert!(!xs.is_empty());
    xs.sort_unstable();
    xs[xs.len() / 2]
}

fn relative(x: u64, base: u64) -> f64 {
    (x as f64 - base as f64) / base as f64
}

/// One benchmark arm: an optimizer with its own weights, state, and
/// gradient buffer, stepped in lockstep with the other arms.
struct Arm {
    kind: OptimizerKind,
    group: ParamGroup<f64>,
    grad: Mat,
    inner: Vec<u64>,
    iter: Vec<u64>,
}

impl Arm {
    fn new(kind: OptimizerKind, init: &Mat, cfg: &BenchConfig) -> Self {
        Self {
            kind,
            group: ParamGroup::new("bench.w", ParamKind::Matrix, init.clone()),
            grad: Mat::zeros(cfg.rows, cfg.cols),
            inner: Vec::with_capacity(cfg.steps as usize),
            iter: Vec::with_capacity(cfg.steps as usize),
        }
    }

    /// One iteration. The gradient is 0.1·W + P with P a fixed pull
    /// matrix, so gradient production costs the same for every arm and
    /// the weights stay bounded.
    fn step(
        &mut self,
        pull: &Mat,
        opt_cfg: &OptimizerConfig,
        measured: bool,
    ) -> Result<(), CliError> {
        let start = Instant::now();
        for ((g, &w), &p) in
            self.grad.as_mut_slice().iter_mut().zip(self.group.weights.as_slice()).zip(pull.as_slice())
        {
            *g = 0.1 * w + p;
        }
        let trace = optimizer_step(self.kind, &mut self.group, &self.grad, opt_cfg)
            .map_err(|e| CliError::Check(format!("bench step failed: {e}")))?;
        let iter_ns = start.elapsed().as_nanos() as u64;
        if measured {
            self.inner.push(trace.inner_nanos);
            self.iter.push(iter_ns);
        }
        Ok(())
    }

    fn entry(&self) -> BenchEntry {
        BenchEntry {
            median_inner_ns: median(self.inner.clone()),
            median_iter_ns: median(self.iter.clone()),
        }
    }
}

/// Run the full benchmark: Muon, a second Muon control, and MONA on the
/// identical workload, interleaved step by step.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, CliError> {
    cfg.validate()?;
    let pull = Mat::standard_normal(cfg.rows, cfg.cols, &mut stream_rng(cfg.seed, 0));
    let init = Mat::standard_normal(cfg.rows, cfg.cols, &mut stream_rng(cfg.seed, 1));
    let opt_cfg = OptimizerConfig {
        weight_decay: 0.0,
        gamma_rule: GammaRule::MuonRmsMatch,
        ..OptimizerConfig::default()
    };
    let mut muon = Arm::new(OptimizerKind::Muon, &init, cfg);
    let mut control = Arm::new(OptimizerKind::Muon, &init, cfg);
    let mut mona = Arm::new(OptimizerKind::Mona, &init, cfg);
    for k in 0..cfg.warmup + cfg.steps {
        let measured = k >= cfg.warmup;
        muon.step(&pull, &opt_cfg, measured)?;
        control.step(&pull, &opt_cfg, measured)?;
        mona.step(&pull, &opt_cfg, measured)?;
    }
    let muon = muon.entry();
    let muon_control = control.entry();
    let mona = mona.entry();

    let control_inner_delta = relative(muon_control.median_inner_ns, muon.median_inner_ns).abs();
    let control_iter_delta = relative(muon_control.median_iter_ns, muon.median_iter_ns).abs();
    Ok(BenchReport {
        rows: cfg.rows,
        cols: cfg.cols,
        steps: cfg.steps,
        warmup: cfg.warmup,
        muon,
        muon_control,
        mona,
        inner_overhead_mona_vs_muon: relative(mona.median_inner_ns, muon.median_inner_ns),
        iter_overhead_mona_vs_muon: relative(mona.median_iter_ns, muon.median_iter_ns),
        control_inner_delta,
        control_iter_delta,
        noise_band: 2.0 * control_iter_delta.max(0.01),
    })
}
