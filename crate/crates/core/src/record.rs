//! Per-step run records and their CSV serialization.
//!
//! The CSV layout is part of the determinism contract: fixed column order,
//! mandatory header, floats at 17 significant digits, booleans as 0/1, and
//! the timing columns written as 0 unless timing capture is requested (so
//! replayed runs are byte-identical).

use std::io::{self, Write};

/// One optimizer step of one run, aggregated over parameter groups.
///
/// Norm fields aggregate over the parameters that took the optimizer's
/// primary path (AdamW-fallback parameters are excluded from the norms and
/// surfaced through `adamw_fallback` instead). The `lemma_*` flags are the
/// per-step conjunction over those parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    /// 1-based step index; strictly increasing within a run.
    pub step: u64,
    pub train_loss: f64,
    /// Held-out loss, present only on evaluation steps.
    pub eval_loss: Option<f64>,
    pub grad_norm: f64,
    pub diff_norm: f64,
    pub accel_norm: f64,
    pub tilde_norm: f64,
    pub momentum_norm: f64,
    pub update_norm: f64,
    pub ns_degenerate: bool,
    /// Whether any parameter group fell back to AdamW this step.
    pub adamw_fallback: bool,
    pub lemma_accel_ok: bool,
    pub lemma_tilde_ok: bool,
    pub lemma_momentum_ok: bool,
    /// Optimizer inner time this step, nanoseconds (0 in replayable CSVs).
    pub inner_ns: u64,
    /// Whole-iteration time this step, nanoseconds (0 in replayable CSVs).
    pub iter_ns: u64,
}

pub const CSV_HEADER: &str = "step,train_loss,eval_loss,grad_norm,diff_norm,accel_norm,\
tilde_norm,momentum_norm,update_norm,ns_degenerate,adamw_fallback,lemma_accel_ok,\
lemma_tilde_ok,lemma_momentum_ok,inner_ns,iter_ns";

fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Write records as CSV. With `include_timing` false the two timing columns
/// are written as literal `0` so identical runs serialize byte-identically.
pub fn write_csv<W: Write>(
    out: &mut W,
    records: &[RunRecord],
    include_timing: bool,
) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let eval = r.eval_loss.map(fmt_f64).unwrap_or_default();
        let (inner, iter) = if include_timing { (r.inner_ns, r.iter_ns) } else { (0, 0) };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.train_loss),
            eval,
            fmt_f64(r.grad_norm),
            fmt_f64(r.diff_norm),
            fmt_f64(r.accel_norm),
            fmt_f64(r.tilde_norm),
            fmt_f64(r.momentum_norm),
            fmt_f64(r.update_norm),
            fmt_bool(r.ns_degenerate),
            fmt_bool(r.adamw_fallback),
            fmt_bool(r.lemma_accel_ok),
            fmt_bool(r.lemma_tilde_ok),
            fmt_bool(r.lemma_momentum_ok),
            inner,
            iter,
        )?;
    }
    Ok(())
}

/// Render records to a CSV string (convenience over [`write_csv`]).
pub fn csv_string(records: &[RunRecord], include_timing: bool) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, records, include_timing).expect("writing to Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

/// Check the `step` column is strictly increasing.
pub fn steps_strictly_increasing(records: &[RunRecord]) -> bool {
    records.windows(2).all(|w| w[0].step < w[1].step)
}
