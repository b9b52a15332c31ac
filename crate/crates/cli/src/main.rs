//! `mona` — experiment runner, benchmark harness, verification suite,
//! and checkpoint inspector for the MONA optimizer workspace.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use mona::checkpoint::{Checkpoint, CheckpointError};

use mona_cli::bench::{run_bench, BenchConfig};
use mona_cli::checks::run_all_criteria;
use mona_cli::config::{CliError, ExperimentConfig};
use mona_cli::runner::run_experiment;

/// Print one line to stdout; when the consumer has closed the pipe
/// (`mona inspect … | head`), exit with the conventional SIGPIPE code
/// instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        let mut out = std::io::stdout().lock();
        if writeln!(out, $($arg)*).is_err() {
            std::process::exit(141);
        }
    }};
}

#[derive(Parser)]
#[command(
    name = "mona",
    version,
    about = "MONA optimizer experiments: run, bench, check, inspect"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// Measure per-step overhead of MONA relative to Muon.
    Bench {
        /// Path to a benchmark config (JSON); `{}` uses the defaults.
        config: PathBuf,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Check {
        /// Only run criteria whose number or title matches.
        #[arg(long)]
        filter: Option<String>,
        /// Directory for scratch artifacts (default: a temp directory).
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Also print every check's metrics.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Print the buffers and metadata stored in a checkpoint file.
    Inspect {
        /// Path to a `.ckpt` file written by `mona run`.
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run { config } => cmd_run(&config),
        Cmd::Bench { config } => cmd_bench(&config),
        Cmd::Check { filter, work_dir, verbose } => {
            cmd_check(filter.as_deref(), work_dir, verbose)
        }
        Cmd::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_run(path: &Path) -> Result<ExitCode, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let output = run_experiment(&cfg, None)?;
    outln!(
        "experiment `{}`: {} cells -> {}",
        output.summary.experiment,
        output.cells.len(),
        output.out_dir.display()
    );
    for opt in &output.summary.optimizers {
        let mean = opt
            .mean_final_loss
            .map(|m| format!("{m:.6e}"))
            .unwrap_or_else(|| "n/a".to_string());
        outln!(
            "  {:<12} mean final eval loss {} over {} seeds ({} diverged)",
            opt.name,
            mean,
            opt.final_losses.len(),
            opt.n_diverged
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(path: &Path) -> Result<ExitCode, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let cfg: BenchConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Validation(format!("bench config: {e}")))?;
    cfg.validate()?;
    let report = run_bench(&cfg)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Check(format!("serializing bench report: {e}")))?;
    outln!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(
    filter: Option<&str>,
    work_dir: Option<PathBuf>,
    verbose: bool,
) -> Result<ExitCode, CliError> {
    let work = work_dir.unwrap_or_else(|| {
        std::env::temp_dir().join(format!("mona-check-{}", std::process::id()))
    });
    std::fs::create_dir_all(&work)
        .map_err(|e| CliError::io(format!("creating {}", work.display()), e))?;
    let criteria = run_all_criteria(&work, filter)?;
    let mut failures = Vec::new();
    for criterion in &criteria {
        outln!("{}", criterion.format_line());
        if verbose {
            for report in &criterion.reports {
                outln!("    {}: {:?}", report.name, report.status);
                for (key, value) in &report.metrics {
                    outln!("        {key} = {value}");
                }
                if let Some(note) = &report.note {
                    outln!("        note: {note}");
                }
            }
        }
        if criterion.failed() {
            failures.push(format!("criterion {} ({})", criterion.index, criterion.title));
        }
    }
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Check(format!("failed: {}", failures.join(", "))))
    }
}

fn cmd_inspect(path: &Path) -> Result<ExitCode, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| match e {
        CheckpointError::Io(io) => CliError::io(format!("reading {}", path.display()), io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    outln!("checkpoint {}", path.display());
    outln!("  groups:");
    for g in &ckpt.meta.groups {
        outln!("    {:<20} kind {:?}, step {}", g.name, g.kind, g.step);
    }
    outln!("  buffers:");
    for b in &ckpt.buffers {
        let (rows, cols) = b.payload.shape();
        outln!(
            "    {:<28} {:>5} {:>4} x {:<4} frobenius {:.9e}",
            b.name,
            b.payload.dtype().name(),
            rows,
            cols,
            b.payload.frobenius_norm()
        );
    }
    let meta = serde_json::to_string_pretty(&ckpt.meta.user)
        .map_err(|e| CliError::Validation(format!("meta not serializable: {e}")))?;
    outln!("  meta: {meta}");
    Ok(ExitCode::SUCCESS)
}
