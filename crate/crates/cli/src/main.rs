//! `crm` — reproducible conditional-risk-minimization experiments.
//!
//! Subcommands: `run` (one instance), `sweep` (one run per grid threshold),
//! `ensemble` (grid combined by FTL or EWA), `verify` (pool-size sandwich
//! against the exact covering oracle). Every command is deterministic given
//! its full flag set.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error,
//! 4 verification failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crm_core::analysis::{
    bound_matrix, covering_number_greedy, validate_pseudometric, verify_lemma1,
    write_ensemble_summary_json, write_ensemble_trace_csv, write_error_table, write_summary_json,
    write_trace_csv, EXACT_COVERING_CAP,
};
use crm_core::ensemble::{default_eta, run_ensemble, CombineRule};
use crm_core::{CrmError, EpsilonSchedule, MacroState, Result};

use config::{inject_default_grid, RunOptions, RunSpec, ThresholdSpec};

#[derive(Parser)]
#[command(
    name = "crm",
    version,
    about = "Streaming conditional-risk minimization over pooled subroutines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one instance and write its trace and summary
    Run(RunOptions),
    /// Run one instance per grid threshold and write an error-rate table
    Sweep(RunOptions),
    /// Combine a threshold grid with FTL or EWA
    Ensemble(RunOptions),
    /// Check the pool-size covering sandwich on a finished run
    Verify(RunOptions),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(options) => cmd_run(options),
        Command::Sweep(options) => cmd_sweep(options),
        Command::Ensemble(options) => cmd_ensemble(options),
        Command::Verify(options) => cmd_verify(options),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}

fn exit_code(error: &CrmError) -> u8 {
    match error {
        CrmError::Io(_) | CrmError::Csv(_) | CrmError::Row { .. } => 3,
        CrmError::Evaluation(_) => 4,
        _ => 2,
    }
}

fn resolve(options: RunOptions) -> Result<RunSpec> {
    RunSpec::resolve(&options.merged_with_config()?)
}

fn cmd_run(options: RunOptions) -> Result<()> {
    let spec = resolve(options)?;
    if matches!(spec.threshold, ThresholdSpec::Grid(_)) {
        return Err(CrmError::Config(
            "run takes a single --epsilon or --schedule; use sweep or ensemble for a grid".into(),
        ));
    }
    let chunks = spec.descriptor.generate(spec.steps)?;
    let mut state = MacroState::new(spec.macro_config.clone(), spec.bound.clone())?;
    let (traces, summary) = state.run(&chunks)?;
    write_trace_csv(&spec.out, &traces)?;
    write_summary_json(&spec.summary, &summary)?;
    println!(
        "run: n={} error_rate={:.4} pool={} -> {}, {}",
        summary.n,
        summary.error_rate,
        summary.pool_size,
        spec.out.display(),
        spec.summary.display()
    );
    Ok(())
}

fn cmd_sweep(options: RunOptions) -> Result<()> {
    let mut options = options.merged_with_config()?;
    inject_default_grid(&mut options);
    let spec = RunSpec::resolve(&options)?;
    let ThresholdSpec::Grid(grid) = &spec.threshold else {
        return Err(CrmError::Config("sweep needs --grid".into()));
    };
    let out_dir = spec.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let chunks = spec.descriptor.generate(spec.steps)?;

    let mut error_rates = Vec::with_capacity(grid.len());
    for &epsilon in grid {
        let mut member_config = spec.macro_config.clone();
        member_config.schedule = EpsilonSchedule::constant(epsilon);
        let mut state = MacroState::new(member_config, spec.bound.clone())?;
        let (traces, summary) = state.run(&chunks)?;
        write_trace_csv(&out_dir.join(format!("trace_eps{epsilon}.csv")), &traces)?;
        write_summary_json(&out_dir.join(format!("summary_eps{epsilon}.json")), &summary)?;
        println!(
            "sweep eps={epsilon}: error_rate={:.4} pool={}",
            summary.error_rate, summary.pool_size
        );
        error_rates.push(vec![summary.error_rate]);
    }
    let table_path = if spec.table.is_absolute() {
        spec.table.clone()
    } else {
        out_dir.join(&spec.table)
    };
    write_error_table(
        &table_path,
        grid,
        &[spec.subroutine_name().to_string()],
        &error_rates,
    )?;
    println!("sweep table -> {}", table_path.display());
    Ok(())
}

fn cmd_ensemble(options: RunOptions) -> Result<()> {
    let mut options = options.merged_with_config()?;
    inject_default_grid(&mut options);
    let spec = RunSpec::resolve(&options)?;
    let ThresholdSpec::Grid(grid) = &spec.threshold else {
        return Err(CrmError::Config("ensemble needs --grid".into()));
    };
    let chunks = spec.descriptor.generate(spec.steps)?;
    let rule = match spec.combiner.as_deref() {
        Some("ftl") => CombineRule::Ftl,
        Some("ewa") => CombineRule::Ewa {
            eta: spec
                .eta
                .unwrap_or_else(|| default_eta(grid.len(), Some(chunks.len() as u64))),
            sample: spec.ewa_sample,
            sample_seed: spec.descriptor.seed,
        },
        Some(other) => {
            return Err(CrmError::Config(format!(
                "unknown combiner `{other}` (ftl | ewa)"
            )))
        }
        None => return Err(CrmError::Config("ensemble needs --combiner".into())),
    };

    let run = run_ensemble(&chunks, grid, &spec.macro_config, &spec.bound, rule)?;
    write_ensemble_trace_csv(&spec.out, &run.trace)?;
    write_ensemble_summary_json(&spec.summary, &run.summary)?;
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir)?;
        for (epsilon, (traces, summary)) in grid.iter().zip(&run.members) {
            write_trace_csv(&dir.join(format!("member_eps{epsilon}_trace.csv")), traces)?;
            write_summary_json(&dir.join(format!("member_eps{epsilon}_summary.json")), summary)?;
        }
    }
    println!(
        "ensemble ({}): n={} error_rate={:.4} members={:?} -> {}, {}",
        run.summary.rule,
        run.summary.n,
        run.summary.error_rate,
        run.summary.member_error_rates,
        spec.out.display(),
        spec.summary.display()
    );
    Ok(())
}

fn cmd_verify(options: RunOptions) -> Result<()> {
    let spec = resolve(options)?;
    let ThresholdSpec::Fixed(epsilon) = spec.threshold else {
        return Err(CrmError::Config("verify needs a fixed --epsilon".into()));
    };
    let chunks = spec.descriptor.generate(spec.steps)?;
    let n = chunks.len();
    if n > EXACT_COVERING_CAP && !spec.greedy {
        return Err(CrmError::Config(format!(
            "verify is exact only up to n = {EXACT_COVERING_CAP} steps (got {n}); pass --greedy for the surrogate check"
        )));
    }

    let mut state = MacroState::new(spec.macro_config.clone(), spec.bound.clone())?;
    let (_, summary) = state.run(&chunks)?;
    let matrix = bound_matrix(&spec.bound, spec.macro_config.num_classes, &chunks, epsilon)?;

    if n > EXACT_COVERING_CAP {
        // Greedy surrogate: only the upper side, since the greedy net size
        // upper-bounds the exact covering number.
        let report = validate_pseudometric(&matrix);
        if !report.valid {
            return Err(CrmError::Evaluation(format!(
                "bound matrix is not a pseudometric: {:?}",
                report.violation
            )));
        }
        let upper = covering_number_greedy(&matrix, epsilon / 2.0);
        println!(
            "verify (greedy surrogate): pool={} <= greedy N(eps/2)={}: {}",
            summary.pool_size,
            upper,
            summary.pool_size <= upper
        );
        if summary.pool_size > upper {
            return Err(CrmError::Evaluation(format!(
                "pool size {} exceeds the greedy ε/2 cover of size {upper}",
                summary.pool_size
            )));
        }
        return Ok(());
    }

    let report = verify_lemma1(summary.pool_size, &matrix, epsilon)?;
    println!(
        "verify: N(eps)={} <= pool={} <= N(eps/2)={}: {}",
        report.lower,
        report.pool_size,
        report.upper,
        if report.pass { "pass" } else { "fail" }
    );
    if options_summary_requested(&spec) {
        write_summary_json(&spec.summary, &report)?;
    }
    if !report.pass {
        return Err(CrmError::Evaluation(format!(
            "covering sandwich violated on the {:?} side",
            report.violated
        )));
    }
    Ok(())
}

/// `verify` writes its report only when a summary path was explicitly set.
fn options_summary_requested(spec: &RunSpec) -> bool {
    spec.summary.as_os_str() != "summary.json"
}
