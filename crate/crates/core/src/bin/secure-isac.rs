use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use secure_isac::experiment::{
    exit_code, preset, run_exit_code, run_experiment, validate, ExperimentSpec, Manifest,
    MethodSel, PRESETS,
};
use secure_isac::{Error, Result};

/// Runs secure ISAC beamforming experiments and writes CSV results.
#[derive(Debug, Parser)]
#[command(name = "secure-isac", version)]
struct Args {
    /// Experiment spec or manifest (JSON). A manifest reruns its recorded spec.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,

    /// Built-in experiment: fig2..fig10 or table3 (see --list-presets).
    #[arg(long)]
    preset: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    trials: Option<usize>,

    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// sdr, zf or both.
    #[arg(long)]
    method: Option<MethodSel>,

    /// Allowed mean sensing gap for table3 runs.
    #[arg(long)]
    tolerance_gap: Option<f64>,

    /// Outer-loop tolerance on the secrecy threshold.
    #[arg(long)]
    iota1: Option<f64>,

    /// Stage-2 SCA tolerance.
    #[arg(long)]
    iota2: Option<f64>,

    /// Validate (with a pre-flight solve) and exit.
    #[arg(long)]
    check: bool,

    /// Print the resolved spec as JSON and exit.
    #[arg(long)]
    print_spec: bool,

    /// List the built-in presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn resolve(args: &Args) -> Result<ExperimentSpec> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => Manifest::spec_from_json(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "pass --spec <file> or --preset <name>".into(),
            ))
        }
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.trials {
        spec.trials = v;
    }
    if let Some(v) = args.method {
        spec.method = v;
    }
    if let Some(v) = args.tolerance_gap {
        spec.tolerance_gap = v;
    }
    if let Some(v) = args.iota1 {
        spec.iota1 = v;
    }
    if let Some(v) = args.iota2 {
        spec.iota2 = v;
    }
    Ok(spec)
}

fn run(args: &Args) -> Result<i32> {
    if args.list_presets {
        for name in PRESETS {
            let p = preset(name)?;
            println!(
                "{name:<7} {:?} over {} ({} trials)",
                p.kind, p.sweep.variable, p.trials
            );
        }
        return Ok(0);
    }
    let spec = resolve(args)?;
    if args.print_spec {
        println!("{}", serde_json::to_string_pretty(&spec)?);
        return Ok(0);
    }
    let diag = validate(&spec, args.check);
    for w in &diag.warnings {
        eprintln!("warning: {w}");
    }
    if !diag.is_ok() {
        for e in &diag.errors {
            eprintln!("error: {e}");
        }
        return Ok(2);
    }
    if args.check {
        println!(
            "{}: OK (estimated {:.0} s on one core)",
            spec.name, diag.estimated_runtime_s
        );
        return Ok(0);
    }
    let report = run_experiment(&spec, &args.out, args.workers)?;
    let m = &report.manifest;
    println!(
        "{}: {} tasks, {} failed ({} infeasible), {:.1} s -> {}",
        spec.name,
        m.tasks,
        m.failed_tasks,
        m.infeasible_tasks,
        m.wall_time_s,
        args.out.display()
    );
    Ok(run_exit_code(&report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
