use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seaice_core::Error as CoreError;
use seaice_io::commands;
use seaice_io::invariants::{format_table, run_suite};
use seaice_io::{load_config, Overrides};

/// Regularized viscous-plastic sea-ice simulator.
#[derive(Parser, Debug)]
#[command(version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for randomized fields and suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid size; sets both nx and ny.
    #[arg(long, global = true)]
    nx: Option<usize>,
    /// Integration horizon.
    #[arg(long = "T", global = true)]
    t_end: Option<f64>,
    /// Fail fast on monitor violations; exit code 2 on invariant failure.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Integrate the configured initial state.
    Run,
    /// Measure Picard contraction ratios while halving the slab length.
    PicardStudy,
    /// Run the relaxation-parameter continuation.
    ContinuationStudy,
    /// Measure the stability ratio for the configured perturbation sizes.
    StabilityStudy,
    /// Run the randomized invariant suite.
    CheckInvariants,
}

const EXIT_ERROR: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = &cli.config else {
        eprintln!("error: --config PATH is required\n\nUsage: seaice <COMMAND> --config <PATH> [OPTIONS]");
        return ExitCode::from(EXIT_ERROR);
    };
    let mut cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    cfg.apply(&Overrides { out_dir: cli.out_dir.clone(), seed: cli.seed, nx: cli.nx, t_end: cli.t_end, strict: cli.strict });
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ERROR);
    }

    let result: anyhow::Result<bool> = match cli.command {
        Command::Run => commands::run(&cfg).map(|r| {
            println!("t = {:.6}: {} states, {} slabs, {} monitor violations", r.final_state().t, r.states.len(), r.slabs.len(), r.violations.len());
            for v in &r.violations {
                println!("  t = {:.6}: {}", v.t, v.describe());
            }
            true
        }),
        Command::PicardStudy => commands::picard_study(&cfg).map(|s| {
            for p in &s.probes {
                let last = p.ratios.last().copied().unwrap_or(f64::NAN);
                println!("T_slab = {:.6e}  iterations = {:>3}  first ratios = {:?}  last ratio = {last:.4}", p.t_slab, p.distances.len(), &p.ratios[..p.ratios.len().min(3)]);
            }
            match s.located {
                Some(t) => println!("three consecutive ratios <= 0.5 on T_slab = {t:.6e}"),
                None => println!("no slab with three consecutive ratios <= 0.5"),
            }
            true
        }),
        Command::ContinuationStudy => commands::continuation_study(&cfg).map(|r| {
            for (k, d) in r.diffs.iter().enumerate() {
                println!("d_{k} = {d:.6e}");
            }
            true
        }),
        Command::StabilityStudy => commands::stability_study(&cfg).map(|rs| {
            for r in &rs {
                println!("delta = {:.1e}  ratio = {:.6}", r.delta, r.ratio);
            }
            true
        }),
        Command::CheckInvariants => {
            let results = run_suite(cfg.seed);
            print!("{}", format_table(&results));
            Ok(results.iter().all(|r| r.passed))
        }
    };

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(if cfg.strict { EXIT_INVARIANT } else { EXIT_ERROR }),
        Err(e) => {
            eprintln!("error: {e:#}");
            let bound = matches!(e.downcast_ref::<CoreError>(), Some(CoreError::BoundViolation { .. }));
            ExitCode::from(if bound && cfg.strict { EXIT_INVARIANT } else { EXIT_ERROR })
        }
    }
}
