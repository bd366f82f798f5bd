use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdcfilter::analysis::{
    export_report, export_sweep, run_single, sweep_tradeoff, validate, BasisMethod, RunConfig,
};
use pdcfilter::Error;

/// Filtered parametric down-conversion: squeezing, purity and mode analysis.
#[derive(Debug, Parser)]
#[command(name = "pdcfilter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `out_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Measurement basis: schmidt, svd or ga.
    #[arg(long, global = true)]
    basis: Option<String>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single configuration: covariance, squeezing and purity.
    Run,
    /// Trade-off table over the configured filter widths and gains.
    Sweep,
    /// Invariant checks on the configured state and filter.
    Validate,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(b) = &cli.basis {
        config.basis = b.parse::<BasisMethod>()?;
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<bool, Error> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Run => {
            let report = run_single(&config)?;
            for m in &report.squeezing.modes {
                println!(
                    "mode {:>2}  {:>10.6} dB  ({})",
                    m.mode_index + 1,
                    m.squeezing_db,
                    m.combination
                );
            }
            println!("gain B                 {:.9}", report.gain_b);
            println!("purity                 {:.9}", report.purity);
            println!("single-mode character  {:.6}", report.single_mode_character);
            let files = export_report(&report, &config.out_dir)?;
            println!("wrote {} files to {}", files.len(), config.out_dir.display());
            Ok(true)
        }
        Command::Sweep => {
            let report = sweep_tradeoff(&config)?;
            let failed = report.records.iter().filter(|r| r.error.is_some()).count();
            for r in &report.records {
                match &r.error {
                    None => println!(
                        "width {:>6.2}  B {:.6}  first mode {:>8.4} dB  smc {:>10.4}  purity {:.6}",
                        r.filter_width, r.gain_b, r.first_mode_squeezing_db, r.single_mode_character, r.purity
                    ),
                    Some(e) => println!("width {:>6.2}  B {:.6}  error: {e}", r.filter_width, r.gain_b),
                }
            }
            let files = export_sweep(&report, &config.out_dir)?;
            println!(
                "{} points ({failed} failed), wrote {} files to {}",
                report.records.len(),
                files.len(),
                config.out_dir.display()
            );
            Ok(true)
        }
        Command::Validate => {
            let checks = validate(&config)?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
