//! Command-line surface.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration or contract violation
//! (including grid mismatch), 3 runtime numerical or I/O failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::DboError;
use crate::pipeline::{compare_runs, export_figures, run_dbo, run_fom};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dbo-rom", version, about = "Low-rank species transport with a full-order reference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides outputs.directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replaces species.seed.
    #[arg(long, value_name = "U64")]
    seed_override: Option<u64>,
    /// Worker threads (falls back to DBO_ROM_THREADS).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the configured DBO ranks.
    RunDbo(Common),
    /// Integrate every species at full order and record I-PCA spectra.
    RunFom(Common),
    /// Tabulate errors and spectrum gaps of a DBO run against a full-order run.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        dbo_run: PathBuf,
        #[arg(long, value_name = "DIR")]
        fom_run: PathBuf,
    },
    /// Write columnar figure data: profiles, error against time, spectra.
    ExportFigures(Common),
    /// Check a configuration and print it fully resolved.
    ValidateConfig(Common),
}

pub fn exit_code(e: &DboError) -> i32 {
    match e {
        DboError::GridMismatch(_)
        | DboError::Dimension(_)
        | DboError::InvalidArgument(_)
        | DboError::IndexOutOfRange { .. }
        | DboError::TimeMismatch(_)
        | DboError::Format(_)
        | DboError::Config { .. } => EXIT_CONFIG,
        DboError::NonFinite(_) | DboError::UndefinedMetric(_) | DboError::Observer { .. } | DboError::Io(_) => {
            EXIT_RUNTIME
        }
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
}

fn init_threads(threads: Option<usize>) -> Result<(), String> {
    let k = match threads {
        Some(k) => Some(k),
        None => match std::env::var("DBO_ROM_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| format!("DBO_ROM_THREADS='{v}' is not a thread count"))?),
            Err(_) => None,
        },
    };
    if let Some(k) = k {
        if k == 0 {
            return Err("thread count must be at least 1".into());
        }
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    Ok(())
}

fn load(common: &Common) -> Result<RunConfig, DboError> {
    let mut cfg = RunConfig::from_file(&common.config).map_err(|e| match e {
        DboError::Io(io) => DboError::Config { line: 0, msg: format!("{}: {io}", common.config.display()) },
        other => other,
    })?;
    if let Some(seed) = common.seed_override {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.directory = out.clone();
    }
    Ok(cfg)
}

fn execute(command: &Command, stdout: &mut dyn Write) -> Result<(), DboError> {
    match command {
        Command::ValidateConfig(c) => {
            let cfg = load(c)?;
            write!(stdout, "{}", cfg.to_config_string())?;
        }
        Command::RunDbo(c) => {
            let cfg = load(c)?;
            let summary = run_dbo(&cfg, &cfg.directory)?;
            for (s, rows) in summary.final_state.dbo.iter().zip(&summary.diagnostics) {
                let last = rows.last().map(|r| r.sigma_tilde[0]).unwrap_or(f64::NAN);
                writeln!(stdout, "r = {}: {} steps to t = {}, sigma_tilde_1 = {last:.6e}", s.rank(), summary.steps, s.t)?;
            }
        }
        Command::RunFom(c) => {
            let cfg = load(c)?;
            let summary = run_fom(&cfg, &cfg.directory)?;
            writeln!(stdout, "full-order: {} steps to t = {}", summary.steps, summary.final_state.t)?;
        }
        Command::Compare { common, dbo_run, fom_run } => {
            let cfg = load(common)?;
            let tables = compare_runs(dbo_run, fom_run, &cfg.directory)?;
            if tables.is_empty() {
                return Err(DboError::InvalidArgument(format!(
                    "no DBO snapshot files found in {}",
                    dbo_run.display()
                )));
            }
            for t in tables {
                match t.final_error {
                    Some(e) => writeln!(stdout, "r = {}: {} rows, final relative error {e:.6e} -> {}", t.rank, t.rows, t.path.display())?,
                    None => writeln!(stdout, "r = {}: no matching times -> {}", t.rank, t.path.display())?,
                }
            }
        }
        Command::ExportFigures(c) => {
            let cfg = load(c)?;
            export_figures(&cfg, &cfg.directory)?;
            writeln!(stdout, "figure data written to {}", cfg.directory.display())?;
        }
    }
    Ok(())
}

fn common(command: &Command) -> &Common {
    match command {
        Command::RunDbo(c) | Command::RunFom(c) | Command::ExportFigures(c) | Command::ValidateConfig(c) => c,
        Command::Compare { common, .. } => common,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let c = common(&cli.command);
    init_logging(c.quiet);
    if let Err(msg) = init_threads(c.threads) {
        log::error!("{msg}");
        return EXIT_USAGE;
    }
    match execute(&cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{}: {e}", describe(&cli.command));
            exit_code(&e)
        }
    }
}

fn describe(command: &Command) -> String {
    let (name, config) = match command {
        Command::RunDbo(c) => ("run-dbo", &c.config),
        Command::RunFom(c) => ("run-fom", &c.config),
        Command::Compare { common, .. } => ("compare", &common.config),
        Command::ExportFigures(c) => ("export-figures", &c.config),
        Command::ValidateConfig(c) => ("validate-config", &c.config),
    };
    format!("{name} --config {}", display(config))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
