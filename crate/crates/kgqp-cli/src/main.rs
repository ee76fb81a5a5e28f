use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgqp_cli::commands::{self, Command};
use kgqp_cli::output::OutputSet;
use kgqp_cli::{CliError, ExperimentConfig, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "kgqp", version, about = "Klein-Gordon lattice experiments with quasi-periodic potentials")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set kappa=7`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (falls back to KGQP_OUT_DIR, then `out_dir`, then `./out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    sites: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    eps: Option<String>,
    /// Energy grid `lo:hi:count`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    egrid: Option<String>,
    #[arg(long, global = true)]
    tmax: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Eigenvalues of the finite section.
    Spectrum,
    /// Linear or nonlinear evolution of centred unit data.
    Evolve,
    /// Rotation number and Lyapunov exponent over the energy grid.
    Rotation,
    /// KAM reduction over the energy grid.
    Kam,
    /// Bloch-wave quadrature grid and Plancherel check.
    Spectral,
    /// Oscillatory integrals over the (t, M) grid.
    Dispersion,
    /// Decay of ||u(t)||_inf and its power-law fit.
    Decay,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Spectrum => Command::Spectrum,
            Sub::Evolve => Command::Evolve,
            Sub::Rotation => Command::Rotation,
            Sub::Kam => Command::Kam,
            Sub::Spectral => Command::Spectral,
            Sub::Dispersion => Command::Dispersion,
            Sub::Decay => Command::Decay,
        }
    }
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    let flags = [
        ("sites", &cli.sites),
        ("eps", &cli.eps),
        ("egrid", &cli.egrid),
        ("t_max", &cli.tmax),
        ("seed", &cli.seed),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v, None)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim(), None)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = configure(&cli)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let cmd: Command = cli.command.into();
    let mut out = OutputSet::new(&dir, cfg.hash())?;
    commands::run(cmd, &cfg, &mut out)?;
    let m = out.finish(cmd.name(), cfg.seed)?;
    for f in &m.files {
        println!("{}", dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgqp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
