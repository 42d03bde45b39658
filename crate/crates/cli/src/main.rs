use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod failure;

use failure::{Category, Failure};

/// Simulate, fit and optimize optical nuclear-spin polarization of an NV center.
#[derive(Debug, Parser)]
#[command(name = "nvpolar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a pulse program and write the population trace.
    Simulate {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the Ramsey readout of a population state.
    Spectrum {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit rate constants to a repolarization dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also fit the NV⁻ decay rate.
        #[arg(long)]
        fit_kp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polarization against duration, cycle count or pulse fidelity.
    Sweep {
        #[arg(long, value_parser = ["duration", "cycles", "fidelity"])]
        variable: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search for the best (duration, cycles) above a signal floor.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        signal_min: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic repolarization dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        wavelength: Option<u16>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the closed-form model against numerical integration.
    Selftest,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { program, config, out } => commands::simulate(&program, config.as_deref(), &out),
        Command::Spectrum { state, config, out } => commands::spectrum(&state, config.as_deref(), &out),
        Command::Fit {
            data,
            config,
            fit_kp,
            out,
        } => commands::fit(&data, config.as_deref(), fit_kp, out.as_deref()),
        Command::Sweep { variable, config, out } => commands::sweep(&variable, config.as_deref(), &out),
        Command::Optimize {
            config,
            signal_min,
            out,
        } => commands::optimize(config.as_deref(), signal_min, &out),
        Command::Synth {
            config,
            wavelength,
            noise,
            seed,
            out,
        } => commands::synth(config.as_deref(), wavelength, noise, seed, &out),
        Command::Selftest => commands::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { Category::Usage.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.category.code())
        }
    }
}
