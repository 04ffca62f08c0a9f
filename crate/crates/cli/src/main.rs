use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sepdetect_cli::commands::{self, Figure, VerifyOptions};
use sepdetect_cli::spec::{read_spec, resolve_seed};
use sepdetect_cli::CliError;

#[derive(Parser)]
#[command(name = "sepdetect", version, about = "Calibrated sequential change detection in linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the detector of a problem spec and write the threshold table.
    Calibrate {
        spec: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        scheme: u8,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a calibration on recorded outputs, one CSV row per time step.
    Detect { calibration: PathBuf, observations: PathBuf },
    /// Monte Carlo false-alarm and miss frequencies of a calibration.
    Verify {
        spec: PathBuf,
        calibration: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        replicates: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores when absent.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Figure data as long-format CSV.
    Figures {
        spec: PathBuf,
        #[arg(long, value_enum)]
        which: Figure,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn seed_for(spec: &std::path::Path, flag: Option<u64>) -> Result<u64, CliError> {
    let env = std::env::var("SEED").ok();
    resolve_seed(flag, env.as_deref(), &read_spec(spec)?)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { spec, scheme, out, seed } => {
            let seed = seed_for(&spec, seed)?;
            let res = commands::calibrate(&spec, scheme, &out, seed)?;
            println!("calibrated {} active cells", res.active_cells);
            println!("wrote {}", res.calibration.display());
            println!("wrote {}", res.thresholds.display());
            println!("wrote {}", res.manifest.display());
        }
        Command::Detect { calibration, observations } => {
            commands::detect(&calibration, &observations, &mut io::stdout().lock())?;
        }
        Command::Verify { spec, calibration, replicates, seed, jobs, out } => {
            let seed = seed_for(&spec, seed)?;
            let opts = VerifyOptions { replicates, seed, jobs };
            let rows = commands::verify(&spec, &calibration, &opts, &out, &mut io::stderr())?;
            let failing = rows.iter().filter(|r| !r.within_3se).count();
            println!("{} frequencies, {failing} above target + 3 s.e.", rows.len());
            println!("wrote {}", out.join(sepdetect_cli::bundle::MONTE_CARLO_FILE).display());
        }
        Command::Figures { spec, which, out } => {
            let seed = seed_for(&spec, None)?;
            let path = commands::figures(&spec, which, &out, seed)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
