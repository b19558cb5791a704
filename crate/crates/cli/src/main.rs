use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use storemkt::{
    cmd_experiment, cmd_oracle, cmd_payments, cmd_simulate, cmd_solve, cmd_validate, init_threads, load_config,
    parse_pmf, CliError, CliResult, Report,
};
use storemkt_core::config::ThetaSpec;

/// Day-ahead dispatch, VCG payments and settlement simulation for EV storage.
#[derive(Parser)]
#[command(name = "storemkt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a config, printing its normalized form.
    Validate { config: String },
    /// Solve the two-stage dispatch problem.
    Solve {
        config: String,
        /// Write the SolveResult artifact here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override every EV's deadline pmf, comma separated.
        #[arg(long)]
        theta: Option<String>,
    },
    /// Day-ahead payment table under truthful bids.
    Payments {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-day market run with the configured strategies.
    Simulate {
        config: String,
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trace, ledger and diagnostics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a preset experiment: example1, table1, fig2, lemma-checks, theorem1.
    Experiment {
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check the solver against brute force on random tiny instances.
    Oracle {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(report: &Report, out: Option<&PathBuf>) -> CliResult<()> {
    print!("{}", report.text);
    if let Some(dir) = out {
        report.write_dir(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<i32> {
    init_threads()?;
    let report = match &cli.command {
        Command::Validate { config } => {
            let r = cmd_validate(&load_config(config)?)?;
            emit(&r, None)?;
            r
        }
        Command::Solve { config, out, theta } => {
            let mut c = load_config(config)?;
            if let Some(t) = theta {
                let pmf = parse_pmf(t)?.pmf().to_vec();
                for ev in &mut c.evs {
                    ev.theta = ThetaSpec::Values(pmf.clone());
                }
            }
            let (_, r) = cmd_solve(&c)?;
            print!("{}", r.text);
            if let Some(path) = out {
                std::fs::write(path, &r.files["solve.json"])
                    .map_err(|source| CliError::Io { path: path.clone(), source })?;
            }
            r
        }
        Command::Payments { config, out } => {
            let r = cmd_payments(&load_config(config)?)?;
            print!("{}", r.text);
            if let Some(path) = out {
                std::fs::write(path, &r.files["payments.csv"])
                    .map_err(|source| CliError::Io { path: path.clone(), source })?;
            }
            r
        }
        Command::Simulate { config, days, seed, out } => {
            let mut c = load_config(config)?;
            if let Some(s) = seed {
                c = c.with_seed(*s);
            }
            let r = cmd_simulate(&c, *days)?;
            emit(&r, out.as_ref())?;
            r
        }
        Command::Experiment { preset, seed, out } => {
            let r = cmd_experiment(preset, *seed)?;
            emit(&r, out.as_ref())?;
            r
        }
        Command::Oracle { count, seed, out } => {
            let r = cmd_oracle(*count, *seed)?;
            emit(&r, out.as_ref())?;
            r
        }
    };
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
