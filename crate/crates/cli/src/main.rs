use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hito::summarize::summarize;
use hito::{preset_listing, run, verdict_exit_code, CliError};

/// Hermite-Sobolev Ito formula experiments.
///
/// Exit status: 0 all checks pass, 1 some check failed, 2 configuration or usage error,
/// 3 numeric or simulation error.
#[derive(Parser)]
#[command(name = "hito", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Median residual per level and the log-log slope for a directory of level CSVs.
    Summarize { dir: PathBuf },
    /// Print the Levy model presets.
    ListPresets,
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::Run { config } => match run(&config) {
            Ok(v) => {
                for c in &v.checks {
                    println!(
                        "[{}] criterion {} {}: {:e}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.criterion,
                        c.name,
                        c.measured
                    );
                }
                ExitCode::from(verdict_exit_code(&v) as u8)
            }
            Err(e) => fail(e),
        },
        Command::Summarize { dir } => match summarize(&dir) {
            Ok(conv) => {
                println!("level,dt,paths,median_residual");
                for l in &conv.levels {
                    println!("{},{:e},{},{:e}", l.level, l.dt, l.paths, l.median_residual);
                }
                println!("slope {:.4}", conv.fit.slope);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::ListPresets => {
            print!("{}", preset_listing());
            ExitCode::SUCCESS
        }
    }
}
