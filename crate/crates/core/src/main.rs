use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lol_core::runner::{self, compare, config, sweep, RunnerError};

#[derive(Parser)]
#[command(name = "lol", version, about = "Learning-order experiments for two-layer ReLU networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every algorithm and seed of a config.
    Run {
        config: PathBuf,
        /// Dotted-path override, e.g. trainer.eta1=0.1 (repeatable).
        #[arg(long = "set", visible_alias = "override", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Compare finished run directories.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Where to write comparison.json and comparison.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a config once per value of one numeric field.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "set", visible_alias = "override", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Print the default config of a profile.
    Profile {
        #[arg(default_value = "Desk")]
        name: String,
    },
}

fn fail(e: RunnerError) -> ExitCode {
    eprintln!("lol: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, set } => match runner::cli_run(&config, &set) {
            Ok(report) => {
                for s in &report.summaries {
                    for r in &s.runs {
                        eprintln!(
                            "{} seed {}: {:?} after {} iterations ({:.1}s)",
                            s.algorithm.dir_name(),
                            r.seed,
                            r.status,
                            r.iterations,
                            r.wall_time_s
                        );
                    }
                }
                ExitCode::from(report.exit_code() as u8)
            }
            Err(e) => fail(e),
        },
        Cmd::Compare { dirs, out } => {
            match compare::compare(&dirs).and_then(|c| compare::write_comparison(&c, &out).map(|_| c)) {
                Ok(c) => {
                    for e in &c.entries {
                        eprintln!(
                            "{}: test_err {:?} inversion {}/{}",
                            e.dir.display(),
                            e.stats.test_err.mean,
                            e.seeds.iter().filter(|s| s.inverted).count(),
                            e.seeds.len()
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Sweep {
            config,
            axis,
            values,
            set,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("lol: cannot read {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            match sweep::sweep(&text, &set, &axis, &values) {
                Ok(points) => {
                    let code = points.iter().map(|p| p.report.exit_code()).max().unwrap_or(0);
                    ExitCode::from(code as u8)
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Profile { name } => {
            let profile = match name.to_ascii_lowercase().as_str() {
                "desk" => config::Profile::Desk,
                "theory" => config::Profile::Theory,
                _ => {
                    eprintln!("lol: unknown profile `{name}`");
                    return ExitCode::from(2);
                }
            };
            println!("{}", serde_json::to_string_pretty(&config::profile_defaults(profile)).unwrap());
            ExitCode::SUCCESS
        }
    }
}
