use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairdyn::config::ScenarioConfig;
use fairdyn::scenario::{oneshot_at_ratio, run_scenario};
use fairdyn::Error;

#[derive(Parser)]
#[command(name = "fairdyn", version, about = "Fair threshold decisions and group retention dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a scenario file.
    Run {
        config: PathBuf,
        /// Worker threads for sweeps (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: the scenario's output_dir, else ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace every seed in the scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
    /// Print the one-shot decision at population ratio N_a / N_b as JSON.
    Oneshot {
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        ratio: f64,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn fail(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } => {
            eprintln!("invalid scenario: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Validate { config } => match ScenarioConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({} experiment)", cfg.name, cfg.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Oneshot { config, ratio } => {
            let cfg = match ScenarioConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            };
            if !(ratio.is_finite() && ratio > 0.0) {
                eprintln!("invalid argument: --ratio must be positive, got {ratio}");
                return ExitCode::from(EXIT_VALIDATION);
            }
            match oneshot_at_ratio(&cfg, ratio).and_then(|p| {
                serde_json::to_string(&p).map_err(|e| Error::Io(e.to_string()))
            }) {
                Ok(json) => {
                    println!("{json}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Run { config, jobs, out, seed } => {
            let mut cfg = match ScenarioConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            };
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = jobs {
                if n == 0 {
                    eprintln!("invalid argument: --jobs must be at least 1");
                    return ExitCode::from(EXIT_VALIDATION);
                }
                pool = pool.num_threads(n);
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot start worker pool: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            match pool.install(|| run_scenario(&cfg, &out_dir)) {
                Ok(report) => {
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                    println!("{}", report.summary);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
