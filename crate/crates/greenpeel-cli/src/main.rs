//! Batch CLI for hierarchical solution-operator recovery.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use greenpeel_cli::config::RunConfig;
use greenpeel_cli::runner::{self, CliError};

#[derive(Parser)]
#[command(
    name = "greenpeel",
    about = "Recover elliptic solution operators from forcing/solution pairs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solver self-tests (exact solutions, symmetry, convergence order).
    Check {
        /// Optional config; used only to locate the output directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw forcing/solution pairs and write them as a dataset file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path (default: <output.dir>/train.gpde).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of pairs, overriding sampling.dataset_size.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn the operator once and report the consumed budget.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured rank (fixed mode) or accuracy (adaptive).
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn and evaluate against the dense oracle and a sampled test set.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured budget grid and emit CSV + SVG.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated budget list overriding sweep.budgets.
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for sweep points.
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Re-render plots and median tables from an existing sweep CSV.
    Report {
        /// Sweep CSV produced by `sweep`.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn load_config(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    Ok(RunConfig::from_json(&text)?)
}

fn out_dir(cfg: Option<&RunConfig>, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        PathBuf::from(cfg.map(|c| c.output.dir.clone()).unwrap_or_else(|| "out".into()))
    })
}

fn apply_seed(cfg: &mut RunConfig, seed: Option<u64>) {
    if let Some(seed) = seed {
        cfg.sampling.master_seed = seed;
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Check { config } => {
            let cfg = config.as_ref().map(load_config).transpose()?;
            let dir = out_dir(cfg.as_ref(), None);
            let (summary, pass) = runner::cmd_check();
            for check in summary["checks"].as_array().into_iter().flatten() {
                println!(
                    "[{}] {} — {}",
                    if check["pass"].as_bool().unwrap_or(false) { "PASS" } else { "FAIL" },
                    check["name"].as_str().unwrap_or("?"),
                    check["detail"].as_str().unwrap_or("")
                );
            }
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            runner::write_summary(&dir, "check.summary.json", &summary)?;
            if pass {
                Ok(())
            } else {
                Err(CliError::Runtime("solver self-tests failed".into()))
            }
        }
        Command::Sample { config, out, budget, seed } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            let dir = out_dir(Some(&cfg), None);
            let path = out.unwrap_or_else(|| dir.join("train.gpde"));
            let summary = runner::cmd_sample(&cfg, &path, budget)?;
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            let spath = runner::write_summary(&dir, "sample.summary.json", &summary)?;
            println!("wrote {} and {}", path.display(), spath.display());
            Ok(())
        }
        Command::Learn { config, out, budget, seed } => {
            let cfg = load_config(&config)?;
            let dir = out_dir(Some(&cfg), out);
            let summary = runner::cmd_learn(&cfg, seed, budget, false)?;
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            let spath = runner::write_summary(&dir, "learn.summary.json", &summary)?;
            let consumed = summary["n_train"]
                .as_u64()
                .or_else(|| summary["pairs_used"].as_u64())
                .map(|n| n.to_string())
                .unwrap_or_else(|| "-".into());
            println!("learned: N_train = {consumed}, summary at {}", spath.display());
            Ok(())
        }
        Command::Evaluate { config, out, budget, seed } => {
            let cfg = load_config(&config)?;
            let dir = out_dir(Some(&cfg), out);
            let summary = runner::cmd_learn(&cfg, seed, budget, true)?;
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            let spath = runner::write_summary(&dir, "evaluate.summary.json", &summary)?;
            println!(
                "evaluated: err_hs_rel = {}, summary at {}",
                summary["err_hs_rel"].as_f64().map(|v| format!("{v:.3e}")).unwrap_or_else(|| "n/a".into()),
                spath.display()
            );
            Ok(())
        }
        Command::Sweep { config, out, budget, seed, workers } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            let dir = out_dir(Some(&cfg), out);
            let budgets = budget
                .map(|list| {
                    list.split(',')
                        .map(|tok| {
                            tok.trim().parse::<f64>().map_err(|_| {
                                CliError::Validation(format!("--budget: cannot parse `{tok}`"))
                            })
                        })
                        .collect::<Result<Vec<f64>, _>>()
                })
                .transpose()?;
            let summary = runner::cmd_sweep(&cfg, &dir, workers, budgets)?;
            let spath = runner::write_summary(&dir, "sweep.summary.json", &summary)?;
            println!(
                "sweep: {} rows ({} failures), csv at {}, summary at {}",
                summary["rows"],
                summary["failures"],
                summary["csv"].as_str().unwrap_or("-"),
                spath.display()
            );
            Ok(())
        }
        Command::Report { csv, out } => {
            let dir = out.unwrap_or_else(|| {
                csv.parent().map(|p| p.to_path_buf()).unwrap_or_else(|| PathBuf::from("."))
            });
            let (summary, table) = runner::cmd_report(&csv, &dir)?;
            print!("{table}");
            let spath = runner::write_summary(&dir, "report.summary.json", &summary)?;
            println!("report summary at {}", spath.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
