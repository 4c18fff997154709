use clap::{Parser, Subcommand};
use krtransport::error::{Error, Result};
use krtransport::estimator::{fit, FitConfig};
use krtransport::experiment::{run_oracle_check, run_rate_study, write_study, ExperimentConfig};
use krtransport::kr::{build_kr, sample_target, save_points_csv};
use krtransport::map::pullback_density;
use krtransport::metrics::{h1diag_map_distance, metrics_report};
use krtransport::par::Execution;
use krtransport::param::{rational_map, Theta};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

/// Transport-map density estimation on the unit cube.
#[derive(Parser, Debug)]
#[command(name = "krtransport", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the exact KR map of the config and report its accuracy.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit one estimator to N samples from the config's density.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the fit result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the rate study and write rates.csv and summary.json.
    Rates {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from the config's density by inverse-Rosenblatt sampling.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a fitted theta against the config's density.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theta: PathBuf,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::OracleCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&run_oracle_check(&cfg)?)
        }
        Command::Fit { config, n, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let truth = cfg.truth()?;
            let reference = cfg.reference_density()?;
            let kr = build_kr(&truth, &reference.to_field())?;
            let data = sample_target(&kr, n, seed)?;
            let s = cfg.schedule_for(n)?;
            let fit_cfg = FitConfig {
                alpha: cfg.alpha,
                lambda: s.lambda,
                max_level: s.j,
                link: cfg.link,
                basis: cfg.basis,
                optimizer: cfg.optimizer.clone(),
                initial_theta: None,
                execution: Execution::default(),
            };
            let result = fit(&data, &reference, &fit_cfg)?;
            let text = serde_json::to_string_pretty(&result.to_json()?)?;
            match out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                }),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Rates { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let study = run_rate_study(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output.clone());
            write_study(&study, &dir)?;
            eprintln!(
                "wrote {} rows to {}",
                study.rows.len(),
                dir.join("rates.csv").display()
            );
            print_json(&study.summary)
        }
        Command::Sample { config, n, out, seed } => {
            if n == 0 {
                return Err(Error::Config("n must be positive".into()));
            }
            let cfg = ExperimentConfig::load(&config)?;
            let kr = build_kr(&cfg.truth()?, &cfg.reference_density()?.to_field())?;
            let points = sample_target(&kr, n, seed.unwrap_or(cfg.seed))?;
            save_points_csv(&points, &out)
        }
        Command::Metrics { config, theta } => {
            let cfg = ExperimentConfig::load(&config)?;
            let theta = Theta::load(&theta)?;
            if theta.dim() != cfg.d {
                return Err(Error::Config(format!(
                    "theta has dimension {}, config has {}",
                    theta.dim(),
                    cfg.d
                )));
            }
            let truth = cfg.truth()?;
            let eta = cfg.reference_density()?.to_field();
            let map = Arc::new(rational_map(theta, cfg.link.build()?)?);
            let fitted = pullback_density(map.clone(), &eta)?;
            let grid = cfg.metric_grid();
            let report = metrics_report(&truth, &fitted, &grid)?;
            let oracle = build_kr(&truth, &eta)?;
            let h1 = h1diag_map_distance(map.as_ref(), &oracle, &grid)?;
            print_json(&serde_json::json!({ "report": report, "h1diag": h1 }))
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
