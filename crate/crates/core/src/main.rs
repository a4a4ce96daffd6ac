use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use matgraph::pipeline::estimate::{estimate, tune_both, AlphaMode};
use matgraph::pipeline::ingest::{ingest_real, Layout};
use matgraph::pipeline::report::{emit_estimate, emit_report, emit_roc, emit_tuning};
use matgraph::pipeline::simulate::{run_roc, run_simulation};
use matgraph::pipeline::SimConfig;
use matgraph::regression::LassoConfig;
use matgraph::tuning::TuningGrid;
use matgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "matgraph", version, about = "FDR-controlled graph recovery for matrix-variate Gaussian data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded simulation study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FDP and power along a grid of per-axis levels.
    Roc {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated levels, e.g. 0.01,0.05,0.1.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate both supports from observed data.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        /// Per-axis BH level.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Choose the per-axis level so the joint estimate `alpha_prime` is closest to this value.
        #[arg(long)]
        target_alpha_prime: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Report the tuned `lambda` and `delta` for observed data.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn layout_for(data: &Path, layout: &Path) -> Result<matgraph::pipeline::RealData> {
    let layout = Layout::load(layout)?;
    ingest_real(data, &layout)
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = SimConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            info!("simulating {} replications", cfg.replications);
            let report = run_simulation(&cfg)?;
            print_written(&emit_report(&report, &dir)?);
            let agg = report.aggregates();
            println!(
                "replications {} (failed {}): fdp {:.4} ({:.4}), alpha' {:.4}, power {:.4}",
                agg.replications,
                report.failures.len(),
                agg.fdp_joint.mean,
                agg.fdp_joint.sd,
                agg.alpha_prime.mean,
                agg.power.mean
            );
            if !report.complete() {
                return Err(Error::Degenerate(format!(
                    "{} of {} replications failed",
                    report.failures.len(),
                    cfg.replications
                )));
            }
        }
        Command::Roc { config, alphas, out } => {
            let cfg = SimConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let roc = run_roc(&cfg, &alphas)?;
            print_written(&emit_roc(&roc, &dir)?);
            for pt in &roc.curve {
                println!("alpha {}: fdp {:.4}, power {:.4}", pt.alpha, pt.mean_fdp, pt.mean_power);
            }
        }
        Command::Estimate {
            data,
            layout,
            alpha,
            target_alpha_prime,
            out,
        } => {
            let mode = match target_alpha_prime {
                Some(t) => AlphaMode::TargetAlphaPrime(t),
                None => {
                    if !(alpha > 0.0 && alpha < 1.0) {
                        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
                    }
                    AlphaMode::PerAxis(alpha)
                }
            };
            let real = layout_for(&data, &layout)?;
            let result = estimate(&real.dataset, &TuningGrid::default(), &LassoConfig::default(), mode)?;
            print_written(&emit_estimate(&result, &out)?);
            let m = &result.metrics;
            println!(
                "n {}, p {}, q {}: alpha {}, a {}, b {}, alpha' {:.4}",
                real.dataset.n(),
                m.p,
                m.q,
                m.alpha,
                m.a,
                m.b,
                m.alpha_prime
            );
        }
        Command::Tune { data, layout, out } => {
            let real = layout_for(&data, &layout)?;
            let (tuning, _) = tune_both(&real.dataset, &TuningGrid::default(), &LassoConfig::default())?;
            println!("{}", emit_tuning(&tuning, &out)?.display());
            println!(
                "gamma: lambda {}, delta {}; omega: lambda {}, delta {}",
                tuning.gamma.lambda_hat, tuning.gamma.delta_hat, tuning.omega.lambda_hat, tuning.omega.delta_hat
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
