//! Command-line entry point for the resdiff pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resdiff::config::load_config;
use resdiff::pipeline::{
    cmd_evaluate, cmd_forecast, cmd_gen_data, cmd_pipeline, cmd_train, cmd_train_diffusion,
    cmd_train_mean,
};
use resdiff::Result;

#[derive(Parser)]
#[command(
    name = "resdiff",
    version,
    about = "Probabilistic spatiotemporal forecasting via mean-residual diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (falls back to $RESDIFF_CONFIG, then defaults).
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set sampling.k=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<resdiff::config::RunConfig> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os("RESDIFF_CONFIG").map(PathBuf::from));
        let overrides: Vec<(String, String)> = self
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| {
                        resdiff::Error::InvalidArgument(format!(
                            "--set expects KEY=VALUE, got '{kv}'"
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        let cfg = load_config(path.as_deref(), &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and ground-truth sidecar.
    GenData(Common),
    /// Stage 1: train the deterministic mean model.
    TrainMean(Common),
    /// Stage 2: train the residual diffusion model (needs stage 1).
    TrainDiffusion(Common),
    /// Run both training stages in order.
    Train(Common),
    /// Sample a K-member ensemble over the test split.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Worker threads for ensemble sampling (results are identical
        /// regardless of the value).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score the stored ensemble and write report.txt.
    Evaluate(Common),
    /// Everything: gen-data, train, forecast, evaluate.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let path = cmd_gen_data(&c.load()?)?;
            println!("data: {}", path.display());
        }
        Command::TrainMean(c) => {
            let path = cmd_train_mean(&c.load()?)?;
            println!("mean checkpoint: {}", path.display());
        }
        Command::TrainDiffusion(c) => {
            let path = cmd_train_diffusion(&c.load()?)?;
            println!("diffusion checkpoint: {}", path.display());
        }
        Command::Train(c) => {
            let (mean, diffusion) = cmd_train(&c.load()?)?;
            println!("mean checkpoint: {}", mean.display());
            println!("diffusion checkpoint: {}", diffusion.display());
        }
        Command::Forecast { common, jobs } => {
            let path = cmd_forecast(&common.load()?, jobs)?;
            println!("ensemble: {}", path.display());
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let report = cmd_evaluate(&cfg)?;
            println!(
                "mae {:.6}  rmse {:.6}  crps {:.6}  qice {:.6}  is {:.6}",
                report.mae, report.rmse, report.crps_norm, report.qice, report.is
            );
            println!("report: {}", cfg.out_dir.join("report.txt").display());
        }
        Command::Pipeline { common, jobs } => {
            let cfg = common.load()?;
            let report = cmd_pipeline(&cfg, jobs)?;
            println!(
                "mae {:.6}  rmse {:.6}  crps {:.6}  qice {:.6}  is {:.6}",
                report.mae, report.rmse, report.crps_norm, report.qice, report.is
            );
            println!("artifacts: {}", cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
