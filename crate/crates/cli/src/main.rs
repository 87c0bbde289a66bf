use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kinecast::runconfig::RunConfig;
use kinecast::{commands, CliResult};

#[derive(Parser)]
#[command(name = "kinecast", version)]
#[command(about = "Human motion forecasting with ensemble uncertainty boundaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. --set train.lr=0.01 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the root seed
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic trajectories and a manifest
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the model ensemble on the manifest dataset
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Write the ensemble-mean forecast for one window
    Predict {
        #[command(flatten)]
        common: Common,
        /// Motion file; the window ends one horizon before its last frame
        #[arg(long)]
        window: PathBuf,
    },
    /// Draw stochastic forecasts for one window
    Sample {
        #[command(flatten)]
        common: Common,
        /// Motion file; the window ends one horizon before its last frame
        #[arg(long)]
        window: PathBuf,
    },
    /// Fit uncertainty boundaries from a sample set
    Boundary {
        #[command(flatten)]
        common: Common,
        /// Sample-set file written by `sample`
        #[arg(long)]
        samples: PathBuf,
    },
    /// Evaluate robot clearance against a boundary file
    Proximity {
        #[command(flatten)]
        common: Common,
        /// Boundary file written by `boundary`
        #[arg(long)]
        boundary: PathBuf,
        /// Robot trajectory motion file
        #[arg(long)]
        robot: PathBuf,
    },
    /// Report forecast error metrics
    Eval {
        #[command(flatten)]
        common: Common,
        /// Forecast file written by `predict`
        #[arg(long)]
        pred: PathBuf,
        /// Ground truth: a forecast file or a motion file
        #[arg(long)]
        truth: PathBuf,
        /// Optional sample set for the diversity metric
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    let out_or = |common: &Common, default: PathBuf| -> PathBuf {
        common.out.clone().unwrap_or(default)
    };
    match cmd {
        Command::Synth { common } => {
            let cfg = common.config()?;
            let out = out_or(common, cfg.io.data_dir.clone());
            commands::synth(&cfg, &out)
        }
        Command::Train { common } => {
            let cfg = common.config()?;
            let out = out_or(common, cfg.io.model_dir.clone());
            commands::train(&cfg, &out)
        }
        Command::Predict { common, window } => {
            let cfg = common.config()?;
            commands::predict_cmd(&cfg, window, &out_or(common, PathBuf::from(".")))
        }
        Command::Sample { common, window } => {
            let cfg = common.config()?;
            commands::sample(&cfg, window, &out_or(common, PathBuf::from(".")))
        }
        Command::Boundary { common, samples } => {
            let cfg = common.config()?;
            commands::boundary(&cfg, samples, &out_or(common, PathBuf::from(".")))
        }
        Command::Proximity { common, boundary, robot } => {
            let cfg = common.config()?;
            commands::proximity_cmd(&cfg, boundary, robot, &out_or(common, PathBuf::from(".")))
        }
        Command::Eval { common, pred, truth, samples } => {
            // Eval reads its config only to honor --set validation.
            common.config()?;
            commands::eval(pred, truth, samples.as_deref(), &out_or(common, PathBuf::from(".")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not failures; usage mistakes are.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
