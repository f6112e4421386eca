use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mimo_cfo::config::db_to_linear;
use mimo_cfo::experiments::{run_experiment, ExperimentId, SweepSpec};
use mimo_cfo::{CfoMode, ConfigFile, ReceiverKind};

/// Uplink massive-MIMO simulator with CFO estimation.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// JSON system configuration.
    #[arg(long)]
    config: PathBuf,
    /// array_gain, snr_gap, mse_validation or lemma_oracles.
    #[arg(long)]
    experiment: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Monte Carlo trials per grid point.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    receivers: Option<Vec<ReceiverKind>>,
    #[arg(long)]
    cfo_mode: Option<CfoMode>,
    /// Comma-separated antenna counts.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    /// Comma-separated target rates, bpcu.
    #[arg(long, value_delimiter = ',')]
    target_rates: Option<Vec<f64>>,
    /// SNR of the CFO-pilot slot in dB; defaults to the data SNR.
    #[arg(long)]
    cfo_snr_db: Option<f64>,
}

fn run(args: Args) -> mimo_cfo::Result<Vec<PathBuf>> {
    let experiment: ExperimentId = args.experiment.parse()?;
    let (mut config, file_seed) = ConfigFile::load(&args.config)?.into_parts()?;
    config.cfo_snr_override = args.cfo_snr_db.map(db_to_linear);
    let mut spec = SweepSpec::defaults(experiment);
    spec.seed = args.seed.unwrap_or(file_seed);
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(r) = args.receivers {
        spec.receivers = r;
    }
    if let Some(mode) = args.cfo_mode {
        spec.cfo_mode = mode;
    }
    if let Some(g) = args.m_grid {
        spec.m_grid = g;
    }
    if let Some(t) = args.target_rates {
        spec.targets = t;
    }
    let result = run_experiment(&spec, &config)?;
    result.write_to(&args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(match e.kind() {
                "io" => 3,
                "bracket_failure" => 4,
                _ => 2,
            })
        }
    }
}
