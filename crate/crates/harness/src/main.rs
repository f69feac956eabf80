use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nomp_far_core::cfar::ThresholdCache;
use nomp_far_core::gridding::{interval_analysis, Axis};
use nomp_far_core::RadarConfig;
use nomp_far_harness::output::write_json;
use nomp_far_harness::{run_experiment, RunContext, EXPERIMENT_IDS};

#[derive(Parser)]
#[command(name = "nomp-far", version, about = "Frequency-agile radar range/velocity estimation experiments")]
struct Cli {
    /// Worker threads for Monte-Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: cfar, snr, refine-compare, rate-sweep or full-range.
    Run {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENT_IDS))]
        id: String,
        #[command(flatten)]
        common: Common,
        /// Override the experiment's Monte-Carlo trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Calibrate the stopping threshold for the run's hop code.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// False-alarm probability (default: the configured one).
        #[arg(long)]
        pfa: Option<f64>,
    },
    /// Oversampling analysis of the averaged objective for both axes.
    AnalyseGrid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "NOMP_FAR_OUT", default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults to the built-in reference profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "NOMP_FAR_OUT", default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = nomp_far_harness::context::DEFAULT_CALIBRATION_TRIALS)]
    calibration_trials: usize,
    /// JSON file reused across runs for threshold calibrations.
    #[arg(long)]
    threshold_cache: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<RadarConfig> {
    match path {
        Some(p) => RadarConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RadarConfig::reference_profile()),
    }
}

impl Common {
    fn context(&self, trials: Option<usize>) -> Result<RunContext> {
        let config = load_config(&self.config)?;
        let cache = match &self.threshold_cache {
            Some(p) => ThresholdCache::load(p)?,
            None => ThresholdCache::in_memory(),
        };
        Ok(RunContext::new(config, self.seed)
            .with_trials(trials)
            .with_calibration_trials(self.calibration_trials)
            .with_cache(cache))
    }
}

#[derive(Serialize)]
struct GridSummary {
    axis: Axis,
    cross_interval: f64,
    cross_x: f64,
    min_oversampling: f64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Run { id, common, trials } => {
            let mut ctx = common.context(trials)?;
            let result = run_experiment(&id, &mut ctx, &common.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Calibrate { common, pfa } => {
            let mut ctx = common.context(None)?;
            let config = ctx.config.clone();
            let report = ctx.threshold(&config, pfa.unwrap_or(config.pfa))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::AnalyseGrid { config, out_dir } => {
            let config = load_config(&config)?;
            std::fs::create_dir_all(&out_dir)?;
            let mut summary = Vec::new();
            for (axis, name) in [(Axis::P, "p"), (Axis::Q, "q")] {
                let report = interval_analysis(axis, &config)?;
                let path = out_dir.join(format!("grid_{name}_curve.csv"));
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                report.write_curve_csv(BufWriter::new(file))?;
                summary.push(GridSummary {
                    axis,
                    cross_interval: report.cross_point.0,
                    cross_x: report.cross_point.1,
                    min_oversampling: report.min_oversampling,
                });
            }
            write_json(&out_dir.join("grid_summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}
