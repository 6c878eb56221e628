mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psl_core::schema::Structure;
use psl_core::screening::ModelPreset;

use commands::phantom::{Effect, PhantomArgs};
use commands::psl::PslArgs;
use commands::segmetrics::{parse_structure, SegmetricsArgs};
use commands::train_eval::RocPlotArgs;
use config::{Overrides, PipelineConfig, OUTPUT_DIR_ENV};
use error::Result;

/// Pancreas surface lobularity, CT biomarkers and diabetes screening models.
#[derive(Parser)]
#[command(name = "psl", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Pipeline config JSON; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (also `PSL_OUTPUT_DIR`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Label schema JSON mapping structure names to label values.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Volumes store rows posterior-first; flip them on load.
    #[arg(long, global = true)]
    flip_anterior: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantoms with truth sidecars, or a synthetic cohort.
    Phantom {
        /// Phantom spec JSON; the built-in default when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// One phantom per serration amplitude (mm).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        amplitudes: Vec<f64>,
        /// Write a synthetic cohort of this many patients instead.
        #[arg(long)]
        synthetic_cohort: Option<usize>,
        #[arg(long, value_enum, default_value = "none")]
        effect: Effect,
    },
    /// Imaging biomarkers and PSL for every patient in a cohort CSV.
    Biomarkers {
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// PSL of individual masks.
    Psl {
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        /// One SVG per scored slice showing the surface and its fit.
        #[arg(long)]
        debug_svg: bool,
    },
    /// Dice and ASSD against reference masks, with paired tests.
    Segmetrics {
        #[arg(long)]
        ref_dir: PathBuf,
        /// `name=dir` or a directory; repeat for each model.
        #[arg(long = "pred-dir", required = true)]
        pred_dirs: Vec<String>,
        #[arg(long, value_parser = parse_structure, default_value = "pancreas")]
        structure: Structure,
    },
    /// Fit and evaluate the screening models.
    TrainEval {
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        biomarkers: Option<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        presets: Option<Vec<ModelPreset>>,
        #[arg(long)]
        nondiabetic_hba1c_below: Option<f64>,
    },
    /// Redraw roc.svg from roc_points.csv.
    RocPlot {
        #[arg(long)]
        points: PathBuf,
        /// metrics.csv to take AUCs from; otherwise the trapezoid rule.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut o = Overrides {
        schema: g.schema,
        output_dir: g.output_dir,
        flip_anterior: g.flip_anterior,
        seed: g.seed,
        threads: g.threads,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Biomarkers { cohort } => o.cohort = cohort.clone(),
        Command::TrainEval {
            cohort,
            biomarkers,
            train_fraction,
            bootstrap,
            presets,
            nondiabetic_hba1c_below,
        } => {
            o.cohort = cohort.clone();
            o.biomarkers = biomarkers.clone();
            o.train_fraction = *train_fraction;
            o.bootstrap = *bootstrap;
            o.presets = presets.clone();
            o.nondiabetic_hba1c_below = *nondiabetic_hba1c_below;
        }
        _ => {}
    }
    let env_output = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let cfg = PipelineConfig::resolve(g.config.as_deref(), env_output, o)?;
    log::debug!("config: {cfg:?}");

    match cli.command {
        Command::Phantom {
            spec,
            amplitudes,
            synthetic_cohort,
            effect,
        } => commands::phantom::run(
            &cfg,
            &PhantomArgs {
                spec,
                amplitudes,
                synthetic_cohort,
                effect,
            },
        ),
        Command::Biomarkers { .. } => commands::biomarkers::run(&cfg),
        Command::Psl { masks, debug_svg } => commands::psl::run(&cfg, &PslArgs { masks, debug_svg }),
        Command::Segmetrics {
            ref_dir,
            pred_dirs,
            structure,
        } => commands::segmetrics::run(
            &cfg,
            &SegmetricsArgs {
                ref_dir,
                pred_dirs,
                structure,
            },
        ),
        Command::TrainEval { .. } => commands::train_eval::run(&cfg),
        Command::RocPlot { points, metrics } => commands::train_eval::roc_plot(&cfg, &RocPlotArgs { points, metrics }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
