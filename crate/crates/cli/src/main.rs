//! `bronchograde`: staged pipeline runner.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error
//! (including missing upstream artifacts).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bronchograde::classify::Backbone;
use bronchograde::data::GradeLabel;
use bronchograde::error::Error;
use bronchograde::gan::GanVariant;
use bronchograde::pipeline::{self, load_config, PipelineConfig, Profile, Stage, StageFilters};
use bronchograde::synth::write_demo_corpus;

#[derive(Parser)]
#[command(
    name = "bronchograde",
    version,
    about = "Inhalation-injury grading pipeline: augmentation, unpaired translation, transfer-learning classification, and interpretability reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML configuration file (profile defaults apply underneath)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Root seed all stage randomness derives from
    #[arg(long)]
    seed: Option<u64>,

    /// Sizing profile
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,

    /// Workspace directory for artifacts
    #[arg(long)]
    workspace: Option<PathBuf>,

    /// Input corpus (manifest CSV or grade-directory root) for ingest
    #[arg(long)]
    input: Option<PathBuf>,

    /// Restrict GAN stages to one grade (1-6)
    #[arg(long)]
    grade: Option<u8>,

    /// Restrict GAN stages to one variant
    #[arg(long, value_parser = ["cut", "cyclegan"])]
    variant: Option<String>,

    /// Restrict classifier training to one backbone
    #[arg(long, value_parser = ["inception_cnn", "vit"])]
    backbone: Option<String>,

    /// Override any config key by dotted path, e.g. -S split.ratio=0.8
    #[arg(long = "set", short = 'S', value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and normalize the input corpus into the workspace
    Ingest(CommonArgs),
    /// Deterministic train/test split
    Split(CommonArgs),
    /// Graphic-transformation augmentation of the training split
    Augment(CommonArgs),
    /// Train the unpaired translation models (one per grade and variant)
    TrainGan(CommonArgs),
    /// Generate synthetic images from the trained translation models
    Generate(CommonArgs),
    /// Fine-tune classifiers per backbone and augmentation method
    TrainClassifier(CommonArgs),
    /// Evaluate every trained classifier on the untouched test split
    Evaluate(CommonArgs),
    /// Histograms, spectra, PCA embeddings and Grad-CAM heatmaps
    Interpret(CommonArgs),
    /// Assemble the self-contained HTML report
    Report(CommonArgs),
    /// Run every stage in order
    RunAll(CommonArgs),
    /// Write a synthetic demo corpus (PNG files plus manifest.csv)
    SynthData {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Images per grade
        #[arg(long, default_value_t = 12)]
        images_per_grade: usize,
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
}

fn build_config(args: &CommonArgs) -> Result<(PipelineConfig, StageFilters), Error> {
    let profile = Profile::parse(&args.profile)?;
    let mut cfg = load_config(args.config.as_deref(), profile, &args.set)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(ws) = &args.workspace {
        cfg.paths.workspace = ws.clone();
    }
    if let Some(input) = &args.input {
        cfg.paths.input = input.clone();
    }
    let filters = StageFilters {
        grade: args.grade.map(GradeLabel::new).transpose()?,
        variant: args.variant.as_deref().map(GanVariant::parse).transpose()?,
        backbone: args.backbone.as_deref().map(Backbone::parse).transpose()?,
    };
    Ok((cfg, filters))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::MissingArtifact(_)
        | Error::Validation(_)
        | Error::Manifest { .. } => 2,
        _ => 1,
    }
}

fn run_stage_command(stage: Stage, args: &CommonArgs) -> Result<(), Error> {
    let (cfg, filters) = build_config(args)?;
    pipeline::run_stage(stage, &cfg, &filters)
}

fn dispatch(command: &Command) -> Result<(), Error> {
    match command {
        Command::Ingest(a) => run_stage_command(Stage::Ingest, a),
        Command::Split(a) => run_stage_command(Stage::Split, a),
        Command::Augment(a) => run_stage_command(Stage::Augment, a),
        Command::TrainGan(a) => run_stage_command(Stage::TrainGan, a),
        Command::Generate(a) => run_stage_command(Stage::Generate, a),
        Command::TrainClassifier(a) => run_stage_command(Stage::TrainClassifier, a),
        Command::Evaluate(a) => run_stage_command(Stage::Evaluate, a),
        Command::Interpret(a) => run_stage_command(Stage::Interpret, a),
        Command::Report(a) => run_stage_command(Stage::Report, a),
        Command::RunAll(a) => {
            let (cfg, _) = build_config(a)?;
            pipeline::run_all(&cfg)
        }
        Command::SynthData {
            out,
            images_per_grade,
            seed,
        } => {
            let manifest = write_demo_corpus(out, *images_per_grade, *seed)?;
            println!("wrote demo corpus manifest: {}", manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
