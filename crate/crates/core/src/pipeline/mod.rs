//! Staged pipeline orchestration: ingest, split, augment, GAN training and
//! generation, classifier fine-tuning, evaluation, interpretation, and
//! report assembly, with content-hash manifests for exact reruns.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::{load_config, PipelineConfig, Profile};
pub use manifest::{hash_file, StageManifest};
pub use report::make_report;
pub use stages::{read_classifier_index, StageFilters};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Split,
    Augment,
    TrainGan,
    Generate,
    TrainClassifier,
    Evaluate,
    Interpret,
    Report,
}

impl Stage {
    pub fn all() -> [Stage; 9] {
        [
            Stage::Ingest,
            Stage::Split,
            Stage::Augment,
            Stage::TrainGan,
            Stage::Generate,
            Stage::TrainClassifier,
            Stage::Evaluate,
            Stage::Interpret,
            Stage::Report,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Augment => "augment",
            Stage::TrainGan => "train-gan",
            Stage::Generate => "generate",
            Stage::TrainClassifier => "train-classifier",
            Stage::Evaluate => "evaluate",
            Stage::Interpret => "interpret",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::all()
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown stage '{s}'")))
    }
}

/// Run one stage against the workspace. Prior stages' artifacts must exist;
/// a missing input surfaces as [`Error::MissingArtifact`].
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, filters: &StageFilters) -> Result<()> {
    cfg.validate()?;
    match stage {
        Stage::Ingest => stages::stage_ingest(cfg),
        Stage::Split => stages::stage_split(cfg),
        Stage::Augment => stages::stage_augment(cfg),
        Stage::TrainGan => stages::stage_train_gan(cfg, filters),
        Stage::Generate => stages::stage_generate(cfg, filters),
        Stage::TrainClassifier => stages::stage_train_classifier(cfg, filters),
        Stage::Evaluate => stages::stage_evaluate(cfg),
        Stage::Interpret => stages::stage_interpret(cfg),
        Stage::Report => stages::stage_report(cfg),
    }
}

/// Run every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    let filters = StageFilters::default();
    for stage in Stage::all() {
        log::info!("stage: {}", stage.as_str());
        run_stage(stage, cfg, &filters)?;
    }
    Ok(())
}
