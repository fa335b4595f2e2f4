//! Generator checkpointing: one file per network with an embedded manifest
//! (variant, grade, config, seed, epoch).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GradeLabel;
use crate::error::{Error, Result};
use crate::nn::serialize::{fill_store, read_store, write_store};

use super::train::Generator;
use super::{GanConfig, GanVariant};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub kind: String,
    pub variant: GanVariant,
    pub grade: u8,
    pub config: GanConfig,
    pub seed: u64,
    pub epoch: usize,
    pub tool_version: String,
}

pub fn save_generator(
    path: &Path,
    gen: &Generator,
    variant: GanVariant,
    grade: GradeLabel,
    epoch: usize,
) -> Result<()> {
    let manifest = GeneratorManifest {
        kind: "generator".into(),
        variant,
        grade: grade.value(),
        config: gen.cfg.clone(),
        seed: gen.cfg.seed,
        epoch,
        tool_version: crate::TOOL_VERSION.into(),
    };
    let header = serde_json::to_value(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    write_store(path, &header, &gen.store)
}

pub fn load_generator(path: &Path) -> Result<(Generator, GeneratorManifest)> {
    let (header, params) = read_store(path)?;
    let manifest: GeneratorManifest = serde_json::from_value(header)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    if manifest.kind != "generator" {
        return Err(Error::Checkpoint(format!(
            "{}: not a generator checkpoint",
            path.display()
        )));
    }
    let mut gen = Generator::new(&manifest.config, "load");
    fill_store(&mut gen.store, &params)?;
    Ok((gen, manifest))
}
