//! Pipeline configuration: a TOML tree with profile-scaled defaults, file
//! overlay, and dotted-path command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{DEFAULT_CROP_AREA_RANGE, DEFAULT_MIN_CROP_AREA};
use crate::classify::{Backbone, ClassifierConfig, TrainableScope};
use crate::data::{GradeLabel, Provenance};
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanVariant};
use crate::interpret::{GradCamTarget, DEFAULT_LOW_RADIUS_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small images, small networks, minutes on a CPU.
    Desk,
    /// 256x256 images and full-size networks.
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Manifest CSV or grade-directory root to ingest.
    pub input: PathBuf,
    pub workspace: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            input: PathBuf::new(),
            workspace: PathBuf::from("workspace"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub by_patient: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: 0.7,
            by_patient: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-grade transform output targets; empty means multiplier mode.
    pub targets: BTreeMap<String, usize>,
    pub multiplier: usize,
    pub crop_area_min: f64,
    pub crop_area_max: f64,
    pub min_crop_area: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            targets: BTreeMap::new(),
            multiplier: 3,
            crop_area_min: DEFAULT_CROP_AREA_RANGE.0,
            crop_area_max: DEFAULT_CROP_AREA_RANGE.1,
            min_crop_area: DEFAULT_MIN_CROP_AREA,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GanStageConfig {
    pub variants: Vec<GanVariant>,
    /// Grades to train/generate for; empty means every grade in the split.
    pub grades: Vec<u8>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_cycle: f64,
    pub lambda_nce: f64,
    pub tau: f64,
    pub patches_per_image: usize,
    pub negatives_per_anchor: usize,
    pub nce_identity: bool,
    pub image_size: usize,
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_res_blocks: usize,
    pub steps_per_epoch_cap: usize,
    /// Generated images per grade = multiplier x grade's original count,
    /// unless an explicit per-grade target is set.
    pub generate_multiplier: usize,
    pub generate_targets: BTreeMap<String, usize>,
}

impl Default for GanStageConfig {
    fn default() -> Self {
        let d = GanConfig::desk(GanVariant::Cut, 0);
        GanStageConfig {
            variants: vec![GanVariant::Cut, GanVariant::CycleGan],
            grades: Vec::new(),
            epochs: 3,
            batch_size: 1,
            learning_rate: d.learning_rate,
            lambda_cycle: d.lambda_cycle,
            lambda_nce: d.lambda_nce,
            tau: d.tau,
            patches_per_image: d.patches_per_image,
            negatives_per_anchor: d.negatives_per_anchor,
            nce_identity: d.nce_identity,
            image_size: d.image_size,
            base_channels: d.base_channels,
            n_downsample: d.n_downsample,
            n_res_blocks: d.n_res_blocks,
            steps_per_epoch_cap: 24,
            generate_multiplier: 3,
            generate_targets: BTreeMap::new(),
        }
    }
}

impl GanStageConfig {
    pub fn to_gan_config(&self, variant: GanVariant, seed: u64) -> GanConfig {
        GanConfig {
            variant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda_cycle: self.lambda_cycle,
            lambda_nce: self.lambda_nce,
            tau: self.tau,
            patches_per_image: self.patches_per_image,
            negatives_per_anchor: self.negatives_per_anchor,
            nce_identity: self.nce_identity,
            image_size: self.image_size,
            base_channels: self.base_channels,
            n_downsample: self.n_downsample,
            n_res_blocks: self.n_res_blocks,
            steps_per_epoch_cap: self.steps_per_epoch_cap,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierStageConfig {
    pub backbones: Vec<Backbone>,
    /// Augmentation methods to train against, as provenance names.
    pub methods: Vec<String>,
    /// Include the original training images in augmented-method corpora.
    pub include_originals: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub input_size: usize,
    pub width: usize,
    pub trainable_scope: TrainableScope,
    pub pretrained: bool,
    pub pretrained_weights: Option<PathBuf>,
    pub class_weighting: bool,
    /// Fraction of each training corpus held out for best-epoch selection.
    pub val_fraction: f64,
}

impl Default for ClassifierStageConfig {
    fn default() -> Self {
        let d = ClassifierConfig::desk(Backbone::InceptionCnn, 0);
        ClassifierStageConfig {
            backbones: vec![Backbone::InceptionCnn],
            methods: vec![
                "original".into(),
                "transform".into(),
                "cyclegan".into(),
                "cut".into(),
            ],
            include_originals: true,
            epochs: 12,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            input_size: d.input_size,
            width: d.width,
            trainable_scope: d.trainable_scope,
            pretrained: false,
            pretrained_weights: None,
            class_weighting: false,
            val_fraction: 0.15,
        }
    }
}

impl ClassifierStageConfig {
    pub fn to_classifier_config(&self, backbone: Backbone, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            backbone,
            pretrained: self.pretrained,
            pretrained_weights: self.pretrained_weights.clone(),
            trainable_scope: self.trainable_scope,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            input_size: self.input_size,
            width: self.width,
            class_weighting: self.class_weighting,
        }
    }

    pub fn method_provenances(&self) -> Result<Vec<Provenance>> {
        self.methods.iter().map(|m| Provenance::parse(m)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpretConfig {
    pub low_radius_fraction: f64,
    /// Heatmap / spectrum samples per (grade, method).
    pub samples_per_grade: usize,
    pub gradcam_target: GradCamTarget,
    /// Cap on feature vectors per grade for the PCA scatter.
    pub pca_max_per_grade: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            low_radius_fraction: DEFAULT_LOW_RADIUS_FRACTION,
            samples_per_grade: 3,
            gradcam_target: GradCamTarget::Predicted,
            pca_max_per_grade: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub title: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            title: "Inhalation-injury grading pipeline report".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub gan: GanStageConfig,
    pub classifier: ClassifierStageConfig,
    pub interpret: InterpretConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            profile: Profile::Desk,
            seed: 42,
            paths: PathsConfig::default(),
            split: SplitConfig::default(),
            augment: AugmentConfig::default(),
            gan: GanStageConfig::default(),
            classifier: ClassifierStageConfig::default(),
            interpret: InterpretConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn default_for(profile: Profile) -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.profile = profile;
        if profile == Profile::Paper {
            let g = GanConfig::paper(GanVariant::Cut, 0);
            cfg.gan.epochs = g.epochs;
            cfg.gan.image_size = g.image_size;
            cfg.gan.base_channels = g.base_channels;
            cfg.gan.n_downsample = g.n_downsample;
            cfg.gan.n_res_blocks = g.n_res_blocks;
            cfg.gan.patches_per_image = g.patches_per_image;
            cfg.gan.negatives_per_anchor = g.negatives_per_anchor;
            cfg.gan.nce_identity = g.nce_identity;
            cfg.gan.steps_per_epoch_cap = 0;
            let c = ClassifierConfig::paper(Backbone::InceptionCnn, 0);
            cfg.classifier.epochs = c.epochs;
            cfg.classifier.batch_size = c.batch_size;
            cfg.classifier.learning_rate = c.learning_rate;
            cfg.classifier.input_size = c.input_size;
            cfg.classifier.width = c.width;
            cfg.classifier.backbones = vec![Backbone::InceptionCnn, Backbone::Vit];
        }
        cfg
    }

    /// Deterministic hash of the full configuration tree.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::Config(format!(
                "split.ratio must be in (0, 1), got {}",
                self.split.ratio
            )));
        }
        if self.augment.multiplier < 1 {
            return Err(Error::Config("augment.multiplier must be >= 1".into()));
        }
        if !(self.classifier.val_fraction >= 0.0 && self.classifier.val_fraction < 0.5) {
            return Err(Error::Config(
                "classifier.val_fraction must be in [0, 0.5)".into(),
            ));
        }
        self.classifier.method_provenances()?;
        for g in &self.gan.grades {
            GradeLabel::new(*g).map_err(|e| Error::Config(e.to_string()))?;
        }
        self.gan
            .to_gan_config(GanVariant::Cut, 0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.classifier
            .to_classifier_config(Backbone::InceptionCnn, 0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn augment_targets(&self) -> Result<BTreeMap<GradeLabel, usize>> {
        parse_grade_map(&self.augment.targets)
    }

    pub fn generate_targets(&self) -> Result<BTreeMap<GradeLabel, usize>> {
        parse_grade_map(&self.gan.generate_targets)
    }
}

fn parse_grade_map(m: &BTreeMap<String, usize>) -> Result<BTreeMap<GradeLabel, usize>> {
    let mut out = BTreeMap::new();
    for (k, &v) in m {
        let g: u8 = k
            .parse()
            .map_err(|_| Error::Config(format!("bad grade key '{k}'")))?;
        out.insert(GradeLabel::new(g)?, v);
    }
    Ok(out)
}

/// Load a config: profile defaults, overlaid with the optional TOML file,
/// then dotted-path overrides (`section.key=value`).
pub fn load_config(
    path: Option<&Path>,
    profile: Profile,
    overrides: &[String],
) -> Result<PipelineConfig> {
    let base = PipelineConfig::default_for(profile);
    let mut tree: toml::Value = toml::Value::try_from(&base)
        .map_err(|e| Error::Config(format!("default config encode: {e}")))?;

    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge_toml(&mut tree, toml::Value::Table(overlay));
    }

    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' must be key.path=value")))?;
        set_dotted(&mut tree, key.trim(), value.trim())?;
    }

    let cfg: PipelineConfig = tree
        .try_into()
        .map_err(|e| Error::Config(format!("config decode: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge_toml(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_map), toml::Value::Table(overlay_map)) => {
            for (k, v) in overlay_map {
                match base_map.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        base_map.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_dotted(tree: &mut toml::Value, dotted: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{dotted}'")));
    }
    // parse the value as a TOML value expression, falling back to a string
    let value: toml::Value = raw
        .parse::<toml::Value>()
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));

    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{dotted}': not a table at '{part}'")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{dotted}': parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
