//! Unpaired image-to-image translation for synthetic augmentation: CycleGAN
//! (two generators, two discriminators, adversarial plus cycle-consistency
//! objectives) and CUT (one direction, adversarial plus patch-contrastive
//! objective), trained per one-vs-all grade partition.

mod checkpoint;
mod losses;
mod nets;
mod train;

pub use checkpoint::{load_generator, save_generator, GeneratorManifest};
pub use losses::{
    adversarial_loss, cycle_loss, patch_nce_loss, patch_nce_total, PatchFeatureSet, SCORE_EPS,
};
pub use nets::{generator_feature_channels, FeatureHeads, PatchDiscriminator, ResnetGenerator};
pub use train::{
    generate, train_cut, train_cyclegan, CutModel, CycleGanModel, EpochLosses, Generator,
    TrainHistory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    CycleGan,
    Cut,
}

impl GanVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GanVariant::CycleGan => "cyclegan",
            GanVariant::Cut => "cut",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cyclegan" => Ok(GanVariant::CycleGan),
            "cut" => Ok(GanVariant::Cut),
            other => Err(Error::validation(format!("unknown GAN variant '{other}'"))),
        }
    }

    pub fn provenance(self) -> crate::data::Provenance {
        match self {
            GanVariant::CycleGan => crate::data::Provenance::CycleGan,
            GanVariant::Cut => crate::data::Provenance::Cut,
        }
    }
}

/// Hyperparameters for one GAN training run. Defaults follow the original
/// CycleGAN and CUT training recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub variant: GanVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cycle-consistency weight (CycleGAN only).
    pub lambda_cycle: f64,
    /// Patch-contrastive weight (CUT only).
    pub lambda_nce: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub patches_per_image: usize,
    pub negatives_per_anchor: usize,
    /// Also apply the contrastive term to target-domain images.
    pub nce_identity: bool,
    /// Square side length images are resampled to for training.
    pub image_size: usize,
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_res_blocks: usize,
    /// Cap on optimizer steps per epoch (0 = uncapped).
    pub steps_per_epoch_cap: usize,
    pub seed: u64,
}

impl GanConfig {
    /// Small networks and 32x32 images; the test-suite profile.
    pub fn desk(variant: GanVariant, seed: u64) -> Self {
        GanConfig {
            variant,
            epochs: 5,
            batch_size: 1,
            learning_rate: 2e-4,
            lambda_cycle: 10.0,
            lambda_nce: 1.0,
            tau: 0.07,
            patches_per_image: 16,
            negatives_per_anchor: 15,
            nce_identity: false,
            image_size: 32,
            base_channels: 16,
            n_downsample: 1,
            n_res_blocks: 2,
            steps_per_epoch_cap: 0,
            seed,
        }
    }

    /// Full-size profile for 256x256 corpora.
    pub fn paper(variant: GanVariant, seed: u64) -> Self {
        GanConfig {
            variant,
            epochs: 100,
            batch_size: 1,
            learning_rate: 2e-4,
            lambda_cycle: 10.0,
            lambda_nce: 1.0,
            tau: 0.07,
            patches_per_image: 128,
            negatives_per_anchor: 127,
            nce_identity: true,
            image_size: 256,
            base_channels: 48,
            n_downsample: 2,
            n_res_blocks: 6,
            steps_per_epoch_cap: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch size must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.lambda_cycle < 0.0 {
            return Err(Error::validation("lambda_cycle must be >= 0"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::validation("learning rate must be > 0"));
        }
        if self.variant == GanVariant::Cut {
            if self.patches_per_image < 2 {
                return Err(Error::validation(
                    "need at least 2 patches per image for contrastive negatives",
                ));
            }
            if self.negatives_per_anchor < 1 {
                return Err(Error::validation("need at least 1 negative per anchor"));
            }
        }
        if self.image_size < 8 || self.image_size % (1 << self.n_downsample) != 0 {
            return Err(Error::validation(format!(
                "image size {} incompatible with {} downsampling stages",
                self.image_size, self.n_downsample
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{one_vs_all_partition, Dataset, GradeLabel, ImageRecord, Provenance};
    use crate::img::Image;
    use std::path::PathBuf;

    fn tiny_partition() -> crate::data::DomainPartition {
        let mut records = Vec::new();
        for grade in [1u8, 2] {
            for i in 0..4 {
                let v = grade * 60 + i * 10;
                records.push(ImageRecord {
                    patient_id: format!("p{grade}"),
                    image: Image::from_fn(16, 16, |y, x| {
                        [v, ((y * x) % 256) as u8, 255 - v]
                    }),
                    grade: GradeLabel::new(grade).unwrap(),
                    provenance: Provenance::Original,
                    source_path: PathBuf::from(format!("g{grade}_{i}.png")),
                });
            }
        }
        one_vs_all_partition(&Dataset::new(records), GradeLabel::new(1).unwrap()).unwrap()
    }

    fn tiny_cfg(variant: GanVariant) -> GanConfig {
        GanConfig {
            epochs: 2,
            image_size: 16,
            base_channels: 8,
            n_res_blocks: 1,
            patches_per_image: 4,
            negatives_per_anchor: 3,
            steps_per_epoch_cap: 4,
            ..GanConfig::desk(variant, 7)
        }
    }

    #[test]
    fn cyclegan_history_len_and_finite() {
        let part = tiny_partition();
        let (_, hist) = train_cyclegan(&part, &tiny_cfg(GanVariant::CycleGan)).unwrap();
        assert_eq!(hist.len(), 2);
        assert!(hist.all_finite());
        assert!(hist.series("cycle").len() == 2);
    }

    #[test]
    fn cyclegan_rejects_empty_domain_and_wrong_variant() {
        let part = tiny_partition();
        let mut empty_b = part.clone();
        empty_b.train_b = Dataset::new(vec![]);
        assert!(train_cyclegan(&empty_b, &tiny_cfg(GanVariant::CycleGan)).is_err());
        assert!(train_cyclegan(&part, &tiny_cfg(GanVariant::Cut)).is_err());
    }

    #[test]
    fn cut_is_deterministic_per_seed() {
        let part = tiny_partition();
        let cfg = tiny_cfg(GanVariant::Cut);
        let (_, h1) = train_cut(&part, &cfg).unwrap();
        let (_, h2) = train_cut(&part, &cfg).unwrap();
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            for (k, v) in &a.values {
                assert_eq!(v, &b.values[k], "loss {k} differs between identical runs");
            }
        }
    }

    #[test]
    fn cut_rejects_too_few_patches() {
        let part = tiny_partition();
        let mut cfg = tiny_cfg(GanVariant::Cut);
        cfg.patches_per_image = 1;
        cfg.negatives_per_anchor = 0;
        assert!(train_cut(&part, &cfg).is_err());
    }

    #[test]
    fn generate_counts_shapes_and_range() {
        let part = tiny_partition();
        let cfg = tiny_cfg(GanVariant::Cut);
        let (model, _) = train_cut(&part, &cfg).unwrap();
        let gen = model.generator();
        let out = generate(
            &gen,
            &part.train_a,
            part.target_grade,
            7,
            Provenance::Cut,
        )
        .unwrap();
        assert_eq!(out.len(), 7);
        for r in out.records() {
            assert_eq!(r.grade, part.target_grade);
            assert_eq!(r.provenance, Provenance::Cut);
            assert_eq!((r.image.height(), r.image.width()), (16, 16));
        }
        assert!(generate(&gen, &part.train_a, part.target_grade, 0, Provenance::Cut).is_err());
    }

    #[test]
    fn generator_checkpoint_roundtrip_is_exact() {
        let part = tiny_partition();
        let cfg = tiny_cfg(GanVariant::CycleGan);
        let (model, _) = train_cyclegan(&part, &cfg).unwrap();
        let gen = model.generator_ab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &gen, GanVariant::CycleGan, part.target_grade, 2).unwrap();
        let (loaded, manifest) = load_generator(&path).unwrap();
        assert_eq!(manifest.grade, 1);
        assert_eq!(manifest.variant, GanVariant::CycleGan);

        let probe: Vec<ndarray::Array3<f32>> = part.train_a.records()[..2]
            .iter()
            .map(|r| r.image.to_chw_pm1())
            .collect();
        let a = gen.translate(&probe).unwrap();
        let b = loaded.translate(&probe).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }
}
