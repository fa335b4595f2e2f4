//! Grading pipeline for bronchoscopy-style images of inhalation injuries.
//!
//! The library covers the full workflow: manifest ingestion and six-grade
//! labeling from mechanical-ventilation duration, deterministic graphic
//! augmentation, unpaired image-to-image translation (CycleGAN and CUT) for
//! synthetic augmentation, transfer-learning classifiers (an inception-style
//! CNN and a small ViT), confusion-matrix metrics, and interpretability
//! analyses (channel histograms, frequency spectra, PCA embeddings, and
//! Grad-CAM heatmaps). The [`pipeline`] module orchestrates the stages and
//! writes a self-contained report.
//!
//! Two sizing profiles exist throughout: `desk` (small images and networks,
//! minutes on a laptop CPU) and `paper` (256x256 images and larger networks).

pub mod augment;
pub mod classify;
pub mod data;
pub mod error;
pub mod gan;
pub mod img;
pub mod interpret;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

/// Version string embedded in checkpoints, stage manifests and reports.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
