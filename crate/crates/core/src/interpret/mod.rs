//! Interpretability analyses: per-channel intensity histograms, centered
//! frequency spectra with radial band energies, PCA feature embeddings with
//! a silhouette separability score, and Grad-CAM heatmaps with
//! mean-intensity tables.

mod fft;
mod gradcam;
mod hist;
mod pca;
pub mod render;

pub use fft::{frequency_spectrum, FrequencySpectrum, DEFAULT_LOW_RADIUS_FRACTION};
pub use gradcam::{
    grad_cam, grad_cam_from_maps, mean_intensity_table, GradCamTarget, Heatmap,
    MeanIntensityTable,
};
pub use hist::{channel_histograms, ChannelHistograms};
pub use pca::{pca_project, separability_score, FeatureEmbedding};
