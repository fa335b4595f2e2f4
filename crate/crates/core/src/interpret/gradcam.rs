//! Grad-CAM: gradient-weighted class activation maps normalized to 8-bit
//! heatmaps, plus the per-grade per-method mean-intensity table.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::classify::TrainedClassifier;
use crate::data::{GradeLabel, Provenance};
use crate::error::{Error, Result};
use crate::img::Image;

/// 8-bit heatmap aligned to the input image.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: Array2<u8>,
    pub mean_intensity: f64,
}

impl Heatmap {
    fn from_grid(grid: Array2<u8>) -> Self {
        let mean_intensity =
            grid.iter().map(|&v| v as f64).sum::<f64>() / grid.len() as f64;
        Heatmap {
            grid,
            mean_intensity,
        }
    }
}

/// Which class the heatmap explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCamTarget {
    /// The model's own prediction (the default).
    Predicted,
    /// The ground-truth label.
    TrueLabel,
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Core Grad-CAM arithmetic on explicit activation/gradient maps.
///
/// Channel weights are the spatial means of the gradients; the weighted sum
/// is rectified, bilinearly upsampled to `(out_h, out_w)`, and min-max
/// normalized to `[0, 255]` (half-up rounding). An all-zero rectified map
/// stays all-zero; a uniform positive map normalizes to all-255.
pub fn grad_cam_from_maps(
    activations: &Array3<f32>,
    gradients: &Array3<f32>,
    out_h: usize,
    out_w: usize,
) -> Result<Heatmap> {
    if activations.shape() != gradients.shape() {
        return Err(Error::Shape(format!(
            "activation/gradient shape mismatch: {:?} vs {:?}",
            activations.shape(),
            gradients.shape()
        )));
    }
    let (c, h, w) = (
        activations.shape()[0],
        activations.shape()[1],
        activations.shape()[2],
    );
    let m = (h * w) as f64;

    // raw map = relu(sum_k alpha_k A_k), alpha_k = spatial mean of the gradient
    let mut raw = Array2::<f64>::zeros((h, w));
    for k in 0..c {
        let alpha: f64 = gradients
            .index_axis(ndarray::Axis(0), k)
            .iter()
            .map(|&g| g as f64)
            .sum::<f64>()
            / m;
        for y in 0..h {
            for x in 0..w {
                raw[[y, x]] += alpha * activations[[k, y, x]] as f64;
            }
        }
    }
    raw.mapv_inplace(|v| v.max(0.0));

    let up = bilinear_upsample(&raw, out_h, out_w);
    let min = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = if max == 0.0 {
        Array2::<u8>::zeros((out_h, out_w))
    } else if max == min {
        Array2::<u8>::from_elem((out_h, out_w), 255)
    } else {
        up.mapv(|v| round_half_up((v - min) / (max - min) * 255.0))
    };
    Ok(Heatmap::from_grid(grid))
}

fn bilinear_upsample(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = (src.shape()[0], src.shape()[1]);
    if h == out_h && w == out_w {
        return src.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
        let top = src[[y0, x0]] * (1.0 - wx) + src[[y0, x1]] * wx;
        let bot = src[[y1, x0]] * (1.0 - wx) + src[[y1, x1]] * wx;
        top * (1.0 - wy) + bot * wy
    })
}

/// Heatmap for one image through a trained classifier.
pub fn grad_cam(
    model: &TrainedClassifier,
    img: &Image,
    true_label: GradeLabel,
    target: GradCamTarget,
) -> Result<Heatmap> {
    let class = match target {
        GradCamTarget::TrueLabel => true_label,
        GradCamTarget::Predicted => model.predict(img)?.0,
    };
    let (acts, grads) = model.activations_and_gradients(img, class)?;
    grad_cam_from_maps(&acts, &grads, img.height(), img.width())
}

/// Mean of heatmap mean intensities per (grade, method) cell. Empty cells
/// render blank and warn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanIntensityTable {
    /// `cells[grade index][method index]`, methods in table order.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn mean_intensity_table(
    groups: &BTreeMap<(GradeLabel, Provenance), Vec<f64>>,
) -> MeanIntensityTable {
    let methods = Provenance::all();
    let cells = GradeLabel::all()
        .into_iter()
        .map(|g| {
            methods
                .iter()
                .map(|&m| match groups.get(&(g, m)) {
                    Some(values) if !values.is_empty() => {
                        Some(values.iter().sum::<f64>() / values.len() as f64)
                    }
                    _ => {
                        log::warn!("no heatmaps for {g} / {}", m.table_heading());
                        None
                    }
                })
                .collect()
        })
        .collect();
    MeanIntensityTable { cells }
}

impl MeanIntensityTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("grade");
        for m in Provenance::all() {
            out.push(',');
            out.push_str(m.table_heading());
        }
        out.push('\n');
        for (gi, row) in self.cells.iter().enumerate() {
            out.push_str(&format!("grade {}", gi + 1));
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&format!("{v:.2}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_case_single_map_uniform_gradient() {
        // A = [[1,2],[3,4]], gradient all ones: alpha = 1, raw = A,
        // normalized = [[0,85],[170,255]], mean 127.5.
        let a = array![[[1.0f32, 2.0], [3.0, 4.0]]];
        let g = array![[[1.0f32, 1.0], [1.0, 1.0]]];
        let hm = grad_cam_from_maps(&a, &g, 2, 2).unwrap();
        assert_eq!(hm.grid, array![[0u8, 85], [170, 255]]);
        assert_eq!(hm.mean_intensity, 127.5);
    }

    #[test]
    fn all_negative_combination_is_all_zero() {
        let a = array![[[1.0f32, 2.0], [3.0, 4.0]]];
        let g = array![[[-1.0f32, -1.0], [-1.0, -1.0]]];
        let hm = grad_cam_from_maps(&a, &g, 2, 2).unwrap();
        assert!(hm.grid.iter().all(|&v| v == 0));
        assert_eq!(hm.mean_intensity, 0.0);
    }

    #[test]
    fn uniform_positive_map_is_all_255() {
        let a = array![[[2.0f32, 2.0], [2.0, 2.0]]];
        let g = array![[[1.0f32, 1.0], [1.0, 1.0]]];
        let hm = grad_cam_from_maps(&a, &g, 2, 2).unwrap();
        assert!(hm.grid.iter().all(|&v| v == 255));
        assert_eq!(hm.mean_intensity, 255.0);
    }

    #[test]
    fn mean_intensity_matches_independent_mean() {
        let a = array![[[0.5f32, 1.5, 0.2], [3.0, 0.1, 2.2], [1.0, 0.0, 0.7]]];
        let g = array![[[1.0f32, 0.5, 0.2], [0.1, 0.9, 0.4], [0.3, 0.2, 0.8]]];
        let hm = grad_cam_from_maps(&a, &g, 9, 9).unwrap();
        let independent =
            hm.grid.iter().map(|&v| v as f64).sum::<f64>() / hm.grid.len() as f64;
        assert!((hm.mean_intensity - independent).abs() < 1e-9);
    }

    #[test]
    fn upsampling_matches_requested_extent_and_range() {
        let a = array![[[1.0f32, 0.0], [0.0, 2.0]], [[0.3f32, 0.4], [0.1, 0.9]]];
        let g = array![[[0.2f32, 0.8], [0.5, 0.5]], [[1.0f32, 0.0], [0.2, 0.3]]];
        let hm = grad_cam_from_maps(&a, &g, 8, 6).unwrap();
        assert_eq!(hm.grid.shape(), &[8, 6]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array3::<f32>::zeros((1, 2, 2));
        let g = Array3::<f32>::zeros((1, 2, 3));
        assert!(grad_cam_from_maps(&a, &g, 2, 2).is_err());
    }

    #[test]
    fn table_cells_average_per_image_means() {
        let mut groups: BTreeMap<(GradeLabel, Provenance), Vec<f64>> = BTreeMap::new();
        let g4 = GradeLabel::new(4).unwrap();
        groups.insert((g4, Provenance::Original), vec![100.0, 200.0]);
        groups.insert((g4, Provenance::Cut), vec![255.0]);
        let table = mean_intensity_table(&groups);
        assert_eq!(table.cells[3][0], Some(150.0));
        assert_eq!(table.cells[3][3], Some(255.0));
        assert_eq!(table.cells[0][0], None);
        let csv = table.to_csv_string();
        assert!(csv.starts_with("grade,Original,Transformations,CycleGAN,CUT\n"));
        assert_eq!(csv.lines().count(), 7);
    }
}
