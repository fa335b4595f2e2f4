//! Synthetic desk-scale corpora: a six-class shapes dataset for classifier
//! runs, a two-domain circles/squares pair for translation runs, and a
//! demo corpus writer (PNG files plus CSV manifest) for end-to-end runs.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::{rng_from, Dataset, GradeLabel, ImageRecord, Provenance};
use crate::error::{Error, Result};
use crate::img::Image;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        ((r + m) * 255.0).round().clamp(0.0, 255.0) as u8,
        ((g + m) * 255.0).round().clamp(0.0, 255.0) as u8,
        ((b + m) * 255.0).round().clamp(0.0, 255.0) as u8,
    ]
}

/// Whether canonical shape `class` covers unit-square point `(u, v)`
/// (origin top-left, both in `[-1, 1]` relative to the shape center).
fn shape_mask(class: u8, u: f64, v: f64) -> bool {
    match class {
        // disk
        1 => u * u + v * v <= 1.0,
        // half-disk (flat side up)
        2 => u * u + v * v <= 1.0 && v >= 0.0,
        // right triangle in the lower-left
        3 => u >= -1.0 && v <= 1.0 && v - u >= 0.0,
        // thick horizontal bar, off-center upward
        4 => v >= -0.8 && v <= -0.1,
        // L corner
        5 => (u <= -0.3 && v.abs() <= 1.0) || (v >= 0.3 && u.abs() <= 1.0),
        // ring
        6 => {
            let r2 = u * u + v * v;
            (0.45..=1.0).contains(&r2)
        }
        _ => unreachable!(),
    }
}

/// Parameters for the six-class shapes corpus.
#[derive(Debug, Clone)]
pub struct ShapesConfig {
    pub n_per_class: usize,
    pub size: usize,
    /// 0 = colors carry no class signal, 1 = tight per-class hue.
    pub color_class_correlation: f64,
    /// Paint every shape this color instead of sampling hues.
    pub uniform_color: Option<[u8; 3]>,
    pub images_per_patient: usize,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            n_per_class: 100,
            size: 32,
            color_class_correlation: 1.0,
            uniform_color: None,
            images_per_patient: 5,
            seed: 11,
        }
    }
}

/// One synthetic shape image: noisy dark field, one colored shape drawn in a
/// canonical pose, then a random dihedral orientation applied losslessly.
fn shape_image(class: u8, cfg: &ShapesConfig, rng: &mut impl Rng) -> Image {
    let size = cfg.size;
    let hue = if rng.random::<f64>() < cfg.color_class_correlation {
        (class as f64 - 1.0) * 60.0 + rng.random_range(-18.0..18.0)
    } else {
        rng.random_range(0.0..360.0)
    };
    // pastel palette: the shape's brightness carries the figure/ground
    // contrast, the tint carries the (weak) color cue
    let color = match cfg.uniform_color {
        Some(c) => {
            let _ = rng.random_range(0.06..0.16);
            let _ = rng.random_range(0.75..0.95);
            c
        }
        None => hsv_to_rgb(hue, rng.random_range(0.06..0.16), rng.random_range(0.75..0.95)),
    };

    let half = rng.random_range(0.28..0.40) * size as f64;
    let cy = size as f64 / 2.0 + rng.random_range(-3.0..3.0);
    let cx = size as f64 / 2.0 + rng.random_range(-3.0..3.0);

    let mut noise_rng = rng_from(rng.random::<u64>(), &["noise"]);
    let mut img = Image::from_fn(size, size, |y, x| {
        let u = (x as f64 - cx) / half;
        let v = (y as f64 - cy) / half;
        if shape_mask(class, u, v) {
            color
        } else {
            let base = 28i32 + noise_rng.random_range(-14..=14);
            let b = base.clamp(0, 255) as u8;
            [b, b, b]
        }
    });

    // random dihedral orientation
    let turns = rng.random_range(0..4u32);
    img = img.rotate90_cw(turns as usize);
    if rng.random::<bool>() {
        img = img.reflect_y();
    }
    img
}

/// Six-class shapes dataset; grade k gets shape family k.
pub fn shapes_dataset(cfg: &ShapesConfig) -> Dataset {
    let mut records = Vec::new();
    for grade in GradeLabel::all() {
        let mut rng = rng_from(cfg.seed, &["shapes", &grade.value().to_string()]);
        for i in 0..cfg.n_per_class {
            let image = shape_image(grade.value(), cfg, &mut rng);
            records.push(ImageRecord {
                patient_id: format!("s{}p{:02}", grade.value(), i / cfg.images_per_patient),
                image,
                grade,
                provenance: Provenance::Original,
                source_path: PathBuf::from(format!(
                    "shape_g{}_{i:04}.png",
                    grade.value()
                )),
            });
        }
    }
    Dataset::new(records)
}

/// Two 32x32 domains with distinct color statistics: reddish filled circles
/// (domain A) and bluish filled squares (domain B).
pub fn two_color_domains(n_each: usize, size: usize, seed: u64) -> (Dataset, Dataset) {
    let make = |domain: &str, grade: u8, seed_tag: &str| -> Dataset {
        let mut rng = rng_from(seed, &["domains", seed_tag]);
        let mut records = Vec::new();
        for i in 0..n_each {
            let reddish = domain == "a";
            let hi = rng.random_range(180..=255u32) as u8;
            let lo1 = rng.random_range(20..=80u32) as u8;
            let lo2 = rng.random_range(20..=80u32) as u8;
            let color = if reddish { [hi, lo1, lo2] } else { [lo1, lo2, hi] };
            let half = rng.random_range(0.25..0.42) * size as f64;
            let cy = size as f64 / 2.0 + rng.random_range(-3.0..3.0);
            let cx = size as f64 / 2.0 + rng.random_range(-3.0..3.0);
            let mut noise_rng = rng_from(rng.random::<u64>(), &["noise"]);
            let image = Image::from_fn(size, size, |y, x| {
                let u = (x as f64 - cx) / half;
                let v = (y as f64 - cy) / half;
                let inside = if reddish {
                    u * u + v * v <= 1.0
                } else {
                    u.abs() <= 0.9 && v.abs() <= 0.9
                };
                if inside {
                    color
                } else {
                    let base = 30i32 + noise_rng.random_range(-10..=10);
                    let b = base.clamp(0, 255) as u8;
                    [b, b, b]
                }
            });
            records.push(ImageRecord {
                patient_id: format!("{domain}{i:03}"),
                image,
                grade: GradeLabel::new(grade).unwrap(),
                provenance: Provenance::Original,
                source_path: PathBuf::from(format!("{domain}_{i:04}.png")),
            });
        }
        Dataset::new(records)
    };
    (make("a", 1, "circles"), make("b", 2, "squares"))
}

/// Representative ventilation hours inside each grade band, with jitter.
fn ventilation_hours_for(grade: GradeLabel, rng: &mut impl Rng) -> f64 {
    match grade.value() {
        1 => rng.random_range(4.0..22.0),
        2 => rng.random_range(24.0..48.0),
        3 => rng.random_range(52.0..160.0),
        4 => rng.random_range(180.0..330.0),
        5 => rng.random_range(350.0..700.0),
        6 => rng.random_range(740.0..1400.0),
        _ => unreachable!(),
    }
}

/// Write a desk-scale demo corpus: shape PNGs for all six grades plus a
/// `manifest.csv` with patient ids and ventilation hours. Returns the
/// manifest path.
pub fn write_demo_corpus(dir: &Path, images_per_grade: usize, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = ShapesConfig {
        n_per_class: images_per_grade,
        size: 64,
        images_per_patient: 4,
        seed,
        ..ShapesConfig::default()
    };
    let ds = shapes_dataset(&cfg);
    let manifest_path = dir.join("manifest.csv");
    let mut rows = String::from("patient_id,image_path,ventilation_hours\n");
    let mut rng = rng_from(seed, &["demo-hours"]);
    for r in ds.records() {
        let name = r.source_path.file_name().unwrap().to_string_lossy().to_string();
        r.image.save_png(&dir.join(&name))?;
        let hours = ventilation_hours_for(r.grade, &mut rng);
        rows.push_str(&format!("{},{name},{hours:.1}\n", r.patient_id));
    }
    std::fs::write(&manifest_path, rows).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_dataset_counts_and_sizes() {
        let ds = shapes_dataset(&ShapesConfig {
            n_per_class: 5,
            ..ShapesConfig::default()
        });
        assert_eq!(ds.len(), 30);
        for g in GradeLabel::all() {
            assert_eq!(ds.count_for(g), 5);
        }
        for r in ds.records() {
            assert_eq!((r.image.height(), r.image.width()), (32, 32));
        }
    }

    #[test]
    fn shapes_dataset_is_deterministic() {
        let cfg = ShapesConfig {
            n_per_class: 3,
            ..ShapesConfig::default()
        };
        let a = shapes_dataset(&cfg);
        let b = shapes_dataset(&cfg);
        for (ra, rb) in a.records().iter().zip(b.records()) {
            assert_eq!(ra.image, rb.image);
        }
    }

    #[test]
    fn domains_have_distinct_color_statistics() {
        let (a, b) = two_color_domains(16, 32, 3);
        let mean = |ds: &Dataset, c: usize| -> f64 {
            ds.records()
                .iter()
                .map(|r| r.image.channel_means()[c])
                .sum::<f64>()
                / ds.len() as f64
        };
        assert!(mean(&a, 0) > mean(&b, 0) + 20.0, "red should dominate domain A");
        assert!(mean(&b, 2) > mean(&a, 2) + 20.0, "blue should dominate domain B");
    }

    #[test]
    fn demo_corpus_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_demo_corpus(dir.path(), 3, 5).unwrap();
        let ds = crate::data::load_manifest(&manifest).unwrap();
        assert_eq!(ds.len(), 18);
        for g in GradeLabel::all() {
            assert_eq!(ds.count_for(g), 3);
        }
        // ingestion normalizes to 256
        assert_eq!(ds.records()[0].image.height(), 256);
    }
}
