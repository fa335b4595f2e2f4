//! Per-channel 256-bin intensity histograms pooled over an image group.

use crate::error::{Error, Result};
use crate::img::Image;

/// Normalized 256-bin densities: one per channel plus an all-channel pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistograms {
    pub overall: Vec<f64>,
    pub red: Vec<f64>,
    pub green: Vec<f64>,
    pub blue: Vec<f64>,
}

impl ChannelHistograms {
    pub fn curves(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("overall", &self.overall),
            ("red", &self.red),
            ("green", &self.green),
            ("blue", &self.blue),
        ]
    }
}

/// Aggregate histograms over every pixel of every image in the group;
/// bin 0..=255 per 8-bit value, normalized to densities.
pub fn channel_histograms<'a>(
    images: impl IntoIterator<Item = &'a Image>,
) -> Result<ChannelHistograms> {
    let mut counts = [[0u64; 256]; 3];
    let mut total_px = 0u64;
    for img in images {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let px = img.get(y, x);
                for c in 0..3 {
                    counts[c][px[c] as usize] += 1;
                }
            }
        }
        total_px += (img.height() * img.width()) as u64;
    }
    if total_px == 0 {
        return Err(Error::validation("empty image set"));
    }
    let density = |cnt: &[u64; 256], denom: u64| -> Vec<f64> {
        cnt.iter().map(|&c| c as f64 / denom as f64).collect()
    };
    let overall: Vec<f64> = (0..256)
        .map(|i| (counts[0][i] + counts[1][i] + counts[2][i]) as f64 / (3 * total_px) as f64)
        .collect();
    Ok(ChannelHistograms {
        overall,
        red: density(&counts[0], total_px),
        green: density(&counts[1], total_px),
        blue: density(&counts[2], total_px),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_is_a_unit_spike() {
        let img = Image::constant(8, 8, [128, 128, 128]);
        let h = channel_histograms([&img]).unwrap();
        for (_, curve) in h.curves() {
            assert_eq!(curve[128], 1.0);
            assert_eq!(curve.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn half_black_half_white_gives_two_half_bins() {
        let img = Image::from_fn(4, 4, |_, x| if x < 2 { [0, 0, 0] } else { [255, 255, 255] });
        let h = channel_histograms([&img]).unwrap();
        assert_eq!(h.red[0], 0.5);
        assert_eq!(h.red[255], 0.5);
        assert_eq!(h.overall[0], 0.5);
    }

    #[test]
    fn densities_sum_to_one() {
        let img = Image::from_fn(16, 16, |y, x| {
            [((y * x * 7) % 256) as u8, (y % 256) as u8, (x * 3 % 256) as u8]
        });
        let h = channel_histograms([&img]).unwrap();
        for (name, curve) in h.curves() {
            let s: f64 = curve.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{name} sums to {s}");
        }
    }

    #[test]
    fn histograms_are_pixel_permutation_invariant() {
        let img = Image::from_fn(8, 8, |y, x| {
            if (y + x) % 2 == 0 {
                [0, 0, 0]
            } else {
                [255, 255, 255]
            }
        });
        let a = channel_histograms([&img]).unwrap();
        let refl = img.reflect_x();
        let rot = img.rotate90_cw(1);
        assert_eq!(a, channel_histograms([&refl]).unwrap());
        assert_eq!(a, channel_histograms([&rot]).unwrap());
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(channel_histograms(std::iter::empty::<&Image>()).is_err());
    }
}
