//! Centered 2-D frequency spectra of grayscale-converted images, with the
//! spectral energy split into a low band (inside a radial boundary around
//! DC) and a high band (everything else).

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::img::Image;

/// Radial boundary as a fraction of `min(H, W) / 2`.
pub const DEFAULT_LOW_RADIUS_FRACTION: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct FrequencySpectrum {
    /// `log(1 + |F|)` with DC shifted to the center, same extent as the input.
    pub log_magnitude: Array2<f64>,
    pub low_band_energy: f64,
    pub high_band_energy: f64,
    pub low_radius_fraction: f64,
}

impl FrequencySpectrum {
    pub fn total_energy(&self) -> f64 {
        self.low_band_energy + self.high_band_energy
    }
}

/// Unnormalized forward 2-D DFT (rows then columns).
fn dft2(gray: &Array2<f64>) -> Array2<Complex<f64>> {
    let (h, w) = (gray.shape()[0], gray.shape()[1]);
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut data: Vec<Complex<f64>> = gray.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col_buf = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col_buf[y] = data[y * w + x];
        }
        col_fft.process(&mut col_buf);
        for y in 0..h {
            data[y * w + x] = col_buf[y];
        }
    }
    Array2::from_shape_vec((h, w), data).unwrap()
}

fn fftshift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Grayscale (equal-weight channel mean), DFT, DC shifted to the center,
/// band energies on `|F|^2` split at `fraction * min(H, W) / 2`.
pub fn frequency_spectrum(img: &Image, low_radius_fraction: f64) -> Result<FrequencySpectrum> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::validation("image too small for frequency analysis"));
    }
    if !(low_radius_fraction > 0.0 && low_radius_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "low radius fraction must be in (0, 1], got {low_radius_fraction}"
        )));
    }
    let gray = img.to_gray_f64();
    let (h, w) = (gray.shape()[0], gray.shape()[1]);
    let spectrum = dft2(&gray);

    let mut log_magnitude = Array2::<f64>::zeros((h, w));
    let (cy, cx) = (h / 2, w / 2);
    let radius = low_radius_fraction * (h.min(w) as f64) / 2.0;
    let mut low = 0.0;
    let mut high = 0.0;
    for y in 0..h {
        for x in 0..w {
            let sy = fftshift_index(y, h);
            let sx = fftshift_index(x, w);
            let mag = spectrum[[y, x]].norm();
            log_magnitude[[sy, sx]] = (1.0 + mag).ln();
            let dy = sy as f64 - cy as f64;
            let dx = sx as f64 - cx as f64;
            let energy = mag * mag;
            if (dy * dy + dx * dx).sqrt() <= radius {
                low += energy;
            } else {
                high += energy;
            }
        }
    }
    Ok(FrequencySpectrum {
        log_magnitude,
        low_band_energy: low,
        high_band_energy: high,
        low_radius_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^4) DFT straight from the definition; the oracle the fast
    /// path is checked against.
    fn dft2_oracle(gray: &Array2<f64>) -> Array2<Complex<f64>> {
        let (h, w) = (gray.shape()[0], gray.shape()[1]);
        let mut out = Array2::from_elem((h, w), Complex::new(0.0, 0.0));
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * (u as f64 * y as f64 / h as f64 + v as f64 * x as f64 / w as f64);
                        acc += gray[[y, x]] * Complex::new(phase.cos(), phase.sin());
                    }
                }
                out[[u, v]] = acc;
            }
        }
        out
    }

    fn sinusoid(size: usize, cycles: usize) -> Image {
        Image::from_fn(size, size, |_, x| {
            let v = 128.0
                + 100.0 * (2.0 * std::f64::consts::PI * cycles as f64 * x as f64 / size as f64).cos();
            let b = v.round().clamp(0.0, 255.0) as u8;
            [b, b, b]
        })
    }

    #[test]
    fn fast_dft_matches_definition_oracle() {
        let img = Image::from_fn(12, 10, |y, x| {
            [((y * 13 + x * 7) % 256) as u8, ((y * 3) % 256) as u8, ((x * 11) % 256) as u8]
        });
        let gray = img.to_gray_f64();
        let fast = dft2(&gray);
        let slow = dft2_oracle(&gray);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + b.norm()), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_image_has_all_energy_at_dc() {
        let img = Image::constant(16, 16, [90, 90, 90]);
        let s = frequency_spectrum(&img, 0.25).unwrap();
        assert_eq!(s.high_band_energy, 0.0);
        assert!(s.low_band_energy > 0.0);
        // only the centered DC bin is nonzero
        let (cy, cx) = (8, 8);
        for ((y, x), &v) in s.log_magnitude.indexed_iter() {
            if (y, x) == (cy, cx) {
                assert!(v > 0.0);
            } else {
                assert!(v.abs() < 1e-9, "leakage at ({y},{x}): {v}");
            }
        }
    }

    #[test]
    fn sinusoid_peaks_at_plus_minus_k() {
        let k = 5;
        let img = sinusoid(32, k);
        let s = frequency_spectrum(&img, 0.25).unwrap();
        let (cy, cx) = (16usize, 16usize);
        // rank bins by magnitude, excluding DC
        let mut bins: Vec<((usize, usize), f64)> = s
            .log_magnitude
            .indexed_iter()
            .filter(|&((y, x), _)| (y, x) != (cy, cx))
            .map(|((y, x), &v)| ((y, x), v))
            .collect();
        bins.sort_by(|a, b| b.1.total_cmp(&a.1));
        let top2: Vec<(usize, usize)> = bins[..2].iter().map(|(p, _)| *p).collect();
        assert!(top2.contains(&(cy, cx + k)), "top bins {top2:?}");
        assert!(top2.contains(&(cy, cx - k)), "top bins {top2:?}");
    }

    #[test]
    fn parseval_identity_holds() {
        let img = Image::from_fn(24, 24, |y, x| {
            [((y * y + x * 3) % 256) as u8, ((y + x * x) % 256) as u8, 77]
        });
        let gray = img.to_gray_f64();
        let spatial: f64 = gray.iter().map(|v| v * v).sum();
        let s = frequency_spectrum(&img, 0.25).unwrap();
        let spectral = s.total_energy();
        let expected = (gray.len() as f64) * spatial;
        assert!(
            (spectral - expected).abs() <= 1e-6 * expected,
            "spectral {spectral} vs H*W*spatial {expected}"
        );
    }

    #[test]
    fn band_energies_partition_total() {
        let img = sinusoid(32, 3);
        let gray = img.to_gray_f64();
        let total_direct: f64 = dft2(&gray).iter().map(|c| c.norm_sqr()).sum();
        let s = frequency_spectrum(&img, 0.4).unwrap();
        assert!(
            (s.total_energy() - total_direct).abs() <= 1e-9 * total_direct,
            "{} vs {}",
            s.total_energy(),
            total_direct
        );
    }

    #[test]
    fn rotation_by_180_preserves_magnitudes() {
        let img = Image::from_fn(16, 16, |y, x| {
            [((y * 31 + x * 17) % 256) as u8, ((x * y) % 256) as u8, ((y + 3 * x) % 256) as u8]
        });
        let a = frequency_spectrum(&img, 0.25).unwrap();
        let b = frequency_spectrum(&img.rotate90_cw(2), 0.25).unwrap();
        for (u, v) in a.log_magnitude.iter().zip(b.log_magnitude.iter()) {
            assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{u} vs {v}");
        }
        assert!((a.low_band_energy - b.low_band_energy).abs() <= 1e-6 * a.low_band_energy);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let img = Image::constant(1, 8, [0, 0, 0]);
        assert!(frequency_spectrum(&img, 0.25).is_err());
        let ok = Image::constant(8, 8, [0, 0, 0]);
        assert!(frequency_spectrum(&ok, 0.0).is_err());
        assert!(frequency_spectrum(&ok, 1.5).is_err());
    }
}
