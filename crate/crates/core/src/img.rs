//! 8-bit RGB pixel grids and the low-level raster operations the rest of the
//! pipeline builds on: decoding, encoding, bilinear resampling, and the exact
//! right-angle permutations used by the augmentation transforms.

use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};

/// An 8-bit RGB image stored as an `(height, width, 3)` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    data: Array3<u8>,
}

impl Image {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        let (h, w, c) = (data.shape()[0], data.shape()[1], data.shape()[2]);
        if h == 0 || w == 0 {
            return Err(Error::validation("image has a zero dimension"));
        }
        if c != 3 {
            return Err(Error::validation(format!("expected 3 channels, got {c}")));
        }
        Ok(Image { data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let px = f(y, x);
                for c in 0..3 {
                    data[[y, x, c]] = px[c];
                }
            }
        }
        Image { data }
    }

    pub fn constant(h: usize, w: usize, rgb: [u8; 3]) -> Self {
        Self::from_fn(h, w, |_, _| rgb)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        for c in 0..3 {
            self.data[[y, x, c]] = rgb[c];
        }
    }

    pub fn pixels(&self) -> ArrayView3<'_, u8> {
        self.data.view()
    }

    /// Raw bytes in row-major (y, x, channel) order; used for content hashing.
    pub fn raw_bytes(&self) -> Vec<u8> {
        self.data.iter().copied().collect()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let dynimg = image::open(path).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = dynimg.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            rgb.get_pixel(x as u32, y as u32).0[c]
        });
        Image::new(data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut out = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                out.put_pixel(x as u32, y as u32, image::Rgb(self.get(y, x)));
            }
        }
        out.save(path).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resample to `(out_h, out_w)` using pixel-center alignment.
    /// A same-size resize is an exact identity.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Image> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::validation("resize target has a zero dimension"));
        }
        let (h, w) = (self.height(), self.width());
        if out_h == h && out_w == w {
            return Ok(self.clone());
        }
        let sy = h as f64 / out_h as f64;
        let sx = w as f64 / out_w as f64;
        let mut data = Array3::zeros((out_h, out_w, 3));
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                for c in 0..3 {
                    let v00 = self.data[[y0, x0, c]] as f64;
                    let v01 = self.data[[y0, x1, c]] as f64;
                    let v10 = self.data[[y1, x0, c]] as f64;
                    let v11 = self.data[[y1, x1, c]] as f64;
                    let top = v00 * (1.0 - wx) + v01 * wx;
                    let bot = v10 * (1.0 - wx) + v11 * wx;
                    let v = top * (1.0 - wy) + bot * wy;
                    data[[oy, ox, c]] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Image::new(data)
    }

    /// Clockwise rotation by a multiple of 90 degrees; a lossless permutation.
    pub fn rotate90_cw(&self, quarter_turns: usize) -> Image {
        let (h, w) = (self.height(), self.width());
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Image::from_fn(w, h, |y, x| self.get(h - 1 - x, y)),
            2 => Image::from_fn(h, w, |y, x| self.get(h - 1 - y, w - 1 - x)),
            3 => Image::from_fn(w, h, |y, x| self.get(x, w - 1 - y)),
            _ => unreachable!(),
        }
    }

    /// Mirror across the horizontal (x) axis: rows flip top-to-bottom.
    pub fn reflect_x(&self) -> Image {
        let (h, w) = (self.height(), self.width());
        Image::from_fn(h, w, |y, x| self.get(h - 1 - y, x))
    }

    /// Mirror across the vertical (y) axis: columns flip left-to-right.
    pub fn reflect_y(&self) -> Image {
        let (h, w) = (self.height(), self.width());
        Image::from_fn(h, w, |y, x| self.get(y, w - 1 - x))
    }

    /// Extract the pixel rectangle `[y0, y1) x [x0, x1)`.
    pub fn crop_pixels(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<Image> {
        if y1 <= y0 || x1 <= x0 || y1 > self.height() || x1 > self.width() {
            return Err(Error::validation(format!(
                "degenerate crop rectangle [{y0},{y1})x[{x0},{x1}) on {}x{} image",
                self.height(),
                self.width()
            )));
        }
        Ok(Image::from_fn(y1 - y0, x1 - x0, |y, x| {
            self.get(y0 + y, x0 + x)
        }))
    }

    /// Channel-major float tensor in `[-1, 1]`, shape `(3, H, W)`.
    pub fn to_chw_pm1(&self) -> Array3<f32> {
        let (h, w) = (self.height(), self.width());
        Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            self.data[[y, x, c]] as f32 / 127.5 - 1.0
        })
    }

    /// Inverse of [`Image::to_chw_pm1`]: clamp to `[-1, 1]` and quantize.
    pub fn from_chw_pm1(t: &ArrayView3<'_, f32>) -> Result<Image> {
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if c != 3 {
            return Err(Error::Shape(format!("expected (3,H,W) tensor, got {c} channels")));
        }
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, ch)| {
            let v = (t[[ch, y, x]].clamp(-1.0, 1.0) as f64 + 1.0) * 127.5;
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        });
        Image::new(data)
    }

    /// Per-channel means in `[0, 255]`.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height() * self.width()) as f64;
        let mut sums = [0f64; 3];
        for px in self.data.rows() {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        [sums[0] / n, sums[1] / n, sums[2] / n]
    }

    /// Grayscale by equal-weight channel mean, values in `[0, 255]`.
    pub fn to_gray_f64(&self) -> ndarray::Array2<f64> {
        let (h, w) = (self.height(), self.width());
        ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
            (self.data[[y, x, 0]] as f64 + self.data[[y, x, 1]] as f64 + self.data[[y, x, 2]] as f64)
                / 3.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_image() -> Image {
        // 2x2 with four distinct values to pin down orientation conventions.
        let mut im = Image::constant(2, 2, [0, 0, 0]);
        im.set(0, 0, [10, 10, 10]);
        im.set(0, 1, [20, 20, 20]);
        im.set(1, 0, [30, 30, 30]);
        im.set(1, 1, [40, 40, 40]);
        im
    }

    #[test]
    fn rotate90_is_clockwise() {
        let im = quad_image();
        let r = im.rotate90_cw(1);
        // top-left moves to top-right
        assert_eq!(r.get(0, 1), [10, 10, 10]);
        assert_eq!(r.get(0, 0), [30, 30, 30]);
        assert_eq!(r.get(1, 1), [20, 20, 20]);
        assert_eq!(r.get(1, 0), [40, 40, 40]);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let im = quad_image();
        let r = im.rotate90_cw(1).rotate90_cw(1).rotate90_cw(1).rotate90_cw(1);
        assert_eq!(r, im);
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let im = quad_image();
        assert_eq!(im.rotate90_cw(1).rotate90_cw(1), im.rotate90_cw(2));
    }

    #[test]
    fn reflections_are_involutions() {
        let im = quad_image();
        assert_eq!(im.reflect_x().reflect_x(), im);
        assert_eq!(im.reflect_y().reflect_y(), im);
    }

    #[test]
    fn reflect_both_axes_is_half_turn() {
        let im = quad_image();
        assert_eq!(im.reflect_x().reflect_y(), im.rotate90_cw(2));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let im = quad_image();
        assert_eq!(im.resize_bilinear(2, 2).unwrap(), im);
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let im = Image::constant(8, 8, [77, 80, 90]);
        let out = im.resize_bilinear(4, 4).unwrap();
        assert_eq!(out, Image::constant(4, 4, [77, 80, 90]));
        let up = im.resize_bilinear(16, 12).unwrap();
        assert_eq!(up, Image::constant(16, 12, [77, 80, 90]));
    }

    #[test]
    fn resize_shape_contract() {
        let im = Image::constant(300, 200, [1, 2, 3]);
        let out = im.resize_bilinear(256, 256).unwrap();
        assert_eq!((out.height(), out.width()), (256, 256));
    }

    #[test]
    fn pm1_roundtrip() {
        let im = quad_image();
        let t = im.to_chw_pm1();
        let back = Image::from_chw_pm1(&t.view()).unwrap();
        assert_eq!(back, im);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Image::new(Array3::zeros((0, 4, 3))).is_err());
    }
}
