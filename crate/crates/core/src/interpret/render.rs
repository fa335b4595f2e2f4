//! Deterministic figure rendering onto raw pixel buffers: line plots for
//! histograms, grayscale panels for spectra, scatter plots for embeddings,
//! and colormapped heatmap overlays. No font or plotting dependencies, so
//! regenerated reports are byte-identical.

use ndarray::Array2;

use crate::data::GradeLabel;
use crate::img::Image;

pub const PLOT_W: usize = 480;
pub const PLOT_H: usize = 360;
const MARGIN: usize = 24;

/// Fixed palette per grade (1..=6).
pub fn grade_color(g: GradeLabel) -> [u8; 3] {
    match g.value() {
        1 => [31, 119, 180],
        2 => [255, 127, 14],
        3 => [44, 160, 44],
        4 => [214, 39, 40],
        5 => [148, 103, 189],
        _ => [140, 86, 75],
    }
}

fn draw_line(img: &mut Image, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
    let (mut x0, mut y0) = (x0, y0);
    let dx = (x1 - x0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let dy = -(y1 - y0).abs();
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < img.width() && (y0 as usize) < img.height() {
            img.set(y0 as usize, x0 as usize, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn blank_canvas(w: usize, h: usize) -> Image {
    let mut img = Image::constant(h, w, [255, 255, 255]);
    // axes box
    let (x0, y0, x1, y1) = (
        MARGIN as i64,
        MARGIN as i64,
        (w - MARGIN) as i64,
        (h - MARGIN) as i64,
    );
    let axis = [60, 60, 60];
    draw_line(&mut img, x0, y0, x1, y0, axis);
    draw_line(&mut img, x0, y1, x1, y1, axis);
    draw_line(&mut img, x0, y0, x0, y1, axis);
    draw_line(&mut img, x1, y0, x1, y1, axis);
    img
}

/// Polyline plot of several named series over a shared x index.
pub fn line_plot(series: &[(&str, [u8; 3], &[f64])]) -> Image {
    let mut img = blank_canvas(PLOT_W, PLOT_H);
    let max = series
        .iter()
        .flat_map(|(_, _, v)| v.iter())
        .cloned()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let inner_w = (PLOT_W - 2 * MARGIN) as f64;
    let inner_h = (PLOT_H - 2 * MARGIN) as f64;

    for (_, color, values) in series {
        if values.len() < 2 {
            continue;
        }
        let n = values.len();
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in values.iter().enumerate() {
            let px = MARGIN as f64 + inner_w * i as f64 / (n - 1) as f64;
            let py = (PLOT_H - MARGIN) as f64 - inner_h * (v / max).clamp(0.0, 1.0);
            let pt = (px as i64, py as i64);
            if let Some((lx, ly)) = prev {
                draw_line(&mut img, lx, ly, pt.0, pt.1, *color);
            }
            prev = Some(pt);
        }
    }
    // legend swatches top-left, one square per series
    for (i, (_, color, _)) in series.iter().enumerate() {
        for dy in 0..6 {
            for dx in 0..6 {
                let y = MARGIN + 4 + i * 9 + dy;
                let x = MARGIN + 4 + dx;
                if y < PLOT_H && x < PLOT_W {
                    img.set(y, x, *color);
                }
            }
        }
    }
    img
}

/// Scatter plot of 2-D coordinates colored by grade.
pub fn scatter_plot(coords: &Array2<f64>, labels: &[GradeLabel]) -> Image {
    let mut img = blank_canvas(PLOT_W, PLOT_W);
    if coords.shape()[0] == 0 {
        return img;
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..coords.shape()[0] {
        min_x = min_x.min(coords[[i, 0]]);
        max_x = max_x.max(coords[[i, 0]]);
        min_y = min_y.min(coords[[i, 1]]);
        max_y = max_y.max(coords[[i, 1]]);
    }
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);
    let inner = (PLOT_W - 2 * MARGIN) as f64;

    for i in 0..coords.shape()[0] {
        let px = MARGIN as f64 + inner * (coords[[i, 0]] - min_x) / span_x;
        let py = (PLOT_W - MARGIN) as f64 - inner * (coords[[i, 1]] - min_y) / span_y;
        let color = grade_color(labels[i]);
        // 3x3 dot
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let y = py as i64 + dy;
                let x = px as i64 + dx;
                if y >= 0 && x >= 0 && (y as usize) < PLOT_W && (x as usize) < PLOT_W {
                    img.set(y as usize, x as usize, color);
                }
            }
        }
    }
    img
}

/// Min-max normalized grayscale panel of a scalar field (e.g., a log-magnitude
/// spectrum).
pub fn grayscale_map(field: &Array2<f64>) -> Image {
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    Image::from_fn(field.shape()[0], field.shape()[1], |y, x| {
        let v = ((field[[y, x]] - min) / span * 255.0).round().clamp(0.0, 255.0) as u8;
        [v, v, v]
    })
}

/// Blue-to-red colormap for heatmap intensities.
fn jet(v: u8) -> [u8; 3] {
    let t = v as f64 / 255.0;
    let r = (255.0 * (1.5 - (4.0 * (t - 0.75)).abs()).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.5 - (4.0 * (t - 0.5)).abs()).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (1.5 - (4.0 * (t - 0.25)).abs()).clamp(0.0, 1.0)) as u8;
    [r, g, b]
}

/// Overlay a heatmap on its source image at the given opacity (0..=1).
pub fn heatmap_overlay(source: &Image, heat: &Array2<u8>, opacity: f64) -> Image {
    let alpha = opacity.clamp(0.0, 1.0);
    Image::from_fn(source.height(), source.width(), |y, x| {
        let base = source.get(y, x);
        let hy = y.min(heat.shape()[0] - 1);
        let hx = x.min(heat.shape()[1] - 1);
        let c = jet(heat[[hy, hx]]);
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = ((1.0 - alpha) * base[k] as f64 + alpha * c[k] as f64).round() as u8;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_plot_has_fixed_extent_and_is_deterministic() {
        let data = [0.1, 0.4, 0.2, 0.8, 0.3];
        let a = line_plot(&[("x", [255, 0, 0], &data)]);
        let b = line_plot(&[("x", [255, 0, 0], &data)]);
        assert_eq!(a, b);
        assert_eq!((a.height(), a.width()), (PLOT_H, PLOT_W));
    }

    #[test]
    fn scatter_draws_points_in_grade_colors() {
        let coords = array![[0.0, 0.0], [1.0, 1.0]];
        let labels = vec![GradeLabel::new(1).unwrap(), GradeLabel::new(4).unwrap()];
        let img = scatter_plot(&coords, &labels);
        let mut found = [false, false];
        for y in 0..img.height() {
            for x in 0..img.width() {
                let px = img.get(y, x);
                if px == grade_color(labels[0]) {
                    found[0] = true;
                }
                if px == grade_color(labels[1]) {
                    found[1] = true;
                }
            }
        }
        assert!(found[0] && found[1]);
    }

    #[test]
    fn overlay_blends_at_requested_opacity() {
        let src = Image::constant(4, 4, [100, 100, 100]);
        let heat = Array2::<u8>::from_elem((4, 4), 0);
        let out = heatmap_overlay(&src, &heat, 0.4);
        // jet(0) is (0, 0, 127); blend = 0.6*100 + 0.4*c
        let px = out.get(0, 0);
        assert_eq!(px[0], 60);
        assert_eq!(px[1], 60);
    }

    #[test]
    fn grayscale_map_normalizes_range() {
        let field = array![[0.0, 5.0], [10.0, 2.5]];
        let img = grayscale_map(&field);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(1, 0), [255, 255, 255]);
    }
}
