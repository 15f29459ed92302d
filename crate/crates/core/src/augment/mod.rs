//! Image and label augmentation.
//!
//! Images are 8-bit RGB (`image::RgbImage`). Resampling uses pixel-center
//! coordinates: pixel `(x, y)` covers `[x, x+1) × [y, y+1)` and its value
//! sits at `(x + 0.5, y + 0.5)`. Results are rounded to the nearest integer.

mod pipeline;

pub use pipeline::{preset, AugOp, PipelineSpec, Preset, SampledOp, DEFAULT_ANGLE_PER_PX};

use image::{imageops, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const SOURCE_WIDTH: u32 = 640;
pub const SOURCE_HEIGHT: u32 = 480;
pub const CROP_WIDTH: u32 = 320;
pub const CROP_HEIGHT: u32 = 120;
/// Rows removed from the top of the 160×320 intermediate.
pub const SKY_ROWS: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: RgbImage,
    /// Inverse turning radius; negative turns left.
    pub steering: f64,
}

/// `v ↦ -1 + 2v/255` for one channel value.
pub fn normalize_value(v: u8) -> f64 {
    -1.0 + 2.0 * f64::from(v) / 255.0
}

/// `[H, W, 3]` tensor with values in `[-1, 1]`.
pub fn normalize(image: &RgbImage, precision: Precision) -> Tensor {
    let data = image.as_raw().iter().map(|&v| normalize_value(v)).collect();
    let shape = vec![image.height() as usize, image.width() as usize, 3];
    Tensor::new(shape, data, precision).expect("buffer length matches image extents")
}

/// Mirrors about the vertical axis and negates the steering value.
pub fn flip_horizontal(s: &LabeledImage) -> LabeledImage {
    LabeledImage {
        image: imageops::flip_horizontal(&s.image),
        steering: -s.steering,
    }
}

/// Hexagonal RGB → HSV with all components in `[0, 1]` (hue in turns).
pub fn rgb_to_hsv(p: Rgb<u8>) -> [f64; 3] {
    let [r, g, b] = p.0.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> Rgb<u8> {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    Rgb([r, g, b].map(to_u8))
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn scale_value(p: Rgb<u8>, factor: f64) -> Rgb<u8> {
    let [h, s, v] = rgb_to_hsv(p);
    hsv_to_rgb([h, s, (v * factor).clamp(0.0, 1.0)])
}

/// Scales the HSV value channel of every pixel, clamping to the valid range.
pub fn brightness(image: &RgbImage, factor: f64) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        *p = scale_value(*p, factor);
    }
    out
}

/// Which side of a shadow line is darkened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// A line from `(top_x, 0)` to `(bottom_x, height)` in continuous image
/// coordinates, plus the side to shade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowLine {
    pub top_x: f64,
    pub bottom_x: f64,
    pub side: Side,
}

impl ShadowLine {
    /// Endpoints uniformly on the top and bottom borders, side by coin flip.
    pub fn sample(width: u32, rng: &mut crate::tensor::SeededRng) -> Self {
        let w = f64::from(width);
        ShadowLine {
            top_x: rng.uniform_range(0.0, w),
            bottom_x: rng.uniform_range(0.0, w),
            side: if rng.bernoulli(0.5) { Side::Left } else { Side::Right },
        }
    }

    /// True for pixels strictly on the shaded side; centers on the line are
    /// never shaded.
    pub fn shades(&self, x: u32, y: u32, height: u32) -> bool {
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let h = f64::from(height);
        // Positive when the pixel center lies left of the line at its row.
        let cross = (self.bottom_x - self.top_x) * py - h * (px - self.top_x);
        match self.side {
            Side::Left => cross > 0.0,
            Side::Right => cross < 0.0,
        }
    }
}

/// Scales the HSV value of every pixel on the shaded side by `strength`.
pub fn shadow_with_line(image: &RgbImage, line: &ShadowLine, strength: f64) -> RgbImage {
    let mut out = image.clone();
    let h = image.height();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if line.shades(x, y, h) {
            *p = scale_value(*p, strength);
        }
    }
    out
}

/// Shadow with a line drawn from `seed`.
pub fn shadow(image: &RgbImage, seed: u64, strength: f64) -> RgbImage {
    let mut rng = crate::tensor::SeededRng::new(seed);
    let line = ShadowLine::sample(image.width(), &mut rng);
    shadow_with_line(image, &line, strength)
}

/// Translates by `(dx, dy)` with zero fill: `out[y][x] = in[y-dy][x-dx]`.
/// Steering gains `dx · angle_per_px`; vertical shifts leave it unchanged.
pub fn shift(s: &LabeledImage, dx: i32, dy: i32, angle_per_px: f64) -> Result<LabeledImage> {
    let (w, h) = (s.image.width() as i64, s.image.height() as i64);
    if i64::from(dx).abs() >= w || i64::from(dy).abs() >= h {
        return Err(Error::invalid(format!(
            "shift ({dx}, {dy}) is not smaller than the {w}×{h} image"
        )));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (sx, sy) = (i64::from(x) - i64::from(dx), i64::from(y) - i64::from(dy));
        if (0..w).contains(&sx) && (0..h).contains(&sy) {
            *p = *s.image.get_pixel(sx as u32, sy as u32);
        }
    }
    Ok(LabeledImage {
        image: out,
        steering: s.steering + f64::from(dx) * angle_per_px,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Border {
    Zero,
    Clamp,
}

/// Bilinear sample at continuous coordinates `(sx, sy)`.
fn sample(image: &RgbImage, sx: f64, sy: f64, border: Border) -> [f64; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (u, v) = (sx - 0.5, sy - 0.5);
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        let (x, y) = match border {
            Border::Clamp => (x.clamp(0, w - 1), y.clamp(0, h - 1)),
            Border::Zero => {
                if !(0..w).contains(&x) || !(0..h).contains(&y) {
                    return [0.0; 3];
                }
                (x, y)
            }
        };
        image.get_pixel(x as u32, y as u32).0.map(f64::from)
    };
    let taps = [
        (fetch(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (fetch(x0 + 1, y0), fx * (1.0 - fy)),
        (fetch(x0, y0 + 1), (1.0 - fx) * fy),
        (fetch(x0 + 1, y0 + 1), fx * fy),
    ];
    let mut acc = [0.0; 3];
    for (px, wgt) in taps {
        if wgt != 0.0 {
            for c in 0..3 {
                acc[c] += px[c] * wgt;
            }
        }
    }
    acc
}

fn quantize(v: [f64; 3]) -> Rgb<u8> {
    Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
}

/// Rotation by `degrees` (clockwise as displayed) about the image center,
/// bilinear resampling, zero fill. Multiples of 180° (and of 90° on square
/// images) are exact pixel permutations.
pub fn rotate(image: &RgbImage, degrees: f64) -> RgbImage {
    let quarter = degrees.rem_euclid(360.0) / 90.0;
    let square = image.width() == image.height();
    if quarter == 0.0 {
        return image.clone();
    }
    if quarter == 2.0 {
        return imageops::rotate180(image);
    }
    if square && quarter == 1.0 {
        return imageops::rotate90(image);
    }
    if square && quarter == 3.0 {
        return imageops::rotate270(image);
    }
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    RgbImage::from_fn(w, h, |x, y| {
        let (ox, oy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
        let sx = cx + cos * ox + sin * oy;
        let sy = cy - sin * ox + cos * oy;
        quantize(sample(image, sx, sy, Border::Zero))
    })
}

/// Bilinear resize with edge clamping. Output pixel `(x, y)` samples the
/// source at `((x + 0.5)·W/w, (y + 0.5)·H/h)`.
pub fn resize(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    let sx = f64::from(image.width()) / f64::from(width);
    let sy = f64::from(image.height()) / f64::from(height);
    RgbImage::from_fn(width, height, |x, y| {
        let px = (f64::from(x) + 0.5) * sx;
        let py = (f64::from(y) + 0.5) * sy;
        quantize(sample(image, px, py, Border::Clamp))
    })
}

/// 480×640 source → bilinear 160×320 → drop the top 40 rows → 120×320.
pub fn crop_sky(image: &RgbImage) -> Result<RgbImage> {
    if image.dimensions() != (SOURCE_WIDTH, SOURCE_HEIGHT) {
        return Err(Error::invalid(format!(
            "crop_sky expects a {SOURCE_WIDTH}×{SOURCE_HEIGHT} image, got {}×{}",
            image.width(),
            image.height()
        )));
    }
    let small = resize(image, CROP_WIDTH, CROP_HEIGHT + SKY_ROWS);
    Ok(imageops::crop_imm(&small, 0, SKY_ROWS, CROP_WIDTH, CROP_HEIGHT).to_image())
}
