//! Vanilla input-gradient saliency and image overlays.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::autodiff::{ops, Graph};
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::nn::BnMode;
use crate::tensor::Tensor;

/// Radians of dial rotation per unit of steering value.
pub const DEFAULT_K_DISPLAY: f64 = 5.0;
/// Peak brightness added by a saliency value of 1.
pub const OVERLAY_GAIN: f64 = 200.0;
pub const TRUE_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const PRED_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

/// Per-pixel values in `[0, 1]`, row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn normalized(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            for v in &mut self.values {
                *v /= m;
            }
        }
        self
    }
}

/// Gradient of the scalar prediction with respect to one input sample
/// (batch axis optional), in inference mode.
pub fn input_gradient(model: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    let sample_shape = model.input_shape().to_vec();
    let batched = if input.shape() == sample_shape.as_slice() {
        let mut s = vec![1];
        s.extend_from_slice(&sample_shape);
        input.reshape(&s)?
    } else if input.shape().first() == Some(&1) && input.shape()[1..] == sample_shape[..] {
        input.clone()
    } else {
        return Err(Error::ShapeMismatch {
            op: "input_gradient",
            left: input.shape().to_vec(),
            right: sample_shape,
        });
    };
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let x = g.variable(batched.to_precision(model.precision));
    let out = model.forward(&mut g, x, &params, BnMode::Infer)?;
    let y = ops::sum(&mut g, out.output);
    let grads = g.backward(y)?;
    let grad = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&[1], model.precision));
    if grad.numel() != input.numel() {
        return Ok(Tensor::zeros(input.shape(), model.precision));
    }
    grad.reshape(input.shape())
}

/// Max of `|grad|` over channels, before normalization.
pub fn raw_map(grad: &Tensor) -> Result<SaliencyMap> {
    let &[h, w, c] = grad.shape() else {
        return Err(Error::invalid(format!(
            "saliency needs an [H, W, C] gradient, got {:?}",
            grad.shape()
        )));
    };
    let values = grad
        .data()
        .chunks(c.max(1))
        .map(|px| px.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
        .collect();
    Ok(SaliencyMap {
        height: h,
        width: w,
        values,
    })
}

/// Channel max of `|grad|` divided by its global max; zero stays zero.
pub fn to_map(grad: &Tensor) -> Result<SaliencyMap> {
    Ok(raw_map(grad)?.normalized())
}

/// Elementwise max of the raw per-frame maps, normalized once.
pub fn collapse_sequence(grads: &[Tensor]) -> Result<SaliencyMap> {
    Ok(collapse_raw(grads)?.normalized())
}

/// The unnormalized collapse: every value is at least the same pixel's raw
/// value in each frame.
pub fn collapse_raw(grads: &[Tensor]) -> Result<SaliencyMap> {
    let first = grads.first().ok_or_else(|| Error::invalid("no frames to collapse"))?;
    let mut acc = raw_map(first)?;
    for g in &grads[1..] {
        let m = raw_map(g)?;
        if (m.height, m.width) != (acc.height, acc.width) {
            return Err(Error::ShapeMismatch {
                op: "collapse_sequence",
                left: vec![acc.height, acc.width],
                right: vec![m.height, m.width],
            });
        }
        for (a, v) in acc.values.iter_mut().zip(m.values) {
            *a = a.max(v);
        }
    }
    Ok(acc)
}

/// Splits a `[S, F, H, W, C]` gradient into its `S·F` frame gradients.
pub fn frame_gradients(grad: &Tensor) -> Result<Vec<Tensor>> {
    let &[s, f, h, w, c] = grad.shape() else {
        return Err(Error::invalid(format!(
            "expected a [S, F, H, W, C] gradient, got {:?}",
            grad.shape()
        )));
    };
    let per = h * w * c;
    grad.data()[..s * f * per]
        .chunks(per)
        .map(|d| Tensor::new(vec![h, w, c], d.to_vec(), grad.precision()))
        .collect()
}

/// Heat color for a saliency value: black → red → yellow.
fn heat(v: f64) -> [f64; 3] {
    [(2.0 * v).min(1.0), (2.0 * v - 1.0).max(0.0), 0.0]
}

/// Adds `OVERLAY_GAIN · v · heat(v)` to each pixel, saturating.
pub fn overlay(image: &RgbImage, map: &SaliencyMap) -> Result<RgbImage> {
    if (image.width() as usize, image.height() as usize) != (map.width, map.height) {
        return Err(Error::ShapeMismatch {
            op: "saliency overlay",
            left: vec![image.height() as usize, image.width() as usize],
            right: vec![map.height, map.width],
        });
    }
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let v = map.get(x as usize, y as usize);
        let add = heat(v).map(|h| (OVERLAY_GAIN * v * h).round());
        for c in 0..3 {
            p[c] = (f64::from(p[c]) + add[c]).min(255.0) as u8;
        }
    }
    Ok(out)
}

pub fn render(image: &RgbImage, map: &SaliencyMap, path: &Path) -> Result<()> {
    overlay(image, map)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Marker center on a dial pivoting at the bottom middle of the image.
/// The marker sits `clamp(s·k, ±π/2)` radians from vertical, positive to the
/// right, at a radius of 40% of the smaller image extent.
pub fn marker_position(steering: f64, k_display: f64, width: u32, height: u32) -> (f64, f64) {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta = (steering * k_display).clamp(-half_pi, half_pi);
    let radius = 0.4 * f64::from(width.min(height));
    let (cx, cy) = (f64::from(width) / 2.0, f64::from(height));
    (cx + radius * theta.sin(), cy - radius * theta.cos())
}

fn draw_disc(image: &mut RgbImage, center: (f64, f64), radius: f64, color: Rgb<u8>) {
    for (x, y, p) in image.enumerate_pixels_mut() {
        let (dx, dy) = (f64::from(x) + 0.5 - center.0, f64::from(y) + 0.5 - center.1);
        if dx * dx + dy * dy <= radius * radius {
            *p = color;
        }
    }
}

/// Draws the true (green) and predicted (red, on top) steering markers.
pub fn angle_overlay(image: &RgbImage, truth: f64, predicted: f64, k_display: f64) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = out.dimensions();
    let radius = (f64::from(w.min(h)) / 30.0).max(2.0);
    draw_disc(&mut out, marker_position(truth, k_display, w, h), radius, TRUE_COLOR);
    draw_disc(
        &mut out,
        marker_position(predicted, k_display, w, h),
        radius,
        PRED_COLOR,
    );
    out
}

pub fn render_angle(image: &RgbImage, truth: f64, predicted: f64, k_display: f64, path: &Path) -> Result<()> {
    angle_overlay(image, truth, predicted, k_display).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
