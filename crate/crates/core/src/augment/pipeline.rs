use std::fmt;
use std::str::FromStr;

use image::RgbImage;

use super::{
    brightness, crop_sky, flip_horizontal, resize, rotate, shadow_with_line, shift, LabeledImage, ShadowLine,
    CROP_HEIGHT, CROP_WIDTH,
};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, SeededRng};

/// Steering units added per pixel of horizontal shift.
pub const DEFAULT_ANGLE_PER_PX: f64 = 0.004;

/// One randomized operation and its parameter range.
#[derive(Debug, Clone, PartialEq)]
pub enum AugOp {
    Flip {
        p: f64,
    },
    /// Angle uniform in `[-max_degrees, max_degrees]`.
    Rotate {
        max_degrees: f64,
    },
    /// `dx`, `dy` uniform integers in `[-max_px, max_px]`.
    Shift {
        max_px: u32,
    },
    /// Factor uniform in `[low, high]`.
    Brightness {
        low: f64,
        high: f64,
    },
    /// Applied with probability `p`, strength uniform in `[low, high]`.
    Shadow {
        p: f64,
        low: f64,
        high: f64,
    },
    /// Source frame to 120×320 (frames already at 120×320 pass through).
    CropSky,
    /// Bilinear resize (stretching) to the given extents.
    Resize {
        width: u32,
        height: u32,
    },
}

impl AugOp {
    pub fn is_geometry(&self) -> bool {
        matches!(self, AugOp::CropSky | AugOp::Resize { .. })
    }
}

/// An operation with its random parameters drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum SampledOp {
    Flip(bool),
    Rotate(f64),
    Shift(i32, i32),
    Brightness(f64),
    Shadow(Option<(ShadowLine, f64)>),
    CropSky,
    Resize(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    None,
    #[default]
    Minimal,
    Moderate,
    Heavy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preset::None),
            "minimal" => Ok(Preset::Minimal),
            "moderate" => Ok(Preset::Moderate),
            "heavy" => Ok(Preset::Heavy),
            other => Err(Error::invalid(format!(
                "unknown augmentation level `{other}` (expected none, minimal, moderate or heavy)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::None => "none",
            Preset::Minimal => "minimal",
            Preset::Moderate => "moderate",
            Preset::Heavy => "heavy",
        })
    }
}

/// Ordered operations plus the master seed. Sample `i` of epoch `e` draws
/// its parameters from `derive_seed(seed, [e, i])`, so results do not depend
/// on processing order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub ops: Vec<AugOp>,
    pub seed: u64,
    pub angle_per_px: f64,
}

/// The augmentation levels. Geometry comes first so that shifts and
/// rotations act on model-sized frames.
pub fn preset(level: Preset, seed: u64) -> PipelineSpec {
    let minimal = vec![AugOp::CropSky, AugOp::Flip { p: 0.5 }];
    let ops = match level {
        Preset::None => vec![],
        Preset::Minimal => minimal,
        Preset::Moderate => [
            minimal,
            vec![
                AugOp::Rotate { max_degrees: 5.0 },
                AugOp::Shift { max_px: 25 },
                AugOp::Brightness { low: 0.8, high: 1.2 },
            ],
        ]
        .concat(),
        Preset::Heavy => [
            minimal,
            vec![
                AugOp::Rotate { max_degrees: 30.0 },
                AugOp::Shift { max_px: 25 },
                AugOp::Brightness { low: 0.5, high: 1.5 },
                AugOp::Shadow {
                    p: 0.5,
                    low: 0.4,
                    high: 0.6,
                },
            ],
        ]
        .concat(),
    };
    PipelineSpec {
        ops,
        seed,
        angle_per_px: DEFAULT_ANGLE_PER_PX,
    }
}

impl PipelineSpec {
    /// Replaces any geometry op with `geometry`, placed first.
    pub fn with_geometry(mut self, geometry: AugOp) -> Self {
        self.ops.retain(|op| !op.is_geometry());
        self.ops.insert(0, geometry);
        self
    }

    /// Only the geometry ops (used for validation and evaluation data).
    pub fn geometry_only(&self) -> Self {
        PipelineSpec {
            ops: self.ops.iter().filter(|op| op.is_geometry()).cloned().collect(),
            seed: self.seed,
            angle_per_px: self.angle_per_px,
        }
    }

    /// True when some op is random.
    pub fn is_randomized(&self) -> bool {
        self.ops.iter().any(|op| !op.is_geometry())
    }

    /// Draws parameters for sample `index` of `epoch`; `width` is the
    /// incoming frame width (shadow lines are drawn in post-geometry pixels).
    pub fn sample(&self, epoch: u64, index: u64, width: u32) -> Vec<SampledOp> {
        let mut rng = SeededRng::new(derive_seed(self.seed, &[epoch, index]));
        let mut w = width;
        self.ops
            .iter()
            .map(|op| match *op {
                AugOp::Flip { p } => SampledOp::Flip(rng.bernoulli(p)),
                AugOp::Rotate { max_degrees } => SampledOp::Rotate(rng.uniform_range(-max_degrees, max_degrees)),
                AugOp::Shift { max_px } => {
                    let span = 2 * u64::from(max_px) + 1;
                    let dx = rng.below(span) as i32 - max_px as i32;
                    let dy = rng.below(span) as i32 - max_px as i32;
                    SampledOp::Shift(dx, dy)
                }
                AugOp::Brightness { low, high } => SampledOp::Brightness(rng.uniform_range(low, high)),
                AugOp::Shadow { p, low, high } => {
                    let apply = rng.bernoulli(p);
                    let line = ShadowLine::sample(w, &mut rng);
                    let strength = rng.uniform_range(low, high);
                    SampledOp::Shadow(apply.then_some((line, strength)))
                }
                AugOp::CropSky => {
                    w = CROP_WIDTH;
                    SampledOp::CropSky
                }
                AugOp::Resize { width, height } => {
                    w = width;
                    SampledOp::Resize(width, height)
                }
            })
            .collect()
    }

    /// Applies drawn parameters to one frame.
    pub fn apply_sampled(&self, ops: &[SampledOp], s: &LabeledImage) -> Result<LabeledImage> {
        let mut cur = s.clone();
        for op in ops {
            cur = match *op {
                SampledOp::Flip(true) => flip_horizontal(&cur),
                SampledOp::Flip(false) => cur,
                SampledOp::Rotate(deg) => LabeledImage {
                    image: rotate(&cur.image, deg),
                    ..cur
                },
                SampledOp::Shift(dx, dy) => shift(&cur, dx, dy, self.angle_per_px)?,
                SampledOp::Brightness(f) => LabeledImage {
                    image: brightness(&cur.image, f),
                    ..cur
                },
                SampledOp::Shadow(Some((line, strength))) => LabeledImage {
                    image: shadow_with_line(&cur.image, &line, strength),
                    ..cur
                },
                SampledOp::Shadow(None) => cur,
                SampledOp::CropSky => {
                    if cur.image.dimensions() == (CROP_WIDTH, CROP_HEIGHT) {
                        cur
                    } else {
                        LabeledImage {
                            image: crop_sky(&cur.image)?,
                            ..cur
                        }
                    }
                }
                SampledOp::Resize(w, h) => LabeledImage {
                    image: resize(&cur.image, w, h),
                    ..cur
                },
            };
        }
        Ok(cur)
    }

    pub fn apply(&self, s: &LabeledImage, epoch: u64, index: u64) -> Result<LabeledImage> {
        let ops = self.sample(epoch, index, s.image.width());
        self.apply_sampled(&ops, s)
    }

    /// Applies one draw of parameters to every frame of a window, so the
    /// frames stay temporally consistent. Returns the frames and the label
    /// adjusted as a single frame's would be.
    pub fn apply_window(
        &self,
        frames: &[RgbImage],
        steering: f64,
        epoch: u64,
        index: u64,
    ) -> Result<(Vec<RgbImage>, f64)> {
        let first = frames.first().ok_or_else(|| Error::invalid("empty frame window"))?;
        let ops = self.sample(epoch, index, first.width());
        let mut label = steering;
        let mut out = Vec::with_capacity(frames.len());
        for (i, frame) in frames.iter().enumerate() {
            let r = self.apply_sampled(
                &ops,
                &LabeledImage {
                    image: frame.clone(),
                    steering,
                },
            )?;
            if i == 0 {
                label = r.steering;
            }
            out.push(r.image);
        }
        Ok((out, label))
    }
}
