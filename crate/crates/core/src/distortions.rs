//! Class-conditional image distortions.
//!
//! Each transform touches only the pixels of one class `c` (context masking
//! is the exception: it touches everything *except* class `c`). Mixing is
//! done in `f64` from the integer inputs and rounded once at the end,
//! half away from zero, then clamped to `[0, 255]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ChannelStats;
use crate::error::{Error, Result};
use crate::raster::{class_indices, ensure_same_dims, ImageBuffer, LabelMap, Rgb};
use crate::rng::RngStream;

/// Luma weights in units of 1e-4: 0.2125, 0.7154, 0.0721.
const LUMA_WEIGHTS: [u32; 3] = [2125, 7154, 721];
const LUMA_SCALE: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Channel::R => 'r',
            Channel::G => 'g',
            Channel::B => 'b',
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" | "RED" => Ok(Channel::R),
            "G" | "GREEN" => Ok(Channel::G),
            "B" | "BLUE" => Ok(Channel::B),
            _ => Err(Error::InvalidConfig(format!("unknown channel `{s}`"))),
        }
    }
}

/// A transform and its strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distortion {
    GrayScale { lambda: f64 },
    PixelSwap { proportion: f64, replicate: u32 },
    ColorDuplication { channel: Channel, lambda: f64 },
    ContextMask { fill: ChannelStats },
}

impl Distortion {
    pub fn intensity(&self) -> Option<f64> {
        match *self {
            Distortion::GrayScale { lambda } | Distortion::ColorDuplication { lambda, .. } => {
                Some(lambda)
            }
            Distortion::PixelSwap { proportion, .. } => Some(proportion),
            Distortion::ContextMask { .. } => None,
        }
    }

    /// True when the transform leaves every pixel untouched.
    pub fn is_identity(&self) -> bool {
        self.intensity() == Some(0.0)
    }
}

/// Everything needed to distort one image for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub distortion: Distortion,
    pub class_id: u8,
    pub seed: u64,
    /// Position of the image in the sweep ordering; feeds the random stream.
    pub image_index: u64,
    /// When set, every pixel outside the class is also replaced by the fill.
    pub context_fill: Option<ChannelStats>,
}

impl DistortionSpec {
    pub fn new(distortion: Distortion, class_id: u8) -> Self {
        Self {
            distortion,
            class_id,
            seed: 0,
            image_index: 0,
            context_fill: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(x) = self.distortion.intensity() {
            check_intensity(x)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; identifies the output exactly.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn rng(&self) -> RngStream {
        let replicate = match self.distortion {
            Distortion::PixelSwap { replicate, .. } => replicate,
            _ => 0,
        };
        RngStream::derive(self.seed, self.image_index, self.class_id, replicate)
    }
}

fn check_intensity(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::IntensityOutOfRange(x));
    }
    Ok(())
}

#[inline]
fn round_channel(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Luma scaled by 1e4, exact.
#[inline]
fn luma_scaled(p: Rgb) -> u32 {
    LUMA_WEIGHTS
        .iter()
        .zip(p)
        .map(|(&w, v)| w * u32::from(v))
        .sum()
}

/// `round(0.2125 r + 0.7154 g + 0.0721 b)`, computed exactly in integers.
pub fn rgb_to_gray(pixel: Rgb) -> u8 {
    ((luma_scaled(pixel) + LUMA_SCALE / 2) / LUMA_SCALE).min(255) as u8
}

fn luma(pixel: Rgb) -> f64 {
    f64::from(luma_scaled(pixel)) / f64::from(LUMA_SCALE)
}

fn prepare(image: &ImageBuffer, labels: &LabelMap) -> Result<()> {
    ensure_same_dims(image.dims(), labels.dims())
}

fn map_class(
    image: &ImageBuffer,
    labels: &LabelMap,
    class_id: u8,
    f: impl Fn(Rgb) -> Rgb,
) -> ImageBuffer {
    let mut out = image.clone();
    for (px, &label) in out.pixels_mut().iter_mut().zip(labels.labels()) {
        if label == class_id {
            *px = f(*px);
        }
    }
    out
}

pub fn gray_scale_transform(
    image: &ImageBuffer,
    labels: &LabelMap,
    class_id: u8,
    lambda: f64,
) -> Result<ImageBuffer> {
    prepare(image, labels)?;
    check_intensity(lambda)?;
    if lambda == 0.0 {
        return Ok(image.clone());
    }
    Ok(map_class(image, labels, class_id, |px| {
        let g = luma(px);
        px.map(|v| round_channel((1.0 - lambda) * f64::from(v) + lambda * g))
    }))
}

pub fn color_duplication(
    image: &ImageBuffer,
    labels: &LabelMap,
    class_id: u8,
    channel: Channel,
    lambda: f64,
) -> Result<ImageBuffer> {
    prepare(image, labels)?;
    check_intensity(lambda)?;
    if lambda == 0.0 {
        return Ok(image.clone());
    }
    let h = channel.index();
    Ok(map_class(image, labels, class_id, |px| {
        let dup = f64::from(px[h]);
        let mut out = px.map(|v| round_channel((1.0 - lambda) * f64::from(v) + lambda * dup));
        out[h] = px[h];
        out
    }))
}

/// Number of class pixels a swap of proportion `p` moves: `round(p * K)`.
pub fn swap_count(proportion: f64, class_pixels: usize) -> usize {
    (proportion * class_pixels as f64).round() as usize
}

/// Picks `round(p K)` class positions without replacement (partial
/// Fisher-Yates over the row-major position list) and permutes their
/// values with a second Fisher-Yates pass over the selection.
pub fn pixel_swap(
    image: &ImageBuffer,
    labels: &LabelMap,
    class_id: u8,
    proportion: f64,
    rng: &mut RngStream,
) -> Result<ImageBuffer> {
    prepare(image, labels)?;
    check_intensity(proportion)?;
    let mut positions = class_indices(labels, class_id);
    let k = positions.len();
    let m = swap_count(proportion, k);
    let mut out = image.clone();
    if m < 2 {
        return Ok(out);
    }

    for i in 0..m {
        let j = i + rng.below((k - i) as u64) as usize;
        positions.swap(i, j);
    }
    let selected = &positions[..m];

    let mut values: Vec<Rgb> = selected.iter().map(|&idx| image.pixels()[idx]).collect();
    for i in (1..m).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        values.swap(i, j);
    }

    let pixels = out.pixels_mut();
    for (&idx, value) in selected.iter().zip(values) {
        pixels[idx] = value;
    }
    Ok(out)
}

/// The fill pixel used for masked-out context.
pub fn fill_pixel(fill: &ChannelStats) -> Rgb {
    fill.means().map(round_channel)
}

pub fn context_mask(
    image: &ImageBuffer,
    labels: &LabelMap,
    class_id: u8,
    fill: &ChannelStats,
) -> Result<ImageBuffer> {
    prepare(image, labels)?;
    let value = fill_pixel(fill);
    let mut out = image.clone();
    for (px, &label) in out.pixels_mut().iter_mut().zip(labels.labels()) {
        if label != class_id {
            *px = value;
        }
    }
    Ok(out)
}

/// Applies `spec` to one image. With `context_fill` set, the class pixels get
/// the transform and everything else gets the fill; the two pixel sets are
/// disjoint so the order does not matter.
pub fn apply(image: &ImageBuffer, labels: &LabelMap, spec: &DistortionSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    let c = spec.class_id;
    let out = match &spec.distortion {
        Distortion::GrayScale { lambda } => gray_scale_transform(image, labels, c, *lambda)?,
        Distortion::PixelSwap { proportion, .. } => {
            pixel_swap(image, labels, c, *proportion, &mut spec.rng())?
        }
        Distortion::ColorDuplication { channel, lambda } => {
            color_duplication(image, labels, c, *channel, *lambda)?
        }
        Distortion::ContextMask { fill } => context_mask(image, labels, c, fill)?,
    };
    match &spec.context_fill {
        Some(fill) => context_mask(&out, labels, c, fill),
        None => Ok(out),
    }
}
