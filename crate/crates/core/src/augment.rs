//! Training-time augmentation: flips, quarter-turn rotations, center zoom,
//! bordered shrink and Mixup.
//!
//! Every sample gets its own RNG stream derived from `(seed, index)`, so an
//! augmented epoch is reproducible regardless of batch order or threading.

use image::{imageops, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resample_window, Tensor};

/// How the Mixup weight of the first image is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixupMode {
    /// `λ ~ Beta(α, α)`.
    Beta,
    /// `λ ~ U(1 - cap, 1)`: the second image never weighs more than `cap`.
    CappedWeight { cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Probabilities of 0, 90, 180 and 270 degree clockwise turns.
    pub rotation_probs: [f64; 4],
    pub zoom_crop_fraction: f64,
    pub zoom_prob: f64,
    pub shrink_border_fraction: f64,
    pub shrink_prob: f64,
    pub mixup_alpha: f64,
    pub mixup_enabled: bool,
    pub mixup_mode: MixupMode,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotation_probs: [0.25; 4],
            zoom_crop_fraction: 0.8,
            zoom_prob: 0.0,
            shrink_border_fraction: 102.0 / 1024.0,
            shrink_prob: 0.0,
            mixup_alpha: 0.2,
            mixup_enabled: true,
            mixup_mode: MixupMode::Beta,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Flips and rotations only.
    pub fn geometric_only() -> Self {
        Self {
            mixup_enabled: false,
            ..Self::default()
        }
    }

    /// The full suite: geometric ops plus zoom, shrink and Mixup. Zoom and
    /// shrink are applied as alternatives, each to a third of the samples.
    pub fn main_framework() -> Self {
        Self {
            zoom_prob: 1.0 / 3.0,
            shrink_prob: 1.0 / 3.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.hflip_prob, self.vflip_prob, self.zoom_prob, self.shrink_prob];
        if probs.iter().chain(&self.rotation_probs).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("augmentation probabilities must lie in [0, 1]"));
        }
        if (self.rotation_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("rotation probabilities must sum to 1"));
        }
        if self.zoom_prob + self.shrink_prob > 1.0 + 1e-9 {
            return Err(Error::invalid("zoom and shrink probabilities must sum to at most 1"));
        }
        for (name, f) in [("zoom", self.zoom_crop_fraction), ("shrink", self.shrink_border_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("{name} fraction must lie in (0, 1)")));
            }
        }
        if self.mixup_enabled && self.mixup_alpha <= 0.0 {
            return Err(Error::invalid("mixup alpha must be positive"));
        }
        if let MixupMode::CappedWeight { cap } = self.mixup_mode {
            if !(0.0..=1.0).contains(&cap) {
                return Err(Error::invalid("mixup cap must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Independent RNG stream for sample `index` of an epoch.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    #[default]
    None,
    Zoom,
    Shrink,
}

/// One draw of the geometric transforms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometricOps {
    pub hflip: bool,
    pub vflip: bool,
    /// Clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
    pub scale: Scale,
}

impl GeometricOps {
    pub fn draw(config: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let hflip = rng.random_bool(config.hflip_prob);
        let vflip = rng.random_bool(config.vflip_prob);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut quarter_turns = 3;
        for (k, p) in config.rotation_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                quarter_turns = k as u8;
                break;
            }
        }
        let s: f64 = rng.random();
        let scale = if s < config.zoom_prob {
            Scale::Zoom
        } else if s < config.zoom_prob + config.shrink_prob {
            Scale::Shrink
        } else {
            Scale::None
        };
        Self {
            hflip,
            vflip,
            quarter_turns,
            scale,
        }
    }

    pub fn apply(&self, image: &RgbImage, config: &AugmentationConfig) -> Result<RgbImage> {
        let (w, h) = image.dimensions();
        if w != h {
            return Err(Error::invalid(format!("augmentation needs a square image, got {w}x{h}")));
        }
        let mut out = match self.scale {
            Scale::None => image.clone(),
            Scale::Zoom => zoom_center(image, config.zoom_crop_fraction),
            Scale::Shrink => shrink_with_border(image, config.shrink_border_fraction),
        };
        if self.hflip {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if self.vflip {
            imageops::flip_vertical_in_place(&mut out);
        }
        Ok(match self.quarter_turns % 4 {
            1 => imageops::rotate90(&out),
            2 => imageops::rotate180(&out),
            3 => imageops::rotate270(&out),
            _ => out,
        })
    }
}

pub fn apply_geometric(image: &RgbImage, config: &AugmentationConfig, rng: &mut impl Rng) -> Result<RgbImage> {
    GeometricOps::draw(config, rng).apply(image, config)
}

/// Crops the central `floor(fraction * side)` square and enlarges it back to
/// `side` with linear interpolation.
pub fn zoom_center(image: &RgbImage, fraction: f64) -> RgbImage {
    let side = image.width();
    let crop = ((fraction * f64::from(side)).floor()).max(1.0);
    let offset = (f64::from(side) - crop) / 2.0;
    resample_window(image, (offset, offset), (crop, crop), (side, side))
}

/// Surrounds the image with a black border of `round(fraction * side)` on
/// each side and scales the result back to `side`.
pub fn shrink_with_border(image: &RgbImage, fraction: f64) -> RgbImage {
    let side = image.width();
    let border = (fraction * f64::from(side)).round() as u32;
    if border == 0 {
        return image.clone();
    }
    let canvas_side = side + 2 * border;
    let mut canvas = RgbImage::new(canvas_side, canvas_side);
    imageops::replace(&mut canvas, image, i64::from(border), i64::from(border));
    let span = f64::from(canvas_side);
    resample_window(&canvas, (0.0, 0.0), (span, span), (side, side))
}

pub fn draw_lambda(mode: MixupMode, alpha: f64, rng: &mut impl Rng) -> f64 {
    match mode {
        MixupMode::Beta => Beta::new(alpha, alpha).expect("positive alpha").sample(rng),
        MixupMode::CappedWeight { cap } => 1.0 - cap * rng.random::<f64>(),
    }
}

/// Images with soft labels over a named class list.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub classes: Vec<String>,
    pub images: Vec<Tensor>,
    pub labels: Vec<Vec<f32>>,
}

/// `λ·a + (1 - λ)·b` for one pair, on pixels and labels alike.
pub fn mix_pair(a: (&Tensor, &[f32]), b: (&Tensor, &[f32]), lambda: f64) -> (Tensor, Vec<f32>) {
    let l = lambda as f32;
    let mut image = a.0.clone();
    for (x, y) in image.data.iter_mut().zip(&b.0.data) {
        *x = l * *x + (1.0 - l) * y;
    }
    let label = a.1.iter().zip(b.1).map(|(x, y)| l * x + (1.0 - l) * y).collect();
    (image, label)
}

/// Mixes two batches pairwise and returns the weights used.
pub fn mixup(a: &LabeledBatch, b: &LabeledBatch, mode: MixupMode, alpha: f64, rng: &mut impl Rng) -> Result<(LabeledBatch, Vec<f64>)> {
    let lambdas: Vec<f64> = (0..a.images.len()).map(|_| draw_lambda(mode, alpha, rng)).collect();
    mixup_with(a, b, &lambdas).map(|batch| (batch, lambdas))
}

pub fn mixup_with(a: &LabeledBatch, b: &LabeledBatch, lambdas: &[f64]) -> Result<LabeledBatch> {
    if a.classes != b.classes {
        return Err(Error::invalid("mixup batches use different class sets"));
    }
    if a.images.len() != b.images.len() || a.images.len() != lambdas.len() {
        return Err(Error::invalid("mixup batches differ in size"));
    }
    let mut out = LabeledBatch {
        classes: a.classes.clone(),
        images: Vec::with_capacity(a.images.len()),
        labels: Vec::with_capacity(a.images.len()),
    };
    for i in 0..a.images.len() {
        if a.images[i].shape() != b.images[i].shape() {
            return Err(Error::invalid("mixup images differ in shape"));
        }
        let (img, label) = mix_pair((&a.images[i], &a.labels[i]), (&b.images[i], &b.labels[i]), lambdas[i]);
        out.images.push(img);
        out.labels.push(label);
    }
    Ok(out)
}
