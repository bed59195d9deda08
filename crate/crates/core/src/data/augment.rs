use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::InputShape;

/// Per-channel standard deviations are floored at this value.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation of raw-scale training pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Mean 0, std 1: normalization is the identity.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population statistics over all pixels of `values` (rows of `shape`).
    pub fn compute(values: &[f64], shape: InputShape) -> Self {
        let ch = shape.channels;
        let mut sum = vec![0.0; ch];
        let mut sq = vec![0.0; ch];
        let mut count = 0usize;
        for px in values.chunks(ch) {
            for c in 0..ch {
                sum[c] += px[c];
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        for px in values.chunks(ch) {
            for c in 0..ch {
                sq[c] += (px[c] - mean[c]).powi(2);
            }
        }
        let std = sq.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, image: &[f64], shape: InputShape) -> Vec<f64> {
        let ch = shape.channels;
        image
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % ch]) / self.std[i % ch].max(STD_FLOOR))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Zero padding added on every side before cropping back to the input size.
    pub pad: usize,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { pad: 4, flip: true }
    }
}

/// Top-left corner of the crop window inside the padded image.
pub fn crop_offsets(rng: &mut impl Rng, pad: usize) -> (usize, usize) {
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    (dy, dx)
}

/// Pads with zeros by `pad` and crops the `h × w` window at `(dy, dx)`.
pub fn pad_crop(image: &[f64], shape: InputShape, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let InputShape {
        height,
        width,
        channels,
    } = shape;
    let mut out = vec![0.0; image.len()];
    for y in 0..height {
        let sy = (y + dy).wrapping_sub(pad);
        if sy >= height {
            continue;
        }
        for x in 0..width {
            let sx = (x + dx).wrapping_sub(pad);
            if sx >= width {
                continue;
            }
            let (o, s) = ((y * width + x) * channels, (sy * width + sx) * channels);
            out[o..o + channels].copy_from_slice(&image[s..s + channels]);
        }
    }
    out
}

pub fn flip_horizontal(image: &[f64], shape: InputShape) -> Vec<f64> {
    let InputShape {
        height,
        width,
        channels,
    } = shape;
    let mut out = vec![0.0; image.len()];
    for y in 0..height {
        for x in 0..width {
            let (o, s) = ((y * width + x) * channels, (y * width + width - 1 - x) * channels);
            out[o..o + channels].copy_from_slice(&image[s..s + channels]);
        }
    }
    out
}

/// Random crop, horizontal flip with probability 0.5, then standardization.
pub fn augment(
    image: &[f64],
    shape: InputShape,
    rng: &mut impl Rng,
    cfg: &AugmentConfig,
    stats: &ChannelStats,
) -> Vec<f64> {
    let (dy, dx) = crop_offsets(rng, cfg.pad);
    let mut out = pad_crop(image, shape, cfg.pad, dy, dx);
    if cfg.flip && rng.random_bool(0.5) {
        out = flip_horizontal(&out, shape);
    }
    stats.normalize(&out, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: InputShape) -> Vec<f64> {
        (0..shape.len()).map(|i| i as f64).collect()
    }

    #[test]
    fn flip_is_an_involution() {
        let shape = InputShape::new(3, 5, 2);
        let img = ramp(shape);
        assert_eq!(flip_horizontal(&flip_horizontal(&img, shape), shape), img);
        assert_ne!(flip_horizontal(&img, shape), img);
    }

    #[test]
    fn centered_crop_is_identity() {
        let shape = InputShape::new(6, 6, 1);
        let img = ramp(shape);
        assert_eq!(pad_crop(&img, shape, 4, 4, 4), img);
    }

    #[test]
    fn shifted_crop_pads_with_zero() {
        let shape = InputShape::new(2, 2, 1);
        let img = vec![1.0, 2.0, 3.0, 4.0];
        // window starts one pixel up-left of the image
        assert_eq!(pad_crop(&img, shape, 1, 0, 0), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(pad_crop(&img, shape, 1, 2, 2), vec![4.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_images_standardize_to_zero() {
        let shape = InputShape::new(2, 2, 3);
        let values = vec![0.5; shape.len() * 4];
        let stats = ChannelStats::compute(&values, shape);
        assert_eq!(stats.std, vec![STD_FLOOR; 3]);
        assert!(stats.normalize(&values[..shape.len()], shape).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stats_per_channel() {
        let shape = InputShape::new(1, 2, 2);
        // channel 0: 0, 1 ; channel 1: 2, 2
        let stats = ChannelStats::compute(&[0.0, 2.0, 1.0, 2.0], shape);
        assert_eq!(stats.mean, vec![0.5, 2.0]);
        assert_eq!(stats.std, vec![0.5, STD_FLOOR]);
    }
}
