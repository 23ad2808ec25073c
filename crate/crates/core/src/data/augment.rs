//! Training-time augmentation: horizontal flip, scale jitter, random crop.

use rand::Rng;
use wsfcn_tensor::ops::bilinear_upsample;
use wsfcn_tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: 64,
            scale_min: 0.9,
            scale_max: 1.0,
            flip_prob: 0.5,
        }
    }
}

/// One random draw, separated from its application so tests can force it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: f64,
    pub top: usize,
    pub left: usize,
}

pub fn scaled_extent(len: usize, scale: f64) -> usize {
    (len as f64 * scale).round() as usize
}

impl AugmentDraw {
    /// Identity transform followed by a crop at the top-left corner.
    pub fn corner() -> Self {
        AugmentDraw {
            flip: false,
            scale: 1.0,
            top: 0,
            left: 0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut R) -> Result<Self> {
        let flip = rng.gen_bool(cfg.flip_prob);
        let scale = if cfg.scale_max > cfg.scale_min {
            rng.gen_range(cfg.scale_min..=cfg.scale_max)
        } else {
            cfg.scale_min
        };
        let (sh, sw) = (scaled_extent(h, scale), scaled_extent(w, scale));
        if sh < cfg.crop || sw < cfg.crop {
            return Err(Error::Config(format!(
                "crop {} exceeds the resized image {sh}×{sw}",
                cfg.crop
            )));
        }
        Ok(AugmentDraw {
            flip,
            scale,
            top: rng.gen_range(0..=sh - cfg.crop),
            left: rng.gen_range(0..=sw - cfg.crop),
        })
    }

    /// Applies the draw to an `n×c×h×w` tensor, returning `crop × crop`.
    pub fn apply(&self, x: &Tensor, crop: usize) -> Result<Tensor> {
        let s = x.shape();
        let flipped;
        let x = if self.flip {
            flipped = x.flip_horizontal();
            &flipped
        } else {
            x
        };
        let (sh, sw) = (scaled_extent(s.h(), self.scale), scaled_extent(s.w(), self.scale));
        let resized;
        let x = if (sh, sw) != (s.h(), s.w()) {
            resized = bilinear_upsample(x, sh, sw)?;
            &resized
        } else {
            x
        };
        if self.top + crop > sh || self.left + crop > sw {
            return Err(Error::Invalid(format!(
                "crop window at ({}, {}) leaves the {sh}×{sw} image",
                self.top, self.left
            )));
        }
        let shape = wsfcn_tensor::Shape::new(s.n(), s.c(), crop, crop)?;
        Ok(Tensor::from_fn(shape, x.dtype(), |n, c, y, xx| {
            x.at(n, c, y + self.top, xx + self.left)
        }))
    }
}
