//! Random geometric augmentation of normalized `[C, H, W]` images.
//!
//! One inverse affine map per image. Coordinates are taken relative to the
//! image center `((W−1)/2, (H−1)/2)`; the forward transform applies, in
//! order, isotropic scale `s`, rotation by `θ` (positive = counterclockwise
//! on screen), translation `(tx, ty)` and an optional horizontal flip. Each
//! output pixel is bilinearly sampled from the input; samples outside the
//! frame read 0, which is the channel mean after normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    /// Fraction of width (x) and height (y).
    pub translate_max_frac: f64,
    pub flip_prob: f64,
    pub scale_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 30.0,
            translate_max_frac: 0.10,
            flip_prob: 0.5,
            scale_range: [0.8, 1.2],
            seed: 42,
        }
    }
}

impl AugmentConfig {
    /// All ranges collapsed: every draw is the identity transform.
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_max_deg: 0.0,
            translate_max_frac: 0.0,
            flip_prob: 0.0,
            scale_range: [1.0, 1.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale_range must satisfy 0 < min <= max, got [{lo}, {hi}]"));
        }
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return bad(format!(
                "rotation_max_deg must lie in [0, 180], got {}",
                self.rotation_max_deg
            ));
        }
        if !(0.0..=0.5).contains(&self.translate_max_frac) {
            return bad(format!(
                "translate_max_frac must lie in [0, 0.5], got {}",
                self.translate_max_frac
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AffineParams {
        let [lo, hi] = self.scale_range;
        let r = self.rotation_max_deg;
        let t = self.translate_max_frac;
        AffineParams {
            scale: rng.random_range(lo..=hi),
            rotation_deg: rng.random_range(-r..=r),
            translate_frac: (rng.random_range(-t..=t), rng.random_range(-t..=t)),
            flip: rng.random_bool(self.flip_prob),
        }
    }
}

/// One concrete draw of the augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub translate_frac: (f64, f64),
    pub flip: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            translate_frac: (0.0, 0.0),
            flip: false,
        }
    }
}

/// Exact values at multiples of 90°, so axis-aligned rotations permute pixels.
fn snapped_cos_sin(deg: f64) -> (f64, f64) {
    let rad = deg.to_radians();
    let snap = |v: f64| {
        if v.abs() < 1e-12 {
            0.0
        } else if (v.abs() - 1.0).abs() < 1e-12 {
            v.signum()
        } else {
            v
        }
    };
    (snap(rad.cos()), snap(rad.sin()))
}

pub fn apply_affine(image: &Tensor<f32>, p: &AffineParams) -> Tensor<f32> {
    let [c, h, w] = [image.shape()[0], image.shape()[1], image.shape()[2]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (cos, sin) = snapped_cos_sin(p.rotation_deg);
    let (tx, ty) = (p.translate_frac.0 * w as f64, p.translate_frac.1 * h as f64);
    let inv_s = 1.0 / p.scale;
    let src = image.data();
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let mut qx = x as f64 - cx;
            let qy = y as f64 - cy;
            if p.flip {
                qx = -qx;
            }
            let (ux, uy) = (qx - tx, qy - ty);
            // inverse rotation (y axis points down)
            let rx = cos * ux - sin * uy;
            let ry = sin * ux + cos * uy;
            let sx = rx * inv_s + cx;
            let sy = ry * inv_s + cy;
            sample_into(src, c, h, w, sx, sy, &mut out, y * w + x);
        }
    }
    Tensor::new([c, h, w], out).expect("same shape as input")
}

#[allow(clippy::too_many_arguments)]
fn sample_into(src: &[f32], c: usize, h: usize, w: usize, sx: f64, sy: f64, out: &mut [f32], at: usize) {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let plane = h * w;
    for (xi, yi, wt) in taps {
        if wt == 0.0 || xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            continue;
        }
        let idx = yi as usize * w + xi as usize;
        for ch in 0..c {
            out[ch * plane + at] += wt * src[ch * plane + idx];
        }
    }
}

/// Draw parameters from `rng` and transform `image`. Shape is preserved.
pub fn augment(image: &Tensor<f32>, config: &AugmentConfig, rng: &mut impl Rng) -> Tensor<f32> {
    apply_affine(image, &config.sample(rng))
}

/// Mirror left-right.
pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let w = image.shape()[2];
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}
