//! Decoding, resampling and normalization of `[3, H, W]` image tensors.

use std::path::Path;

use image::{DynamicImage, ImageDecoder, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Per-channel `(x − mean) / std`, applied after scaling to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation(format!(
                "normalization needs finite means and positive stds, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, image: &mut Tensor<f32>) {
        let plane = image.shape()[1] * image.shape()[2];
        for (c, chan) in image.data_mut().chunks_exact_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chan {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Decode any supported raster file into 8-bit RGB. EXIF orientation is
/// honoured; gray, alpha and 16-bit inputs are converted (alpha dropped).
pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let ingest = |detail: String| Error::Ingest {
        path: path.to_owned(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| ingest(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| ingest(e.to_string()))?;
    let mut decoder = reader.into_decoder().map_err(|e| ingest(e.to_string()))?;
    let orientation = decoder.orientation().ok();
    let mut img = DynamicImage::from_decoder(decoder).map_err(|e| ingest(e.to_string()))?;
    if let Some(o) = orientation {
        img.apply_orientation(o);
    }
    if img.width() == 0 || img.height() == 0 {
        return Err(ingest("image has no pixels".into()));
    }
    Ok(img.to_rgb8())
}

/// `[3, H, W]` with values in `[0, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([3, h, w], data).expect("non-empty image")
}

/// Source coordinate and blend weight for each destination index, using
/// pixel-center alignment and edge clamping.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` tensor.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let [c, h, w] = [image.shape()[0], image.shape()[1], image.shape()[2]];
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out).expect("positive output size")
}

/// Decode, resize to `size × size`, scale to `[0, 1]` and normalize.
pub fn load_and_resize(path: &Path, size: usize, norm: &Normalization) -> Result<Tensor<f32>> {
    let rgb = decode_rgb(path)?;
    let mut t = resize_bilinear(&rgb_to_tensor(&rgb), size, size);
    norm.apply(&mut t);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_for_identity_are_exact() {
        for (i, &(a, b, f)) in axis_taps(5, 5).iter().enumerate() {
            assert_eq!((a, f), (i, 0.0));
            assert!(b == i + 1 || b == 4);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let t = Tensor::full([3, 7, 5], 0.25f32);
        let r = resize_bilinear(&t, 13, 3);
        assert_eq!(r.shape(), &[3, 13, 3]);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn normalization_of_mean_is_zero() {
        let n = Normalization::default();
        let mut t = Tensor::from_fn([3, 1, 1], |i| n.mean[i]);
        n.apply(&mut t);
        assert!(t.data().iter().all(|v| v.abs() < 1e-7));
    }
}
