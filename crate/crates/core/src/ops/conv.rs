//! 2-D cross-correlation over `[N, C, H, W]` inputs, lowered to GEMM via
//! im2col. One sample is processed at a time so the column buffer stays
//! small; the backward pass rebuilds columns instead of caching them.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stride and zero-padding shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

/// `floor((input + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit inside the padded input.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvShape {
    fn resolve<T: Scalar>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        geom: Conv2dGeometry,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = x.dims4(OP)?;
        let [o, wc, kh, kw] = match weight.shape() {
            &[o, wc, kh, kw] => [o, wc, kh, kw],
            other => {
                return Err(Error::dim(
                    OP,
                    format!("weight must be [out, in, kh, kw], got {other:?}"),
                ))
            }
        };
        if wc != c {
            return Err(Error::dim(
                OP,
                format!("input channel axis (1) has {c} channels but weight in-channel axis (1) expects {wc}"),
            ));
        }
        let oh = output_extent(h, kh, geom.stride, geom.padding).ok_or_else(|| {
            Error::dim(
                OP,
                format!(
                    "height axis (2): kernel {kh} does not fit input {h} with padding {} and stride {}",
                    geom.padding, geom.stride
                ),
            )
        })?;
        let ow = output_extent(w, kw, geom.stride, geom.padding).ok_or_else(|| {
            Error::dim(
                OP,
                format!(
                    "width axis (3): kernel {kw} does not fit input {w} with padding {} and stride {}",
                    geom.padding, geom.stride
                ),
            )
        })?;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            oh,
            ow,
            stride: geom.stride,
            pad: geom.padding,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate hit by output position `out` and kernel tap `tap`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let pixels = self.pixels();
        for ch in 0..self.c {
            let plane = &image[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ch * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, ky, self.h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, slot) in line.iter_mut().enumerate() {
                                    *slot = match self.source(ox, kx, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let pixels = self.pixels();
        for ch in 0..self.c {
            let plane = &mut image[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ch * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ky, self.h) else {
                            continue;
                        };
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &g) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                dst[ix] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let s = ConvShape::resolve(x, weight, geom)?;
    if let Some(b) = bias {
        if b.shape() != [s.o] {
            return Err(Error::dim(
                "conv2d",
                format!("bias must be [{}], got {:?}", s.o, b.shape()),
            ));
        }
    }
    let (patch, pixels) = (s.patch(), s.pixels());
    let in_stride = s.c * s.h * s.w;
    let out_stride = s.o * pixels;
    let mut out = vec![T::zero(); s.n * out_stride];
    let mut cols = vec![T::zero(); patch * pixels];
    for (sample, dst) in out.chunks_exact_mut(out_stride).enumerate() {
        s.im2col(&x.data()[sample * in_stride..(sample + 1) * in_stride], &mut cols);
        T::gemm(
            s.o,
            patch,
            pixels,
            T::one(),
            weight.data(),
            (patch, 1),
            &cols,
            (pixels, 1),
            T::zero(),
            dst,
        );
        if let Some(b) = bias {
            for (plane, &bv) in dst.chunks_exact_mut(pixels).zip(b.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor::from_parts(vec![s.n, s.o, s.oh, s.ow], out))
}

/// Gradients of a convolution; each is computed only when requested.
pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: Conv2dGeometry,
    need: [bool; 3],
) -> Result<Conv2dGrads<T>> {
    let s = ConvShape::resolve(x, weight, geom)?;
    let [need_input, need_weight, need_bias] = need;
    let (patch, pixels) = (s.patch(), s.pixels());
    let in_stride = s.c * s.h * s.w;
    let out_stride = s.o * pixels;
    if grad_out.shape() != [s.n, s.o, s.oh, s.ow] {
        return Err(Error::dim(
            "conv2d backward",
            format!("upstream gradient has shape {:?}", grad_out.shape()),
        ));
    }

    let mut cols = vec![T::zero(); patch * pixels];
    let mut dx = need_input.then(|| vec![T::zero(); s.n * in_stride]);
    let mut dw = need_weight.then(|| vec![T::zero(); s.o * patch]);
    for sample in 0..s.n {
        let dy = &grad_out.data()[sample * out_stride..(sample + 1) * out_stride];
        if let Some(dw) = dw.as_mut() {
            s.im2col(&x.data()[sample * in_stride..(sample + 1) * in_stride], &mut cols);
            // dW += dY · colsᵀ, accumulated sample by sample in order.
            T::gemm(
                s.o,
                pixels,
                patch,
                T::one(),
                dy,
                (pixels, 1),
                &cols,
                (1, pixels),
                T::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            T::gemm(
                patch,
                s.o,
                pixels,
                T::one(),
                weight.data(),
                (1, patch),
                dy,
                (pixels, 1),
                T::zero(),
                &mut cols,
            );
            s.col2im(&cols, &mut dx[sample * in_stride..(sample + 1) * in_stride]);
        }
    }
    let db = need_bias.then(|| {
        let mut db = vec![T::zero(); s.o];
        for sample in grad_out.data().chunks_exact(out_stride) {
            for (acc, plane) in db.iter_mut().zip(sample.chunks_exact(pixels)) {
                for &g in plane {
                    *acc += g;
                }
            }
        }
        Tensor::from_parts(vec![s.o], db)
    });
    Ok(Conv2dGrads {
        input: dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        weight: dw.map(|d| Tensor::from_parts(weight.shape().to_vec(), d)),
        bias: db,
    })
}
