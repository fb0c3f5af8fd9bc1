use crate::error::{Error, Result};
use crate::ops::conv::output_extent;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2dGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2dGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }
}

/// Windowed maximum. Padding cells act as −∞. Returns the output and, per
/// output cell, the flat input index of the first (row-major) maximum.
pub fn maxpool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    geom: Pool2dGeometry,
) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    let [n, c, h, w] = x.dims4(OP)?;
    let Pool2dGeometry {
        kernel,
        stride,
        padding,
    } = geom;
    if padding * 2 > kernel {
        return Err(Error::dim(
            OP,
            format!("padding {padding} exceeds half the kernel {kernel}"),
        ));
    }
    let extent = |len: usize, axis: &str| {
        output_extent(len, kernel, stride, padding).ok_or_else(|| {
            Error::dim(
                OP,
                format!("{axis}: kernel {kernel} larger than padded input {}", len + 2 * padding),
            )
        })
    };
    let oh = extent(h, "height axis (2)")?;
    let ow = extent(w, "width axis (3)")?;

    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - padding as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - padding as isize;
                let mut best: Option<(T, usize)> = None;
                for ky in 0..kernel as isize {
                    let iy = y0 + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel as isize {
                        let ix = x0 + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = data[idx];
                        if best.is_none_or(|(b, _)| v > b) {
                            best = Some((v, idx));
                        }
                    }
                }
                // padding ≤ kernel/2 guarantees every window covers a real cell
                let (v, idx) = best.expect("pooling window lies entirely in padding");
                out.push(v);
                argmax.push(idx);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let numel = input_shape.iter().product();
    let mut dx = vec![T::zero(); numel];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx[idx] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Spatial mean per channel: `[N, C, H, W] → [N, C]`.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| T::from_f64(p.iter().map(|v| v.to_f64()).sum::<f64>() / plane as f64))
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let plane: usize = input_shape[2..].iter().product();
    let scale = T::from_f64(1.0 / plane as f64);
    let dx = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
        .collect();
    Tensor::from_parts(input_shape.to_vec(), dx)
}
