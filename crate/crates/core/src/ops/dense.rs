//! Fully connected layer and elementwise ops.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `input · weightᵀ + bias` for `input [N, F]`, `weight [K, F]`, `bias [K]`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "linear";
    let [n, f] = input.dims2(OP, "input [N, F]")?;
    let [k, wf] = weight.dims2(OP, "weight [K, F]")?;
    if wf != f {
        return Err(Error::dim(
            OP,
            format!("input feature axis (1) has {f} features but weight axis (1) has {wf}"),
        ));
    }
    if bias.shape() != [k] {
        return Err(Error::dim(
            OP,
            format!("bias must be [{k}], got {:?}", bias.shape()),
        ));
    }
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(n * k).collect();
    T::gemm(n, f, k, T::one(), input.data(), (f, 1), weight.data(), (1, f), T::one(), &mut out);
    Ok(Tensor::from_parts(vec![n, k], out))
}

pub struct LinearGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> LinearGrads<T> {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let k = weight.shape()[0];
    let dy = grad_out.data();
    let input_grad = need[0].then(|| {
        let mut dx = vec![T::zero(); n * f];
        T::gemm(n, k, f, T::one(), dy, (k, 1), weight.data(), (f, 1), T::zero(), &mut dx);
        Tensor::from_parts(vec![n, f], dx)
    });
    let weight_grad = need[1].then(|| {
        let mut dw = vec![T::zero(); k * f];
        T::gemm(k, n, f, T::one(), dy, (1, k), input.data(), (f, 1), T::zero(), &mut dw);
        Tensor::from_parts(vec![k, f], dw)
    });
    let bias_grad = need[2].then(|| {
        let mut db = vec![T::zero(); k];
        for row in dy.chunks_exact(k) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        Tensor::from_parts(vec![k], db)
    });
    LinearGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes only where the forward output is positive, so the
/// subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let dx = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(output.shape().to_vec(), dx)
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().copied().sum())
}

/// In-place `acc += g`.
pub(crate) fn accumulate<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    debug_assert_eq!(acc.shape(), g.shape());
    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += v;
    }
}
