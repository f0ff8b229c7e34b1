//! Eager convolution and activation kernels.
//!
//! Convolutions are cross-correlations without any bias term. They are
//! lowered to im2col + GEMM; every reduction happens in a fixed order, so
//! results are bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Op, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on every side; preserves `H x W` for odd
    /// kernels at stride 1.
    #[default]
    Same,
    /// No padding.
    Valid,
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }
}

/// Geometry of a convolution from `C x H x W` to `O x OH x OW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Geometry of `conv2d(input, kernel)`.
    pub fn forward(input: &[usize], kernel: &[usize], stride: usize, pad: Padding) -> Result<Geom> {
        let (c, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be C x H x W, got {input:?}"),
                ))
            }
        };
        let (o, kc, k) = kernel_dims(kernel, "conv2d")?;
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, kernel expects {kc}"),
            ));
        }
        let pad = pad.amount(k);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(
                "conv2d",
                format!("{h}x{w} input (pad {pad}) smaller than {k}x{k} kernel"),
            ));
        }
        Ok(Geom {
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Geometry of the adjoint map taking `O x h x w` back to `C x H x W`.
    pub fn transpose(input: &[usize], kernel: &[usize], stride: usize, pad: Padding) -> Result<Geom> {
        let (o, h, w) = match *input {
            [o, h, w] => (o, h, w),
            _ => {
                return Err(Error::shape(
                    "conv2d_transpose",
                    format!("input must be C x H x W, got {input:?}"),
                ))
            }
        };
        let (ko, c, k) = kernel_dims(kernel, "conv2d_transpose")?;
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if ko != o {
            return Err(Error::shape(
                "conv2d_transpose",
                format!("input has {o} channels, kernel expects {ko}"),
            ));
        }
        let pad = pad.amount(k);
        let full_h = (h - 1) * stride + k;
        let full_w = (w - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::shape("conv2d_transpose", "padding exceeds output"));
        }
        Ok(Geom {
            c,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            o,
            k,
            stride,
            pad,
            oh: h,
            ow: w,
        })
    }
}

fn kernel_dims(kernel: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *kernel {
        [o, c, kh, kw] if kh == kw => Ok((o, c, kh)),
        _ => Err(Error::shape(
            op,
            format!("kernel must be O x C x k x k, got {kernel:?}"),
        )),
    }
}

/// `(C k k) x (OH OW)` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &Geom) -> Vec<T> {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let positions = g.positions();
    let mut cols = vec![T::zero(); g.patch() * positions];
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * positions;
                let dst = &mut cols[row..row + positions];
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], g: &Geom) -> Vec<T> {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let positions = g.positions();
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * positions;
                let src = &cols[row..row + positions];
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn is_pointwise(g: &Geom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

/// `y = K * im2col(x)`.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], g: &Geom) -> Vec<T> {
    let mut y = vec![T::zero(); g.o * g.positions()];
    if is_pointwise(g) {
        gemm(g.o, g.c, g.positions(), kernel, Op::N, x, Op::N, &mut y, false);
    } else {
        let cols = im2col(x, g);
        gemm(
            g.o,
            g.patch(),
            g.positions(),
            kernel,
            Op::N,
            &cols,
            Op::N,
            &mut y,
            false,
        );
    }
    y
}

/// `x = col2im(K^T * y)`: adjoint of [`conv_forward`] in its input.
pub(crate) fn conv_adjoint<T: Scalar>(y: &[T], kernel: &[T], g: &Geom) -> Vec<T> {
    if is_pointwise(g) {
        let mut x = vec![T::zero(); g.c * g.positions()];
        gemm(g.c, g.o, g.positions(), kernel, Op::T, y, Op::N, &mut x, false);
        return x;
    }
    let mut cols = vec![T::zero(); g.patch() * g.positions()];
    gemm(g.patch(), g.o, g.positions(), kernel, Op::T, y, Op::N, &mut cols, false);
    col2im(&cols, g)
}

/// Gradient of `<y, conv_forward(x, K)>` with respect to `K`.
pub(crate) fn conv_kernel_grad<T: Scalar>(x: &[T], y: &[T], g: &Geom) -> Vec<T> {
    let mut dk = vec![T::zero(); g.o * g.patch()];
    if is_pointwise(g) {
        gemm(g.o, g.positions(), g.c, y, Op::N, x, Op::T, &mut dk, false);
    } else {
        let cols = im2col(x, g);
        gemm(g.o, g.positions(), g.patch(), y, Op::N, &cols, Op::T, &mut dk, false);
    }
    dk
}

/// Bias-free 2-D cross-correlation of a `C x H x W` input with an
/// `O x C x k x k` kernel.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: Padding) -> Result<Tensor<T>> {
    let g = Geom::forward(input.shape(), kernel.shape(), stride, pad)?;
    let y = conv_forward(input.data(), kernel.data(), &g);
    Tensor::from_raw(vec![g.o, g.oh, g.ow], y).finite("conv2d")
}

/// Transposed convolution: the exact adjoint of `conv2d(·, kernel, stride, Valid)`.
///
/// The kernel has the same `O x C x k x k` layout as for [`conv2d`]; this map
/// takes `O` channels to `C` channels and produces spatial extents
/// `(h - 1) * stride + k`.
pub fn conv2d_transpose<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    conv2d_transpose_padded(input, kernel, stride, Padding::Valid)
}

/// Adjoint of `conv2d(·, kernel, stride, pad)`.
pub fn conv2d_transpose_padded<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: Padding,
) -> Result<Tensor<T>> {
    let g = Geom::transpose(input.shape(), kernel.shape(), stride, pad)?;
    let x = conv_adjoint(input.data(), kernel.data(), &g);
    Tensor::from_raw(vec![g.c, g.h, g.w], x).finite("conv2d_transpose")
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_raw(input.shape().to_vec(), data)
}

/// Derivative mask of [`relu`]; the subgradient at exactly 0 is 0.
pub(crate) fn relu_mask<T: Scalar>(input: &[T], grad: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(grad)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}
