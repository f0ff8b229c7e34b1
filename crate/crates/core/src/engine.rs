//! Denoising engines: maps from an image tensor to a same-shape image tensor.

use crate::error::{Error, Result};
use crate::nets::BiasFreeDenoiser;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// The denoiser contract `P(·)`.
pub trait DenoisingEngine<T: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Exact vector-Jacobian product `J_P(x)^T c`, when the engine can
    /// provide one. `None` means "not differentiable through the tape".
    fn vjp(&self, _x: &Tensor<T>, _cotangent: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        None
    }
}

impl<T: Scalar, E: DenoisingEngine<T> + ?Sized> DenoisingEngine<T> for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        (**self).denoise(x)
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        (**self).vjp(x, c)
    }
}

impl<T: Scalar, E: DenoisingEngine<T> + ?Sized> DenoisingEngine<T> for &E {
    fn name(&self) -> String {
        (**self).name()
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        (**self).denoise(x)
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        (**self).vjp(x, c)
    }
}

/// `P(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Scalar> DenoisingEngine<T> for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        Some(x.same_shape(c, "vjp").map(|_| c.clone()))
    }
}

/// `P(x) = factor * x`; `factor = 0` is the zero map.
#[derive(Debug, Clone, Copy)]
pub struct Scaled {
    pub factor: f64,
}

impl Scaled {
    pub fn zero() -> Self {
        Self { factor: 0.0 }
    }
}

impl<T: Scalar> DenoisingEngine<T> for Scaled {
    fn name(&self) -> String {
        if self.factor == 0.0 {
            "zero".into()
        } else {
            format!("scaled({})", self.factor)
        }
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.scale(T::lit(self.factor))
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        Some(x.same_shape(c, "vjp").and_then(|_| c.scale(T::lit(self.factor))))
    }
}

/// Normalised Gaussian blur with periodic boundary, applied per channel.
///
/// The operator is a symmetric circulant matrix with non-negative taps
/// summing to one: it preserves constants and has spectral norm 1.
#[derive(Debug, Clone)]
pub struct GaussianBlur {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianBlur {
    /// Radius `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        Ok(Self {
            sigma,
            taps: raw.into_iter().map(|v| v / s).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// 1-D taps, centred.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.chw()?;
        let r = self.taps.len() / 2;
        let taps: Vec<T> = self.taps.iter().map(|&v| T::lit(v)).collect();
        let mut tmp = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let src = x.data();
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for (i, &t) in taps.iter().enumerate() {
                        let sx = (xx + w * (r / w + 1) + i - r) % w;
                        acc += t * src[base + y * w + sx];
                    }
                    tmp[base + y * w + xx] = acc;
                }
            }
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for (i, &t) in taps.iter().enumerate() {
                        let sy = (y + h * (r / h + 1) + i - r) % h;
                        acc += t * tmp[base + sy * w + xx];
                    }
                    out[base + y * w + xx] = acc;
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    }
}

impl<T: Scalar> DenoisingEngine<T> for GaussianBlur {
    fn name(&self) -> String {
        format!("gaussian(sigma={})", self.sigma)
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x)
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        // symmetric taps: the operator is its own transpose
        Some(x.same_shape(c, "vjp").and_then(|_| self.apply(c)))
    }
}

/// Per-channel `(2r+1) x (2r+1)` median with replicated borders.
#[derive(Debug, Clone, Copy)]
pub struct MedianFilter {
    pub radius: usize,
}

impl Default for MedianFilter {
    fn default() -> Self {
        Self { radius: 1 }
    }
}

impl<T: Scalar> DenoisingEngine<T> for MedianFilter {
    fn name(&self) -> String {
        format!("median(radius={})", self.radius)
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.chw()?;
        let r = self.radius as isize;
        let src = x.data();
        let mut out = Vec::with_capacity(x.len());
        let mut window = Vec::with_capacity((2 * self.radius + 1).pow(2));
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    window.clear();
                    for dy in -r..=r {
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        for dx in -r..=r {
                            let sx = (xx + dx).clamp(0, w as isize - 1) as usize;
                            window.push(src[base + sy * w + sx]);
                        }
                    }
                    let mid = window.len() / 2;
                    let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
                    out.push(*m);
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    }
}

/// Shift by one column to the right with a replicated left edge:
/// `P(x)[.., j] = x[.., max(j - 1, 0)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftFilter;

impl<T: Scalar> DenoisingEngine<T> for ShiftFilter {
    fn name(&self) -> String {
        "shift".into()
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = *x.shape().last().expect("rank >= 1");
        let out = x
            .data()
            .chunks(w)
            .flat_map(|row| (0..w).map(move |j| row[j.saturating_sub(1)]))
            .collect();
        Tensor::from_vec(x.shape(), out)
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        if let Err(e) = x.same_shape(c, "vjp") {
            return Some(Err(e));
        }
        let w = *c.shape().last().expect("rank >= 1");
        let out = c
            .data()
            .chunks(w)
            .flat_map(|row| {
                (0..w).map(move |j| {
                    let mut v = if j + 1 < w { row[j + 1] } else { T::zero() };
                    if j == 0 {
                        v += row[0];
                    }
                    v
                })
            })
            .collect();
        Some(Tensor::from_vec(c.shape(), out))
    }
}

/// Dense linear engine `P(x) = A vec(x)` for inputs of one fixed shape.
#[derive(Debug, Clone)]
pub struct LinearMap<T> {
    shape: Vec<usize>,
    matrix: Vec<T>,
}

impl<T: Scalar> LinearMap<T> {
    /// `matrix` is `n x n` row-major with `n = product(shape)`.
    pub fn new(shape: &[usize], matrix: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if matrix.len() != n * n {
            return Err(Error::shape("linear map", format!("need {n}x{n} matrix")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            matrix,
        })
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    fn mul(&self, x: &Tensor<T>, transpose: bool) -> Result<Tensor<T>> {
        if x.shape() != self.shape.as_slice() {
            return Err(Error::shape(
                "linear map",
                format!("{:?} vs {:?}", x.shape(), self.shape),
            ));
        }
        let n = x.len();
        let mut out = vec![T::zero(); n];
        let op = if transpose {
            crate::scalar::Op::T
        } else {
            crate::scalar::Op::N
        };
        crate::scalar::gemm(
            n,
            n,
            1,
            &self.matrix,
            op,
            x.data(),
            crate::scalar::Op::N,
            &mut out,
            false,
        );
        Tensor::from_vec(x.shape(), out)
    }
}

impl<T: Scalar> DenoisingEngine<T> for LinearMap<T> {
    fn name(&self) -> String {
        "linear".into()
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mul(x, false)
    }

    fn vjp(&self, _x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        Some(self.mul(c, true))
    }
}

impl<T: Scalar> DenoisingEngine<T> for BiasFreeDenoiser<T> {
    fn name(&self) -> String {
        let cfg = self.config();
        let widths: Vec<String> = cfg.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "drunet-lite(widths={},blocks={})",
            widths.join("/"),
            cfg.blocks_per_scale
        )
    }

    fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x)
    }

    fn vjp(&self, x: &Tensor<T>, c: &Tensor<T>) -> Option<Result<Tensor<T>>> {
        Some((|| {
            x.same_shape(c, "vjp")?;
            let tape = Tape::new();
            let params: Vec<_> = self.params().iter().map(|p| tape.constant(p.clone())).collect();
            let xv = tape.param(x.clone());
            let y = self.forward_graph(&tape, &params, xv)?;
            let loss = tape.dot_const(&y, c)?;
            let mut grads = tape.backward(&loss)?;
            grads.take(&xv)
        })())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn blur_preserves_constants_and_is_symmetric() {
        let blur = GaussianBlur::new(1.2).unwrap();
        let c = Tensor::<f64>::full(&[2, 5, 7], 0.3).unwrap();
        assert!(blur.denoise(&c).unwrap().max_abs_diff(&c).unwrap() < 1e-15);
        let mut rng = Rng::new(1);
        let a: Tensor<f64> = rng.normal(&[1, 6, 9], 1.0).unwrap();
        let b: Tensor<f64> = rng.normal(&[1, 6, 9], 1.0).unwrap();
        let lhs = blur.denoise(&a).unwrap().inner(&b).unwrap();
        let rhs = a.inner(&blur.denoise(&b).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn blur_kernel_wider_than_image_wraps() {
        let blur = GaussianBlur::new(2.0).unwrap();
        let c = Tensor::<f64>::full(&[1, 3, 2], 1.5).unwrap();
        assert!(blur.denoise(&c).unwrap().max_abs_diff(&c).unwrap() < 1e-14);
    }

    #[test]
    fn median_removes_impulse() {
        let mut x = vec![0.5; 25];
        x[12] = 1.0;
        let t = Tensor::<f64>::from_vec(&[1, 5, 5], x).unwrap();
        let y = MedianFilter::default().denoise(&t).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shift_forward_and_adjoint() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ShiftFilter.denoise(&x).unwrap().data(), &[1.0, 1.0, 2.0, 3.0]);
        let mut rng = Rng::new(3);
        let a: Tensor<f64> = rng.normal(&[2, 3, 5], 1.0).unwrap();
        let b: Tensor<f64> = rng.normal(&[2, 3, 5], 1.0).unwrap();
        let lhs = ShiftFilter.denoise(&a).unwrap().inner(&b).unwrap();
        let rhs = a.inner(&ShiftFilter.vjp(&a, &b).unwrap().unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn cnn_vjp_matches_adjoint_identity_on_linear_region() {
        use crate::nets::DrunetConfig;
        let cfg = DrunetConfig {
            in_channels: 1,
            out_channels: 1,
            widths: vec![4, 4],
            blocks_per_scale: 1,
            noise_map: false,
        };
        let net = BiasFreeDenoiser::<f64>::random(cfg, &mut Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        let x: Tensor<f64> = rng.normal(&[1, 4, 4], 1.0).unwrap();
        let c: Tensor<f64> = rng.normal(&[1, 4, 4], 1.0).unwrap();
        let g = net.vjp(&x, &c).unwrap().unwrap();
        // bias-free + piecewise linear: <c, J x> = <c, P(x)> = <J^T c, x>
        let lhs = c.inner(&net.denoise(&x).unwrap()).unwrap();
        let rhs = g.inner(&x).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
