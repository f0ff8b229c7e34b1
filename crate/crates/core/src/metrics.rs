//! MSE, PSNR and SSIM. All accumulation is done in `f64`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// `f64::INFINITY` when `mse == 0`.
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Self> {
        let mse = mse(a, b)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse, peak)?,
            ssim: ssim_with_peak(a, b, peak)?,
        })
    }
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.same_shape(b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Joint MSE over all channels.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, peak)
}

/// SSIM with `peak = 1`.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Mean SSIM over all valid window positions, averaged over channels.
pub fn ssim_with_peak<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.same_shape(b, "ssim")?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let (c, h, w) = a.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let taps = ssim_taps();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let pb: Vec<f64> = b.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let [ma, mb, saa, sbb, sab] = [&pa, &pb, &aa, &bb, &ab].map(|p| filter_valid(p, h, w, &taps));
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (mua, mub) = (ma[i], mb[i]);
            let va = saa[i] - mua * mua;
            let vb = sbb[i] - mub * mub;
            let cov = sab[i] - mua * mub;
            acc += ((2.0 * mua * mub + c1) * (2.0 * cov + c2)) / ((mua * mua + mub * mub + c1) * (va + vb + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Separable valid-mode correlation of an `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&p[y * w + x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}
