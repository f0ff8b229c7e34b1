//! Empirical checks of the three RED conditions (differentiability,
//! homogeneity, Jacobian symmetry) and of the gradient collapse
//! `x − ½P(x) − ½Jᵀx == x − P(x)`.
//!
//! Everything here runs in `f64`; 32-bit finite differences are too noisy
//! for symmetry ratios near `1e-4`.

use crate::engine::DenoisingEngine;
use crate::error::{Error, Result};
use crate::metrics;
use crate::red::{red_grad_general, red_grad_simple, VjpFallback};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest flattened input for which a dense Jacobian is built.
pub const JACOBIAN_CAP: usize = 1024;
pub const DEFAULT_RHO: f64 = 1e-3;
pub const DEFAULT_EPSILON: f64 = 1e-3;

type T64 = Tensor<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneityCheck {
    pub epsilon: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// Compares `P((1+ε)x)` with `(1+ε)P(x)`.
pub fn check_homogeneity<E: DenoisingEngine<f64> + ?Sized>(
    engine: &E,
    x: &T64,
    epsilon: f64,
) -> Result<HomogeneityCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let s = 1.0 + epsilon;
    let lhs = engine.denoise(&x.scale(s)?)?;
    let rhs = engine.denoise(x)?.scale(s)?;
    lhs.same_shape(&rhs, "check_homogeneity")?;
    Ok(HomogeneityCheck {
        epsilon,
        ssim: metrics::ssim(&lhs, &rhs)?,
        mse: metrics::mse(&lhs, &rhs)?,
    })
}

/// Dense row-major `n x n` matrix, `[J]_{i,j} = ∂P_i/∂x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    n: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `J v` for a flattened `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `||J − Jᵀ||²_F / ||J||²_F`.
    pub fn nem(&self) -> Result<f64> {
        let den = self.frobenius_sq();
        if den == 0.0 {
            return Err(Error::ZeroJacobian);
        }
        let mut num = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let d = self.get(i, j) - self.get(j, i);
                num += d * d;
            }
        }
        Ok(num / den)
    }
}

/// Central differences, one column per probe `x ± ϱ e_j`.
pub fn jacobian_fd<E: DenoisingEngine<f64> + ?Sized>(engine: &E, x: &T64, rho: f64) -> Result<Jacobian> {
    jacobian_fd_capped(engine, x, rho, JACOBIAN_CAP)
}

pub fn jacobian_fd_capped<E: DenoisingEngine<f64> + ?Sized>(
    engine: &E,
    x: &T64,
    rho: f64,
    cap: usize,
) -> Result<Jacobian> {
    let n = x.len();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("probe step must be positive, got {rho}")));
    }
    let mut probe = x.data().to_vec();
    let mut cols = vec![0.0; n * n];
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + rho;
        let plus = engine.denoise(&Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[j] = orig - rho;
        let minus = engine.denoise(&Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[j] = orig;
        if plus.len() != n {
            return Err(Error::shape("jacobian_fd", "engine changed the input size"));
        }
        for (i, (p, m)) in plus.data().iter().zip(minus.data()).enumerate() {
            cols[i * n + j] = (p - m) / (2.0 * rho);
        }
    }
    Ok(Jacobian { n, data: cols })
}

pub fn nem<E: DenoisingEngine<f64> + ?Sized>(engine: &E, x: &T64, rho: f64) -> Result<f64> {
    jacobian_fd(engine, x, rho)?.nem()
}

/// `||Jx − P(x)||₂ / ||P(x)||₂` for a precomputed Jacobian.
pub fn local_homogeneity_ratio(jac: &Jacobian, x: &T64, px: &T64) -> Result<f64> {
    let den = px.norm();
    if den == 0.0 {
        return Err(Error::ZeroOutput);
    }
    let jx = jac.apply(x.data());
    let num: f64 = jx
        .iter()
        .zip(px.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

pub fn check_local_homogeneity<E: DenoisingEngine<f64> + ?Sized>(engine: &E, x: &T64, rho: f64) -> Result<f64> {
    let px = engine.denoise(x)?;
    local_homogeneity_ratio(&jacobian_fd(engine, x, rho)?, x, &px)
}

/// `max_i |g_s − g_g|_i / max(||g_s||∞, ||g_g||∞)` between the simple and
/// general gradient forms (0 when both vanish).
///
/// The absolute gap is `½||Jᵀx − P(x)||`, so with `τ_s = NEM` and
/// `τ_h` the local homogeneity ratio it is bounded by
/// `½(√τ_s·||J||_F·||x||₂ + τ_h·||P(x)||₂)`.
pub fn check_gradient_collapse<E: DenoisingEngine<f64> + ?Sized>(
    engine: &E,
    x: &T64,
    fallback: VjpFallback,
) -> Result<f64> {
    let simple = red_grad_simple(x, engine)?;
    let general = red_grad_general(x, engine, fallback)?;
    let scale = simple.norm_inf().max(general.norm_inf());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(simple.max_abs_diff(&general)? / scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferentiabilityCheck {
    /// Worst relative mismatch over all probes.
    pub mismatch: f64,
    pub step: f64,
    /// Whether an exact VJP was available to compare against.
    pub analytic: bool,
}

/// Probes a directional-derivative estimate `D(d) = (P(x+ϱd) − P(x−ϱd))/2ϱ`
/// with random directions. A differentiable map has `D` linear in `d`, so
/// `D(d₁+d₂)` is compared with `D(d₁)+D(d₂)`; when the engine exposes a VJP,
/// `<c, D(d)>` is also compared with `<Jᵀc, d>`.
pub fn check_differentiability<E: DenoisingEngine<f64> + ?Sized>(
    engine: &E,
    x: &T64,
    step: f64,
    probes: usize,
    rng: &mut Rng,
) -> Result<DifferentiabilityCheck> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("probe step must be positive, got {step}")));
    }
    let dd = |d: &T64| -> Result<T64> {
        let plus = engine.denoise(&x.lincomb(1.0, d, step)?)?;
        let minus = engine.denoise(&x.lincomb(1.0, d, -step)?)?;
        plus.sub(&minus)?.scale(0.5 / step)
    };
    let mut worst = 0.0f64;
    let mut analytic = false;
    for _ in 0..probes.max(1) {
        let d1: T64 = rng.normal(x.shape(), 1.0)?;
        let d2: T64 = rng.normal(x.shape(), 1.0)?;
        let c: T64 = rng.normal(x.shape(), 1.0)?;
        let (a, b) = (dd(&d1)?, dd(&d2)?);
        let ab = dd(&d1.add(&d2)?)?;
        let scale = a.norm_inf() + b.norm_inf();
        if scale > 0.0 {
            worst = worst.max(ab.max_abs_diff(&a.add(&b)?)? / scale);
        }
        if let Some(vjp) = engine.vjp(x, &c) {
            analytic = true;
            let lhs = c.inner(&a)?;
            let rhs = vjp?.inner(&d1)?;
            let scale = lhs.abs().max(rhs.abs());
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    Ok(DifferentiabilityCheck {
        mismatch: worst,
        step,
        analytic,
    })
}

/// Pass thresholds. These are policy choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub differentiability: f64,
    pub homogeneity_mse: f64,
    pub nem: f64,
    pub collapse: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            differentiability: 1e-4,
            homogeneity_mse: 1e-6,
            nem: 1e-2,
            collapse: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifySettings {
    pub epsilon: f64,
    pub rho: f64,
    pub seed: u64,
    pub probes: usize,
    pub cap: usize,
    pub fallback: VjpFallback,
    pub thresholds: Thresholds,
}

impl Default for CertifySettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            rho: DEFAULT_RHO,
            seed: 0,
            probes: 2,
            cap: JACOBIAN_CAP,
            fallback: VjpFallback::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Mean of a per-patch quantity plus any per-patch failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate {
    values: Vec<f64>,
    pub errors: Vec<String>,
}

impl Aggregate {
    fn record(&mut self, patch: usize, r: std::result::Result<f64, String>) {
        match r {
            Ok(v) => self.values.push(v),
            Err(e) => self.errors.push(format!("patch {patch}: {e}")),
        }
    }

    /// `None` when every patch failed.
    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().sum::<f64>() / self.values.len() as f64)
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    fn passes(&self, pass: impl Fn(f64) -> bool) -> bool {
        self.errors.is_empty() && self.mean().is_some_and(pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdicts {
    pub differentiability: bool,
    pub homogeneity: bool,
    pub symmetry: bool,
    pub collapse: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.differentiability && self.homogeneity && self.symmetry && self.collapse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedCertificate {
    pub engine: String,
    pub patches: usize,
    pub patch_len: usize,
    pub settings: CertifySettings,
    pub differentiability: Aggregate,
    pub analytic_vjp: bool,
    pub homogeneity_ssim: Aggregate,
    pub homogeneity_mse: Aggregate,
    pub nem: Aggregate,
    pub local_homogeneity: Aggregate,
    pub collapse: Aggregate,
    pub verdicts: Verdicts,
}

/// Runs every check on every patch and compares corpus means with the
/// thresholds. Per-patch check errors are recorded and fail the verdict.
pub fn certify<E: DenoisingEngine<f64> + ?Sized>(
    engine: &E,
    corpus: &[T64],
    settings: &CertifySettings,
) -> Result<RedCertificate> {
    let first = corpus.first().ok_or_else(|| Error::invalid("empty corpus"))?;
    if let Some(p) = corpus.iter().find(|p| p.len() > settings.cap) {
        return Err(Error::CapExceeded {
            n: p.len(),
            cap: settings.cap,
        });
    }
    let mut rng = Rng::new(settings.seed);
    let mut diff = Aggregate::default();
    let mut analytic_vjp = false;
    let (mut h_ssim, mut h_mse) = (Aggregate::default(), Aggregate::default());
    let (mut nem_agg, mut local, mut collapse) = (Aggregate::default(), Aggregate::default(), Aggregate::default());
    for (i, x) in corpus.iter().enumerate() {
        let mut patch_rng = rng.fork();
        let d = check_differentiability(engine, x, settings.rho, settings.probes, &mut patch_rng);
        if let Ok(d) = &d {
            analytic_vjp |= d.analytic;
        }
        diff.record(i, d.map(|d| d.mismatch).map_err(|e| e.to_string()));

        let h = check_homogeneity(engine, x, settings.epsilon).map_err(|e| e.to_string());
        h_ssim.record(i, h.clone().map(|h| h.ssim));
        h_mse.record(i, h.map(|h| h.mse));

        match jacobian_fd_capped(engine, x, settings.rho, settings.cap) {
            Ok(jac) => {
                nem_agg.record(i, jac.nem().map_err(|e| e.to_string()));
                let lh = engine.denoise(x).and_then(|px| local_homogeneity_ratio(&jac, x, &px));
                local.record(i, lh.map_err(|e| e.to_string()));
            }
            Err(e) => {
                nem_agg.record(i, Err(e.to_string()));
                local.record(i, Err(e.to_string()));
            }
        }
        collapse.record(
            i,
            check_gradient_collapse(engine, x, settings.fallback).map_err(|e| e.to_string()),
        );
    }
    let t = settings.thresholds;
    let verdicts = Verdicts {
        differentiability: diff.passes(|v| v <= t.differentiability),
        homogeneity: h_mse.passes(|v| v <= t.homogeneity_mse) && h_ssim.errors.is_empty(),
        symmetry: nem_agg.passes(|v| v <= t.nem),
        collapse: collapse.passes(|v| v <= t.collapse),
    };
    Ok(RedCertificate {
        engine: engine.name(),
        patches: corpus.len(),
        patch_len: first.len(),
        settings: *settings,
        differentiability: diff,
        analytic_vjp,
        homogeneity_ssim: h_ssim,
        homogeneity_mse: h_mse,
        nem: nem_agg,
        local_homogeneity: local,
        collapse,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Identity, Scaled};

    #[test]
    fn identity_jacobian() {
        let x: T64 = Rng::new(1).uniform(&[1, 4, 4], 0.0, 1.0).unwrap();
        let j = jacobian_fd(&Identity, &x, 1e-3).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert!((j.get(r, c) - if r == c { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert!(j.nem().unwrap() < 1e-20);
    }

    #[test]
    fn zero_jacobian_is_an_error() {
        let x: T64 = Rng::new(1).uniform(&[1, 3, 3], 0.0, 1.0).unwrap();
        let j = jacobian_fd(&Scaled::zero(), &x, 1e-3).unwrap();
        assert!(j.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(j.nem(), Err(Error::ZeroJacobian)));
    }

    #[test]
    fn cap_enforced() {
        let x = T64::zeros(&[1, 33, 32]).unwrap();
        assert!(matches!(
            jacobian_fd(&Identity, &x, 1e-3),
            Err(Error::CapExceeded { n: 1056, cap: 1024 })
        ));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(certify(&Identity, &[], &CertifySettings::default()).is_err());
    }
}
