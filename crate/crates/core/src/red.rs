//! The RED regulariser `ρ(x) = ½ xᵀ(x − P(x))`, its gradients, and the
//! fixed-point solver for the x sub-problem.

use crate::engine::DenoisingEngine;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Residual growth streak that aborts [`fixed_point_solve`].
pub const DIVERGENCE_STREAK: usize = 5;
/// Central-difference step used when an engine has no exact VJP.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedParams {
    pub lambda: f64,
    pub mu: f64,
    pub fp_iters: usize,
    pub fp_tol: f64,
}

impl RedParams {
    /// One fixed-point step per call, as used inside the ADMM loop.
    pub fn inner(lambda: f64, mu: f64) -> Self {
        Self {
            lambda,
            mu,
            fp_iters: 1,
            fp_tol: 1e-6,
        }
    }

    /// Run-to-tolerance settings for standalone use.
    pub fn standalone(lambda: f64, mu: f64) -> Self {
        Self {
            fp_iters: 50,
            ..Self::inner(lambda, mu)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.fp_iters == 0 {
            return Err(Error::invalid("fp_iters must be >= 1"));
        }
        if !(self.fp_tol >= 0.0) {
            return Err(Error::invalid(format!("fp_tol must be >= 0, got {}", self.fp_tol)));
        }
        Ok(())
    }
}

impl Default for RedParams {
    fn default() -> Self {
        Self::inner(0.5, 0.5)
    }
}

fn denoise_checked<T: Scalar, E: DenoisingEngine<T> + ?Sized>(engine: &E, x: &Tensor<T>) -> Result<Tensor<T>> {
    let p = engine.denoise(x)?;
    if p.shape() != x.shape() {
        return Err(Error::shape(
            "denoise",
            format!("engine `{}` mapped {:?} to {:?}", engine.name(), x.shape(), p.shape()),
        ));
    }
    Ok(p)
}

pub fn red_value<T: Scalar, E: DenoisingEngine<T> + ?Sized>(x: &Tensor<T>, engine: &E) -> Result<T> {
    let p = denoise_checked(engine, x)?;
    Ok(T::lit(0.5) * x.inner(&x.sub(&p)?)?)
}

/// `x − P(x)`.
pub fn red_grad_simple<T: Scalar, E: DenoisingEngine<T> + ?Sized>(x: &Tensor<T>, engine: &E) -> Result<Tensor<T>> {
    x.sub(&denoise_checked(engine, x)?)
}

/// What [`red_grad_general`] does when the engine has no exact VJP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VjpFallback {
    Disabled,
    /// Column-by-column central differences, `2n` engine evaluations.
    FiniteDifference {
        step: f64,
    },
}

impl Default for VjpFallback {
    fn default() -> Self {
        VjpFallback::FiniteDifference { step: DEFAULT_FD_STEP }
    }
}

/// `J_P(x)^T c` by central differences: entry `n` is
/// `<c, P(x + h e_n) − P(x − h e_n)> / 2h`.
pub fn vjp_fd<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    engine: &E,
    x: &Tensor<T>,
    c: &Tensor<T>,
    step: f64,
) -> Result<Tensor<T>> {
    x.same_shape(c, "vjp_fd")?;
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let h = T::lit(step);
    let mut probe = x.data().to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = denoise_checked(engine, &Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[i] = orig - h;
        let minus = denoise_checked(engine, &Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[i] = orig;
        out.push((c.inner(&plus)? - c.inner(&minus)?) / (h + h));
    }
    Tensor::from_vec(x.shape(), out)
}

/// `x − ½P(x) − ½ J_P(x)^T x`, valid without the symmetry and homogeneity
/// assumptions behind [`red_grad_simple`].
pub fn red_grad_general<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    x: &Tensor<T>,
    engine: &E,
    fallback: VjpFallback,
) -> Result<Tensor<T>> {
    let p = denoise_checked(engine, x)?;
    let jtx = match engine.vjp(x, x) {
        Some(r) => r?,
        None => match fallback {
            VjpFallback::Disabled => return Err(Error::NotDifferentiable(engine.name())),
            VjpFallback::FiniteDifference { step } => vjp_fd(engine, x, x, step)?,
        },
    };
    let half = T::lit(0.5);
    x.sub(&p.lincomb(half, &jtx, half)?)
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome<T> {
    pub x: Tensor<T>,
    /// `||μ(x − C) + λ(x − P(x))||₂` after each iteration.
    pub residuals: Vec<f64>,
    /// `||x^{k+1} − x^k||₂` per iteration.
    pub step_norms: Vec<f64>,
    pub converged: bool,
    /// `P(x)` at the returned iterate.
    pub denoised: Tensor<T>,
}

/// Iterates `x ← (λP(x) + μC)/(λ + μ)` from `x0` until `fp_iters` steps or
/// an ∞-norm step of at most `fp_tol`.
pub fn fixed_point_solve<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    c: &Tensor<T>,
    x0: &Tensor<T>,
    engine: &E,
    params: &RedParams,
) -> Result<FixedPointOutcome<T>> {
    fixed_point_solve_from(c, x0, None, engine, params)
}

/// As [`fixed_point_solve`], reusing a known `P(x0)`.
pub fn fixed_point_solve_from<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    c: &Tensor<T>,
    x0: &Tensor<T>,
    p0: Option<Tensor<T>>,
    engine: &E,
    params: &RedParams,
) -> Result<FixedPointOutcome<T>> {
    params.validate()?;
    c.same_shape(x0, "fixed_point_solve")?;
    let (lam, mu) = (T::lit(params.lambda), T::lit(params.mu));
    let denom = lam + mu;
    let (wl, wc) = (lam / denom, mu / denom);

    let mut x = x0.clone();
    let mut p = match p0 {
        Some(p) => {
            p.same_shape(x0, "fixed_point_solve")?;
            p
        }
        None => denoise_checked(engine, &x)?,
    };
    let mut residuals = Vec::new();
    let mut step_norms = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    for k in 0..params.fp_iters {
        let next = p.lincomb(wl, c, wc).map_err(|e| diverged(k, e))?;
        let diff = next.sub(&x)?;
        x = next;
        p = denoise_checked(engine, &x).map_err(|e| diverged(k, e))?;
        let r = x.sub(c)?.lincomb(mu, &x.sub(&p)?, lam).map_err(|e| diverged(k, e))?;
        let r = r.norm().as_f64();
        if let Some(&prev) = residuals.last() {
            streak = if r > prev { streak + 1 } else { 0 };
        }
        residuals.push(r);
        step_norms.push(diff.norm().as_f64());
        if streak >= DIVERGENCE_STREAK {
            return Err(Error::Divergence {
                iteration: k,
                reason: format!("stationarity residual grew {DIVERGENCE_STREAK} times in a row (now {r:.3e})"),
            });
        }
        if diff.norm_inf().as_f64() <= params.fp_tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPointOutcome {
        x,
        residuals,
        step_norms,
        converged,
        denoised: p,
    })
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            iteration,
            reason: format!("non-finite values in `{op}`"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{GaussianBlur, Identity, Scaled};

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn value_examples() {
        let x = t(&[1.0, 2.0]);
        assert_eq!(red_value(&x, &Identity).unwrap(), 0.0);
        assert_eq!(red_value(&x, &Scaled::zero()).unwrap(), 2.5);
    }

    #[test]
    fn params_validation() {
        assert!(RedParams::inner(-1.0, 1.0).validate().is_err());
        assert!(RedParams::inner(0.0, 0.0).validate().is_err());
        assert!(RedParams {
            fp_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RedParams::inner(0.0, 1.0).validate().is_ok());
    }

    #[test]
    fn general_gradient_of_identity_is_zero() {
        let x = t(&[0.3, -1.0, 2.0]);
        let g = red_grad_general(&x, &Identity, VjpFallback::Disabled).unwrap();
        assert!(g.norm_inf() == 0.0);
    }

    #[test]
    fn fixed_point_examples() {
        let zero = fixed_point_solve(
            &t(&[2.0, 4.0]),
            &t(&[0.0, 0.0]),
            &Scaled::zero(),
            &RedParams::standalone(1.0, 1.0),
        )
        .unwrap();
        assert_eq!(zero.x.data(), &[1.0, 2.0]);
        let from_c = fixed_point_solve(&t(&[0.7]), &t(&[0.7]), &Identity, &RedParams::standalone(3.0, 1.0)).unwrap();
        assert_eq!(from_c.x.data(), &[0.7]);
        assert!(from_c.converged && from_c.step_norms.len() == 1);
        // from elsewhere the error shrinks by λ/(λ+μ) per step
        let far = fixed_point_solve(&t(&[0.7]), &t(&[4.7]), &Identity, &RedParams::inner(3.0, 1.0)).unwrap();
        assert!((far.x.data()[0] - 3.7).abs() < 1e-12);
    }

    #[test]
    fn divergence_guard_trips() {
        let params = RedParams::standalone(1.0, 1.0);
        let err = fixed_point_solve(&t(&[1.0]), &t(&[1.0]), &Scaled { factor: 3.0 }, &params).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn blur_on_constant_has_zero_value() {
        let x = Tensor::<f64>::full(&[1, 6, 6], 0.4).unwrap();
        let v = red_value(&x, &GaussianBlur::new(1.0).unwrap()).unwrap();
        assert!(v.abs() < 1e-15);
    }
}
