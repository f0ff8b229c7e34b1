//! Three-block ADMM over the DIP weights `Θ`, the image `x` and the scaled
//! multiplier `u`:
//!
//! ```text
//! Θ ← argmin ||U_Θ(z) − y||² + μ||x − u − U_Θ(z)||²     (a few gradient steps)
//! x ← fixed point of x = (λP(x) + μC)/(λ + μ),  C = U_Θ(z) + u
//! u ← u − x + U_Θ(z)
//! ```

use crate::engine::DenoisingEngine;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nets::{DipNetwork, DipTopology, DEFAULT_INPUT_DEPTH};
use crate::red::{fixed_point_solve_from, FixedPointOutcome, RedParams};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Eager, Graph, Tape};
use crate::tensor::Tensor;

pub const PLATEAU_WINDOW: usize = 25;
pub const PLATEAU_TOL: f64 = 1e-4;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Sufficient-decrease fraction for the backtracking line search.
const ARMIJO: f64 = 0.25;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaOptimizer {
    /// Steepest descent with Armijo backtracking; the loss never increases.
    PlainGdBacktracking,
    #[default]
    AdaptiveMoment,
}

impl ThetaOptimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThetaOptimizer::PlainGdBacktracking => "plain_gd_backtracking",
            ThetaOptimizer::AdaptiveMoment => "adaptive_moment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain_gd_backtracking" => Some(ThetaOptimizer::PlainGdBacktracking),
            "adaptive_moment" => Some(ThetaOptimizer::AdaptiveMoment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub lambda: f64,
    pub mu: f64,
    pub outer_iters: usize,
    pub theta_steps_per_outer: usize,
    /// Adam learning rate, or the initial trial step for backtracking.
    /// At 0.01 the first Adam step on a freshly initialised UNet overshoots
    /// and most ReLUs never recover, hence the smaller default.
    pub theta_step_size: f64,
    pub theta_optimizer: ThetaOptimizer,
    pub seed: u64,
    pub fp_iters: usize,
    pub fp_tol: f64,
    /// Observer cadence for [`run_with`]; 0 disables it.
    pub log_every: usize,
    pub input_depth: usize,
    pub dip_topology: DipTopology,
    /// Stop once the stationarity residual plateaus.
    pub early_stop: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            mu: 0.5,
            outer_iters: 300,
            theta_steps_per_outer: 1,
            theta_step_size: 0.003,
            theta_optimizer: ThetaOptimizer::AdaptiveMoment,
            seed: 0,
            fp_iters: 1,
            fp_tol: 1e-6,
            log_every: 0,
            input_depth: DEFAULT_INPUT_DEPTH,
            dip_topology: DipTopology::default(),
            early_stop: false,
        }
    }
}

impl AdmmConfig {
    pub fn red_params(&self) -> RedParams {
        RedParams {
            lambda: self.lambda,
            mu: self.mu,
            fp_iters: self.fp_iters,
            fp_tol: self.fp_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.red_params().validate()?;
        if self.theta_steps_per_outer == 0 {
            return Err(Error::invalid("theta_steps_per_outer must be >= 1"));
        }
        if !(self.theta_step_size > 0.0) || !self.theta_step_size.is_finite() {
            return Err(Error::invalid(format!(
                "theta_step_size must be positive, got {}",
                self.theta_step_size
            )));
        }
        if self.input_depth == 0 {
            return Err(Error::invalid("input_depth must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the run history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Θ objective at the last inner step.
    pub loss: f64,
    /// `||μ(x − C) + λ(x − P(x))||₂` after the x update.
    pub residual: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone)]
enum OptimizerState<T> {
    Adam {
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        t: i32,
    },
    Backtracking {
        step: f64,
    },
}

/// Inner-loop losses of one [`AdmmState::theta_update`]. For backtracking
/// the first entry is the starting loss and each later one follows an
/// accepted step; for Adam each entry is the loss before a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaReport {
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdmmState<T> {
    net: DipNetwork<T>,
    x: Tensor<T>,
    u: Tensor<T>,
    dip_out: Tensor<T>,
    /// `P(x)` for the current `x`, when known.
    denoised: Option<Tensor<T>>,
    k: usize,
    history: Vec<IterationRecord>,
    optimizer: OptimizerState<T>,
}

/// `u − x + U`, evaluated as `u + (U − x)`.
pub fn multiplier_step<T: Scalar>(u: &Tensor<T>, x: &Tensor<T>, dip_out: &Tensor<T>) -> Result<Tensor<T>> {
    u.add(&dip_out.sub(x)?)
}

impl<T: Scalar> AdmmState<T> {
    /// `u = 0`, `x = y`, and a freshly seeded DIP network.
    pub fn new(y: &Tensor<T>, cfg: &AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        let net = DipNetwork::init(
            &mut Rng::new(cfg.seed),
            y.shape(),
            cfg.input_depth,
            cfg.dip_topology.clone(),
        )?;
        Self::with_network(y, net, cfg)
    }

    pub fn with_network(y: &Tensor<T>, net: DipNetwork<T>, cfg: &AdmmConfig) -> Result<Self> {
        let dip_out = net.forward()?;
        dip_out.same_shape(y, "admm init")?;
        let optimizer = match cfg.theta_optimizer {
            ThetaOptimizer::AdaptiveMoment => OptimizerState::Adam {
                m: zeros_like(net.params())?,
                v: zeros_like(net.params())?,
                t: 0,
            },
            ThetaOptimizer::PlainGdBacktracking => OptimizerState::Backtracking {
                step: cfg.theta_step_size,
            },
        };
        Ok(Self {
            x: y.clone(),
            u: Tensor::zeros(y.shape())?,
            dip_out,
            denoised: None,
            net,
            k: 0,
            history: Vec::new(),
            optimizer,
        })
    }

    pub fn net(&self) -> &DipNetwork<T> {
        &self.net
    }

    pub fn x(&self) -> &Tensor<T> {
        &self.x
    }

    pub fn u(&self) -> &Tensor<T> {
        &self.u
    }

    /// `U_Θ(z)` at the current `Θ`.
    pub fn dip_output(&self) -> &Tensor<T> {
        &self.dip_out
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    /// Objective of the Θ step and its gradient at the current `Θ`.
    pub fn theta_loss_and_grad(&self, y: &Tensor<T>, mu: f64) -> Result<(f64, Vec<Tensor<T>>)> {
        let target = self.x.sub(&self.u)?;
        let (loss, grads, _) = self.eval_grad(self.net.params(), y, &target, T::lit(mu))?;
        Ok((loss, grads))
    }

    fn eval_grad(
        &self,
        params: &[Tensor<T>],
        y: &Tensor<T>,
        target: &Tensor<T>,
        mu: T,
    ) -> Result<(f64, Vec<Tensor<T>>, Tensor<T>)> {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let z = tape.constant(self.net.z().clone());
        let out = self.net.forward_graph(&tape, &vars, z)?;
        let fit = tape.sum_sq(&tape.sub(&out, &tape.constant(y.clone()))?)?;
        let split = tape.sum_sq(&tape.sub(&tape.constant(target.clone()), &out)?)?;
        let loss = tape.add(&fit, &tape.scale(&split, mu)?)?;
        let value = tape.value(&loss)?.data()[0].as_f64();
        let dip_out = tape.value(&out)?;
        let mut grads = tape.backward(&loss)?;
        let grads = vars.iter().map(|v| grads.take(v)).collect::<Result<_>>()?;
        Ok((value, grads, dip_out))
    }

    fn eval_loss(&self, params: &[Tensor<T>], y: &Tensor<T>, target: &Tensor<T>, mu: T) -> Result<(f64, Tensor<T>)> {
        let out = self.net.forward_graph(&Eager, params, self.net.z().clone())?;
        let fit = out.sub(y)?.norm_sq();
        let split = target.sub(&out)?.norm_sq();
        Ok(((fit + mu * split).as_f64(), out))
    }

    /// `theta_steps_per_outer` optimiser steps on the Θ objective.
    pub fn theta_update(&mut self, y: &Tensor<T>, cfg: &AdmmConfig) -> Result<ThetaReport> {
        y.same_shape(&self.x, "theta_update")?;
        let target = self.x.sub(&self.u)?;
        let mu = T::lit(cfg.mu);
        let mut params = self.net.params().to_vec();
        let mut losses = Vec::with_capacity(cfg.theta_steps_per_outer + 1);
        let mut optimizer = std::mem::replace(&mut self.optimizer, OptimizerState::Backtracking { step: 0.0 });
        let result = (|| -> Result<()> {
            for _ in 0..cfg.theta_steps_per_outer {
                let (loss, grads, out) = self.eval_grad(&params, y, &target, mu)?;
                check_finite(loss)?;
                match &mut optimizer {
                    OptimizerState::Adam { m, v, t } => {
                        losses.push(loss);
                        *t += 1;
                        let lr = cfg.theta_step_size;
                        let bc1 = 1.0 - ADAM_BETA1.powi(*t);
                        let bc2 = 1.0 - ADAM_BETA2.powi(*t);
                        for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                            *m = m.lincomb(T::lit(ADAM_BETA1), g, T::lit(1.0 - ADAM_BETA1))?;
                            *v = v.zip_map(g, "adam", |v, g| {
                                T::lit(ADAM_BETA2) * v + T::lit(1.0 - ADAM_BETA2) * g * g
                            })?;
                            let step = m.zip_map(v, "adam", |m, v| {
                                T::lit(lr) * (m / T::lit(bc1)) / ((v / T::lit(bc2)).sqrt() + T::lit(ADAM_EPS))
                            })?;
                            *p = p.sub(&step)?;
                        }
                    }
                    OptimizerState::Backtracking { step } => {
                        if losses.is_empty() {
                            losses.push(loss);
                        }
                        let gn2: f64 = grads.iter().map(|g| g.norm_sq().as_f64()).sum();
                        let mut alpha = *step;
                        let mut accepted = None;
                        if gn2 > 0.0 {
                            for _ in 0..MAX_HALVINGS {
                                let trial = params
                                    .iter()
                                    .zip(&grads)
                                    .map(|(p, g)| p.lincomb(T::one(), g, T::lit(-alpha)))
                                    .collect::<Result<Vec<_>>>();
                                // a step so long it overflows is simply too long
                                if let Ok(trial) = trial {
                                    if let Ok((l, out)) = self.eval_loss(&trial, y, &target, mu) {
                                        if l.is_finite() && l <= loss - ARMIJO * alpha * gn2 {
                                            accepted = Some((trial, l, out));
                                            break;
                                        }
                                    }
                                }
                                alpha *= 0.5;
                            }
                        }
                        match accepted {
                            Some((trial, l, out)) => {
                                params = trial;
                                losses.push(l);
                                self.dip_out = out;
                                *step = 2.0 * alpha;
                            }
                            None => {
                                losses.push(loss);
                                self.dip_out = out;
                            }
                        }
                    }
                }
            }
            Ok(())
        })();
        self.optimizer = optimizer;
        result?;
        if matches!(self.optimizer, OptimizerState::Adam { .. }) {
            self.dip_out = self.net.forward_graph(&Eager, &params, self.net.z().clone())?;
        }
        self.net.set_params(params)?;
        Ok(ThetaReport { losses })
    }

    /// `C = U_Θ(z) + u`, then the fixed-point x step warm-started at `x`.
    pub fn x_update<E: DenoisingEngine<T> + ?Sized>(
        &mut self,
        engine: &E,
        cfg: &AdmmConfig,
    ) -> Result<FixedPointOutcome<T>> {
        let c = self.dip_out.add(&self.u)?;
        let outcome = fixed_point_solve_from(&c, &self.x, self.denoised.take(), engine, &cfg.red_params())?;
        self.x = outcome.x.clone();
        self.denoised = Some(outcome.denoised.clone());
        Ok(outcome)
    }

    pub fn u_update(&mut self) -> Result<()> {
        self.u = multiplier_step(&self.u, &self.x, &self.dip_out)?;
        Ok(())
    }

    /// One outer iteration; appends to the history.
    pub fn step<E: DenoisingEngine<T> + ?Sized>(
        &mut self,
        y: &Tensor<T>,
        engine: &E,
        cfg: &AdmmConfig,
        reference: Option<&Tensor<T>>,
    ) -> Result<IterationRecord> {
        let theta = self.theta_update(y, cfg)?;
        let fp = self.x_update(engine, cfg)?;
        self.u_update()?;
        let (psnr, ssim) = match reference {
            Some(r) => (Some(metrics::psnr(&self.x, r, 1.0)?), metrics::ssim(&self.x, r).ok()),
            None => (None, None),
        };
        let record = IterationRecord {
            iteration: self.k,
            loss: *theta.losses.last().expect("at least one inner step"),
            residual: *fp.residuals.last().expect("at least one fixed-point step"),
            psnr,
            ssim,
        };
        self.k += 1;
        self.history.push(record);
        Ok(record)
    }

    fn plateaued(&self) -> bool {
        let h = &self.history;
        if h.len() <= PLATEAU_WINDOW {
            return false;
        }
        let old = h[h.len() - 1 - PLATEAU_WINDOW].residual;
        let new = h[h.len() - 1].residual;
        old > 0.0 && (old - new) / old < PLATEAU_TOL
    }
}

fn zeros_like<T: Scalar>(ts: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    ts.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn check_finite(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: "theta loss" })
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome<T> {
    /// The restored image `x`.
    pub x: Tensor<T>,
    pub dip_output: Tensor<T>,
    pub u: Tensor<T>,
    pub history: Vec<IterationRecord>,
    pub stopped_early: bool,
}

/// A failed run, carrying the history recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("ADMM aborted at iteration {iteration}: {source}")]
pub struct AdmmFailure {
    pub iteration: usize,
    #[source]
    pub source: Error,
    pub history: Vec<IterationRecord>,
}

pub fn run<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    y: &Tensor<T>,
    engine: &E,
    cfg: &AdmmConfig,
    reference: Option<&Tensor<T>>,
) -> std::result::Result<AdmmOutcome<T>, AdmmFailure> {
    run_with(y, engine, cfg, reference, |_| {})
}

/// [`run`], calling `observer` every `cfg.log_every` iterations.
pub fn run_with<T: Scalar, E: DenoisingEngine<T> + ?Sized>(
    y: &Tensor<T>,
    engine: &E,
    cfg: &AdmmConfig,
    reference: Option<&Tensor<T>>,
    mut observer: impl FnMut(&IterationRecord),
) -> std::result::Result<AdmmOutcome<T>, AdmmFailure> {
    let fail = |iteration, source, history| AdmmFailure {
        iteration,
        source,
        history,
    };
    if let Some(r) = reference {
        r.same_shape(y, "admm reference").map_err(|e| fail(0, e, Vec::new()))?;
    }
    let mut state = AdmmState::new(y, cfg).map_err(|e| fail(0, e, Vec::new()))?;
    let mut stopped_early = false;
    for k in 0..cfg.outer_iters {
        match state.step(y, engine, cfg, reference) {
            Ok(rec) => {
                if cfg.log_every > 0 && (k + 1) % cfg.log_every == 0 {
                    observer(&rec);
                }
            }
            Err(e) => return Err(fail(k, e, state.history)),
        }
        if cfg.early_stop && state.plateaued() {
            stopped_early = true;
            break;
        }
    }
    Ok(AdmmOutcome {
        x: state.x,
        dip_output: state.dip_out,
        u: state.u,
        history: state.history,
        stopped_early,
    })
}
