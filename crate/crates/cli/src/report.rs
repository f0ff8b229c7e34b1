//! JSON run reports. Every document carries `schema_version`.

use std::collections::BTreeMap;
use std::path::Path;

use redip_core::admm::IterationRecord;
use redip_core::metrics::MetricReport;
use redip_core::verify::{Aggregate, RedCertificate};
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Finite values as numbers, `+∞` as `"inf"`, `−∞` as `"-inf"`, NaN as null.
pub fn real(v: f64) -> Value {
    if v.is_nan() {
        Value::Null
    } else if v == f64::INFINITY {
        Value::from("inf")
    } else if v == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        json!(v)
    }
}

pub fn metrics_json(m: &MetricReport) -> Value {
    json!({ "mse": real(m.mse), "psnr": real(m.psnr), "ssim": real(m.ssim) })
}

pub fn history_json(h: &[IterationRecord]) -> Value {
    Value::Array(
        h.iter()
            .map(|r| {
                json!({
                    "iteration": r.iteration,
                    "loss": real(r.loss),
                    "residual": real(r.residual),
                    "psnr": r.psnr.map(real),
                    "ssim": r.ssim.map(real),
                })
            })
            .collect(),
    )
}

#[derive(Debug, Serialize)]
pub struct ImageInfo {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
}

#[derive(Debug, Serialize)]
pub struct EngineInfo {
    pub kind: String,
    pub name: String,
    pub weights: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct DenoiseReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub input: String,
    pub output: String,
    pub reference: Option<String>,
    pub engine: EngineInfo,
    pub config: BTreeMap<&'static str, Value>,
    pub seed: u64,
    pub image: ImageInfo,
    pub executed_iterations: usize,
    pub stopped_early: bool,
    /// Per-iteration metrics are taken over the padded domain.
    pub history: Value,
    pub noisy_metrics: Option<Value>,
    pub final_metrics: Option<Value>,
    pub certificate: Option<String>,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
}

fn aggregate(a: &Aggregate) -> Value {
    json!({
        "mean": a.mean().map(real),
        "max": a.max().map(real),
        "errors": a.errors,
    })
}

pub fn certificate_json(c: &RedCertificate) -> Value {
    let s = &c.settings;
    let t = &s.thresholds;
    json!({
        "engine": c.engine,
        "patches": c.patches,
        "patch_len": c.patch_len,
        "settings": {
            "epsilon": s.epsilon,
            "rho": s.rho,
            "seed": s.seed,
            "probes": s.probes,
            "jacobian_cap": s.cap,
            "vjp_fallback": format!("{:?}", s.fallback),
        },
        "thresholds": {
            "differentiability": t.differentiability,
            "homogeneity_mse": t.homogeneity_mse,
            "nem": t.nem,
            "collapse": t.collapse,
        },
        "differentiability": {
            "mismatch": aggregate(&c.differentiability),
            "step": s.rho,
            "analytic_vjp": c.analytic_vjp,
        },
        "homogeneity": {
            "epsilon": s.epsilon,
            "ssim": aggregate(&c.homogeneity_ssim),
            "mse": aggregate(&c.homogeneity_mse),
        },
        "jacobian_symmetry": {
            "nem": aggregate(&c.nem),
            "patch_len": c.patch_len,
            "rho": s.rho,
        },
        "local_homogeneity": aggregate(&c.local_homogeneity),
        "gradient_collapse": { "max_relative_gap": aggregate(&c.collapse) },
        "verdicts": {
            "differentiability": c.verdicts.differentiability,
            "homogeneity": c.verdicts.homogeneity,
            "symmetry": c.verdicts.symmetry,
            "collapse": c.verdicts.collapse,
            "all": c.verdicts.all(),
        },
    })
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
