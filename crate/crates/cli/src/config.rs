//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::Path;

use redip_core::admm::{AdmmConfig, ThetaOptimizer};
use redip_core::nets::DipTopology;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {detail}")]
    Value { line: usize, key: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(#[from] redip_core::Error),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything `denoise` needs besides paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub admm: AdmmConfig,
    pub blur_sigma: f64,
    pub median_radius: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            admm: AdmmConfig::default(),
            blur_sigma: 1.0,
            median_radius: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lambda",
    "mu",
    "outer_iters",
    "theta_steps_per_outer",
    "theta_step_size",
    "theta_optimizer",
    "seed",
    "fp_iters",
    "fp_tol",
    "log_every",
    "input_depth",
    "dip_widths",
    "early_stop",
    "blur_sigma",
    "median_radius",
];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                detail: format!("expected `key = value`, got `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if seen.insert(key.to_string(), line).is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value).map_err(|detail| ConfigError::Value {
                line,
                key: key.to_string(),
                detail,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
        }
        let a = &mut self.admm;
        match key {
            "lambda" => a.lambda = num(value)?,
            "mu" => a.mu = num(value)?,
            "outer_iters" => a.outer_iters = num(value)?,
            "theta_steps_per_outer" => a.theta_steps_per_outer = num(value)?,
            "theta_step_size" => a.theta_step_size = num(value)?,
            "theta_optimizer" => {
                a.theta_optimizer = ThetaOptimizer::parse(value)
                    .ok_or_else(|| format!("`{value}` is not plain_gd_backtracking or adaptive_moment"))?
            }
            "seed" => a.seed = num(value)?,
            "fp_iters" => a.fp_iters = num(value)?,
            "fp_tol" => a.fp_tol = num(value)?,
            "log_every" => a.log_every = num(value)?,
            "input_depth" => a.input_depth = num(value)?,
            "dip_widths" => {
                let widths = value
                    .split(',')
                    .map(|w| num::<usize>(w.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                a.dip_topology = DipTopology::UNet { widths };
            }
            "early_stop" => a.early_stop = num(value)?,
            "blur_sigma" => self.blur_sigma = num(value)?,
            "median_radius" => self.median_radius = num(value)?,
            _ => unreachable!("key list checked by caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.admm.validate()?;
        if let DipTopology::UNet { widths } = &self.admm.dip_topology {
            if widths.is_empty() || widths.contains(&0) {
                return Err(redip_core::Error::Topology("dip_widths must be positive".into()).into());
            }
        }
        if !(self.blur_sigma > 0.0) {
            return Err(redip_core::Error::InvalidArgument(format!(
                "blur_sigma must be positive, got {}",
                self.blur_sigma
            ))
            .into());
        }
        Ok(())
    }

    /// Every effective value, defaults included, in key order.
    pub fn echo(&self) -> BTreeMap<&'static str, serde_json::Value> {
        use serde_json::json;
        let a = &self.admm;
        let widths = match &a.dip_topology {
            DipTopology::UNet { widths } => json!(widths),
            DipTopology::SingleConv { kernel } => json!(format!("single-conv {kernel}")),
        };
        BTreeMap::from([
            ("lambda", json!(a.lambda)),
            ("mu", json!(a.mu)),
            ("outer_iters", json!(a.outer_iters)),
            ("theta_steps_per_outer", json!(a.theta_steps_per_outer)),
            ("theta_step_size", json!(a.theta_step_size)),
            ("theta_optimizer", json!(a.theta_optimizer.as_str())),
            ("seed", json!(a.seed)),
            ("fp_iters", json!(a.fp_iters)),
            ("fp_tol", json!(a.fp_tol)),
            ("log_every", json!(a.log_every)),
            ("input_depth", json!(a.input_depth)),
            ("dip_widths", widths),
            ("early_stop", json!(a.early_stop)),
            ("blur_sigma", json!(self.blur_sigma)),
            ("median_radius", json!(self.median_radius)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::parse("# run\nlambda = 0.25\n\nouter_iters=7 # short\ndip_widths = 8, 16\n").unwrap();
        assert_eq!(cfg.admm.lambda, 0.25);
        assert_eq!(cfg.admm.outer_iters, 7);
        assert_eq!(cfg.admm.mu, 0.5);
        assert_eq!(cfg.admm.dip_topology, DipTopology::UNet { widths: vec![8, 16] });
    }

    #[test]
    fn unknown_key_is_an_error() {
        assert!(matches!(
            RunConfig::parse("lamda = 1\n"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_and_bad_values() {
        assert!(matches!(
            RunConfig::parse("mu=1\nmu=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(RunConfig::parse("mu = abc"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("mu = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            RunConfig::parse("just words"),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn echo_covers_every_key() {
        let echo = RunConfig::default().echo();
        assert_eq!(echo.len(), KEYS.len());
        assert!(KEYS.iter().all(|k| echo.contains_key(k)));
    }
}
