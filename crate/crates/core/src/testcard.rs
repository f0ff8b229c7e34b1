//! Synthetic test cards with values in `[0, 1]`.
//!
//! Every card is a closed-form function of the pixel position; colour
//! variants shift the pattern phase per channel so channels differ.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Card {
    /// Linear ramp along the direction `angle` (radians).
    Gradient { angle: f64 },
    /// Alternating 0.2 / 0.8 squares of side `cell`.
    Checkerboard { cell: usize },
    /// `0.5 + 0.4 sin(2π(fx·x/w + fy·y/h) + phase)`.
    Sinusoid { fx: f64, fy: f64, phase: f64 },
    /// Concentric rings of `period` pixels around the centre.
    Rings { period: f64 },
    /// Ramp background, bright disc and dark bar: edges plus smooth areas.
    Composite,
}

impl Card {
    pub fn name(&self) -> String {
        match *self {
            Card::Gradient { angle } => format!("gradient-{:.0}deg", angle.to_degrees()),
            Card::Checkerboard { cell } => format!("checker-{cell}"),
            Card::Sinusoid { fx, fy, .. } => format!("sine-{fx}x{fy}"),
            Card::Rings { period } => format!("rings-{period}"),
            Card::Composite => "composite".into(),
        }
    }

    fn value(&self, y: usize, x: usize, h: usize, w: usize, ch: usize) -> f64 {
        let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        let shift = ch as f64 * 2.0 * PI / 3.0;
        match *self {
            Card::Gradient { angle } => {
                let (s, c) = angle.sin_cos();
                // projection of [0,1]^2 onto the direction, rescaled to [0.05, 0.95]
                let lo = c.min(0.0) + s.min(0.0);
                let hi = c.max(0.0) + s.max(0.0);
                let t = (u * c + v * s - lo) / (hi - lo);
                let t = if ch % 2 == 1 { 1.0 - t } else { t };
                0.05 + 0.9 * t
            }
            Card::Checkerboard { cell } => {
                let on = (x / cell + y / cell + ch) % 2 == 0;
                if on {
                    0.8
                } else {
                    0.2
                }
            }
            Card::Sinusoid { fx, fy, phase } => 0.5 + 0.4 * (2.0 * PI * (fx * u + fy * v) + phase + shift).sin(),
            Card::Rings { period } => {
                let dx = x as f64 + 0.5 - w as f64 / 2.0;
                let dy = y as f64 + 0.5 - h as f64 / 2.0;
                0.5 + 0.4 * (2.0 * PI * (dx * dx + dy * dy).sqrt() / period + shift).cos()
            }
            Card::Composite => {
                let mut val = 0.2 + 0.5 * u;
                let (dx, dy) = (u - 0.35, v - 0.4);
                if dx * dx + dy * dy < 0.04 {
                    val = 0.9 - 0.1 * ch as f64;
                }
                if (0.65..0.8).contains(&u) && (0.15..0.85).contains(&v) {
                    val = 0.1 + 0.05 * ch as f64;
                }
                val
            }
        }
    }

    pub fn render<T: Scalar>(&self, channels: usize, height: usize, width: usize) -> Result<Tensor<T>> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("card extents must be positive"));
        }
        if let Card::Checkerboard { cell: 0 } = self {
            return Err(Error::invalid("checkerboard cell must be positive"));
        }
        let mut data = Vec::with_capacity(channels * height * width);
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(T::lit(self.value(y, x, height, width, ch).clamp(0.0, 1.0)));
                }
            }
        }
        Tensor::from_vec(&[channels, height, width], data)
    }
}

/// The twelve cards shipped with the repository, in a fixed order.
pub fn standard_cards() -> Vec<Card> {
    vec![
        Card::Gradient { angle: 0.0 },
        Card::Gradient { angle: PI / 2.0 },
        Card::Gradient { angle: PI / 4.0 },
        Card::Checkerboard { cell: 2 },
        Card::Checkerboard { cell: 4 },
        Card::Checkerboard { cell: 8 },
        Card::Sinusoid {
            fx: 2.0,
            fy: 0.0,
            phase: 0.0,
        },
        Card::Sinusoid {
            fx: 0.0,
            fy: 3.0,
            phase: 0.5,
        },
        Card::Sinusoid {
            fx: 3.0,
            fy: 2.0,
            phase: 1.0,
        },
        Card::Rings { period: 6.0 },
        Card::Rings { period: 11.0 },
        Card::Composite,
    ]
}
