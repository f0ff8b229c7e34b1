//! Bias-free residual UNet denoiser.
//!
//! Structure per scale: residual blocks `h + conv(relu(conv(h)))`, then a
//! 2x2 stride-2 convolution down. The decoder mirrors it with 2x2 stride-2
//! transposed convolutions, additive skips, and residual blocks. No layer
//! carries an additive constant, so `P(a x) = a P(x)` for every `a >= 0`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::weights::{self, NamedTensors};
use crate::ops::Padding;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Eager, Graph};
use crate::tensor::Tensor;

/// Plain-text topology descriptor (`key=value` lines, `#` comments).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrunetConfig {
    /// Image channels consumed (excluding the optional noise-level map).
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width per scale; the number of scales is `widths.len()`.
    pub widths: Vec<usize>,
    pub blocks_per_scale: usize,
    /// Append a constant noise-level channel to the input.
    pub noise_map: bool,
}

impl DrunetConfig {
    /// Reduced-scale default: widths 16/32/64/128, two blocks per scale.
    pub fn desk(channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            widths: vec![16, 32, 64, 128],
            blocks_per_scale: 2,
            noise_map: false,
        }
    }

    /// Full-width layout (64/128/256/512, four blocks per scale, noise map),
    /// for importing externally trained weights.
    pub fn full(channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            widths: vec![64, 128, 256, 512],
            blocks_per_scale: 4,
            noise_map: true,
        }
    }

    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    /// Spatial extents must be divisible by this factor.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales() - 1)
    }

    fn head_channels(&self) -> usize {
        self.in_channels + usize::from(self.noise_map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Topology("channel counts must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Topology("widths must be non-empty and positive".into()));
        }
        if self.blocks_per_scale == 0 {
            return Err(Error::Topology("blocks_per_scale must be >= 1".into()));
        }
        Ok(())
    }

    /// Layer names and kernel shapes in forward order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let w = &self.widths;
        let last = w.len() - 1;
        let mut out = vec![("head".to_string(), vec![w[0], self.head_channels(), 3, 3])];
        let block = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, width: usize| {
            for b in 0..self.blocks_per_scale {
                for c in 1..=2 {
                    out.push((format!("{prefix}.block{b}.conv{c}"), vec![width, width, 3, 3]));
                }
            }
        };
        for l in 0..last {
            block(&mut out, &format!("down{l}"), w[l]);
            out.push((format!("down{l}.sconv"), vec![w[l + 1], w[l], 2, 2]));
        }
        block(&mut out, "body", w[last]);
        for l in (0..last).rev() {
            out.push((format!("up{l}.tconv"), vec![w[l + 1], w[l], 2, 2]));
            block(&mut out, &format!("up{l}"), w[l]);
        }
        out.push(("tail".to_string(), vec![self.out_channels, w[0], 3, 3]));
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# bias-free residual UNet topology\n");
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "scales={}", self.scales());
        let _ = writeln!(s, "widths={}", widths.join(","));
        let _ = writeln!(s, "blocks_per_scale={}", self.blocks_per_scale);
        let _ = writeln!(s, "in_channels={}", self.in_channels);
        let _ = writeln!(s, "out_channels={}", self.out_channels);
        let _ = writeln!(s, "noise_map={}", self.noise_map);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut scales = None;
        let mut cfg = DrunetConfig::desk(3);
        let mut widths_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Topology(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Topology(format!("line {}: invalid {what} `{value}`", lineno + 1));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(key));
            match key {
                "scales" => scales = Some(int(value)?),
                "widths" => {
                    cfg.widths = value.split(',').map(|v| int(v.trim())).collect::<Result<_>>()?;
                    widths_seen = true;
                }
                "blocks_per_scale" => cfg.blocks_per_scale = int(value)?,
                "in_channels" => cfg.in_channels = int(value)?,
                "out_channels" => cfg.out_channels = int(value)?,
                "noise_map" => cfg.noise_map = value.parse().map_err(|_| bad("boolean"))?,
                _ => return Err(Error::Topology(format!("line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        if !widths_seen {
            return Err(Error::Topology("missing `widths`".into()));
        }
        if let Some(s) = scales {
            if s != cfg.widths.len() {
                return Err(Error::Topology(format!(
                    "scales={s} but {} widths given",
                    cfg.widths.len()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The pre-trained engine `P(·)`: a bias-free residual UNet.
#[derive(Debug, Clone)]
pub struct BiasFreeDenoiser<T> {
    config: DrunetConfig,
    params: Vec<Tensor<T>>,
    noise_level: T,
    injected_bias: Option<T>,
}

impl<T: Scalar> BiasFreeDenoiser<T> {
    pub fn from_params(config: DrunetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Topology(format!(
                "expected {} layers, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "denoiser weights",
                    format!("layer `{name}` expects {shape:?}, got {:?}", p.shape()),
                ));
            }
        }
        Ok(Self {
            config,
            params,
            noise_level: T::zero(),
            injected_bias: None,
        })
    }

    /// Kernels drawn from `Normal(0, 2 / fan_in)`.
    pub fn random(config: DrunetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = config
            .layout()
            .into_iter()
            .map(|(_, shape)| he_normal(rng, &shape))
            .collect::<Result<_>>()?;
        Self::from_params(config, params)
    }

    /// Deterministic desk-scale weights with a mirrored, non-negative layout.
    ///
    /// Every kernel is non-negative with a symmetric spatial profile; each
    /// residual block's second convolution is the adjoint of its first; the
    /// decoder at each scale reuses the encoder's blocks in reverse order;
    /// transposed convolutions share the strided convolutions' kernels; the
    /// tail is the adjoint of the head; body blocks are identical. On
    /// non-negative inputs every ReLU is active and the network equals a
    /// symmetric linear smoother, so its Jacobian is exactly symmetric.
    /// The overall gain is normalised so that an interior constant maps to
    /// itself.
    pub fn mirrored(config: DrunetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if config.in_channels != config.out_channels || config.noise_map {
            return Err(Error::Topology(
                "mirrored weights need in_channels == out_channels and no noise map".into(),
            ));
        }
        let profile3 = gaussian_profile(3, 1.0);
        let mut by_name: std::collections::HashMap<String, Tensor<f64>> = Default::default();
        let w = &config.widths;
        let last = w.len() - 1;

        let head = positive_kernel(rng, w[0], config.in_channels, &profile3, 1.0)?;
        by_name.insert("tail".into(), swap_io(&head)?);
        by_name.insert("head".into(), head);

        let branch_gain = 0.5;
        let mut encoder_blocks = Vec::new();
        for l in 0..last {
            let mut blocks = Vec::new();
            for b in 0..config.blocks_per_scale {
                let c1 = positive_kernel(rng, w[l], w[l], &profile3, branch_gain)?;
                let c2 = swap_io(&c1)?;
                by_name.insert(format!("down{l}.block{b}.conv1"), c1.clone());
                by_name.insert(format!("down{l}.block{b}.conv2"), c2.clone());
                blocks.push((c1, c2));
            }
            let flat = Tensor::full(&[2, 2], 1.0)?;
            let sconv = positive_kernel(rng, w[l + 1], w[l], &flat, 1.0)?;
            by_name.insert(format!("up{l}.tconv"), sconv.clone());
            by_name.insert(format!("down{l}.sconv"), sconv);
            encoder_blocks.push(blocks);
        }
        let c1 = positive_kernel(rng, w[last], w[last], &profile3, branch_gain)?;
        let c2 = swap_io(&c1)?;
        for b in 0..config.blocks_per_scale {
            by_name.insert(format!("body.block{b}.conv1"), c1.clone());
            by_name.insert(format!("body.block{b}.conv2"), c2.clone());
        }
        for (l, blocks) in encoder_blocks.iter().enumerate() {
            for (b, (c1, c2)) in blocks.iter().rev().enumerate() {
                by_name.insert(format!("up{l}.block{b}.conv1"), c1.clone());
                by_name.insert(format!("up{l}.block{b}.conv2"), c2.clone());
            }
        }

        let params: Vec<Tensor<f64>> = config
            .layout()
            .iter()
            .map(|(name, _)| by_name.remove(name).expect("every layer constructed"))
            .collect();
        let mut net = BiasFreeDenoiser::<f64>::from_params(config.clone(), params)?;

        // normalise the gain on an interior constant
        let side = 4 * config.size_multiple();
        let ones = Tensor::<f64>::ones(&[config.in_channels, side, side])?;
        let out = net.forward(&ones)?;
        let center = out.data()[side / 2 * side + side / 2];
        let s = 1.0 / center.sqrt();
        let n = net.params.len();
        net.params[0] = net.params[0].scale(s)?;
        net.params[n - 1] = net.params[n - 1].scale(s)?;

        let params = net
            .params
            .iter()
            .map(|p| p.cast::<f32>()?.cast::<T>())
            .collect::<Result<_>>()?;
        Self::from_params(config, params)
    }

    pub fn from_named(config: DrunetConfig, named: &NamedTensors) -> Result<Self> {
        config.validate()?;
        let params = config
            .layout()
            .iter()
            .map(|(name, _)| {
                named
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| Error::MissingLayer(name.clone()))
                    .and_then(|(_, t)| t.cast::<T>())
            })
            .collect::<Result<_>>()?;
        Self::from_params(config, params)
    }

    pub fn to_named(&self) -> Result<NamedTensors> {
        self.config
            .layout()
            .into_iter()
            .zip(&self.params)
            .map(|((name, _), p)| Ok((name, p.cast::<f32>()?)))
            .collect()
    }

    /// Loads `<path>` (weights) and its sibling `<path>.topo` (descriptor).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let topo = std::fs::read_to_string(topology_path(path))?;
        let config = DrunetConfig::parse(&topo)?;
        Self::from_named(config, &weights::load_weights(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        weights::save_weights(path, &self.to_named()?)?;
        std::fs::write(topology_path(path), self.config.to_text())?;
        Ok(())
    }

    pub fn config(&self) -> &DrunetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Value of the constant noise-level channel (when `noise_map` is set).
    pub fn with_noise_level(mut self, level: T) -> Self {
        self.noise_level = level;
        self
    }

    /// Negative control: adds the constant `bias` to every head activation,
    /// breaking bias-freedom.
    pub fn with_injected_bias(mut self, bias: T) -> Self {
        self.injected_bias = Some(bias);
        self
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_graph(&Eager, &self.params, x.clone())
    }

    /// Forward pass against any [`Graph`]; `params` follow [`DrunetConfig::layout`].
    pub fn forward_graph<G: Graph<T>>(&self, g: &G, params: &[G::Value], x: G::Value) -> Result<G::Value> {
        let cfg = &self.config;
        let shape = g.shape_of(&x)?;
        let (c, h, w) = match shape[..] {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("denoiser", format!("expected C x H x W, got {shape:?}"))),
        };
        if c != cfg.in_channels {
            return Err(Error::shape(
                "denoiser",
                format!("engine expects {} channels, got {c}", cfg.in_channels),
            ));
        }
        let m = cfg.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape("denoiser", format!("{h}x{w} not divisible by {m}")));
        }
        let mut it = params.iter();
        let mut next = || it.next().ok_or_else(|| Error::Topology("too few parameters".into()));

        let input = if cfg.noise_map {
            let map = g.constant(Tensor::full(&[1, h, w], self.noise_level)?);
            g.concat_channels(&x, &map)?
        } else {
            x
        };
        let mut hcur = g.conv2d(&input, next()?, 1, Padding::Same)?;
        if let Some(b) = self.injected_bias {
            let width = cfg.widths[0];
            hcur = g.add(&hcur, &g.constant(Tensor::full(&[width, h, w], b)?))?;
        }
        let last = cfg.scales() - 1;
        let mut skips = vec![hcur.clone()];
        for _ in 0..last {
            for _ in 0..cfg.blocks_per_scale {
                hcur = residual(g, &hcur, next()?, next()?)?;
            }
            hcur = g.conv2d(&hcur, next()?, 2, Padding::Valid)?;
            skips.push(hcur.clone());
        }
        for _ in 0..cfg.blocks_per_scale {
            hcur = residual(g, &hcur, next()?, next()?)?;
        }
        for l in (0..last).rev() {
            hcur = g.add(&hcur, &skips[l + 1])?;
            hcur = g.conv2d_transpose(&hcur, next()?, 2)?;
            for _ in 0..cfg.blocks_per_scale {
                hcur = residual(g, &hcur, next()?, next()?)?;
            }
        }
        hcur = g.add(&hcur, &skips[0])?;
        g.conv2d(&hcur, next()?, 1, Padding::Same)
    }
}

fn residual<T: Scalar, G: Graph<T>>(g: &G, x: &G::Value, k1: &G::Value, k2: &G::Value) -> Result<G::Value> {
    let r = g.conv2d(x, k1, 1, Padding::Same)?;
    let r = g.relu(&r)?;
    let r = g.conv2d(&r, k2, 1, Padding::Same)?;
    g.add(x, &r)
}

pub fn topology_path(weights: &Path) -> std::path::PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".topo");
    s.into()
}

/// Kernel with entries `Normal(0, 2 / fan_in)`, `fan_in = C k k`.
pub(crate) fn he_normal<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Result<Tensor<T>> {
    let fan_in: usize = shape[1..].iter().product();
    rng.normal(shape, (2.0 / fan_in as f64).sqrt())
}

fn gaussian_profile(k: usize, sigma: f64) -> Tensor<f64> {
    let r = (k / 2) as f64;
    let mut data = Vec::with_capacity(k * k);
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            data.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = data.iter().sum();
    Tensor::from_raw(vec![k, k], data.into_iter().map(|v| v / s).collect())
}

/// `O x C x k x k` kernel `a[o][c] * profile`, with positive channel mixing
/// `a` normalised so each output row sums to `gain`.
fn positive_kernel(rng: &mut Rng, o: usize, c: usize, profile: &Tensor<f64>, gain: f64) -> Result<Tensor<f64>> {
    let taps = profile.len();
    let psum = profile.sum();
    let mut data = Vec::with_capacity(o * c * taps);
    for _ in 0..o {
        let mix: Vec<f64> = (0..c).map(|_| 0.5 + rng.next_f64()).collect();
        let total: f64 = mix.iter().sum::<f64>() * psum;
        for a in mix {
            data.extend(profile.data().iter().map(|p| gain * a * p / total));
        }
    }
    Tensor::from_vec(&[o, c, profile.shape()[0], profile.shape()[1]], data)
}

/// Adjoint kernel of a same-padded convolution: `K'[c][o](d) = K[o][c](-d)`.
fn swap_io(k: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (o, c, kh, kw) = match *k.shape() {
        [o, c, kh, kw] => (o, c, kh, kw),
        _ => return Err(Error::shape("swap_io", "expected rank-4 kernel")),
    };
    let mut data = vec![0.0; k.len()];
    for oi in 0..o {
        for ci in 0..c {
            for y in 0..kh {
                for x in 0..kw {
                    let src = ((oi * c + ci) * kh + y) * kw + x;
                    let dst = ((ci * o + oi) * kh + (kh - 1 - y)) * kw + (kw - 1 - x);
                    data[dst] = k.data()[src];
                }
            }
        }
    }
    Tensor::from_vec(&[c, o, kh, kw], data)
}
