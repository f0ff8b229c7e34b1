//! The un-trained encoder-decoder `U_Θ(z)`.

use crate::error::{Error, Result};
use crate::nets::drunet::he_normal;
use crate::ops::Padding;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Eager, Graph};
use crate::tensor::Tensor;

/// Default depth of the fixed noise input `z`.
pub const DEFAULT_INPUT_DEPTH: usize = 32;
/// Upper bound of the uniform distribution `z` is drawn from.
pub const INPUT_NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DipTopology {
    /// Bias-free UNet: two 3x3 convolutions per scale, stride-2 3x3
    /// convolutions down, 2x2 transposed convolutions up, channel-concat
    /// skips, ReLU after every layer but the 3x3 output convolution.
    UNet { widths: Vec<usize> },
    /// One linear convolution from `z` to the image; used for analytic checks.
    SingleConv { kernel: usize },
}

impl Default for DipTopology {
    fn default() -> Self {
        DipTopology::UNet {
            widths: vec![32, 64, 128],
        }
    }
}

impl DipTopology {
    pub fn size_multiple(&self) -> usize {
        match self {
            DipTopology::UNet { widths } => 1 << (widths.len().saturating_sub(1)),
            DipTopology::SingleConv { .. } => 1,
        }
    }

    fn layout(&self, depth: usize, out: usize) -> Result<Vec<(String, Vec<usize>)>> {
        match self {
            DipTopology::SingleConv { kernel } => {
                if kernel % 2 == 0 {
                    return Err(Error::Topology("single-conv kernel must be odd".into()));
                }
                Ok(vec![("out".into(), vec![out, depth, *kernel, *kernel])])
            }
            DipTopology::UNet { widths } => {
                if widths.is_empty() || widths.contains(&0) {
                    return Err(Error::Topology("DIP widths must be non-empty and positive".into()));
                }
                let mut l = vec![
                    ("enc0.conv1".to_string(), vec![widths[0], depth, 3, 3]),
                    ("enc0.conv2".to_string(), vec![widths[0], widths[0], 3, 3]),
                ];
                for s in 1..widths.len() {
                    l.push((format!("enc{s}.down"), vec![widths[s], widths[s - 1], 3, 3]));
                    l.push((format!("enc{s}.conv"), vec![widths[s], widths[s], 3, 3]));
                }
                for s in (0..widths.len() - 1).rev() {
                    l.push((format!("dec{s}.up"), vec![widths[s + 1], widths[s], 2, 2]));
                    l.push((format!("dec{s}.conv"), vec![widths[s], 2 * widths[s], 3, 3]));
                }
                l.push(("out".into(), vec![out, widths[0], 3, 3]));
                Ok(l)
            }
        }
    }
}

/// `U_Θ(z)`: kernels `Θ` plus the fixed input `z`.
#[derive(Debug, Clone)]
pub struct DipNetwork<T> {
    topology: DipTopology,
    image_shape: [usize; 3],
    params: Vec<Tensor<T>>,
    z: Tensor<T>,
}

impl<T: Scalar> DipNetwork<T> {
    /// `z ~ Uniform[0, 0.1)` with `depth` channels at the image's spatial
    /// size (drawn first); kernels `~ Normal(0, 2 / fan_in)` in layout order.
    pub fn init(rng: &mut Rng, image_shape: &[usize], depth: usize, topology: DipTopology) -> Result<Self> {
        let (c, h, w) = match *image_shape {
            [c, h, w] if c > 0 && h > 0 && w > 0 => (c, h, w),
            _ => return Err(Error::shape("dip_init", format!("invalid image shape {image_shape:?}"))),
        };
        if depth == 0 {
            return Err(Error::invalid("input depth must be positive"));
        }
        let m = topology.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape("dip_init", format!("{h}x{w} not divisible by {m}")));
        }
        let z = rng.uniform(&[depth, h, w], 0.0, INPUT_NOISE_SCALE)?;
        let params = topology
            .layout(depth, c)?
            .into_iter()
            .map(|(_, shape)| he_normal(rng, &shape))
            .collect::<Result<_>>()?;
        Ok(Self {
            topology,
            image_shape: [c, h, w],
            params,
            z,
        })
    }

    /// Replaces `Θ` (shapes must match the layout).
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape("dip params", "layout mismatch"));
        }
        self.params = params;
        Ok(())
    }

    pub fn topology(&self) -> &DipTopology {
        &self.topology
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn z(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.topology
            .layout(self.z.shape()[0], self.image_shape[0])
            .map(|l| l.into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// `U_Θ(z)`.
    pub fn forward(&self) -> Result<Tensor<T>> {
        self.forward_graph(&Eager, &self.params, self.z.clone())
    }

    pub fn forward_graph<G: Graph<T>>(&self, g: &G, params: &[G::Value], z: G::Value) -> Result<G::Value> {
        if params.len() != self.params.len() {
            return Err(Error::Topology("parameter count mismatch".into()));
        }
        let out = match &self.topology {
            DipTopology::SingleConv { .. } => g.conv2d(&z, &params[0], 1, Padding::Same)?,
            DipTopology::UNet { widths } => {
                let mut p = params.iter();
                let mut next = || p.next().expect("length checked");
                let conv_relu = |x: &G::Value, k: &G::Value, stride: usize| -> Result<G::Value> {
                    g.relu(&g.conv2d(x, k, stride, Padding::Same)?)
                };
                let mut h = conv_relu(&z, next(), 1)?;
                h = conv_relu(&h, next(), 1)?;
                let mut skips = vec![h.clone()];
                for _ in 1..widths.len() {
                    h = conv_relu(&h, next(), 2)?;
                    h = conv_relu(&h, next(), 1)?;
                    skips.push(h.clone());
                }
                for s in (0..widths.len() - 1).rev() {
                    h = g.relu(&g.conv2d_transpose(&h, next(), 2)?)?;
                    h = g.concat_channels(&h, &skips[s])?;
                    h = conv_relu(&h, next(), 1)?;
                }
                g.conv2d(&h, next(), 1, Padding::Same)?
            }
        };
        let shape = g.shape_of(&out)?;
        if shape != self.image_shape {
            return Err(Error::shape(
                "dip_forward",
                format!("output {shape:?} vs image {:?}", self.image_shape),
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_range() {
        let net = DipNetwork::<f32>::init(&mut Rng::new(0), &[3, 64, 64], 32, DipTopology::default()).unwrap();
        assert_eq!(net.z().shape(), &[32, 64, 64]);
        assert!(net.z().data().iter().all(|&v| (0.0..0.1).contains(&v)));
        assert_eq!(net.forward().unwrap().shape(), &[3, 64, 64]);
    }

    #[test]
    fn same_seed_same_network() {
        let a = DipNetwork::<f32>::init(&mut Rng::new(9), &[1, 16, 16], 8, DipTopology::default()).unwrap();
        let b = DipNetwork::<f32>::init(&mut Rng::new(9), &[1, 16, 16], 8, DipTopology::default()).unwrap();
        assert_eq!(a.z(), b.z());
        assert_eq!(a.params(), b.params());
        assert_eq!(a.forward().unwrap(), b.forward().unwrap());
        assert_eq!(a.forward().unwrap(), a.forward().unwrap());
    }

    #[test]
    fn zero_theta_gives_zero_output() {
        let mut net = DipNetwork::<f64>::init(&mut Rng::new(1), &[1, 8, 8], 4, DipTopology::default()).unwrap();
        let zeros = net.params().iter().map(|p| Tensor::zeros(p.shape()).unwrap()).collect();
        net.set_params(zeros).unwrap();
        assert!(net.forward().unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_conv_is_linear_in_theta() {
        let mut net =
            DipNetwork::<f64>::init(&mut Rng::new(2), &[1, 6, 6], 3, DipTopology::SingleConv { kernel: 3 }).unwrap();
        let y = net.forward().unwrap();
        let doubled = net.params().iter().map(|p| p.scale(2.0).unwrap()).collect();
        net.set_params(doubled).unwrap();
        let y2 = net.forward().unwrap();
        assert!(y2.max_abs_diff(&y.scale(2.0).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn indivisible_sizes_rejected() {
        assert!(DipNetwork::<f32>::init(&mut Rng::new(0), &[1, 30, 32], 4, DipTopology::default()).is_err());
        assert!(DipNetwork::<f32>::init(&mut Rng::new(0), &[1, 28, 32], 4, DipTopology::default()).is_ok());
    }

    #[test]
    fn shape_preserved_for_several_sizes() {
        for (h, w) in [(4, 4), (8, 12), (20, 16)] {
            let net = DipNetwork::<f32>::init(&mut Rng::new(3), &[3, h, w], 4, DipTopology::default()).unwrap();
            assert_eq!(net.forward().unwrap().shape(), &[3, h, w]);
        }
    }
}
