//! The two concrete networks and the on-disk weights container.

pub mod dip;
pub mod drunet;
pub mod weights;

pub use dip::{DipNetwork, DipTopology, DEFAULT_INPUT_DEPTH, INPUT_NOISE_SCALE};
pub use drunet::{BiasFreeDenoiser, DrunetConfig};
pub use weights::{load_weights, save_weights, NamedTensors};
