pub mod admm;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod ops;
pub mod red;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod testcard;
pub mod verify;

pub use error::{Error, Result};
pub use ops::{conv2d, conv2d_transpose, relu, Padding};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{Eager, Gradients, Graph, Tape, Var};
pub use tensor::{Tensor, Tensor32, Tensor64};
