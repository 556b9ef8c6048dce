//! Minimal CPU tensor engine: dense `f32` tensors, a tape-based autodiff
//! [`Graph`], the layers the agent needs, and Adam.

mod conv;
pub mod error;
pub mod graph;
mod linalg;
pub mod nn;
pub mod optim;
pub mod param;
pub mod tensor;

pub use conv::ConvGeometry;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Reduction, SampleGrid, Var};
pub use nn::{Conv2d, LayerNorm, Linear, Mlp};
pub use optim::{Adam, AdamConfig, Moments};
pub use param::{scoped, scoped_mut, Module, Param, ParamId};
pub use tensor::Tensor;
