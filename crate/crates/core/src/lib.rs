//! Numeric substrate for the PISTM surrogate toolkit: dense tensors, matrix
//! products, 2-D convolutions, a fixed-op reverse-mode compute graph,
//! Cholesky solves, the Adam optimizer and the `PSTM` tensor file format.

pub mod conv;
pub mod error;
pub mod field;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod tensor;
#[cfg(feature = "testing")]
pub mod testing;

pub use error::{CoreError, Result};
pub use field::{FieldSource, FlowFieldSequence};
pub use graph::{ComputeGraph, Gradients, NodeId};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
