//! Dense 2-D tensors on a single-use tape with reverse-mode gradients.
//!
//! A [`Graph`] records operations as they are evaluated. Parameters live in a
//! [`ParamStore`] and are copied onto each graph as leaves; after
//! [`Graph::backward`] the per-parameter gradients feed [`Adam`].

pub mod adam;
pub mod checkpoint;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use element::Element;
pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{clip_global_norm, ParamId, ParamStore};
pub use tensor::Tensor;
