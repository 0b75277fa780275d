//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every training step. Forward values are
//! computed eagerly as ops are recorded; [`Graph::backward`] then walks the
//! tape in reverse and adds parameter gradients into a [`ParamStore`].
//! Gradients accumulate, so callers zero them between steps with
//! [`ParamStore::zero_grads`].
//!
//! ReLU uses subgradient 0 at exactly 0. The clip op uses derivative 1
//! strictly inside `(-mu, mu)` and 0 elsewhere.

mod graph;
mod kernels;
mod params;
mod tensor;

pub use graph::{Graph, OpKind, Var};
pub use params::ParamStore;
pub use tensor::Tensor;

/// Clears every gradient in `params`.
pub fn zero_grads(params: &mut ParamStore) {
    params.zero_grads();
}
