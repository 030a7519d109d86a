//! Normalizing-flow dictionary models.
//!
//! A [`FlowModel`] maps data rows `x` to latent rows `z` through a fixed
//! stack of invertible layers. Both directions are exact; the forward pass
//! reports `log|det ∂z/∂x|` and the inverse pass `log|det ∂x/∂z|`. Reverse-mode
//! gradients are written by hand per layer: [`FlowModel::backward`] gives
//! parameter and input gradients of the forward map (training), and
//! [`FlowModel::inverse_backward`] gives latent-code gradients of the inverse
//! map (decomposition).

mod layers;
mod mlp;
mod model;

pub use layers::{ActNorm, AffineCoupling, Layer, LuMixing, Permutation, SCALE_BOUND};
pub use mlp::{Activation, Dense, Mlp};
pub use model::{gaussian_nll, FlowArchitecture, FlowKind, FlowModel, ForwardTrace, InverseTrace, LossParts};
