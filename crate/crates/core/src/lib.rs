//! Physics-guided generative modelling of DIC displacement fields.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`tensorcore`]), the displacement-field data model ([`fields`]),
//! differentiable strain kinematics ([`strain`]), the generator and
//! discriminator networks with their training loop ([`gan`]), and two
//! model-agnostic metrics: multi-scale sliced Wasserstein distance ([`swd`])
//! and the geometry score ([`gscore`]).

pub mod error;
pub mod fields;
pub mod gan;
pub mod gscore;
pub mod rng;
pub mod strain;
pub mod swd;
pub mod tensorcore;

pub use error::{Error, Result};
