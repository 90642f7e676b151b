//! Guide chapters compiled as doctests.
//!
//! The chapters live in `book/src` so mdbook can render them; including them
//! here lets `cargo test` run every listing against the current crate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/environments.md")]
pub mod environments {}
#[doc = include_str!("../../../book/src/forward-models.md")]
pub mod forward_models {}
#[doc = include_str!("../../../book/src/intrinsic-rewards.md")]
pub mod intrinsic_rewards {}
#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
