//! Cooperative multi-agent value factorization with pluggable Bellman
//! projection weights.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff, Adam, checkpoints
//! - [`env`]: the one-shot matrix game and the Predator-Prey grid world
//! - [`factor`]: agent networks, the hypernetwork-conditioned monotonic mixer,
//!   the unrestricted critic and Boltzmann/greedy action selection
//! - [`weighting`]: the projection-weight schemes, selected by name
//! - [`train`]: episode replay, TD(λ) targets and the training loop
//! - [`oracle`]: exact enumeration checks on tiny MDPs and one-shot games
//! - [`experiment`]: configuration, suites, run directories and exports

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod experiment;
pub mod factor;
pub mod oracle;
pub mod tensor;
pub mod train;
pub mod weighting;
