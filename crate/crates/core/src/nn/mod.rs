//! Minimal differentiable-operator engine.
//!
//! A [`graph::Graph`] is a per-step tape: forward operators execute eagerly
//! and record enough to backpropagate exactly. Backward passes are themselves
//! recorded on the tape, so gradients of gradients (needed by the R1 penalty)
//! come out exact rather than approximated.
//!
//! Everything is generic over [`scalar::Scalar`] so training runs in single
//! precision while gradient verification runs in double precision.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod losses;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use params::{ParamStore, Session};
pub use scalar::Scalar;
pub use tensor::Tensor;
