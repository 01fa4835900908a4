//! Learns an invertible residual-network coordinate change that aligns
//! the vector fields of two dynamical systems, and scores the alignment
//! with a bidirectional orbital similarity metric.
//!
//! The pieces: a tape autodiff engine whose tangent channel carries
//! directional derivatives as first-class values ([`tape`]), the
//! Lipschitz-capped invertible network ([`iresnet`]), a library of
//! vector fields ([`dynsys`]), phase-space samplers ([`sampling`]), the
//! orbital similarity loss and metric ([`loss`]), the bidirectional
//! trainer ([`train`]), and a trajectory-CCA baseline ([`svcca`]).

pub mod dynsys;
pub mod error;
pub mod iresnet;
pub mod linalg;
pub mod loss;
pub mod sampling;
pub mod svcca;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use tensor::Tensor;
