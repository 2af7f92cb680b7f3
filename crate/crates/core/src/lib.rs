//! Toy-scale implementations of alignment-oriented RL and inference-time
//! algorithms: clipped policy gradient with KL drift, length-conditioned
//! advantages, multi-channel rewards with mock verifiers, Lagrangian
//! constrained search training, prefix-value guided decoding and
//! edit tracking for chain-of-thought corrections.

pub mod advantage;
pub mod cpgd;
pub mod deliberative;
pub mod edit;
pub mod error;
pub mod harness;
pub mod policy;
pub mod pvm;
pub mod reward;
pub mod seed;
pub mod tasks;

pub use error::{Error, Result};
