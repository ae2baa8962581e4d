//! Numeric core for 3D semantic scene-graph prediction.
//!
//! Everything here is pure computation over in-memory values and needs only
//! `alloc`: tensors and the gradient tape, scene geometry and the synthetic
//! scene generator, the contrastive object encoder, the relationship
//! encoder, the gated message-passing network, the training loops, and the
//! evaluation and diagnostic suite. File formats and the command line live
//! in the `ssg` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod math;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod relation;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use params::ParameterStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub mod scene;
pub mod synth;
