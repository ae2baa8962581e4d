//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod dumps;
pub mod factorization;
pub mod gradients;
pub mod losses;
pub mod oracle;
pub mod pipeline;
pub mod switches;
