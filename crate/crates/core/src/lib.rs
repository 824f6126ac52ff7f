//! Hierarchical dialog policies that mix attribute clarification questions
//! with opportunistic active-learning queries for interactive item retrieval.

pub mod classifier;
pub mod corpus;
pub mod env;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod features;
pub mod grounding;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
