//! Few-shot event detection with dynamic-memory prototypes.
//!
//! A mention is encoded by the trigger-identification pipeline in
//! [`ti_encoder`], whose sentence vectors feed the prototype classifier in
//! [`fewshot_ec`]. Both share the episodic memory in [`memory`].

pub mod corpus;
pub mod episodes;
pub mod error;
pub mod fewshot_ec;
pub mod harness;
pub mod memory;
pub mod model;
pub mod ti_encoder;

pub use error::{Error, Result};
