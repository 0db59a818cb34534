//! Desk-scale multimodal extreme multi-label retrieval.
//!
//! A small Siamese system: one tiny attention encoder embeds both queries
//! and labels built from structured prompts (text tokens, optional frozen
//! image vectors, an optional terminator), training pulls matched pairs
//! together with a triplet hinge over mined in-batch hard negatives, and
//! prediction is exact maximum-inner-product search over the label bank.
//! Everything is seeded and reduction orders are fixed, so runs are
//! bit-reproducible at any thread count.

#![forbid(unsafe_code)]

pub mod bytes;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod manifest;
pub mod metrics;
pub mod mining;
pub mod objective;
pub mod prompt;
pub mod rai;
pub mod retrieval;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
