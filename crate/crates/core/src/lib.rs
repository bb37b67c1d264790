//! Probing-based weight-space learning.
//!
//! A frozen network is represented by its responses to a set of probes; a
//! small MLP head maps those responses to an attribute of the network (the
//! class of the image an INR encodes, or the test accuracy of a CNN). Probes
//! are either learned directly, produced by a shared deep *linear* generator
//! from per-probe latent codes, or drawn from an unlearned synthetic source.

pub mod error;
pub mod experiment;
pub mod models;
pub mod predictors;
pub mod probes;
pub mod rng;
pub mod zoo;

pub use error::{Error, Result};
