//! Span-extraction objectives for extractive question answering: independent,
//! joint, compound, joint-conditional and shared-normalization losses with
//! analytic gradients, answer decoding and filtering, SQuAD-style metrics,
//! retrieval-based context construction, and the paired significance protocol.

pub mod cli;
pub mod data;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod optim;
pub mod similarity;
pub mod stats;

pub use error::{Error, Result};
