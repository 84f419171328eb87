//! Single-process simulator of federated averaging over a population of
//! clients with heterogeneous humor preferences.
//!
//! All clients share the same corpus of edited news headlines, but each
//! client derives its own binary humorous/non-humorous labels by
//! thresholding the crowd funniness rating at a personal preference value
//! `alpha`. Local training scales predicted class probabilities by the
//! inverse of each client's empirical class priors (raised to a per-client
//! exponent `beta`); federated inference rescales by multiplying with the
//! same priors. Evaluation reports per-client and population macro
//! precision/recall/F1.
//!
//! Modules follow the pipeline: [`data`] ingests the headline CSVs,
//! [`labeling`] simulates the client population, [`features`] and [`model`]
//! implement the hashed n-gram linear softmax classifier with the
//! prior-scaled loss, [`federation`] runs the averaging loop, [`evaluation`]
//! scores models, and [`experiments`] wires everything into the CLI-facing
//! sweep / strategy-comparison / baseline runs.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod federation;
pub mod labeling;
pub mod model;
pub(crate) mod seeding;

pub use error::{Error, Result};
