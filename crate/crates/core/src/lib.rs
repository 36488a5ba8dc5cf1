//! Binary classifiers trained jointly with an annotator-agreement estimator.
//!
//! The classifier stream fits every available annotation (or a majority vote),
//! while the agreement stream regresses the per-sample fraction of positive
//! annotations. A learned agreement indicator shifts the classifier's logit
//! toward the class the annotators tend to agree on, and models are scored by
//! their agreement ratio against the annotator pool rather than accuracy
//! against a single ground truth.

pub mod agreement;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod seeds;
pub mod synth;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
