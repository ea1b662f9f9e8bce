//! Home location estimation from weather-bearing messages.
//!
//! Each message is classified as posted on a rainy or a dry day by a linear
//! SVM over binary word features. A user's home is the station whose observed
//! daily rain history disagrees least with those predictions.
//!
//! The crate also carries two local-word baselines, Precision@k evaluation
//! with a correct-distance threshold, and a generator of synthetic worlds
//! for end-to-end checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod features;
pub mod geo;
pub mod lexicon;
pub mod output;
pub mod pipeline;
pub mod svm;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
pub use geo::{GeoPoint, Station, StationId, StationIndex};
