//! Proposal-free temporal moment localization.
//!
//! Given pre-extracted video features and a natural-language query, the
//! model predicts start/end distributions over feature positions. It is
//! trained with soft-label KL (or NLL) span losses plus an attention loss
//! that pushes query-conditioned attention inside the annotated segment,
//! and evaluated with temporal IoU metrics.

pub mod attention;
pub mod dataio;
pub mod diffcore;
mod error;
pub mod eval;
pub mod gradsuite;
pub mod gru;
pub mod localization;
pub mod model;
pub mod params;
pub mod sentenc;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use params::Parameters;
