//! Participation-inequality-aware fake news detection.
//!
//! Users are split into lurkers, engagers and contributors by their average
//! daily activity. Interactions from the quiet groups are then up-weighted,
//! either by rescaling every edge of a news item in the user-news matrix or by
//! scaling each sample's cross-entropy term during training.
//!
//! Pipeline: [`corpus`] → [`participation`] → [`weighting`] + [`encode`] →
//! [`model`] → [`eval`]. [`synth`] produces controlled corpora with a planted
//! lurker signal.

pub mod config;
pub mod corpus;
pub mod encode;
pub mod error;
pub mod eval;
pub mod model;
pub mod par;
pub mod participation;
pub mod synth;
pub mod weighting;

pub use error::{Error, Result};
pub use par::Execution;
