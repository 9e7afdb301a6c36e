//! Facial landmark localization with a cascade of gradient-boosted
//! regression trees, plus the tooling around it: dataset handling, a
//! synthetic face corpus, hyper-parameter search, error statistics and
//! clinical facial metrics.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod regressor;
pub mod rng;
pub mod tuning;

pub use error::{Error, Result};
