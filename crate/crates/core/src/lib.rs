//! Boundary delineation toolkit: superpixel line networks, per-line
//! features, a random-forest boundary classifier, least-cost-path
//! delineation and line-based accuracy assessment.

pub mod classifier;
pub mod delineation;
pub mod features;
pub mod formats;
pub mod geo;
pub mod segmentation;
pub mod evaluation;
pub mod session;
pub mod synthetic;
