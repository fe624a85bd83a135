//! SLIC superpixels and the candidate line network traced from them.

mod network;
mod slic;

pub use network::{extract_network, imported_likelihoods, LineNetwork, NetworkEdge, NetworkError};
pub use slic::{slic_segment, target_clusters, LabelGrid, SegParams, SegmentationError};
