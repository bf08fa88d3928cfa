//! Two-level (node and semantic) attention over meta-path neighborhoods,
//! with hand-derived gradients of the pairwise ranking loss.

pub mod layers;
mod model;
mod params;

pub use model::{backward, embed_side, forward, ForwardCache, Neighborhoods, Pair, SideCache};
pub use params::{Gradients, ModelParams, PathParams, SemanticParams, SideParams};
