//! Search space definition and the weight-sharing supernet.
//!
//! The space has four dimensions: per-stage depth, per-layer dilation and
//! spatial resolution (searched jointly as one choice), and the output
//! channel count of each of the two convolutions inside every operator
//! candidate. Each choice is a softmax-like [`ArchParamGroup`] whose
//! probabilities are `σ(θ_i) / Σ_j σ(θ_j)` over its active candidates.

mod cardinality;
mod config;
mod groups;
mod supernet;

pub use cardinality::{cardinality_log10, enumeration_count, headline_cardinality_log10};
pub use config::{SpaceConfig, StageSpec};
pub use groups::{ArchParamGroup, ArchParams, GroupOwner, Level, LEVELS};
pub use supernet::{
    build_supernet, make_channel_masks, supernet_forward, ConvRef, GroupMix, LayerRef,
    MixtureWeights, OpRef, ParamOwner, SuperNet,
};
