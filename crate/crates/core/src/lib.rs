//! Open-vocabulary region classification by intra-modal matching.
//!
//! Reference features for each category are pooled from generated images
//! under their foreground masks; test regions are pooled the same way from
//! mask proposals and classified by comparing Plackett–Luce ranking
//! distributions over their most similar references.

pub mod ablation;
pub mod error;
pub mod eval;
pub mod interchange;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod reference;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorKind};
pub use matching::{classify_naive, classify_region, Classification, MatchConfig, Matcher};
pub use model::{CategoryReference, ReferenceSet, Region, RegionSet};
pub use tensor::{AttentionStack, FeatureMap, LabelMap, SoftMask, Tensor};
