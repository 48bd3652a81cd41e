//! Sequence descriptors for condition-invariant visual place recognition.
//!
//! Per-frame feature vectors are composed into place descriptors by
//! grouping, a learned fusion layer or an LSTM, trained with a triplet
//! loss and matched by exhaustive nearest-neighbour search.

pub mod checkpoint;
pub mod cli;
pub mod composer;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod linalg;
pub mod place;
pub mod retrieval;
pub mod seqslam;
pub mod store;
pub mod synth;
pub mod train;

pub use composer::{Composer, ComposerKind, ComposerParams, FusionParams, LstmParams, LstmState, SequenceDescriptor};
pub use error::{Error, Result};
pub use place::{same_place, PlaceConvention, QuerySequence};
pub use retrieval::{build_index, query_nn, PlaceIndex};
pub use store::{load_feature_store, FeatureFrame, FeatureStore, Traversal};
pub use train::{train_composer, TrainConfig};
