//! Sparse representation-based full-reference image quality assessment.
//!
//! A dictionary of image structures is learned from the reference image
//! with K-SVD ([`ksvd`]). The highest-entropy windows of the reference and
//! the co-located windows of the distorted image are sparse-coded over that
//! dictionary ([`sparse`]), and the SPARQ index compares the codes
//! ([`metric`]). [`eval`] measures agreement of any objective score with
//! subjective ratings.

pub mod distort;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod ksvd;
pub mod linalg;
pub mod metric;
pub mod pipeline;
pub mod sparse;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalStats, LogisticFit, ScorePairs};
pub use imaging::{Anchor, EntropyMap, GrayImage, PatchMatrix};
pub use ksvd::{LearnConfig, TrainingReport};
pub use metric::{sparq_index, sparq_symmetric, PreparedReference, QualityResult, SparqParams};
pub use pipeline::{train_reference_dictionary, TrainConfig, TrainedDictionary};
pub use sparse::{Dictionary, SparseCode};
