//! Reference preprocessing and per-image dictionary training.

use crate::error::Result;
use crate::imaging::{downsample, downsample_factor, extract_training_patches, GrayImage};
use crate::ksvd::{learn, LearnConfig, TrainingReport};
use crate::sparse::Dictionary;

/// Downsamples by the viewing-distance factor of `image` itself.
pub fn preprocess(image: &GrayImage) -> Result<(GrayImage, usize)> {
    let factor = downsample_factor(image);
    Ok((downsample(image, factor)?, factor))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learn: LearnConfig,
    /// Number of random training patches `k`.
    pub train_patches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learn: LearnConfig::default(),
            train_patches: 3000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDictionary {
    pub dictionary: Dictionary,
    pub report: TrainingReport,
    pub patches_used: usize,
    /// The reference held fewer informative patches than requested.
    pub short: bool,
}

/// Learns the dictionary for a (not yet preprocessed) reference image.
pub fn train_reference_dictionary(reference: &GrayImage, config: &TrainConfig) -> Result<TrainedDictionary> {
    let (image, _) = preprocess(reference)?;
    let sample = extract_training_patches(&image, config.learn.patch_side, config.train_patches, config.learn.seed)?;
    let (dictionary, report) = learn(&sample.patches, &config.learn)?;
    Ok(TrainedDictionary {
        dictionary,
        report,
        patches_used: sample.patches.count(),
        short: sample.is_short(),
    })
}
