//! Synthetic paired SAR/optical time series, the on-disk corpus layout and the
//! histogram-matched split.

pub mod index;
pub mod split;
pub mod synth;

pub use index::{
    load_index, write_index, write_series, DatasetIndex, IndexEntry, RoiFrames, SplitLabel,
};
pub use split::{
    cumulative_histogram, dissimilarity, dissimilarity_normalized, split_items, Histogram,
    SplitConfig, SplitItem, SplitResult,
};
pub use synth::{apply_clouds, simulate_sar, synth_scene, RoiSeries, SceneConfig, MONTHS};

use crate::error::Result;

/// Loads every clean frame's histogram counts and runs the split search.
pub fn split_dataset(index: &DatasetIndex, cfg: &SplitConfig) -> Result<SplitResult> {
    split_items(&index::split_items(index, cfg.bins)?, cfg)
}
