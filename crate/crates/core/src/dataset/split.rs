//! Histogram-matched train/validation/test splitting at region granularity.
//!
//! Many random splits are drawn; each is scored by comparing cumulative
//! intensity histograms of images sampled from both sides, and the least
//! dissimilar split wins. The test set is then carved out of the training
//! remainder by the same procedure.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PlfmError, Result};
use crate::image::{RangeTag, Raster};
use crate::seed::{self, streams};

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub counts: Vec<f64>,
    pub cumulative: bool,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Running sum of a plain histogram.
    pub fn cumulate(&self) -> Histogram {
        if self.cumulative {
            return self.clone();
        }
        let mut acc = 0.0;
        Histogram {
            counts: self
                .counts
                .iter()
                .map(|c| {
                    acc += c;
                    acc
                })
                .collect(),
            cumulative: true,
        }
    }

    pub fn total(&self) -> f64 {
        if self.cumulative {
            self.counts.last().copied().unwrap_or(0.0)
        } else {
            self.counts.iter().sum()
        }
    }
}

/// Plain counts of all values of `r` in `bins` equal-width bins over `range`.
/// Values outside the range fall into the end bins.
pub fn bin_counts(r: &Raster, bins: usize, range: RangeTag) -> Vec<f64> {
    let (lo, _) = range.bounds();
    let width = range.width();
    let mut counts = vec![0.0; bins];
    for &v in r.data() {
        let b = ((v - lo) / width * bins as f64).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    counts
}

/// Pools every pixel value of `images` and returns the cumulative histogram.
pub fn cumulative_histogram(images: &[&Raster], bins: usize, range: RangeTag) -> Result<Histogram> {
    if images.is_empty() {
        return Err(PlfmError::EmptyDataset("no images to histogram".into()));
    }
    if bins < 2 {
        return Err(invalid("a histogram needs at least two bins"));
    }
    let mut counts = vec![0.0; bins];
    for img in images {
        for (acc, c) in counts.iter_mut().zip(bin_counts(img, bins, range)) {
            *acc += c;
        }
    }
    Ok(Histogram {
        counts,
        cumulative: false,
    }
    .cumulate())
}

fn check_pair(h_train: &Histogram, h_val: &Histogram) -> Result<()> {
    if h_train.bins() != h_val.bins() {
        return Err(invalid(format!(
            "histograms have {} and {} bins",
            h_train.bins(),
            h_val.bins()
        )));
    }
    if !h_train.cumulative || !h_val.cumulative {
        return Err(invalid("dissimilarity compares cumulative histograms"));
    }
    Ok(())
}

/// `[(1/N)·Σ|h_train/#bins − h_val/#bins|] / [(1/N)·Σ h_train/#bins]`, taken
/// literally. Not symmetric in its arguments.
pub fn dissimilarity(h_train: &Histogram, h_val: &Histogram, n: usize) -> Result<f64> {
    check_pair(h_train, h_val)?;
    let bins = h_train.bins() as f64;
    let n = n.max(1) as f64;
    let num: f64 = h_train
        .counts
        .iter()
        .zip(&h_val.counts)
        .map(|(t, v)| (t / bins - v / bins).abs())
        .sum::<f64>()
        / n;
    let den: f64 = h_train.counts.iter().map(|t| t / bins).sum::<f64>() / n;
    if den == 0.0 {
        return Err(PlfmError::Degenerate("empty training histogram".into()));
    }
    Ok(num / den)
}

/// Variant comparing the histograms as distributions: each is divided by its
/// total mass first, so unequal sample sizes do not register as dissimilarity.
pub fn dissimilarity_normalized(h_train: &Histogram, h_val: &Histogram) -> Result<f64> {
    check_pair(h_train, h_val)?;
    let (tt, tv) = (h_train.total(), h_val.total());
    if tt == 0.0 || tv == 0.0 {
        return Err(PlfmError::Degenerate("empty histogram".into()));
    }
    let scale = |h: &Histogram, t: f64| Histogram {
        counts: h.counts.iter().map(|c| c / t).collect(),
        cumulative: true,
    };
    dissimilarity(&scale(h_train, tt), &scale(h_val, tv), 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub iterations: usize,
    /// Images sampled per side when scoring a split.
    pub sample_size: usize,
    pub bins: usize,
    pub val_fraction: f64,
    /// Share of the training remainder moved to the test set.
    pub test_fraction: f64,
    pub normalized: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            sample_size: 150,
            bins: 20,
            val_fraction: 0.2,
            test_fraction: 0.1,
            normalized: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Score of the chosen train/validation split.
    pub dissimilarity: f64,
    /// Score of every train/validation iteration.
    pub trace: Vec<f64>,
    pub test_dissimilarity: f64,
    pub test_trace: Vec<f64>,
}

/// One image's contribution: its region and plain bin counts.
#[derive(Clone, Debug)]
pub struct SplitItem {
    pub roi_id: String,
    pub counts: Vec<f64>,
}

struct Stage {
    keep: Vec<String>,
    held: Vec<String>,
    best: f64,
    trace: Vec<f64>,
}

fn sampled_histogram(
    images: &[&Vec<f64>],
    n: usize,
    bins: usize,
    rng: &mut impl rand::Rng,
) -> Histogram {
    let mut counts = vec![0.0; bins];
    for i in index::sample(rng, images.len(), n) {
        for (acc, c) in counts.iter_mut().zip(images[i]) {
            *acc += c;
        }
    }
    Histogram {
        counts,
        cumulative: false,
    }
    .cumulate()
}

fn run_stage(
    rois: &[String],
    images: &BTreeMap<&str, Vec<&Vec<f64>>>,
    fraction: f64,
    cfg: &SplitConfig,
    root: u64,
) -> Result<Stage> {
    if rois.len() < 2 {
        return Err(invalid(format!(
            "{} region(s) cannot be split into two nonempty sets",
            rois.len()
        )));
    }
    let held_count = ((fraction * rois.len() as f64).round() as usize).clamp(1, rois.len() - 1);
    let mut best: Option<(f64, Vec<String>, Vec<String>)> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = seed::rng(root, it as u64);
        let mut order = rois.to_vec();
        order.shuffle(&mut rng);
        let (held, keep) = order.split_at(held_count);
        let pool = |ids: &[String]| -> Vec<&Vec<f64>> {
            ids.iter()
                .flat_map(|id| images[id.as_str()].iter().copied())
                .collect()
        };
        let (keep_imgs, held_imgs) = (pool(keep), pool(held));
        let n = cfg.sample_size.min(keep_imgs.len()).min(held_imgs.len());
        let h_keep = sampled_histogram(&keep_imgs, n, cfg.bins, &mut rng);
        let h_held = sampled_histogram(&held_imgs, n, cfg.bins, &mut rng);
        let d = if cfg.normalized {
            dissimilarity_normalized(&h_keep, &h_held)?
        } else {
            dissimilarity(&h_keep, &h_held, n)?
        };
        trace.push(d);
        if best.as_ref().is_none_or(|(b, _, _)| d < *b) {
            best = Some((d, keep.to_vec(), held.to_vec()));
        }
    }
    let (best, mut keep, mut held) =
        best.ok_or_else(|| invalid("split needs at least one iteration"))?;
    keep.sort();
    held.sort();
    Ok(Stage {
        keep,
        held,
        best,
        trace,
    })
}

/// Runs the search on precomputed per-image bin counts.
pub fn split_items(items: &[SplitItem], cfg: &SplitConfig) -> Result<SplitResult> {
    if cfg.bins < 2 || cfg.sample_size == 0 {
        return Err(invalid(
            "split needs at least two bins and a positive sample size",
        ));
    }
    if let Some(it) = items.iter().find(|it| it.counts.len() != cfg.bins) {
        return Err(invalid(format!(
            "{}: counts over {} bins",
            it.roi_id,
            it.counts.len()
        )));
    }
    let mut images: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
    for it in items {
        images
            .entry(it.roi_id.as_str())
            .or_default()
            .push(&it.counts);
    }
    let rois: Vec<String> = images.keys().map(|s| s.to_string()).collect();
    let first = run_stage(
        &rois,
        &images,
        cfg.val_fraction,
        cfg,
        seed::derive(cfg.seed, streams::SPLIT),
    )?;
    let second = run_stage(
        &first.keep,
        &images,
        cfg.test_fraction,
        cfg,
        seed::derive(cfg.seed, streams::TEST_SPLIT),
    )?;
    Ok(SplitResult {
        train_ids: second.keep,
        val_ids: first.held,
        test_ids: second.held,
        dissimilarity: first.best,
        trace: first.trace,
        test_dissimilarity: second.best,
        test_trace: second.trace,
    })
}
