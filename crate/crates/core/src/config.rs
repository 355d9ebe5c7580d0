//! Run configuration: one TOML document holding every tunable of the
//! pipeline. Unknown keys are rejected. Values resolve as command-line flag,
//! then file, then built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgan::{CganLossConfig, CganTrainConfig, DiscriminatorConfig, GeneratorConfig};
use crate::convlstm::{ConvLstmConfig, ConvLstmTrainConfig, HuberConfig};
use crate::dataset::{SceneConfig, SplitConfig};
use crate::error::{invalid, PlfmError, Result};
use crate::head::{HeadConfig, HeadTrainConfig};
use crate::metrics::{EvalConfig, MetricOptions};
use crate::seed::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            output: "output".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub rois: usize,
    pub coverage_min: f64,
    pub coverage_max: f64,
    pub thickness: f64,
    pub drift: f64,
    pub looks: u32,
    pub feature_scale: f64,
    pub split_iterations: usize,
    pub split_sample_size: usize,
    pub split_bins: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub normalized_dissimilarity: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let scene = SceneConfig::default();
        let split = SplitConfig::default();
        Self {
            rois: 16,
            coverage_min: scene.coverage_min,
            coverage_max: scene.coverage_max,
            thickness: scene.thickness,
            drift: scene.drift,
            looks: scene.looks,
            feature_scale: scene.feature_scale,
            split_iterations: split.iterations,
            split_sample_size: split.sample_size,
            split_bins: split.bins,
            val_fraction: split.val_fraction,
            test_fraction: split.test_fraction,
            normalized_dissimilarity: split.normalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvLstmSection {
    pub seq_len: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub peepholes: bool,
    pub shared_peephole: bool,
    pub batch_norm: bool,
    pub pooling: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stopping_patience: usize,
    pub bn_momentum: f64,
}

impl Default for ConvLstmSection {
    fn default() -> Self {
        let m = ConvLstmConfig::default();
        let t = ConvLstmTrainConfig::default();
        Self {
            seq_len: m.seq_len,
            hidden: m.hidden,
            kernel: m.kernel,
            peepholes: m.peepholes,
            shared_peephole: m.shared_peephole,
            batch_norm: m.batch_norm,
            pooling: m.pooling,
            lr: t.lr,
            batch_size: t.huber.batch_size,
            huber_delta: t.huber.delta,
            max_epochs: t.max_epochs,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            early_stopping_patience: t.early_stopping_patience,
            bn_momentum: t.bn_momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CganSection {
    pub generator_filters: usize,
    pub depth: Option<usize>,
    pub skip: bool,
    pub dropout: f64,
    pub discriminator_filters: usize,
    pub patch: Option<usize>,
    pub gamma_sim: f64,
    pub gamma_real: f64,
    pub lambda_l1: f64,
    pub adversarial: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub looks: u32,
}

impl Default for CganSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        let l = CganLossConfig::default();
        let t = CganTrainConfig::default();
        Self {
            generator_filters: g.base_filters,
            depth: g.depth,
            skip: g.skip,
            dropout: g.dropout,
            discriminator_filters: d.base_filters,
            patch: d.patch,
            gamma_sim: l.gamma_sim,
            gamma_real: l.gamma_real,
            lambda_l1: l.lambda_l1,
            adversarial: l.adversarial,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            batch_size: t.batch_size,
            epochs: 200,
            looks: t.looks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    pub base_filters: usize,
    pub depth: usize,
    pub per_channel: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for HeadSection {
    fn default() -> Self {
        let m = HeadConfig::default();
        let t = HeadTrainConfig::default();
        Self {
            base_filters: m.base_filters,
            depth: m.depth,
            per_channel: m.per_channel,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Shift-search radius; absent disables the search.
    pub csc_radius: Option<usize>,
    pub sam_degrees: bool,
    pub white_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            csc_radius: Some(2),
            sam_degrees: false,
            white_threshold: crate::evaluation::WHITE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every module draws from a stream derived from it.
    pub seed: u64,
    /// Square image side in pixels.
    pub size: usize,
    /// Intensity classes of the fusion head.
    pub classes: usize,
    pub paths: Paths,
    pub dataset: DatasetSection,
    pub convlstm: ConvLstmSection,
    pub cgan: CganSection,
    pub head: HeadSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 256,
            classes: 256,
            paths: Paths::default(),
            dataset: DatasetSection::default(),
            convlstm: ConvLstmSection::default(),
            cgan: CganSection::default(),
            head: HeadSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub classes: Option<usize>,
    pub csc_radius: Option<usize>,
    pub degrees: bool,
    pub max_epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(PlfmError::io(path))?;
        toml::from_str(&text).map_err(|e| PlfmError::format(path, e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// File (if any) with `overrides` applied on top.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.size {
            self.size = v;
        }
        if let Some(v) = o.classes {
            self.classes = v;
        }
        if let Some(v) = o.csc_radius {
            self.eval.csc_radius = Some(v);
        }
        if o.degrees {
            self.eval.sam_degrees = true;
        }
        if let Some(v) = o.max_epochs {
            self.convlstm.max_epochs = v;
            self.cgan.epochs = v;
            self.head.epochs = v;
        }
    }

    fn stream(&self, tag: u64) -> u64 {
        seed::derive(self.seed, tag)
    }

    pub fn scene(&self) -> SceneConfig {
        let d = &self.dataset;
        SceneConfig {
            size: self.size,
            coverage_min: d.coverage_min,
            coverage_max: d.coverage_max,
            thickness: d.thickness,
            drift: d.drift,
            looks: d.looks,
            feature_scale: d.feature_scale,
        }
    }

    pub fn split(&self) -> SplitConfig {
        let d = &self.dataset;
        SplitConfig {
            iterations: d.split_iterations,
            sample_size: d.split_sample_size,
            bins: d.split_bins,
            val_fraction: d.val_fraction,
            test_fraction: d.test_fraction,
            normalized: d.normalized_dissimilarity,
            seed: self.seed,
        }
    }

    pub fn convlstm_model(&self) -> ConvLstmConfig {
        let c = &self.convlstm;
        ConvLstmConfig {
            width: self.size,
            height: self.size,
            seq_len: c.seq_len,
            hidden: c.hidden.clone(),
            kernel: c.kernel,
            peepholes: c.peepholes,
            shared_peephole: c.shared_peephole,
            batch_norm: c.batch_norm,
            pooling: c.pooling,
            seed: self.stream(streams::CONVLSTM),
        }
    }

    pub fn convlstm_train(&self) -> ConvLstmTrainConfig {
        let c = &self.convlstm;
        ConvLstmTrainConfig {
            lr: c.lr,
            huber: HuberConfig {
                delta: c.huber_delta,
                batch_size: c.batch_size,
            },
            max_epochs: c.max_epochs,
            plateau_factor: c.plateau_factor,
            plateau_patience: c.plateau_patience,
            early_stopping_patience: c.early_stopping_patience,
            bn_momentum: c.bn_momentum,
            seed: self.stream(streams::CONVLSTM),
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        let c = &self.cgan;
        GeneratorConfig {
            width: self.size,
            height: self.size,
            depth: c.depth,
            base_filters: c.generator_filters,
            skip: c.skip,
            dropout: c.dropout,
            seed: self.stream(streams::CGAN),
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        let c = &self.cgan;
        DiscriminatorConfig {
            width: self.size,
            height: self.size,
            base_filters: c.discriminator_filters,
            patch: c.patch,
            seed: self.stream(streams::CGAN),
        }
    }

    /// Training schedule for `pairs` samples: `epochs` passes of
    /// `ceil(pairs / batch)` steps.
    pub fn cgan_train(&self, pairs: usize) -> CganTrainConfig {
        let c = &self.cgan;
        let batch = c.batch_size.max(1);
        CganTrainConfig {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            batch_size: batch,
            steps: c.epochs * pairs.div_ceil(batch),
            loss: CganLossConfig {
                gamma_sim: c.gamma_sim,
                gamma_real: c.gamma_real,
                lambda_l1: c.lambda_l1,
                adversarial: c.adversarial,
            },
            looks: c.looks,
            seed: self.stream(streams::CGAN),
        }
    }

    pub fn head_model(&self) -> HeadConfig {
        let h = &self.head;
        HeadConfig {
            width: self.size,
            height: self.size,
            classes: self.classes,
            base_filters: h.base_filters,
            depth: h.depth,
            per_channel: h.per_channel,
            seed: self.stream(streams::HEAD),
        }
    }

    pub fn head_train(&self) -> HeadTrainConfig {
        let h = &self.head;
        HeadTrainConfig {
            lr: h.lr,
            batch_size: h.batch_size,
            epochs: h.epochs,
            seed: self.stream(streams::HEAD),
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            csc_radius: self.eval.csc_radius,
            options: MetricOptions {
                sam_degrees: self.eval.sam_degrees,
                ..MetricOptions::default()
            },
        }
    }
}
