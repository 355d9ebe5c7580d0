//! Fusion head: classifies each pixel of a channel pair `F^k = (Ẑ_k, Ŷ_k)`
//! into one of `|C|` intensity classes and rebuilds the band by argmax.

use std::path::Path;

use plfm_nn::{softmax_channels, Adam, Conv2d, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{invalid, shape, PlfmError, Result};
use crate::image::{channel_pair, ClassVolume, FeatureMap, OpticalImage, Raster, OPTICAL_BANDS};
use crate::seed::{self, streams};

pub const CHECKPOINT_NAME: &str = "head";
/// Floor applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

pub fn quantize_value(v: f64, classes: usize) -> usize {
    let c = (v * classes as f64).floor();
    if c.is_nan() || c < 0.0 {
        0
    } else {
        (c as usize).min(classes - 1)
    }
}

/// Centre of class `c`'s interval.
pub fn dequantize(class: usize, classes: usize) -> f64 {
    (class as f64 + 0.5) / classes as f64
}

/// Integer classes in the same `(H, W, bands)` order as [`Raster`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassGrid {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub classes: usize,
    pub data: Vec<usize>,
}

impl ClassGrid {
    pub fn get(&self, x: usize, y: usize, band: usize) -> usize {
        self.data[(y * self.width + x) * self.bands + band]
    }

    /// Row-major class indices of one band.
    pub fn plane(&self, band: usize) -> Vec<usize> {
        self.data
            .iter()
            .skip(band)
            .step_by(self.bands)
            .copied()
            .collect()
    }

    pub fn dequantized(&self) -> Raster {
        Raster::from_fn(self.width, self.height, self.bands, |x, y, b| {
            dequantize(self.get(x, y, b), self.classes)
        })
    }
}

pub fn quantize_targets(img: &OpticalImage, classes: usize) -> Result<ClassGrid> {
    if classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {classes}")));
    }
    let r = &img.raster;
    Ok(ClassGrid {
        width: r.width(),
        height: r.height(),
        bands: r.channels(),
        classes,
        data: r
            .data()
            .iter()
            .map(|&v| quantize_value(v, classes))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub base_filters: usize,
    /// Pooling stages of the encoder.
    pub depth: usize,
    /// One network per channel pair instead of one shared across pairs.
    pub per_channel: bool,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes: 256,
            base_filters: 16,
            depth: 2,
            per_channel: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct HeadNet {
    stem: Conv2d,
    down: Vec<Conv2d>,
    up: Vec<Conv2d>,
    classifier: Conv2d,
}

impl HeadNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &HeadConfig) -> Self {
        let b = cfg.base_filters;
        let width = |level: usize| b << level;
        let stem = Conv2d::same(store, &format!("{name}.stem"), 2, b, 3);
        let down = (1..=cfg.depth)
            .map(|l| Conv2d::same(store, &format!("{name}.down{l}"), width(l - 1), width(l), 3))
            .collect();
        let up = (0..cfg.depth)
            .rev()
            .map(|l| {
                Conv2d::same(
                    store,
                    &format!("{name}.up{l}"),
                    width(l + 1) + width(l),
                    width(l),
                    3,
                )
            })
            .collect();
        // The classifier also sees the raw pair. It starts as a nearest-class
        // decoder of the pair mean m: logit_c = s·(q_c·m − q_c²/2) with q_c the
        // class centre, so training begins from the branches' average instead
        // of from uniform guesses. The learned features start switched off.
        // With s = |C|² neighbouring classes are a couple of logits apart, so
        // early optimiser noise on the feature weights cannot flip the argmax.
        let classifier = Conv2d::new(
            store,
            &format!("{name}.classifier"),
            b + 2,
            cfg.classes,
            1,
            1,
            0,
            true,
        );
        let n = cfg.classes;
        let sharpness = (n * n) as f64;
        let centre = |c: usize| 2.0 * dequantize(c, n) - 1.0;
        let w = store.get_mut(classifier.weight).data_mut();
        w.fill(0.0);
        for c in 0..n {
            w[c * (b + 2) + b] = sharpness * centre(c) / 2.0;
            w[c * (b + 2) + b + 1] = sharpness * centre(c) / 2.0;
        }
        let bias = store
            .get_mut(classifier.bias.expect("classifier bias"))
            .data_mut();
        for (c, v) in bias.iter_mut().enumerate() {
            *v = -sharpness * centre(c).powi(2) / 2.0;
        }
        Self {
            stem,
            down,
            up,
            classifier,
        }
    }

    fn logits(&self, g: &mut Graph, store: &ParamStore, pair: Var) -> Var {
        let x = g.affine(pair, 2.0, -1.0);
        let s = self.stem.forward(g, store, x);
        let mut h = g.relu(s);
        let mut skips = Vec::with_capacity(self.down.len());
        for conv in &self.down {
            skips.push(h);
            let p = g.max_pool2(h);
            let z = conv.forward(g, store, p);
            h = g.relu(z);
        }
        for conv in &self.up {
            let u = g.upsample_bilinear2(h);
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat_channels(&[u, skip]);
            let z = conv.forward(g, store, cat);
            h = g.relu(z);
        }
        let features = g.concat_channels(&[h, x]);
        self.classifier.forward(g, store, features)
    }
}

#[derive(Clone, Debug)]
pub struct HeadModel {
    pub config: HeadConfig,
    pub store: ParamStore,
    nets: Vec<HeadNet>,
}

impl HeadModel {
    pub fn new(config: HeadConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(invalid(format!(
                "need at least 2 classes, got {}",
                config.classes
            )));
        }
        if config.base_filters == 0 {
            return Err(invalid("head needs positive filters"));
        }
        let div = 1 << config.depth;
        if config.width % div != 0
            || config.height % div != 0
            || config.width == 0
            || config.height == 0
        {
            return Err(shape(format!(
                "{}x{} is not divisible by 2^{}",
                config.width, config.height, config.depth
            )));
        }
        let mut store = ParamStore::new(seed::derive(config.seed, streams::HEAD));
        let count = if config.per_channel { OPTICAL_BANDS } else { 1 };
        let nets = (0..count)
            .map(|k| HeadNet::new(&mut store, &format!("net{k}"), &config))
            .collect();
        Ok(Self {
            config,
            store,
            nets,
        })
    }

    /// Logits `[N, |C|, H, W]` for pairs of channel `k ∈ 1..=3`.
    pub fn logits(&self, g: &mut Graph, pair: Var, k: usize) -> Var {
        let net = if self.config.per_channel {
            &self.nets[k - 1]
        } else {
            &self.nets[0]
        };
        net.logits(g, &self.store, pair)
    }

    fn check_pair(&self, pair: &Raster) -> Result<()> {
        let want = (self.config.width, self.config.height, 2);
        if pair.dims() != want {
            return Err(shape(format!(
                "pair {:?} does not match head {:?}",
                pair.dims(),
                want
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, CHECKPOINT_NAME, &self.store, &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: HeadConfig = checkpoint::load_config(dir, CHECKPOINT_NAME)?;
        let mut model = Self::new(config)?;
        checkpoint::load_weights(dir, CHECKPOINT_NAME, &mut model.store)?;
        Ok(model)
    }
}

fn volume_from_logits(logits: &Tensor) -> ClassVolume {
    let probs = Raster::from_tensor(&softmax_channels(logits), 0);
    ClassVolume::new(probs).expect("head has at least two classes")
}

/// Class distribution of every pixel of `f_k`, the `k`-th channel pair.
pub fn head_forward(f_k: &Raster, model: &HeadModel, k: usize) -> Result<ClassVolume> {
    if !(1..=OPTICAL_BANDS).contains(&k) {
        return Err(invalid(format!("channel pair index {k} outside 1..=3")));
    }
    model.check_pair(f_k)?;
    let mut g = Graph::new();
    let x = g.input(f_k.to_tensor());
    let logits = model.logits(&mut g, x, k);
    Ok(volume_from_logits(g.value(logits)))
}

/// Mean over pixels of `−ln p(target)`, probabilities floored at
/// [`LOG_EPS`]. `targets` is row-major.
pub fn cross_entropy(m: &ClassVolume, targets: &[usize]) -> Result<f64> {
    let (w, h) = (m.width(), m.height());
    if targets.len() != w * h {
        return Err(shape(format!(
            "{} targets for {} pixels",
            targets.len(),
            w * h
        )));
    }
    let mut total = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let p = m.at(j % w, j / w);
        let pt = *p
            .get(t)
            .ok_or_else(|| invalid(format!("class {t} outside 0..{}", m.classes())))?;
        total -= pt.max(LOG_EPS).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Argmax class per pixel, ties going to the lowest index.
pub fn argmax_classes(m: &ClassVolume) -> Vec<usize> {
    let (w, h) = (m.width(), m.height());
    (0..w * h)
        .map(|j| {
            let p = m.at(j % w, j / w);
            (1..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
        })
        .collect()
}

/// Intensity band rebuilt from the argmax classes.
pub fn reconstruct_channel(m: &ClassVolume) -> Raster {
    let classes = argmax_classes(m);
    let data = classes
        .iter()
        .map(|&c| dequantize(c, m.classes()))
        .collect();
    Raster::new(m.width(), m.height(), 1, data).expect("one value per pixel")
}

/// Runs the head on all three pairs of `f` and stacks the bands.
pub fn fuse(f: &FeatureMap, model: &HeadModel) -> Result<OpticalImage> {
    let (w, h) = (f.raster().width(), f.raster().height());
    let mut planes = Vec::with_capacity(OPTICAL_BANDS);
    for k in 1..=OPTICAL_BANDS {
        let m = head_forward(&channel_pair(f, k)?, model, k)?;
        planes.push(reconstruct_channel(&m).into_data());
    }
    Ok(OpticalImage::unit(Raster::from_planes(w, h, &planes)?))
}

/// Fused embeddings and the quantized ground truth they should reproduce.
#[derive(Clone, Debug)]
pub struct HeadSample {
    pub features: FeatureMap,
    pub targets: ClassGrid,
}

impl HeadSample {
    pub fn new(
        z_hat: &OpticalImage,
        y_hat: &OpticalImage,
        truth: &OpticalImage,
        classes: usize,
    ) -> Result<Self> {
        if !truth.raster.same_dims(&z_hat.raster) {
            return Err(shape("ground truth differs in size from the embeddings"));
        }
        Ok(Self {
            features: crate::image::concat_embeddings(z_hat, y_hat)?,
            targets: quantize_targets(truth, classes)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadTrainConfig {
    pub lr: f64,
    /// Samples per step; each contributes all three channel pairs.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 16,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadEpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy of the epoch's batches, measured before each update.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadHistory {
    pub epochs: Vec<HeadEpochRecord>,
}

struct PairBatch {
    inputs: Tensor,
    targets: Vec<usize>,
}

/// Stacks pair `k` of every sample along the batch axis.
fn pair_batch(samples: &[&HeadSample], k: usize) -> Result<PairBatch> {
    let mut tensors = Vec::with_capacity(samples.len());
    let mut targets = Vec::new();
    for s in samples {
        tensors.push(channel_pair(&s.features, k)?.to_tensor());
        targets.extend(s.targets.plane(k - 1));
    }
    Ok(PairBatch {
        inputs: Tensor::concat_batch(&tensors.iter().collect::<Vec<_>>()),
        targets,
    })
}

fn check_sample(model: &HeadModel, s: &HeadSample) -> Result<()> {
    let c = &model.config;
    let t = &s.targets;
    if s.features.raster().width() != c.width || s.features.raster().height() != c.height {
        return Err(shape(format!(
            "sample does not match the {}x{} head",
            c.width, c.height
        )));
    }
    if (t.width, t.height, t.bands) != (c.width, c.height, OPTICAL_BANDS) || t.classes != c.classes
    {
        return Err(shape("targets do not match the head"));
    }
    Ok(())
}

/// Loss of one step: all three pairs of every sample in `batch`.
fn batch_loss(g: &mut Graph, model: &HeadModel, batch: &[&HeadSample]) -> Result<Var> {
    if model.config.per_channel {
        let mut terms = Vec::with_capacity(OPTICAL_BANDS);
        for k in 1..=OPTICAL_BANDS {
            let b = pair_batch(batch, k)?;
            let x = g.input(b.inputs);
            let z = model.logits(g, x, k);
            terms.push((
                g.softmax_cross_entropy(z, &b.targets, LOG_EPS),
                1.0 / OPTICAL_BANDS as f64,
            ));
        }
        Ok(g.weighted_sum(&terms))
    } else {
        let mut inputs = Vec::with_capacity(OPTICAL_BANDS);
        let mut targets = Vec::new();
        for k in 1..=OPTICAL_BANDS {
            let b = pair_batch(batch, k)?;
            inputs.push(b.inputs);
            targets.extend(b.targets);
        }
        let x = g.input(Tensor::concat_batch(&inputs.iter().collect::<Vec<_>>()));
        let z = model.logits(g, x, 1);
        Ok(g.softmax_cross_entropy(z, &targets, LOG_EPS))
    }
}

pub fn train_head(
    model: &mut HeadModel,
    data: &[HeadSample],
    cfg: &HeadTrainConfig,
    mut on_epoch: impl FnMut(&HeadEpochRecord),
) -> Result<HeadHistory> {
    if data.is_empty() {
        return Err(PlfmError::EmptyDataset("no head training samples".into()));
    }
    for s in data {
        check_sample(model, s)?;
    }
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = HeadHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(
            seed::derive(cfg.seed, streams::HEAD),
            epoch as u64,
        ));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&HeadSample> = chunk.iter().map(|&i| &data[i]).collect();
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, model, &batch)?;
            total += g.scalar(loss) * chunk.len() as f64;
            let grads = g.backward(loss);
            adam.step(&mut model.store, &grads);
        }
        let record = HeadEpochRecord {
            epoch,
            loss: total / data.len() as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

/// Fraction of pixels, over all samples and bands, whose argmax class equals
/// the target class.
pub fn pixel_accuracy(model: &HeadModel, data: &[HeadSample]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in data {
        check_sample(model, s)?;
        for k in 1..=OPTICAL_BANDS {
            let m = head_forward(&channel_pair(&s.features, k)?, model, k)?;
            let target = s.targets.plane(k - 1);
            hit += argmax_classes(&m)
                .iter()
                .zip(&target)
                .filter(|(a, b)| a == b)
                .count();
            total += target.len();
        }
    }
    Ok(hit as f64 / total as f64)
}
