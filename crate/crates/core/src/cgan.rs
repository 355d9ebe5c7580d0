//! SAR-to-optical branch: a U-Net generator and two PatchGAN discriminators,
//! one judging pairs built from real SAR and one judging pairs built from
//! speckled grayscale renderings of the optical ground truth.
//!
//! Networks see both modalities mapped to `[-1, 1]`; the generator's public
//! output is back in the unit range.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use plfm_nn::{dropout, Adam, Conv2d, ConvTranspose2d, Graph, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::simulate_sar;
use crate::error::{invalid, shape, PlfmError, Result};
use crate::image::{OpticalImage, Raster, SarImage, OPTICAL_BANDS, SAR_BANDS};
use crate::seed::{self, streams};

pub const GENERATOR_NAME: &str = "generator";
pub const DISCRIMINATOR_SIM_NAME: &str = "discriminator_sim";
pub const DISCRIMINATOR_REAL_NAME: &str = "discriminator_real";

const LEAK: f64 = 0.2;
/// Decoder stages (from the bottleneck outwards) that receive dropout noise.
const NOISY_STAGES: usize = 3;

/// Encoder depth for a square side: 3 at 32 px, 4 at 64 px, 5 from 128 px.
pub fn default_depth(size: usize) -> usize {
    let log2 = usize::BITS - 1 - size.max(1).leading_zeros();
    (log2 as usize).saturating_sub(2).clamp(1, 5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    /// Strided encoder stages; derived from the image size when absent.
    pub depth: Option<usize>,
    pub base_filters: usize,
    pub skip: bool,
    /// Dropout rate of the noisy decoder stages in training mode.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            depth: None,
            base_filters: 64,
            skip: true,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn resolved_depth(&self) -> usize {
        self.depth
            .unwrap_or_else(|| default_depth(self.width.min(self.height)))
    }
}

fn filters(base: usize, level: usize) -> usize {
    base * (1 << level.min(3))
}

#[derive(Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub store: ParamStore,
    encoder: Vec<Conv2d>,
    decoder: Vec<ConvTranspose2d>,
    noise_calls: AtomicU64,
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            noise_calls: AtomicU64::new(self.noise_calls.load(Ordering::Relaxed)),
        }
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        let depth = config.resolved_depth();
        if depth == 0 || config.base_filters == 0 {
            return Err(invalid("generator needs positive depth and filters"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(invalid(format!(
                "dropout rate {} outside [0, 1)",
                config.dropout
            )));
        }
        let div = 1 << depth;
        if config.width % div != 0
            || config.height % div != 0
            || config.width == 0
            || config.height == 0
        {
            return Err(shape(format!(
                "{}x{} is not divisible by 2^{depth}",
                config.width, config.height
            )));
        }
        let mut store = ParamStore::new(seed::derive(config.seed, streams::CGAN));
        let base = config.base_filters;
        let encoder = (0..depth)
            .map(|i| {
                let cin = if i == 0 {
                    SAR_BANDS
                } else {
                    filters(base, i - 1)
                };
                Conv2d::new(
                    &mut store,
                    &format!("enc{i}"),
                    cin,
                    filters(base, i),
                    4,
                    2,
                    1,
                    true,
                )
            })
            .collect();
        let widen = if config.skip { 2 } else { 1 };
        let decoder = (0..depth)
            .map(|j| {
                let cin = if j == 0 {
                    filters(base, depth - 1)
                } else {
                    widen * filters(base, depth - 1 - j)
                };
                let cout = if j + 1 == depth {
                    OPTICAL_BANDS
                } else {
                    filters(base, depth - 2 - j)
                };
                ConvTranspose2d::new(&mut store, &format!("dec{j}"), cin, cout, 4, 2, 1, true)
            })
            .collect();
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            noise_calls: AtomicU64::new(0),
        })
    }

    /// `sar` is `[N, 1, H, W]` in the unit range. Passing `noise` switches on
    /// the dropout of the inner decoder stages.
    pub fn forward(&self, g: &mut Graph, sar: Var, mut noise: Option<&mut ChaCha8Rng>) -> Var {
        let store = &self.store;
        let depth = self.encoder.len();
        let x = g.affine(sar, 2.0, -1.0);
        let mut skips: Vec<Var> = Vec::with_capacity(depth);
        for (i, conv) in self.encoder.iter().enumerate() {
            let input = if i == 0 {
                x
            } else {
                g.leaky_relu(skips[i - 1], LEAK)
            };
            skips.push(conv.forward(g, store, input));
        }
        let mut h = skips[depth - 1];
        for (j, up) in self.decoder.iter().enumerate() {
            let a = g.relu(h);
            let mut d = up.forward(g, store, a);
            if j + 1 == depth {
                h = d;
                break;
            }
            if let Some(rng) = noise.as_deref_mut() {
                if j < NOISY_STAGES && self.config.dropout > 0.0 {
                    d = dropout(g, d, self.config.dropout, rng);
                }
            }
            h = if self.config.skip {
                g.concat_channels(&[d, skips[depth - 2 - j]])
            } else {
                d
            };
        }
        let t = g.tanh(h);
        g.affine(t, 0.5, 0.5)
    }

    fn check_input(&self, t: &Tensor) -> Result<()> {
        let [_, c, h, w] = t.shape();
        if (c, h, w) != (SAR_BANDS, self.config.height, self.config.width) {
            return Err(shape(format!(
                "SAR {w}x{h}x{c} does not match generator {}x{}x1",
                self.config.width, self.config.height
            )));
        }
        Ok(())
    }

    /// Fresh dropout stream for one training-mode call.
    fn next_noise(&self) -> ChaCha8Rng {
        let call = self.noise_calls.fetch_add(1, Ordering::Relaxed);
        seed::rng(seed::derive(self.config.seed, streams::CGAN), call)
    }

    pub fn predict_batch(&self, sar: &Tensor, train_mode: bool) -> Result<Tensor> {
        self.check_input(sar)?;
        let mut g = Graph::new();
        let x = g.input(sar.clone());
        let mut rng = train_mode.then(|| self.next_noise());
        let out = self.forward(&mut g, x, rng.as_mut());
        Ok(g.value(out).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, GENERATOR_NAME, &self.store, &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: GeneratorConfig = checkpoint::load_config(dir, GENERATOR_NAME)?;
        let mut model = Self::new(config)?;
        checkpoint::load_weights(dir, GENERATOR_NAME, &mut model.store)?;
        Ok(model)
    }
}

/// Ẑ: the optical rendering of `x`.
pub fn generator_forward(
    x: &SarImage,
    model: &Generator,
    train_mode: bool,
) -> Result<OpticalImage> {
    let out = model.predict_batch(&x.raster.to_tensor(), train_mode)?;
    Ok(OpticalImage::unit(Raster::from_tensor(&out, 0)))
}

/// Input-pixel extent seen by one output unit of a stack of `strided` 4×4
/// stride-2 convolutions followed by one 3×3 convolution.
pub fn receptive_field(strided: usize) -> usize {
    (0..strided).fold(3, |r, _| 2 * r + 2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub width: usize,
    pub height: usize,
    pub base_filters: usize,
    /// Receptive-field target in pixels; half the shorter side (at most 70)
    /// when absent.
    pub patch: Option<usize>,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            base_filters: 64,
            patch: None,
            seed: 0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn resolved_patch(&self) -> usize {
        self.patch
            .unwrap_or_else(|| (self.width.min(self.height) / 2).min(70))
    }

    /// Fewest strided layers whose receptive field covers the patch target.
    pub fn strided_layers(&self) -> usize {
        let target = self.resolved_patch();
        (0..)
            .find(|&n| receptive_field(n) >= target)
            .expect("receptive field grows without bound")
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    layers: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    /// `stream` separates the initial weights of the two discriminators.
    pub fn new(config: DiscriminatorConfig, stream: u64) -> Result<Self> {
        let n = config.strided_layers();
        let div = 1 << n;
        if config.base_filters == 0 || config.width % div != 0 || config.height % div != 0 {
            return Err(shape(format!(
                "{}x{} is not divisible by 2^{n} for a {}-pixel patch",
                config.width,
                config.height,
                config.resolved_patch()
            )));
        }
        let mut store = ParamStore::new(seed::derive(
            seed::derive(config.seed, streams::CGAN),
            1000 + stream,
        ));
        let base = config.base_filters;
        let mut cin = SAR_BANDS + OPTICAL_BANDS;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let cout = filters(base, i);
            layers.push(Conv2d::new(
                &mut store,
                &format!("conv{i}"),
                cin,
                cout,
                4,
                2,
                1,
                true,
            ));
            cin = cout;
        }
        let head = Conv2d::same(&mut store, "head", cin, 1, 3);
        Ok(Self {
            config,
            store,
            layers,
            head,
        })
    }

    /// Patch logits for the conditioned pair, `[N, 1, H/2ⁿ, W/2ⁿ]`.
    pub fn logits(&self, g: &mut Graph, sar: Var, optical: Var) -> Var {
        let s = g.affine(sar, 2.0, -1.0);
        let o = g.affine(optical, 2.0, -1.0);
        let mut h = g.concat_channels(&[s, o]);
        for conv in &self.layers {
            let z = conv.forward(g, &self.store, h);
            h = g.leaky_relu(z, LEAK);
        }
        self.head.forward(g, &self.store, h)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        checkpoint::save(dir, name, &self.store, &self.config)
    }

    pub fn load(dir: &Path, name: &str, stream: u64) -> Result<Self> {
        let config: DiscriminatorConfig = checkpoint::load_config(dir, name)?;
        let mut model = Self::new(config, stream)?;
        checkpoint::load_weights(dir, name, &mut model.store)?;
        Ok(model)
    }
}

/// Per-patch probability that `(x, z)` is a real pair.
pub fn discriminator_forward(
    x: &SarImage,
    z: &OpticalImage,
    model: &Discriminator,
) -> Result<Raster> {
    let (w, h) = (model.config.width, model.config.height);
    if x.raster.dims() != (w, h, SAR_BANDS) || z.raster.dims() != (w, h, OPTICAL_BANDS) {
        return Err(shape(format!(
            "discriminator expects a {w}x{h} SAR/optical pair"
        )));
    }
    let mut g = Graph::new();
    let s = g.input(x.raster.to_tensor());
    let o = g.input(z.raster.to_tensor());
    let logits = model.logits(&mut g, s, o);
    Ok(Raster::from_tensor(
        &plfm_nn::sigmoid_tensor(g.value(logits)),
        0,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CganLossConfig {
    /// Weight of the simulated-SAR discriminator.
    pub gamma_sim: f64,
    /// Weight of the real-SAR discriminator.
    pub gamma_real: f64,
    pub lambda_l1: f64,
    /// With `false` the generator objective keeps only the L1 term.
    pub adversarial: bool,
}

impl Default for CganLossConfig {
    fn default() -> Self {
        Self {
            gamma_sim: 0.5,
            gamma_real: 0.5,
            lambda_l1: 100.0,
            adversarial: true,
        }
    }
}

impl CganLossConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.gamma_sim + self.gamma_real - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "stream weights must sum to 1, got {} + {}",
                self.gamma_sim, self.gamma_real
            )));
        }
        if self.gamma_sim < 0.0 || self.gamma_real < 0.0 || self.lambda_l1 < 0.0 {
            return Err(invalid("loss weights must be nonnegative"));
        }
        Ok(())
    }

    fn adversarial_weight(&self) -> f64 {
        if self.adversarial {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub d1_loss: f64,
    pub d2_loss: f64,
    /// γ-weighted adversarial term over both streams.
    pub g_adv_loss: f64,
    /// L1 distance averaged over both streams.
    pub g_l1_loss: f64,
    pub g_total: f64,
}

impl LossBundle {
    /// The generator objective rebuilt from the parts with the same
    /// arithmetic as the training graph.
    pub fn recombined_total(&self, cfg: &CganLossConfig) -> f64 {
        0.0 + cfg.adversarial_weight() * self.g_adv_loss + cfg.lambda_l1 * self.g_l1_loss
    }

    pub const TSV_HEADER: &'static str = "d1_loss\td2_loss\tg_adv_loss\tg_l1_loss\tg_total";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.d1_loss, self.d2_loss, self.g_adv_loss, self.g_l1_loss, self.g_total
        )
    }
}

/// `BCE(D(x, y), 1) + BCE(D(x, ŷ), 0)`.
fn discriminator_loss(g: &mut Graph, d: &Discriminator, sar: Var, real: Var, fake: Var) -> Var {
    let on_real = d.logits(g, sar, real);
    let on_fake = d.logits(g, sar, fake);
    let a = g.bce_with_logits(on_real, 1.0);
    let b = g.bce_with_logits(on_fake, 0.0);
    g.weighted_sum(&[(a, 1.0), (b, 1.0)])
}

struct GeneratorTerms {
    adv: Var,
    l1: Var,
    total: Var,
}

#[allow(clippy::too_many_arguments)]
fn generator_objective(
    g: &mut Graph,
    d_sim: &Discriminator,
    d_real: &Discriminator,
    sim_sar: Var,
    real_sar: Var,
    fake_sim: Var,
    fake_real: Var,
    target: &Tensor,
    cfg: &CganLossConfig,
) -> GeneratorTerms {
    let l_sim = d_sim.logits(g, sim_sar, fake_sim);
    let l_real = d_real.logits(g, real_sar, fake_real);
    let a_sim = g.bce_with_logits(l_sim, 1.0);
    let a_real = g.bce_with_logits(l_real, 1.0);
    let adv = g.weighted_sum(&[(a_sim, cfg.gamma_sim), (a_real, cfg.gamma_real)]);
    let e_sim = g.l1(fake_sim, target);
    let e_real = g.l1(fake_real, target);
    let l1 = g.weighted_sum(&[(e_sim, 0.5), (e_real, 0.5)]);
    let total = g.weighted_sum(&[(adv, cfg.adversarial_weight()), (l1, cfg.lambda_l1)]);
    GeneratorTerms { adv, l1, total }
}

fn stack_sar(images: &[SarImage]) -> Tensor {
    let ts: Vec<Tensor> = images.iter().map(|s| s.raster.to_tensor()).collect();
    Tensor::concat_batch(&ts.iter().collect::<Vec<_>>())
}

fn stack_optical(images: &[OpticalImage]) -> Tensor {
    let ts: Vec<Tensor> = images.iter().map(|s| s.raster.to_tensor()).collect();
    Tensor::concat_batch(&ts.iter().collect::<Vec<_>>())
}

/// All five loss terms on one aligned batch, with the generator in eval mode.
pub fn cgan_losses(
    real_sar: &[SarImage],
    sim_sar: &[SarImage],
    optical: &[OpticalImage],
    generator: &Generator,
    d_sim: &Discriminator,
    d_real: &Discriminator,
    cfg: &CganLossConfig,
) -> Result<LossBundle> {
    cfg.validate()?;
    if real_sar.is_empty() || real_sar.len() != sim_sar.len() || real_sar.len() != optical.len() {
        return Err(shape(
            "real SAR, simulated SAR and optical batches must align",
        ));
    }
    let (real_t, sim_t, target) = (
        stack_sar(real_sar),
        stack_sar(sim_sar),
        stack_optical(optical),
    );
    generator.check_input(&real_t)?;
    generator.check_input(&sim_t)?;
    if target.shape()[1..]
        != [
            OPTICAL_BANDS,
            generator.config.height,
            generator.config.width,
        ]
    {
        return Err(shape("optical batch does not match the generator"));
    }
    let mut g = Graph::new();
    let real_x = g.input(real_t);
    let sim_x = g.input(sim_t);
    let y = g.input(target.clone());
    let fake_real = generator.forward(&mut g, real_x, None);
    let fake_sim = generator.forward(&mut g, sim_x, None);
    let d1 = discriminator_loss(&mut g, d_sim, sim_x, y, fake_sim);
    let d2 = discriminator_loss(&mut g, d_real, real_x, y, fake_real);
    let terms = generator_objective(
        &mut g, d_sim, d_real, sim_x, real_x, fake_sim, fake_real, &target, cfg,
    );
    Ok(LossBundle {
        d1_loss: g.scalar(d1),
        d2_loss: g.scalar(d2),
        g_adv_loss: g.scalar(terms.adv),
        g_l1_loss: g.scalar(terms.l1),
        g_total: g.scalar(terms.total),
    })
}

/// Speckled grayscale renderings of the optical ground truth, image `i`
/// seeded by `derive(seed, i)`.
pub fn simulate_training_pairs(
    optical_gt: &[OpticalImage],
    looks: u32,
    seed: u64,
) -> Result<Vec<SarImage>> {
    optical_gt
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let gray = img.grayscale().map(|v| v.clamp(0.0, 1.0));
            simulate_sar(&gray, looks, seed::derive(seed, i as u64))
        })
        .collect()
}

/// One co-registered (SAR, optical) training pair.
#[derive(Clone, Debug)]
pub struct CganSample {
    pub sar: SarImage,
    pub optical: OpticalImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CganTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub loss: CganLossConfig,
    /// Looks of the simulated speckle.
    pub looks: u32,
    pub seed: u64,
}

impl Default for CganTrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            steps: 2000,
            loss: CganLossConfig::default(),
            looks: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CganStepRecord {
    pub step: usize,
    pub losses: LossBundle,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CganHistory {
    pub steps: Vec<CganStepRecord>,
}

/// The three networks of the branch, trained together.
#[derive(Clone, Debug)]
pub struct CganModels {
    pub generator: Generator,
    pub d_sim: Discriminator,
    pub d_real: Discriminator,
}

impl CganModels {
    pub fn new(generator: GeneratorConfig, discriminator: DiscriminatorConfig) -> Result<Self> {
        if (generator.width, generator.height) != (discriminator.width, discriminator.height) {
            return Err(PlfmError::Incompatible(format!(
                "generator is {}x{}, discriminators are {}x{}",
                generator.width, generator.height, discriminator.width, discriminator.height
            )));
        }
        Ok(Self {
            generator: Generator::new(generator)?,
            d_sim: Discriminator::new(discriminator.clone(), 1)?,
            d_real: Discriminator::new(discriminator, 2)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.generator.save(dir)?;
        self.d_sim.save(dir, DISCRIMINATOR_SIM_NAME)?;
        self.d_real.save(dir, DISCRIMINATOR_REAL_NAME)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            generator: Generator::load(dir)?,
            d_sim: Discriminator::load(dir, DISCRIMINATOR_SIM_NAME, 1)?,
            d_real: Discriminator::load(dir, DISCRIMINATOR_REAL_NAME, 2)?,
        })
    }
}

/// Mean eval-mode L1 between the generator's rendering of each real SAR image
/// and its optical target.
pub fn generator_l1(generator: &Generator, samples: &[CganSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let z = generator.predict_batch(&s.sar.raster.to_tensor(), false)?;
        let y = s.optical.raster.to_tensor();
        total += z
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / y.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Alternating updates: each step trains both discriminators on the current
/// fakes, then the generator against the updated (frozen) discriminators.
/// `on_step` sees every step's losses.
pub fn train_cgan(
    models: &mut CganModels,
    data: &[CganSample],
    cfg: &CganTrainConfig,
    mut on_step: impl FnMut(&CganStepRecord),
) -> Result<CganHistory> {
    cfg.loss.validate()?;
    if data.is_empty() {
        return Err(PlfmError::EmptyDataset("no SAR/optical pairs".into()));
    }
    let (w, h) = (
        models.generator.config.width,
        models.generator.config.height,
    );
    for s in data {
        if s.sar.raster.dims() != (w, h, SAR_BANDS)
            || s.optical.raster.dims() != (w, h, OPTICAL_BANDS)
        {
            return Err(shape(format!(
                "training pair does not match the {w}x{h} models"
            )));
        }
    }
    let mut adam_g = Adam::with_betas(cfg.lr, cfg.beta1, cfg.beta2);
    let mut adam_d1 = Adam::with_betas(cfg.lr, cfg.beta1, cfg.beta2);
    let mut adam_d2 = Adam::with_betas(cfg.lr, cfg.beta1, cfg.beta2);
    let batch = cfg.batch_size.clamp(1, data.len());
    let root = seed::derive(cfg.seed, streams::CGAN);
    let mut history = CganHistory::default();

    for step in 0..cfg.steps {
        let mut pick = seed::rng(seed::derive(cfg.seed, streams::SHUFFLE), step as u64);
        let idx: Vec<usize> = sample(&mut pick, data.len(), batch).into_vec();
        let real: Vec<SarImage> = idx.iter().map(|&i| data[i].sar.clone()).collect();
        let optical: Vec<OpticalImage> = idx.iter().map(|&i| data[i].optical.clone()).collect();
        let sim = simulate_training_pairs(&optical, cfg.looks, seed::derive(root, step as u64))?;
        let (real_t, sim_t, target) = (stack_sar(&real), stack_sar(&sim), stack_optical(&optical));

        let CganModels {
            generator,
            d_sim,
            d_real,
        } = models;
        let mut gg = Graph::new();
        gg.freeze(&d_sim.store);
        gg.freeze(&d_real.store);
        let real_x = gg.input(real_t.clone());
        let sim_x = gg.input(sim_t.clone());
        let mut noise = seed::rng(root, 1_000_000 + step as u64);
        let fake_real = generator.forward(&mut gg, real_x, Some(&mut noise));
        let fake_sim = generator.forward(&mut gg, sim_x, Some(&mut noise));

        let mut gd = Graph::new();
        let (rx, sx, y) = (gd.input(real_t), gd.input(sim_t), gd.input(target.clone()));
        let fr = gd.input(gg.value(fake_real).clone());
        let fs = gd.input(gg.value(fake_sim).clone());
        let d1 = discriminator_loss(&mut gd, d_sim, sx, y, fs);
        let d2 = discriminator_loss(&mut gd, d_real, rx, y, fr);
        let d_total = gd.weighted_sum(&[(d1, 1.0), (d2, 1.0)]);
        let grads = gd.backward(d_total);
        adam_d1.step(&mut d_sim.store, &grads);
        adam_d2.step(&mut d_real.store, &grads);

        let terms = generator_objective(
            &mut gg, d_sim, d_real, sim_x, real_x, fake_sim, fake_real, &target, &cfg.loss,
        );
        let grads = gg.backward(terms.total);
        adam_g.step(&mut generator.store, &grads);

        let record = CganStepRecord {
            step,
            losses: LossBundle {
                d1_loss: gd.scalar(d1),
                d2_loss: gd.scalar(d2),
                g_adv_loss: gg.scalar(terms.adv),
                g_l1_loss: gg.scalar(terms.l1),
                g_total: gg.scalar(terms.total),
            },
        };
        on_step(&record);
        history.steps.push(record);
    }
    Ok(history)
}
