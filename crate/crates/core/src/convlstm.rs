//! Temporal branch: stacked peephole ConvLSTM layers that read frames
//! `t₁…tₙ` and predict frame `tₙ₊₁`, trained with the Huber loss.
//!
//! Each layer keeps its eight gate kernels fused into two convolutions,
//! `w_x: [4C, Cin, k, k]` on the input and `w_h: [4C, C, k, k]` on the hidden
//! state, with output blocks in the order forget, candidate, input, output.

use std::path::Path;

use plfm_nn::{
    huber_elem, huber_grad_elem, Adam, BatchNorm2d, Conv2d, EarlyStop, EarlyStopping, Graph,
    ParamId, ParamStore, ReduceLrOnPlateau, Tensor, Var,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{invalid, shape, PlfmError, Result};
use crate::image::{OpticalImage, Raster, TemporalSequence, OPTICAL_BANDS};
use crate::seed::{self, streams};

pub const CHECKPOINT_NAME: &str = "convlstm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvLstmConfig {
    pub width: usize,
    pub height: usize,
    /// Frames per input sequence.
    pub seq_len: usize,
    /// Filters per recurrent layer.
    pub hidden: Vec<usize>,
    /// Odd spatial kernel size of every gate convolution.
    pub kernel: usize,
    pub peepholes: bool,
    /// One peephole grid shared by the forget, input and output gates.
    pub shared_peephole: bool,
    pub batch_norm: bool,
    /// Max-pool between layers and upsample bilinearly before the output.
    pub pooling: bool,
    pub seed: u64,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            seq_len: 3,
            hidden: vec![32, 32, 32],
            kernel: 3,
            peepholes: true,
            shared_peephole: false,
            batch_norm: true,
            pooling: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Candidate,
    Input,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Candidate, Gate::Input, Gate::Output];

    fn block(self) -> usize {
        match self {
            Gate::Forget => 0,
            Gate::Candidate => 1,
            Gate::Input => 2,
            Gate::Output => 3,
        }
    }
}

/// Source of a gate kernel: the input frame or the previous hidden state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input,
    Hidden,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub in_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    /// Peephole grids `[1, C, H, W]` for the forget, input and output gates.
    pub peep: Option<[ParamId; 3]>,
}

impl ConvLstmCell {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        hidden: usize,
        kernel: usize,
        grid: (usize, usize),
        peepholes: bool,
        shared_peephole: bool,
    ) -> Self {
        assert!(kernel % 2 == 1, "gate kernels must have odd size");
        let fan_in = ((in_channels + hidden) * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let w_x = store.uniform(
            format!("{name}.w_x"),
            [4 * hidden, in_channels, kernel, kernel],
            bound,
        );
        let w_h = store.uniform(
            format!("{name}.w_h"),
            [4 * hidden, hidden, kernel, kernel],
            bound,
        );
        let bias = store.uniform(format!("{name}.bias"), [1, 4 * hidden, 1, 1], bound);
        store.get_mut(bias).data_mut()[..hidden].fill(1.0);
        let (gw, gh) = grid;
        let peep = peepholes.then(|| {
            let shape = [1, hidden, gh, gw];
            if shared_peephole {
                let p = store.constant(format!("{name}.peep"), shape, 0.0);
                [p, p, p]
            } else {
                ["f", "i", "o"].map(|g| store.constant(format!("{name}.peep_{g}"), shape, 0.0))
            }
        });
        Self {
            in_channels,
            hidden,
            kernel,
            w_x,
            w_h,
            bias,
            peep,
        }
    }

    /// Kernel of one gate, e.g. `W_xf` is `(Gate::Forget, Source::Input)`.
    pub fn gate_kernel(&self, store: &ParamStore, gate: Gate, source: Source) -> Tensor {
        let w = store.get(match source {
            Source::Input => self.w_x,
            Source::Hidden => self.w_h,
        });
        let per = w.sample_len();
        let c = self.hidden;
        let start = gate.block() * c;
        let [_, cin, k, _] = w.shape();
        Tensor::from_vec(
            [c, cin, k, k],
            w.data()[start * per..(start + c) * per].to_vec(),
        )
    }

    pub fn gate_bias(&self, store: &ParamStore, gate: Gate) -> Vec<f64> {
        let c = self.hidden;
        let b = gate.block() * c;
        store.get(self.bias).data()[b..b + c].to_vec()
    }

    /// One time step. `state` is `(h_{t−1}, C_{t−1})`; `None` means both zero.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: Option<(Var, Var)>,
    ) -> (Var, Var) {
        let pad = self.kernel / 2;
        let c = self.hidden;
        let w_x = g.param(store, self.w_x);
        let bias = g.param(store, self.bias);
        let mut gates = g.conv2d(x, w_x, Some(bias), 1, pad);
        if let Some((h_prev, _)) = state {
            let w_h = g.param(store, self.w_h);
            let rec = g.conv2d(h_prev, w_h, None, 1, pad);
            gates = g.add(gates, rec);
        }
        let block = |g: &mut Graph, gate: Gate| g.slice_channels(gates, gate.block() * c, c);
        let mut f_pre = block(g, Gate::Forget);
        let cand_pre = block(g, Gate::Candidate);
        let mut i_pre = block(g, Gate::Input);
        let mut o_pre = block(g, Gate::Output);
        let peep = self.peep.map(|p| p.map(|id| g.param(store, id)));

        let c_prev = state.map(|(_, c)| c);
        if let (Some(p), Some(c_prev)) = (peep, c_prev) {
            let pf = g.mul(c_prev, p[0]);
            f_pre = g.add(f_pre, pf);
            let pi = g.mul(c_prev, p[1]);
            i_pre = g.add(i_pre, pi);
        }
        let i = g.sigmoid(i_pre);
        let cand = g.tanh(cand_pre);
        let mut c_t = g.mul(i, cand);
        if let Some(c_prev) = c_prev {
            let f = g.sigmoid(f_pre);
            let keep = g.mul(f, c_prev);
            c_t = g.add(keep, c_t);
        }
        if let Some(p) = peep {
            let po = g.mul(c_t, p[2]);
            o_pre = g.add(o_pre, po);
        }
        let o = g.sigmoid(o_pre);
        let squashed = g.tanh(c_t);
        let h = g.mul(o, squashed);
        (h, c_t)
    }
}

/// Value-level cell step with explicit previous state.
pub fn convlstm_cell_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    cell: &ConvLstmCell,
    store: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    let [n, cin, h, w] = x.shape();
    if cin != cell.in_channels {
        return Err(shape(format!(
            "cell expects {} input channels, got {cin}",
            cell.in_channels
        )));
    }
    let state_shape = [n, cell.hidden, h, w];
    if h_prev.shape() != state_shape || c_prev.shape() != state_shape {
        return Err(shape(format!("state must be {state_shape:?}")));
    }
    if let Some(p) = cell.peep {
        if store.get(p[0]).shape()[2..] != [h, w] {
            return Err(shape("peephole grid does not match the input size"));
        }
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let hv = g.input(h_prev.clone());
    let cv = g.input(c_prev.clone());
    let (ht, ct) = cell.step(&mut g, store, xv, Some((hv, cv)));
    Ok((g.value(ht).clone(), g.value(ct).clone()))
}

#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub config: ConvLstmConfig,
    pub store: ParamStore,
    pub cells: Vec<ConvLstmCell>,
    norms: Vec<BatchNorm2d>,
    output: Conv2d,
}

impl ConvLstm {
    pub fn new(config: ConvLstmConfig) -> Result<Self> {
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(invalid("at least one recurrent layer with positive width"));
        }
        if config.kernel % 2 == 0 {
            return Err(invalid("gate kernels must have odd size"));
        }
        if config.seq_len == 0 {
            return Err(invalid("sequence length must be positive"));
        }
        let levels = if config.pooling {
            config.hidden.len() - 1
        } else {
            0
        };
        if config.width % (1 << levels) != 0 || config.height % (1 << levels) != 0 {
            return Err(shape(format!(
                "pooling needs sizes divisible by {}",
                1 << levels
            )));
        }
        let mut store = ParamStore::new(seed::derive(config.seed, streams::CONVLSTM));
        let mut cells = Vec::new();
        let mut norms = Vec::new();
        let mut cin = OPTICAL_BANDS;
        for (l, &c) in config.hidden.iter().enumerate() {
            let div = if config.pooling { 1 << l } else { 1 };
            let grid = (config.width / div, config.height / div);
            cells.push(ConvLstmCell::new(
                &mut store,
                &format!("layer{l}"),
                cin,
                c,
                config.kernel,
                grid,
                config.peepholes,
                config.shared_peephole,
            ));
            if config.batch_norm && l + 1 < config.hidden.len() {
                norms.push(BatchNorm2d::new(&mut store, &format!("norm{l}"), c));
            }
            cin = c;
        }
        let output = Conv2d::new(&mut store, "output", cin, OPTICAL_BANDS, 1, 1, 0, true);
        Ok(Self {
            config,
            store,
            cells,
            norms,
            output,
        })
    }

    /// `frames[t]` is `[N, 3, H, W]`; returns the predicted next frame in
    /// `[0, 1]`.
    pub fn forward(&self, g: &mut Graph, frames: &[Var], train: bool) -> Var {
        let store = &self.store;
        let last = self.cells.len() - 1;
        let mut inputs = frames.to_vec();
        for (l, cell) in self.cells.iter().enumerate() {
            let mut state = None;
            let mut outs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                let (h, c) = cell.step(g, store, x, state);
                state = Some((h, c));
                outs.push(h);
            }
            if l < last {
                if let Some(norm) = self.norms.get(l) {
                    // Statistics pooled over batch, time and space.
                    let n = g.value(outs[0]).n();
                    let stacked = g.concat_batch(&outs);
                    let normed = norm.forward(g, store, stacked, train);
                    outs = (0..outs.len())
                        .map(|t| g.slice_batch(normed, t * n, n))
                        .collect();
                }
                if self.config.pooling {
                    outs = outs.into_iter().map(|h| g.max_pool2(h)).collect();
                }
            }
            inputs = outs;
        }
        let mut h = *inputs.last().expect("nonempty sequence");
        if self.config.pooling {
            for _ in 0..last {
                h = g.upsample_bilinear2(h);
            }
        }
        let logits = self.output.forward(g, store, h);
        g.sigmoid(logits)
    }

    fn check_frames(&self, frames: &[&Tensor]) -> Result<()> {
        if frames.len() != self.config.seq_len {
            return Err(shape(format!(
                "model reads {} frames, got {}",
                self.config.seq_len,
                frames.len()
            )));
        }
        for f in frames {
            let [_, c, h, w] = f.shape();
            if (c, h, w) != (OPTICAL_BANDS, self.config.height, self.config.width) {
                return Err(shape(format!(
                    "frame {}x{}x{c} does not match model {}x{}x3",
                    w, h, self.config.width, self.config.height
                )));
            }
        }
        Ok(())
    }

    /// Eval-mode prediction for a batch of sequences.
    pub fn predict_batch(&self, frames: &[&Tensor]) -> Result<Tensor> {
        self.check_frames(frames)?;
        let mut g = Graph::new();
        let vars: Vec<Var> = frames.iter().map(|f| g.input((*f).clone())).collect();
        let out = self.forward(&mut g, &vars, false);
        Ok(g.value(out).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, CHECKPOINT_NAME, &self.store, &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ConvLstmConfig = checkpoint::load_config(dir, CHECKPOINT_NAME)?;
        let mut model = Self::new(config)?;
        checkpoint::load_weights(dir, CHECKPOINT_NAME, &mut model.store)?;
        Ok(model)
    }
}

/// Ŷ: the predicted next frame of `seq`.
pub fn convlstm_forward(seq: &TemporalSequence, model: &ConvLstm) -> Result<OpticalImage> {
    let tensors: Vec<Tensor> = seq.frames().iter().map(|f| f.raster.to_tensor()).collect();
    let refs: Vec<&Tensor> = tensors.iter().collect();
    let out = model.predict_batch(&refs)?;
    Ok(OpticalImage::unit(Raster::from_tensor(&out, 0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HuberConfig {
    pub delta: f64,
    pub batch_size: usize,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            batch_size: 16,
        }
    }
}

fn check_huber(y_hat: &Tensor, y: &Tensor, cfg: &HuberConfig) -> Result<()> {
    if !(cfg.delta > 0.0) {
        return Err(invalid(format!(
            "Huber delta must be positive, got {}",
            cfg.delta
        )));
    }
    if y_hat.shape() != y.shape() {
        return Err(shape(format!("{:?} vs {:?}", y_hat.shape(), y.shape())));
    }
    Ok(())
}

/// Mean Huber penalty over every element of the batch.
pub fn huber_loss(y_hat: &Tensor, y: &Tensor, cfg: &HuberConfig) -> Result<f64> {
    check_huber(y_hat, y, cfg)?;
    let sum: f64 = y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| huber_elem(a - b, cfg.delta))
        .sum();
    Ok(sum / y.len() as f64)
}

/// Gradient of [`huber_loss`] with respect to `y_hat`.
pub fn huber_grad(y_hat: &Tensor, y: &Tensor, cfg: &HuberConfig) -> Result<Tensor> {
    check_huber(y_hat, y, cfg)?;
    let n = y.len() as f64;
    Ok(y_hat.zip_map(y, |a, b| huber_grad_elem(a - b, cfg.delta) / n))
}

/// One training example: `seq_len` input frames and the target frame, each
/// `[1, 3, H, W]`.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub frames: Vec<Tensor>,
    pub target: Tensor,
}

impl SequenceSample {
    pub fn new(inputs: &[OpticalImage], target: &OpticalImage) -> Self {
        Self {
            frames: inputs.iter().map(|f| f.raster.to_tensor()).collect(),
            target: target.raster.to_tensor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvLstmTrainConfig {
    pub lr: f64,
    pub huber: HuberConfig,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stopping_patience: usize,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for ConvLstmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            huber: HuberConfig::default(),
            max_epochs: 200,
            plateau_factor: 0.5,
            plateau_patience: 5,
            early_stopping_patience: 10,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

fn stack<'a>(items: impl Iterator<Item = &'a Tensor>) -> Tensor {
    let parts: Vec<&Tensor> = items.collect();
    Tensor::concat_batch(&parts)
}

fn batch_inputs(samples: &[&SequenceSample], seq_len: usize) -> (Vec<Tensor>, Tensor) {
    let frames = (0..seq_len)
        .map(|t| stack(samples.iter().map(|s| &s.frames[t])))
        .collect();
    (frames, stack(samples.iter().map(|s| &s.target)))
}

/// Eval-mode Huber loss averaged over `samples`.
pub fn evaluate_loss(
    model: &ConvLstm,
    samples: &[SequenceSample],
    cfg: &HuberConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let (frames, target) = batch_inputs(&refs, model.config.seq_len);
        let frame_refs: Vec<&Tensor> = frames.iter().collect();
        let pred = model.predict_batch(&frame_refs)?;
        total += huber_loss(&pred, &target, cfg)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Adam with reduce-on-plateau and early stopping on the validation loss (the
/// training loss when `val` is empty). The best weights are restored at the
/// end. `on_epoch` sees each epoch's record as soon as it is complete.
pub fn train_convlstm(
    model: &mut ConvLstm,
    train: &[SequenceSample],
    val: &[SequenceSample],
    cfg: &ConvLstmTrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(PlfmError::EmptyDataset("no training sequences".into()));
    }
    for s in train.iter().chain(val) {
        let refs: Vec<&Tensor> = s.frames.iter().collect();
        model.check_frames(&refs)?;
        if s.target.shape() != s.frames[0].shape() {
            return Err(shape("target frame differs from the inputs"));
        }
    }
    let mut adam = Adam::new(cfg.lr);
    let mut plateau = ReduceLrOnPlateau::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut early = EarlyStopping::new(cfg.early_stopping_patience);
    let mut best = model.store.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.huber.batch_size.max(1);

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut seed::rng(
            seed::derive(cfg.seed, streams::SHUFFLE),
            epoch as u64,
        ));
        let mut train_total = 0.0;
        for chunk in order.chunks(batch) {
            let samples: Vec<&SequenceSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (frames, target) = batch_inputs(&samples, model.config.seq_len);
            let mut g = Graph::new();
            let vars: Vec<Var> = frames.into_iter().map(|f| g.input(f)).collect();
            let pred = model.forward(&mut g, &vars, true);
            let loss = g.huber(pred, &target, cfg.huber.delta);
            train_total += g.scalar(loss) * chunk.len() as f64;
            let grads = g.backward(loss);
            adam.step(&mut model.store, &grads);
            let updates = g.take_buffer_updates();
            model.store.apply_buffer_updates(&updates, cfg.bn_momentum);
        }
        let train_loss = train_total / train.len() as f64;
        let monitored = if val.is_empty() { train } else { val };
        let val_loss = evaluate_loss(model, monitored, &cfg.huber)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr,
        };
        history.epochs.push(record);
        on_epoch(&record);
        adam.lr = plateau.observe(val_loss, adam.lr);
        match early.observe(epoch, val_loss) {
            EarlyStop::Improved => {
                best = model.store.clone();
                history.best_epoch = epoch;
            }
            EarlyStop::Continue => {}
            EarlyStop::Stop => break,
        }
    }
    model.store.copy_values_from(&best);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use plfm_nn::gradcheck::numeric_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(peepholes: bool) -> ConvLstm {
        ConvLstm::new(ConvLstmConfig {
            width: 8,
            height: 8,
            hidden: vec![4, 4],
            peepholes,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut m = small(true);
        let ids: Vec<ParamId> = m.store.ids().collect();
        for id in ids {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        let x = Tensor::zeros([1, 3, 8, 8]);
        let z = Tensor::zeros([1, 4, 8, 8]);
        let (h, c) = convlstm_cell_step(&x, &z, &z, &m.cells[0], &m.store).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_blocks_are_addressable() {
        let m = small(true);
        let cell = &m.cells[0];
        assert_eq!(cell.gate_bias(&m.store, Gate::Forget), vec![1.0; 4]);
        let w_xo = cell.gate_kernel(&m.store, Gate::Output, Source::Input);
        assert_eq!(w_xo.shape(), [4, 3, 3, 3]);
        let all = m.store.get(cell.w_x);
        assert_eq!(w_xo.data(), &all.data()[12 * 27..16 * 27]);
    }

    #[test]
    fn forward_shape_and_range() {
        for pooling in [false, true] {
            let m = ConvLstm::new(ConvLstmConfig {
                width: 32,
                height: 32,
                hidden: vec![4, 4, 4],
                pooling,
                ..Default::default()
            })
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let frames: Vec<OpticalImage> = (0..3)
                .map(|_| OpticalImage::unit(Raster::from_fn(32, 32, 3, |_, _, _| rng.random())))
                .collect();
            let seq = TemporalSequence::monthly(frames).unwrap();
            let y = convlstm_forward(&seq, &m).unwrap();
            assert_eq!(y.raster.dims(), (32, 32, 3));
            assert!(y.raster.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_wrong_sequence_length() {
        let m = small(false);
        let frames = vec![OpticalImage::unit(Raster::zeros(8, 8, 3)); 2];
        assert!(convlstm_forward(&TemporalSequence::monthly(frames).unwrap(), &m).is_err());
    }

    #[test]
    fn huber_arms() {
        let cfg = HuberConfig::default();
        let one = |v: f64| Tensor::from_vec([1, 1, 1, 1], vec![v]);
        assert_eq!(huber_loss(&one(0.5), &one(0.0), &cfg).unwrap(), 0.125);
        assert_eq!(huber_loss(&one(2.0), &one(0.0), &cfg).unwrap(), 1.5);
        assert_eq!(
            huber_grad(&one(0.5), &one(0.0), &cfg).unwrap().data()[0],
            0.5
        );
        assert_eq!(
            huber_grad(&one(2.0), &one(0.0), &cfg).unwrap().data()[0],
            1.0
        );
        assert_eq!(
            huber_grad(&one(0.0), &one(0.0), &cfg).unwrap().data()[0],
            0.0
        );
        let bad = HuberConfig { delta: 0.0, ..cfg };
        assert!(huber_loss(&one(0.0), &one(0.0), &bad).is_err());
    }

    #[test]
    fn huber_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_fn([2, 3, 4, 4], |_| rng.random_range(-2.0..2.0));
        let b = Tensor::zeros(a.shape());
        let n = a.len() as f64;
        let mse = a.data().iter().map(|v| v * v).sum::<f64>() / n;
        let mae = a.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        let wide = HuberConfig {
            delta: 1e6,
            ..Default::default()
        };
        assert!((huber_loss(&a, &b, &wide).unwrap() - 0.5 * mse).abs() < 1e-12);
        let d = 1e-4;
        let narrow = HuberConfig {
            delta: d,
            ..Default::default()
        };
        assert!((huber_loss(&a, &b, &narrow).unwrap() - (d * mae - d * d / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn huber_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = HuberConfig {
            delta: 0.7,
            ..Default::default()
        };
        let y = Tensor::from_fn([2, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
        // Keep every residual away from the kink at |e| = δ.
        let y_hat = y.map(|v| v + if v > 0.0 { 0.3 } else { -1.5 });
        let analytic = huber_grad(&y_hat, &y, &cfg).unwrap();
        let numeric = numeric_gradient(&y_hat, 1e-6, |p| huber_loss(p, &y, &cfg).unwrap());
        assert!(plfm_nn::gradcheck::relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = small(true);
        m.save(dir.path()).unwrap();
        let back = ConvLstm::load(dir.path()).unwrap();
        assert_eq!(back.config, m.config);
        let frames: Vec<Tensor> = (0..3)
            .map(|t| Tensor::full([1, 3, 8, 8], 0.1 * t as f64))
            .collect();
        let refs: Vec<&Tensor> = frames.iter().collect();
        let (a, b) = (
            m.predict_batch(&refs).unwrap(),
            back.predict_batch(&refs).unwrap(),
        );
        assert!(a.max_abs_diff(&b) < 1e-5);
    }
}
