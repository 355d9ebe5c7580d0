use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use plfm::cgan::{train_cgan, CganModels, CganSample, Generator, LossBundle};
use plfm::checkpoint;
use plfm::config::RunConfig;
use plfm::convlstm::{self, convlstm_forward, train_convlstm, ConvLstm, SequenceSample};
use plfm::dataset::{load_index, DatasetIndex, RoiFrames, SplitLabel};
use plfm::head::{self, train_head, HeadModel, HeadSample};
use plfm::image::TemporalSequence;
use plfm::pipeline::PlfmModels;
use serde::Serialize;

use crate::error::{io_error, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Branch {
    Convlstm,
    Cgan,
    Head,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub branch: Branch,
    /// Corpus root with a recorded split [default: paths.data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory shared by the three branches [default: paths.checkpoints].
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Cap on epochs (passes over the training set).
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Continue from the weights already in the checkpoint directory.
    #[arg(long)]
    pub resume: bool,
}

/// Regions of one split set, loaded from disk.
pub fn load_set(index: &DatasetIndex, label: SplitLabel) -> Result<Vec<RoiFrames>, CliError> {
    let ids = index.rois_in(label).map_err(|_| {
        CliError::Data(format!(
            "{} has no split; run `plfm dataset split`",
            index.root.display()
        ))
    })?;
    ids.iter().map(|id| Ok(index.load_roi(id)?)).collect()
}

/// Frame windows `[end − n, end)` of observed frames, each paired with the
/// index `end` of its target.
pub fn windows(roi: &RoiFrames, n: usize) -> impl Iterator<Item = (TemporalSequence, usize)> + '_ {
    (n..roi.optical.len()).map(move |end| {
        let seq = TemporalSequence::monthly(roi.cloudy[end - n..end].to_vec())
            .expect("equal-sized frames");
        (seq, end)
    })
}

/// `key = value` lines (qualified by their table) that differ between two
/// configurations as written to checkpoints.
pub fn config_diff<T: Serialize>(found: &T, wanted: &T) -> Vec<String> {
    fn lines<T: Serialize>(v: &T) -> BTreeMap<String, String> {
        let text = toml::to_string(v).unwrap_or_default();
        let mut table = String::new();
        let mut out = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.starts_with('[') {
                table = format!("{}.", line.trim_matches(['[', ']']));
            } else if let Some((k, v)) = line.split_once(" = ") {
                out.insert(format!("{table}{k}"), v.to_string());
            }
        }
        out
    }
    let (a, b) = (lines(found), lines(wanted));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| {
            let show = |v: Option<&String>| v.map_or("-", |v| v.as_str()).to_string();
            format!(
                "{k} (checkpoint {}, config {})",
                show(a.get(k)),
                show(b.get(k))
            )
        })
        .collect()
}

pub fn ensure_same<T: Serialize + PartialEq>(
    what: &str,
    found: &T,
    wanted: &T,
) -> Result<(), CliError> {
    if found == wanted {
        return Ok(());
    }
    Err(CliError::Incompatible(format!(
        "{what} checkpoint differs from the configuration: {}",
        config_diff(found, wanted).join(", ")
    )))
}

/// Append-only TSV log. A fresh run rewrites the header; a resumed one keeps
/// the `existing` rows and continues the numbering after them.
struct Log {
    file: File,
    path: PathBuf,
    existing: usize,
}

impl Log {
    fn open(path: PathBuf, header: &str, append: bool) -> Result<Self, CliError> {
        let existing = if append && path.is_file() {
            let f = File::open(&path).map_err(io_error(&path))?;
            BufReader::new(f).lines().count().saturating_sub(1)
        } else {
            0
        };
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing > 0)
            .truncate(existing == 0)
            .open(&path)
            .map_err(io_error(&path))?;
        if existing == 0 {
            writeln!(file, "{header}").map_err(io_error(&path))?;
        }
        Ok(Self {
            file,
            path,
            existing,
        })
    }

    fn row(&mut self, line: &str) {
        if let Err(e) = writeln!(self.file, "{line}").and_then(|_| self.file.flush()) {
            log::warn!("{}: {e}", self.path.display());
        }
    }
}

fn save_run_config(dir: &Path, branch: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let path = dir.join(format!("run_{branch}.toml"));
    fs::write(&path, cfg.to_toml()).map_err(io_error(&path))
}

pub fn run(args: TrainArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let data = args.data.clone().unwrap_or_else(|| cfg.paths.data.clone());
    let dir = args
        .checkpoints
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoints.clone());
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let index = load_index(&data)?;
    let train = load_set(&index, SplitLabel::Train)?;
    let val = load_set(&index, SplitLabel::Val)?;
    log::info!(
        "training {:?}: {} train / {} val regions",
        args.branch,
        train.len(),
        val.len()
    );
    println!("seed\t{}", cfg.seed);
    match args.branch {
        Branch::Convlstm => train_convlstm_branch(&args, cfg, &dir, &train, &val),
        Branch::Cgan => train_cgan_branch(&args, cfg, &dir, &train),
        Branch::Head => train_head_branch(&args, cfg, &dir, &train),
    }
}

fn sequence_samples(rois: &[RoiFrames], n: usize) -> Vec<SequenceSample> {
    rois.iter()
        .flat_map(|r| {
            windows(r, n).map(|(seq, end)| SequenceSample::new(seq.frames(), &r.optical[end]))
        })
        .collect()
}

fn train_convlstm_branch(
    args: &TrainArgs,
    cfg: &RunConfig,
    dir: &Path,
    train: &[RoiFrames],
    val: &[RoiFrames],
) -> Result<(), CliError> {
    let model_cfg = cfg.convlstm_model();
    let mut model = if args.resume && checkpoint::exists(dir, convlstm::CHECKPOINT_NAME) {
        let m = ConvLstm::load(dir)?;
        ensure_same("convlstm", &m.config, &model_cfg)?;
        m
    } else {
        ConvLstm::new(model_cfg)?
    };
    let n = model.config.seq_len;
    let (train_s, val_s) = (sequence_samples(train, n), sequence_samples(val, n));
    let mut log = Log::open(
        dir.join("convlstm_log.tsv"),
        "epoch\ttrain_loss\tval_loss\tlr",
        args.resume,
    )?;
    let offset = log.existing;
    let history = train_convlstm(&mut model, &train_s, &val_s, &cfg.convlstm_train(), |r| {
        log.row(&format!(
            "{}\t{}\t{}\t{}",
            offset + r.epoch,
            r.train_loss,
            r.val_loss,
            r.lr
        ));
    })?;
    model.save(dir)?;
    save_run_config(dir, "convlstm", cfg)?;
    if let Some(best) = history.best() {
        println!("best_epoch\t{}", offset + best.epoch);
        println!("val_loss\t{}", best.val_loss);
    }
    Ok(())
}

fn train_cgan_branch(
    args: &TrainArgs,
    cfg: &RunConfig,
    dir: &Path,
    train: &[RoiFrames],
) -> Result<(), CliError> {
    let (g_cfg, d_cfg) = (cfg.generator(), cfg.discriminator());
    let mut models = if args.resume && checkpoint::exists(dir, plfm::cgan::GENERATOR_NAME) {
        let m = CganModels::load(dir)?;
        ensure_same("generator", &m.generator.config, &g_cfg)?;
        ensure_same("discriminator", &m.d_sim.config, &d_cfg)?;
        m
    } else {
        CganModels::new(g_cfg, d_cfg)?
    };
    let pairs: Vec<CganSample> = train
        .iter()
        .flat_map(|r| {
            r.sar
                .iter()
                .zip(&r.optical)
                .map(|(sar, optical)| CganSample {
                    sar: sar.clone(),
                    optical: optical.clone(),
                })
        })
        .collect();
    let header = format!("step\t{}", LossBundle::TSV_HEADER);
    let mut log = Log::open(dir.join("cgan_log.tsv"), &header, args.resume)?;
    let offset = log.existing;
    let history = train_cgan(&mut models, &pairs, &cfg.cgan_train(pairs.len()), |r| {
        log.row(&format!("{}\t{}", offset + r.step, r.losses.to_tsv()));
    })?;
    models.save(dir)?;
    save_run_config(dir, "cgan", cfg)?;
    if let Some(last) = history.steps.last() {
        println!("steps\t{}", history.steps.len());
        println!("g_l1_loss\t{}", last.losses.g_l1_loss);
    }
    Ok(())
}

fn missing(dir: &Path, name: &str) -> CliError {
    CliError::Data(format!(
        "{}: no {name} checkpoint; train that branch first",
        dir.display()
    ))
}

fn train_head_branch(
    args: &TrainArgs,
    cfg: &RunConfig,
    dir: &Path,
    train: &[RoiFrames],
) -> Result<(), CliError> {
    if !checkpoint::exists(dir, convlstm::CHECKPOINT_NAME) {
        return Err(missing(dir, "convlstm"));
    }
    if !checkpoint::exists(dir, plfm::cgan::GENERATOR_NAME) {
        return Err(missing(dir, "generator"));
    }
    let lstm = ConvLstm::load(dir)?;
    let generator = Generator::load(dir)?;
    let head_cfg = cfg.head_model();
    let mut model = if args.resume && checkpoint::exists(dir, head::CHECKPOINT_NAME) {
        let m = HeadModel::load(dir)?;
        ensure_same("head", &m.config, &head_cfg)?;
        m
    } else {
        HeadModel::new(head_cfg)?
    };
    // Fails early when the branches disagree with the head's dimensions.
    let mut models = PlfmModels::new(lstm, generator, model.clone())?;
    let classes = model.config.classes;
    let mut samples = Vec::new();
    for r in train {
        for (seq, end) in windows(r, models.convlstm.config.seq_len) {
            let y_hat = convlstm_forward(&seq, &models.convlstm)?;
            let z_hat = plfm::cgan::generator_forward(&r.sar[end], &models.generator, false)?;
            samples.push(HeadSample::new(&z_hat, &y_hat, &r.optical[end], classes)?);
        }
    }
    let mut log = Log::open(dir.join("head_log.tsv"), "epoch\tloss", args.resume)?;
    let offset = log.existing;
    let history = train_head(&mut model, &samples, &cfg.head_train(), |r| {
        log.row(&format!("{}\t{}", offset + r.epoch, r.loss));
    })?;
    models.head = model;
    models.head.save(dir)?;
    save_run_config(dir, "head", cfg)?;
    if let Some(last) = history.epochs.last() {
        println!("loss\t{}", last.loss);
        println!(
            "pixel_accuracy\t{}",
            head::pixel_accuracy(&models.head, &samples)?
        );
    }
    Ok(())
}
