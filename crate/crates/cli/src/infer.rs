use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use plfm::checkpoint;
use plfm::config::RunConfig;
use plfm::dataset::{load_index, SplitLabel};
use plfm::image::{OpticalImage, TemporalSequence};
use plfm::io::{
    export_png, read_optical, read_sar, write_optical, write_tensor, Sensor, TensorMeta,
};
use plfm::pipeline::{plfm_infer_detailed, PlfmModels};
use plfm::{cgan, convlstm, head};
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError};
use crate::train::{load_set, windows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Set {
    Train,
    Val,
    Test,
}

impl From<Set> for SplitLabel {
    fn from(s: Set) -> Self {
        match s {
            Set::Train => SplitLabel::Train,
            Set::Val => SplitLabel::Val,
            Set::Test => SplitLabel::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Directory holding the convlstm, generator and head checkpoints [default: paths.checkpoints].
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Corpus root; every window of the chosen set is reconstructed.
    #[arg(long, conflicts_with_all = ["frames", "sar"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Set::Test)]
    pub set: Set,
    /// Observed optical frames, oldest first (instead of --data).
    #[arg(long, num_args = 1.., requires = "sar")]
    pub frames: Vec<PathBuf>,
    /// SAR acquisition at the target date (instead of --data).
    #[arg(long, requires = "frames")]
    pub sar: Option<PathBuf>,
    /// Output name when reconstructing a single window.
    #[arg(long, default_value = "pred")]
    pub id: String,
    /// Output directory [default: paths.output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the branch estimates to <out>/intermediates/.
    #[arg(long)]
    pub dump_intermediates: bool,
    /// Also write an 8-bit PNG next to each prediction.
    #[arg(long)]
    pub png: bool,
}

/// SHA-256 over every file of a checkpoint, in a fixed order.
pub fn checkpoint_sha256(dir: &Path, name: &str) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for path in checkpoint::files(dir, name) {
        hasher.update(fs::read(&path).map_err(io_error(&path))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

struct Job {
    id: String,
    seq: TemporalSequence,
    sar: plfm::image::SarImage,
}

fn jobs(args: &InferArgs, cfg: &RunConfig, seq_len: usize) -> Result<Vec<Job>, CliError> {
    if let Some(sar) = &args.sar {
        if args.frames.len() != seq_len {
            return Err(CliError::Usage(format!(
                "--frames needs {seq_len} images, got {}",
                args.frames.len()
            )));
        }
        let frames = args
            .frames
            .iter()
            .map(|p| Ok(read_optical(p)?))
            .collect::<Result<Vec<_>, CliError>>()?;
        return Ok(vec![Job {
            id: args.id.clone(),
            seq: TemporalSequence::monthly(frames)?,
            sar: read_sar(sar)?,
        }]);
    }
    let root = args.data.clone().unwrap_or_else(|| cfg.paths.data.clone());
    let index = load_index(&root)?;
    let mut out = Vec::new();
    for roi in load_set(&index, args.set.into())? {
        for (seq, end) in windows(&roi, seq_len) {
            out.push(Job {
                id: format!("{}_t{end}", roi.roi_id),
                seq,
                sar: roi.sar[end].clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no {:?} region has more than {seq_len} frames",
            root.display(),
            args.set
        )));
    }
    Ok(out)
}

fn write_prediction(
    path: &Path,
    img: &OpticalImage,
    hashes: &[(&str, String)],
) -> Result<(), CliError> {
    let mut meta = TensorMeta::for_raster(&img.raster, img.range, Sensor::Synthetic);
    for (k, v) in hashes {
        meta.extra.insert(format!("{k}_sha256"), v.clone());
    }
    Ok(write_tensor(path, &img.raster, &meta)?)
}

pub fn run(args: InferArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = args
        .checkpoints
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoints.clone());
    for name in [
        convlstm::CHECKPOINT_NAME,
        cgan::GENERATOR_NAME,
        head::CHECKPOINT_NAME,
    ] {
        if !checkpoint::exists(&dir, name) {
            return Err(CliError::Data(format!(
                "{}: no {name} checkpoint",
                dir.display()
            )));
        }
    }
    let models = PlfmModels::load(&dir, &dir, &dir)?;
    let hashes = [
        (
            "convlstm",
            checkpoint_sha256(&dir, convlstm::CHECKPOINT_NAME)?,
        ),
        ("generator", checkpoint_sha256(&dir, cgan::GENERATOR_NAME)?),
        ("head", checkpoint_sha256(&dir, head::CHECKPOINT_NAME)?),
    ];
    let jobs = jobs(&args, cfg, models.convlstm.config.seq_len)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    fs::create_dir_all(&out).map_err(io_error(&out))?;
    let inter = out.join("intermediates");
    if args.dump_intermediates {
        fs::create_dir_all(&inter).map_err(io_error(&inter))?;
    }
    for job in &jobs {
        let result = plfm_infer_detailed(&job.seq, &job.sar, &models)?;
        write_prediction(&out.join(format!("{}.f32", job.id)), &result.fused, &hashes)?;
        if args.png {
            export_png(&out.join(format!("{}.png", job.id)), &result.fused)?;
        }
        if args.dump_intermediates {
            write_optical(
                &inter.join(format!("{}_yhat.f32", job.id)),
                &result.y_hat,
                Sensor::Synthetic,
                None,
            )?;
            write_optical(
                &inter.join(format!("{}_zhat.f32", job.id)),
                &result.z_hat,
                Sensor::Synthetic,
                None,
            )?;
        }
        log::info!("{}", job.id);
    }
    println!("predictions\t{}", jobs.len());
    for (k, v) in &hashes {
        println!("{k}_sha256\t{v}");
    }
    Ok(())
}
