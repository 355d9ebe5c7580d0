use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use plfm::config::RunConfig;
use plfm::dataset::index::{read_mask, INDEX_FILE};
use plfm::dataset::load_index;
use plfm::evaluation::{
    estimate_coverage_white, evaluate_pair, rows_to_tsv, summarize, summary_to_tsv, EvalRow,
};
use plfm::image::OpticalImage;
use plfm::io::read_optical;

use crate::error::{io_error, CliError};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predictions named `<id>.f32`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Corpus root (ids `<region>_t<k>`) or a directory of `<id>.f32` references.
    #[arg(long)]
    pub gt: PathBuf,
    /// Where metrics.tsv and summary.tsv go [default: paths.output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `<id>.f32` blobs directly inside `dir`, keyed by id.
fn blobs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "f32") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// `roi0003_t3` → (`roi0003`, 3).
fn parse_id(id: &str) -> Option<(&str, usize)> {
    let (roi, t) = id.rsplit_once("_t")?;
    Some((roi, t.parse().ok()?))
}

struct Reference {
    image: OpticalImage,
    coverage: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn corpus_references(root: &Path, ids: &[&String], white: f64) -> Result<Vec<Reference>, CliError> {
    let index = load_index(root)?;
    ids.iter()
        .map(|id| {
            let entry = parse_id(id)
                .and_then(|(roi, t)| {
                    index
                        .entries
                        .iter()
                        .find(|e| e.roi_id == roi && e.time_index == t)
                })
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "prediction {id} has no reference in {}",
                        root.display()
                    ))
                })?;
            let image = read_optical(&index.resolve(&entry.optical_path))?;
            let coverage = if entry.coverage.is_finite() {
                entry.coverage
            } else if let Some(m) = &entry.mask_path {
                mean(read_mask(&index.resolve(m))?.data())
            } else if let Some(c) = &entry.cloudy_path {
                estimate_coverage_white(&read_optical(&index.resolve(c))?, white)
            } else {
                estimate_coverage_white(&image, white)
            };
            Ok(Reference { image, coverage })
        })
        .collect()
}

/// References in a plain directory. Coverage comes from `<id>_mask.f32`, else
/// from bright pixels of `<id>_cloudy.f32`, else of the reference itself.
fn plain_references(
    dir: &Path,
    gt: &BTreeMap<String, PathBuf>,
    ids: &[&String],
    white: f64,
) -> Result<Vec<Reference>, CliError> {
    ids.iter()
        .map(|id| {
            let image = read_optical(&gt[*id])?;
            let mask = dir.join(format!("{id}_mask.f32"));
            let cloudy = dir.join(format!("{id}_cloudy.f32"));
            let coverage = if mask.is_file() {
                mean(read_mask(&mask)?.data())
            } else if cloudy.is_file() {
                estimate_coverage_white(&read_optical(&cloudy)?, white)
            } else {
                estimate_coverage_white(&image, white)
            };
            Ok(Reference { image, coverage })
        })
        .collect()
}

pub fn run(args: EvaluateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let preds = blobs(&args.pred)?;
    if preds.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no .f32 predictions",
            args.pred.display()
        )));
    }
    let ids: Vec<&String> = preds.keys().collect();
    let white = cfg.eval.white_threshold;
    let refs = if args.gt.join(INDEX_FILE).is_file() {
        corpus_references(&args.gt, &ids, white)?
    } else {
        let gt: BTreeMap<String, PathBuf> = blobs(&args.gt)?
            .into_iter()
            .filter(|(id, _)| !id.ends_with("_mask") && !id.ends_with("_cloudy"))
            .collect();
        let unpaired: Vec<&String> = ids
            .iter()
            .copied()
            .filter(|id| !gt.contains_key(*id))
            .chain(gt.keys().filter(|id| !preds.contains_key(*id)))
            .collect();
        if !unpaired.is_empty() {
            let names: Vec<&str> = unpaired.iter().map(|s| s.as_str()).collect();
            return Err(CliError::Data(format!(
                "unpaired images: {}",
                names.join(", ")
            )));
        }
        plain_references(&args.gt, &gt, &ids, white)?
    };
    let eval = cfg.eval();
    let mut rows: Vec<EvalRow> = Vec::with_capacity(ids.len());
    for (id, r) in ids.iter().zip(&refs) {
        let pred = read_optical(&preds[*id])?;
        rows.push(evaluate_pair(id, &pred, &r.image, r.coverage, &eval)?);
    }
    let out = args.out.unwrap_or_else(|| cfg.paths.output.clone());
    fs::create_dir_all(&out).map_err(io_error(&out))?;
    let metrics = out.join("metrics.tsv");
    fs::write(&metrics, rows_to_tsv(&rows)).map_err(io_error(&metrics))?;
    let summary = summary_to_tsv(&summarize(&rows));
    let summary_path = out.join("summary.tsv");
    fs::write(&summary_path, &summary).map_err(io_error(&summary_path))?;
    print!("{summary}");
    Ok(())
}
