use std::fs;
use std::path::PathBuf;

use clap::Subcommand;
use plfm::config::RunConfig;
use plfm::dataset::index::scan_tree;
use plfm::dataset::{
    load_index, split_dataset, synth_scene, write_index, write_series, DatasetIndex,
};
use plfm::seed::{self, streams};

use crate::error::{io_error, CliError};

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write a synthetic corpus of co-registered regions.
    Synth {
        /// Corpus root [default: paths.data].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of regions [default: dataset.rois].
        #[arg(long)]
        rois: Option<usize>,
    },
    /// Search for the histogram-balanced train/val/test split.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Candidate splits to score.
        #[arg(long)]
        iters: Option<usize>,
        /// Images sampled per side when scoring.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Rebuild index.tsv from the directory tree.
    Index {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

pub fn run(cmd: DatasetCommand, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        DatasetCommand::Synth { out, rois } => {
            let root = out.unwrap_or_else(|| cfg.paths.data.clone());
            let scene = cfg.scene();
            let count = rois.unwrap_or(cfg.dataset.rois);
            if count == 0 {
                return Err(CliError::Usage("--rois must be positive".into()));
            }
            let mut index = DatasetIndex::empty(&root);
            let terrain = seed::derive(cfg.seed, streams::TERRAIN);
            for i in 0..count {
                let series = synth_scene(
                    format!("roi{i:04}"),
                    seed::derive(terrain, i as u64),
                    &scene,
                )?;
                index.entries.extend(write_series(&root, &series)?);
            }
            write_index(&index, &root)?;
            println!("regions\t{count}");
            println!("root\t{}", root.display());
            Ok(())
        }
        DatasetCommand::Split {
            data,
            iters,
            n,
            bins,
        } => {
            let root = data.unwrap_or_else(|| cfg.paths.data.clone());
            let mut split = cfg.split();
            split.iterations = iters.unwrap_or(split.iterations);
            split.sample_size = n.unwrap_or(split.sample_size);
            split.bins = bins.unwrap_or(split.bins);
            let mut index = load_index(&root)?;
            let result = split_dataset(&index, &split)?;
            index.set_split(&result.train_ids, &result.val_ids, &result.test_ids);
            write_index(&index, &root)?;
            let trace_path = root.join("split_trace.tsv");
            let mut trace = String::from("iteration\tdissimilarity\n");
            for (i, d) in result.trace.iter().enumerate() {
                trace.push_str(&format!("{i}\t{d}\n"));
            }
            fs::write(&trace_path, trace).map_err(io_error(&trace_path))?;
            println!("dissimilarity\t{}", result.dissimilarity);
            println!("test_dissimilarity\t{}", result.test_dissimilarity);
            println!(
                "regions\ttrain {}\tval {}\ttest {}",
                result.train_ids.len(),
                result.val_ids.len(),
                result.test_ids.len()
            );
            Ok(())
        }
        DatasetCommand::Index { data } => {
            let root = data.unwrap_or_else(|| cfg.paths.data.clone());
            let index = DatasetIndex {
                entries: scan_tree(&root)?,
                ..DatasetIndex::empty(&root)
            };
            write_index(&index, &root)?;
            // Validates the manifest just written.
            let loaded = load_index(&root)?;
            println!("entries\t{}", loaded.entries.len());
            Ok(())
        }
    }
}
