//! On-disk corpus layout and its manifest.
//!
//! ```text
//! <root>/<roi_id>/t<k>/s2.f32         clean optical frame (+ s2.meta)
//! <root>/<roi_id>/t<k>/s1.f32         SAR frame
//! <root>/<roi_id>/t<k>/s2_cloudy.f32  observed frame, when clouds were simulated
//! <root>/<roi_id>/t<k>/mask.f32       binary cloud mask
//! <root>/index.tsv                    one row per (roi, time step)
//! <root>/split.tsv                    roi_id → train | val | test
//! ```
//! Pre-downloaded tiles can be ingested by converting them into the same
//! tree; `load_index` falls back to scanning it when no manifest exists.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::synth::{mask_coverage, RoiSeries};
use crate::error::{PlfmError, Result};
use crate::image::{OpticalImage, Raster, SarImage};
use crate::io::{self, Sensor, TensorMeta};

pub const INDEX_FILE: &str = "index.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
const INDEX_HEADER: &str =
    "roi_id\ttime_index\toptical_path\tsar_path\tcoverage\tcloudy_path\tmask_path";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        })
    }
}

impl FromStr for SplitLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitLabel::Train),
            "val" => Ok(SplitLabel::Val),
            "test" => Ok(SplitLabel::Test),
            other => Err(format!("unknown split label {other:?}")),
        }
    }
}

/// One time step of one region; paths are relative to the corpus root.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub roi_id: String,
    pub time_index: usize,
    pub optical_path: PathBuf,
    pub sar_path: PathBuf,
    pub coverage: f64,
    pub cloudy_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
    /// Set membership per region.
    pub split_labels: Option<BTreeMap<String, SplitLabel>>,
}

/// Frames of one region loaded from disk, ordered by time.
#[derive(Clone, Debug)]
pub struct RoiFrames {
    pub roi_id: String,
    pub optical: Vec<OpticalImage>,
    /// Observed frames; the clean ones when no clouds were recorded.
    pub cloudy: Vec<OpticalImage>,
    pub sar: Vec<SarImage>,
    pub coverage: Vec<f64>,
}

impl DatasetIndex {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
            split_labels: None,
        }
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Region ids in sorted order.
    pub fn roi_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.iter().map(|e| e.roi_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Regions carrying `label`; an error when no split has been recorded.
    pub fn rois_in(&self, label: SplitLabel) -> Result<Vec<String>> {
        let labels = self.split_labels.as_ref().ok_or_else(|| {
            PlfmError::EmptyDataset(format!("{} has no split", self.root.display()))
        })?;
        Ok(labels
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(id, _)| id.clone())
            .collect())
    }

    pub fn load_roi(&self, roi_id: &str) -> Result<RoiFrames> {
        let mut entries: Vec<&IndexEntry> =
            self.entries.iter().filter(|e| e.roi_id == roi_id).collect();
        if entries.is_empty() {
            return Err(PlfmError::EmptyDataset(format!(
                "no entries for region {roi_id:?}"
            )));
        }
        entries.sort_by_key(|e| e.time_index);
        let mut frames = RoiFrames {
            roi_id: roi_id.to_string(),
            optical: Vec::new(),
            cloudy: Vec::new(),
            sar: Vec::new(),
            coverage: Vec::new(),
        };
        for e in entries {
            let clean = io::read_optical(&self.resolve(&e.optical_path))?;
            let cloudy = match &e.cloudy_path {
                Some(p) => io::read_optical(&self.resolve(p))?,
                None => clean.clone(),
            };
            frames.optical.push(clean);
            frames.cloudy.push(cloudy);
            frames.sar.push(io::read_sar(&self.resolve(&e.sar_path))?);
            frames.coverage.push(e.coverage);
        }
        Ok(frames)
    }

    /// Labels every region from a split result.
    pub fn set_split(&mut self, train: &[String], val: &[String], test: &[String]) {
        let mut labels = BTreeMap::new();
        for (ids, label) in [
            (train, SplitLabel::Train),
            (val, SplitLabel::Val),
            (test, SplitLabel::Test),
        ] {
            for id in ids {
                labels.insert(id.clone(), label);
            }
        }
        self.split_labels = Some(labels);
    }
}

fn rel(roi: &str, t: usize, file: &str) -> PathBuf {
    PathBuf::from(roi).join(format!("t{t}")).join(file)
}

/// Writes one synthetic region below `root` and returns its index rows.
pub fn write_series(root: &Path, series: &RoiSeries) -> Result<Vec<IndexEntry>> {
    let mut entries = Vec::new();
    for t in 0..series.optical.len() {
        let ts = Some(t as f64);
        let id = &series.roi_id;
        let entry = IndexEntry {
            roi_id: id.clone(),
            time_index: t,
            optical_path: rel(id, t, "s2.f32"),
            sar_path: rel(id, t, "s1.f32"),
            coverage: series.coverage(t),
            cloudy_path: Some(rel(id, t, "s2_cloudy.f32")),
            mask_path: Some(rel(id, t, "mask.f32")),
        };
        io::write_optical(
            &root.join(&entry.optical_path),
            &series.optical[t],
            Sensor::Synthetic,
            ts,
        )?;
        io::write_optical(
            &root.join(entry.cloudy_path.as_ref().expect("set above")),
            &series.cloudy[t],
            Sensor::Synthetic,
            ts,
        )?;
        io::write_sar(&root.join(&entry.sar_path), &series.sar[t], ts)?;
        let mask = &series.cloud_masks[t];
        let meta = TensorMeta::for_raster(mask, crate::image::RangeTag::Unit, Sensor::Synthetic)
            .with_timestamp(t as f64);
        io::write_tensor(
            &root.join(entry.mask_path.as_ref().expect("set above")),
            mask,
            &meta,
        )?;
        entries.push(entry);
    }
    Ok(entries)
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "-".to_string(), |p| p.display().to_string())
}

pub fn write_index(index: &DatasetIndex, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(PlfmError::io(root))?;
    let mut text = format!("{INDEX_HEADER}\n");
    for e in &index.entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.roi_id,
            e.time_index,
            e.optical_path.display(),
            e.sar_path.display(),
            e.coverage,
            opt_path(&e.cloudy_path),
            opt_path(&e.mask_path)
        ));
    }
    let path = root.join(INDEX_FILE);
    fs::write(&path, text).map_err(PlfmError::io(&path))?;
    if let Some(labels) = &index.split_labels {
        let mut text = String::from("roi_id\tset\n");
        for (id, label) in labels {
            text.push_str(&format!("{id}\t{label}\n"));
        }
        let path = root.join(SPLIT_FILE);
        fs::write(&path, text).map_err(PlfmError::io(&path))?;
    }
    Ok(())
}

fn parse_index(text: &str, path: &Path) -> Result<Vec<IndexEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| PlfmError::format(path, format!("line {}: {what}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let optional = |s: &str| (s != "-").then(|| PathBuf::from(s));
        entries.push(IndexEntry {
            roi_id: cols[0].to_string(),
            time_index: cols[1].parse().map_err(|_| bad("bad time index"))?,
            optical_path: PathBuf::from(cols[2]),
            sar_path: PathBuf::from(cols[3]),
            coverage: cols[4].parse().map_err(|_| bad("bad coverage"))?,
            cloudy_path: optional(cols[5]),
            mask_path: optional(cols[6]),
        });
    }
    Ok(entries)
}

fn parse_split(text: &str, path: &Path) -> Result<BTreeMap<String, SplitLabel>> {
    let mut labels = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| {
            PlfmError::format(path, format!("line {}: expected two columns", n + 1))
        })?;
        let label = label
            .trim()
            .parse()
            .map_err(|e: String| PlfmError::format(path, format!("line {}: {e}", n + 1)))?;
        labels.insert(id.to_string(), label);
    }
    Ok(labels)
}

/// Rebuilds entries from the directory tree.
pub fn scan_tree(root: &Path) -> Result<Vec<IndexEntry>> {
    let mut entries = Vec::new();
    let mut rois: Vec<PathBuf> = fs::read_dir(root)
        .map_err(PlfmError::io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    rois.sort();
    for roi_dir in rois {
        let roi = roi_dir
            .file_name()
            .expect("directory name")
            .to_string_lossy()
            .to_string();
        let mut t = 0;
        while roi_dir.join(format!("t{t}")).is_dir() {
            let exists = |f: &str| roi_dir.join(format!("t{t}")).join(f).is_file();
            if !exists("s2.f32") || !exists("s1.f32") {
                return Err(PlfmError::format(
                    roi_dir.join(format!("t{t}")),
                    "missing s1.f32 or s2.f32",
                ));
            }
            let mask_path = exists("mask.f32").then(|| rel(&roi, t, "mask.f32"));
            let coverage = match &mask_path {
                Some(p) => mask_coverage(&io::read_tensor(&root.join(p))?.0),
                None => 0.0,
            };
            entries.push(IndexEntry {
                roi_id: roi.clone(),
                time_index: t,
                optical_path: rel(&roi, t, "s2.f32"),
                sar_path: rel(&roi, t, "s1.f32"),
                coverage,
                cloudy_path: exists("s2_cloudy.f32").then(|| rel(&roi, t, "s2_cloudy.f32")),
                mask_path,
            });
            t += 1;
        }
    }
    Ok(entries)
}

fn check_entry(root: &Path, e: &IndexEntry) -> Result<()> {
    let mut paths = vec![&e.optical_path, &e.sar_path];
    paths.extend(e.cloudy_path.iter());
    paths.extend(e.mask_path.iter());
    for p in paths {
        let blob = root.join(p);
        let meta = io::read_meta(&blob)?;
        let len = fs::metadata(&blob).map_err(PlfmError::io(&blob))?.len() as usize;
        if len != 4 * meta.height * meta.width * meta.channels {
            return Err(PlfmError::format(&blob, "size disagrees with its sidecar"));
        }
    }
    Ok(())
}

/// Reads `index.tsv` (or scans the tree) and `split.tsv`, checking that every
/// referenced tensor and sidecar is readable.
pub fn load_index(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(PlfmError::format(root, "not a directory"));
    }
    let index_path = root.join(INDEX_FILE);
    let entries = if index_path.is_file() {
        let text = fs::read_to_string(&index_path).map_err(PlfmError::io(&index_path))?;
        parse_index(&text, &index_path)?
    } else {
        scan_tree(root)?
    };
    for e in &entries {
        check_entry(root, e)?;
    }
    let split_path = root.join(SPLIT_FILE);
    let split_labels = if split_path.is_file() {
        let text = fs::read_to_string(&split_path).map_err(PlfmError::io(&split_path))?;
        let labels = parse_split(&text, &split_path)?;
        if let Some(e) = entries.iter().find(|e| !labels.contains_key(&e.roi_id)) {
            return Err(PlfmError::format(
                &split_path,
                format!("region {} has no label", e.roi_id),
            ));
        }
        Some(labels)
    } else {
        None
    };
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        split_labels,
    })
}

/// Per-image bin counts of the clean optical frames, for the split search.
pub fn split_items(
    index: &DatasetIndex,
    bins: usize,
) -> Result<Vec<crate::dataset::split::SplitItem>> {
    index
        .entries
        .iter()
        .map(|e| {
            let img = io::read_optical(&index.resolve(&e.optical_path))?;
            Ok(crate::dataset::split::SplitItem {
                roi_id: e.roi_id.clone(),
                counts: crate::dataset::split::bin_counts(&img.raster, bins, img.range),
            })
        })
        .collect()
}

/// Loads a mask tensor as a raster.
pub fn read_mask(path: &Path) -> Result<Raster> {
    Ok(io::read_tensor(path)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synth_scene, SceneConfig};

    fn corpus(root: &Path, rois: usize) -> DatasetIndex {
        let cfg = SceneConfig {
            size: 16,
            coverage_min: 0.2,
            coverage_max: 0.6,
            ..Default::default()
        };
        let mut index = DatasetIndex::empty(root);
        for r in 0..rois {
            let s = synth_scene(format!("roi{r}"), r as u64, &cfg).unwrap();
            index.entries.extend(write_series(root, &s).unwrap());
        }
        index
    }

    #[test]
    fn empty_directory_gives_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let idx = load_index(dir.path()).unwrap();
        assert!(idx.entries.is_empty() && idx.split_labels.is_none());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = corpus(dir.path(), 3);
        idx.set_split(&["roi0".into()], &["roi1".into()], &["roi2".into()]);
        write_index(&idx, dir.path()).unwrap();
        let back = load_index(dir.path()).unwrap();
        assert_eq!(back, idx);
        let frames = back.load_roi("roi1").unwrap();
        assert_eq!(frames.optical.len(), 4);
        assert_eq!(
            back.rois_in(SplitLabel::Test).unwrap(),
            vec!["roi2".to_string()]
        );
    }

    #[test]
    fn scan_matches_written_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let idx = corpus(dir.path(), 2);
        assert_eq!(scan_tree(dir.path()).unwrap(), idx.entries);
    }

    #[test]
    fn corrupt_sidecar_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let idx = corpus(dir.path(), 1);
        write_index(&idx, dir.path()).unwrap();
        let side = dir.path().join("roi0/t2/s1.meta");
        fs::write(&side, "shape: x\n").unwrap();
        let err = load_index(dir.path()).unwrap_err().to_string();
        assert!(err.contains("roi0/t2/s1.meta"), "{err}");
    }
}
