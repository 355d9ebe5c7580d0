//! Flat tensor archives: one raw little-endian `f32` blob plus a TSV manifest of
//! `name<TAB>n,c,h,w` lines giving the order and shape of each tensor.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: blob holds {actual} values, manifest declares {expected}")]
    Length {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("parameter {name}: {reason}")]
    Mismatch { name: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("f32")
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

pub fn write_archive<'a>(
    stem: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), ArchiveError> {
    let blob = blob_path(stem);
    let manifest = manifest_path(stem);
    let mut b = BufWriter::new(fs::File::create(&blob).map_err(io_err(&blob))?);
    let mut m = String::new();
    for (name, t) in tensors {
        let [n, c, h, w] = t.shape();
        m.push_str(&format!("{name}\t{n},{c},{h},{w}\n"));
        for v in t.data() {
            b.write_all(&(*v as f32).to_le_bytes())
                .map_err(io_err(&blob))?;
        }
    }
    b.flush().map_err(io_err(&blob))?;
    fs::write(&manifest, m).map_err(io_err(&manifest))
}

pub fn read_archive(stem: &Path) -> Result<Vec<(String, Tensor)>, ArchiveError> {
    let blob_p = blob_path(stem);
    let manifest_p = manifest_path(stem);
    let text = fs::read_to_string(&manifest_p).map_err(io_err(&manifest_p))?;
    let bytes = fs::read(&blob_p).map_err(io_err(&blob_p))?;
    if bytes.len() % 4 != 0 {
        return Err(ArchiveError::Length {
            path: blob_p,
            expected: bytes.len() / 4 + 1,
            actual: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = |reason: &str| ArchiveError::Manifest {
            path: manifest_p.clone(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let (name, shape) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let dims: Vec<usize> = shape
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("shape is not four integers"))?;
        let shape: [usize; 4] = dims
            .try_into()
            .map_err(|_| bad("shape is not four integers"))?;
        let len: usize = shape.iter().product();
        if offset + len > values.len() {
            return Err(ArchiveError::Length {
                path: blob_p,
                expected: offset + len,
                actual: values.len(),
            });
        }
        out.push((
            name.to_string(),
            Tensor::from_vec(shape, values[offset..offset + len].to_vec()),
        ));
        offset += len;
    }
    if offset != values.len() {
        return Err(ArchiveError::Length {
            path: blob_p,
            expected: offset,
            actual: values.len(),
        });
    }
    Ok(out)
}

pub fn save_store(store: &ParamStore, stem: &Path) -> Result<(), ArchiveError> {
    write_archive(stem, store.ids().map(|id| (store.name(id), store.get(id))))
}

/// Loads every tensor of `store` by name. Names missing from the archive, or
/// present with a different shape, are errors; extra archive entries are not.
pub fn load_store(store: &mut ParamStore, stem: &Path) -> Result<(), ArchiveError> {
    let entries = read_archive(stem)?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (_, t) =
            entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| ArchiveError::Mismatch {
                    name: name.clone(),
                    reason: "missing from archive".into(),
                })?;
        if t.shape() != store.get(id).shape() {
            return Err(ArchiveError::Mismatch {
                reason: format!(
                    "archive shape {:?}, model shape {:?}",
                    t.shape(),
                    store.get(id).shape()
                ),
                name,
            });
        }
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}
