//! Model checkpoints: a flat tensor archive (`<name>.f32` + `<name>.manifest`)
//! next to the model's configuration in `<name>.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use plfm_nn::archive;
use plfm_nn::ParamStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PlfmError, Result};

pub fn stem(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn config_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.toml"))
}

/// Files making up one checkpoint, in a fixed order.
pub fn files(dir: &Path, name: &str) -> [PathBuf; 3] {
    let s = stem(dir, name);
    [
        archive::blob_path(&s),
        archive::manifest_path(&s),
        config_path(dir, name),
    ]
}

pub fn exists(dir: &Path, name: &str) -> bool {
    files(dir, name).iter().all(|p| p.is_file())
}

pub fn save<C: Serialize>(dir: &Path, name: &str, store: &ParamStore, config: &C) -> Result<()> {
    fs::create_dir_all(dir).map_err(PlfmError::io(dir))?;
    archive::save_store(store, &stem(dir, name))?;
    let path = config_path(dir, name);
    let text = toml::to_string(config).map_err(|e| PlfmError::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(PlfmError::io(&path))
}

pub fn load_config<C: DeserializeOwned>(dir: &Path, name: &str) -> Result<C> {
    let path = config_path(dir, name);
    let text = fs::read_to_string(&path).map_err(PlfmError::io(&path))?;
    toml::from_str(&text).map_err(|e| PlfmError::format(&path, e.to_string()))
}

/// Overwrites `store` with the archived tensors, matching names and shapes.
pub fn load_weights(dir: &Path, name: &str, store: &mut ParamStore) -> Result<()> {
    archive::load_store(store, &stem(dir, name))?;
    Ok(())
}
