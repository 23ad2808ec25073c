//! Checkpoint directories.
//!
//! ```text
//! manifest.txt        version, variant, epoch, seed, config_hash
//! config.txt          canonical experiment configuration
//! {name}.wsft         one file per parameter and running-statistics buffer
//! ```
//!
//! Loading is driven by the parameter template of the configured variant, so
//! only the files that variant needs are ever opened.

use std::fs;
use std::path::{Path, PathBuf};

use wsfcn_tensor::{wsft, DType, ParamStore};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{check_variant, init_params, Variant};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub version: u32,
    pub variant: Variant,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        format!(
            "version = {}\nvariant = {}\nepoch = {}\nseed = {}\nconfig_hash = {}\n",
            self.version, self.variant, self.epoch, self.seed, self.config_hash
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("checkpoint manifest", m);
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let version = int("version")? as u32;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        Ok(CheckpointManifest {
            version,
            variant: get("variant")?.parse().map_err(|_| bad("unknown variant".into()))?,
            epoch: int("epoch")? as usize,
            seed: int("seed")?,
            config_hash: get("config_hash")?.clone(),
        })
    }
}

/// File name of a parameter or buffer.
pub fn file_name(key: &str) -> String {
    format!("{}.wsft", key.replace('/', "__"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, store: &ParamStore, cfg: &ExperimentConfig, epoch: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        version: FORMAT_VERSION,
        variant: cfg.model.variant,
        epoch,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    write(&dir.join(MANIFEST), manifest.to_text().as_bytes())?;
    write(&dir.join(CONFIG), cfg.canonical_text().as_bytes())?;
    for (name, p) in store.iter() {
        write(&dir.join(file_name(name)), &wsft::encode(p.value()))?;
    }
    for (name, b) in store.buffers() {
        write(&dir.join(file_name(name)), &wsft::encode(b))?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub store: ParamStore,
    pub config: ExperimentConfig,
    pub manifest: CheckpointManifest,
    /// Every tensor file that was opened, in load order.
    pub files_read: Vec<PathBuf>,
}

/// Loads a checkpoint. `expected` rejects checkpoints of another variant.
pub fn load_checkpoint(dir: &Path, expected: Option<Variant>) -> Result<LoadedCheckpoint> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let manifest = CheckpointManifest::parse(&read(MANIFEST)?)?;
    if let Some(v) = expected {
        if v != manifest.variant {
            return Err(Error::VariantMismatch {
                expected: v.to_string(),
                found: manifest.variant.to_string(),
            });
        }
    }
    let config = ExperimentConfig::parse(&read(CONFIG)?, None)?;
    if config.hash() != manifest.config_hash {
        return Err(Error::format("checkpoint", "config hash does not match the manifest"));
    }
    if config.model.variant != manifest.variant {
        return Err(Error::format("checkpoint", "manifest and config name different variants"));
    }

    let template = init_params(&config.model, 0, DType::F32)?;
    let mut store = ParamStore::new();
    let mut files_read = Vec::new();
    let mut load = |name: &str, shape| -> Result<_> {
        let path = dir.join(file_name(name));
        let t = wsft::load(&path).map_err(|e| match e {
            wsfcn_tensor::TensorError::Io(source) => Error::io(&path, source),
            wsfcn_tensor::TensorError::Format(m) => Error::format("WSFT file", format!("{}: {m}", path.display())),
            other => other.into(),
        })?;
        if t.shape() != shape {
            return Err(Error::format(
                "checkpoint",
                format!("{name}: shape {:?} differs from the model's {:?}", t.shape().dims(), shape),
            ));
        }
        files_read.push(path);
        Ok(t)
    };
    for (name, p) in template.iter() {
        let t = load(name, p.value().shape())?;
        store.insert(name, t, p.lr_multiplier())?;
    }
    for (name, b) in template.buffers() {
        let t = load(name, b.shape())?;
        store.insert_buffer(name, t)?;
    }
    check_variant(&store, &config.model)?;
    Ok(LoadedCheckpoint {
        store,
        config,
        manifest,
        files_read,
    })
}
