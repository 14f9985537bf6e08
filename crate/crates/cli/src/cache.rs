//! Content-addressed dictionary cache.
//!
//! Entries are keyed by the preprocessed reference pixels and every
//! training parameter. Within a process each key is trained at most once;
//! across processes the first file to land wins and later writers reuse it.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use once_cell::sync::OnceCell;
use sha2::{Digest, Sha256};
use sparq_core::ksvd::{decode_dictionary, encode_dictionary, load_dictionary, DictionaryHeader};
use sparq_core::pipeline::preprocess;
use sparq_core::{train_reference_dictionary, Dictionary, GrayImage, TrainConfig};

const KEY_DOMAIN: &[u8] = b"sparq-dictionary-cache/1";
const EXTENSION: &str = "spqd";

/// Where a dictionary came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Trained,
    Cached,
}

pub fn cache_key(reference: &GrayImage, config: &TrainConfig) -> anyhow::Result<String> {
    let (pre, _) = preprocess(reference)?;
    let learn = &config.learn;
    let mut h = Sha256::new();
    h.update(KEY_DOMAIN);
    for v in [pre.rows(), pre.cols()] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(pre.pixels());
    for v in [
        learn.atoms,
        learn.sparsity,
        config.train_patches,
        learn.patch_side,
        learn.iterations,
    ] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(learn.seed.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

fn header(config: &TrainConfig) -> anyhow::Result<DictionaryHeader> {
    Ok(DictionaryHeader {
        tau: u32::try_from(config.learn.sparsity)?,
        patch_side: u32::try_from(config.learn.patch_side)?,
    })
}

fn matches(dict: &Dictionary, found: DictionaryHeader, config: &TrainConfig) -> bool {
    let side = config.learn.patch_side;
    dict.n() == side * side
        && dict.m() == config.learn.atoms
        && found.patch_side as usize == side
        && found.tau as usize == config.learn.sparsity
}

type Slot = Arc<OnceCell<(Arc<Dictionary>, Origin)>>;

#[derive(Debug, Default)]
pub struct DictionaryCache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot>>,
}

impl DictionaryCache {
    /// A cache that persists to `dir`, or lives only in memory when `None`.
    pub fn new(dir: Option<PathBuf>) -> anyhow::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating cache directory {}", d.display()))?;
        }
        Ok(Self {
            dir,
            slots: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.{EXTENSION}")))
    }

    /// Returns the dictionary for `reference`, training it if no valid cache
    /// entry exists.
    pub fn get_or_train(
        &self,
        reference: &GrayImage,
        config: &TrainConfig,
    ) -> anyhow::Result<(String, Arc<Dictionary>, Origin)> {
        let key = cache_key(reference, config)?;
        let slot: Slot = {
            let mut slots = self.slots.lock().expect("cache lock poisoned");
            slots.entry(key.clone()).or_default().clone()
        };
        let (dict, origin) = slot.get_or_try_init(|| self.load_or_train(&key, reference, config))?;
        Ok((key, dict.clone(), *origin))
    }

    fn load_or_train(
        &self,
        key: &str,
        reference: &GrayImage,
        config: &TrainConfig,
    ) -> anyhow::Result<(Arc<Dictionary>, Origin)> {
        let path = self.path_for(key);
        if let Some(p) = &path {
            if let Some(dict) = self.read_entry(p, config) {
                log::debug!("cache hit {}", p.display());
                return Ok((Arc::new(dict), Origin::Cached));
            }
        }
        let trained = train_reference_dictionary(reference, config)?;
        if trained.short {
            log::warn!(
                "reference yielded only {} informative training patches of {} requested",
                trained.patches_used,
                config.train_patches
            );
        }
        let Some(p) = path else {
            return Ok((Arc::new(trained.dictionary), Origin::Trained));
        };
        let bytes = encode_dictionary(&trained.dictionary, header(config)?)?;
        let dir = self.dir.as_deref().expect("path implies a directory");
        let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing to {}", dir.display()))?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        match tmp.persist_noclobber(&p) {
            Ok(_) => Ok((Arc::new(trained.dictionary), Origin::Trained)),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => {
                // another process got there first
                match self.read_entry(&p, config) {
                    Some(dict) => Ok((Arc::new(dict), Origin::Cached)),
                    None => {
                        log::warn!("replacing invalid cache entry {}", p.display());
                        e.file.persist(&p).with_context(|| format!("writing {}", p.display()))?;
                        Ok((Arc::new(trained.dictionary), Origin::Trained))
                    }
                }
            }
            Err(e) => Err(e.error).with_context(|| format!("writing {}", p.display())),
        }
    }

    fn read_entry(&self, path: &Path, config: &TrainConfig) -> Option<Dictionary> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cannot read cache entry {}: {e}", path.display());
                return None;
            }
        };
        match decode_dictionary(&bytes) {
            Ok((dict, found)) if matches(&dict, found, config) => Some(dict),
            Ok(_) => {
                log::warn!("cache entry {} does not match the configuration", path.display());
                None
            }
            Err(e) => {
                log::warn!("ignoring cache entry {}: {e}", path.display());
                None
            }
        }
    }
}

/// Loads a dictionary file and checks it against the scoring patch size.
pub fn load_checked(path: &Path, patch_side: usize) -> anyhow::Result<Dictionary> {
    let (dict, header) = load_dictionary(path).with_context(|| format!("loading dictionary {}", path.display()))?;
    if header.patch_side as usize != patch_side || dict.n() != patch_side * patch_side {
        anyhow::bail!(
            "dictionary {} was trained for {}x{} patches, not {patch_side}x{patch_side}",
            path.display(),
            header.patch_side,
            header.patch_side
        );
    }
    Ok(dict)
}
