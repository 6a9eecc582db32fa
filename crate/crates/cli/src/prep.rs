//! `preprocess`: vocabulary, Levi-graph cache and copy-aligned targets.
//!
//! Outputs live in `<out>/prep/`. A manifest records the content hash of
//! every input; a rerun with unchanged inputs writes nothing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kgqg_core::checkpoint::write_atomic;
use kgqg_core::dataset::{align_copy_targets, build_vocab, load_corpus, CopyAlignedTarget, QGExample, Split, Vocabulary};
use kgqg_core::graph::{to_levi, LeviGraph};
use kgqg_core::predictions::write_jsonl;

pub const PREP_DIR: &str = "prep";
pub const MANIFEST: &str = "manifest.json";
pub const VOCAB: &str = "vocab.txt";
const CACHE_VERSION: u32 = 1;

/// One cached example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub id: String,
    pub example: QGExample,
    pub levi: LeviGraph,
    pub target: CopyAlignedTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub split: Split,
    pub path: PathBuf,
    pub sha256: String,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepManifest {
    pub cache_version: u32,
    /// Hash over all inputs and settings; equal fingerprints mean equal
    /// outputs.
    pub fingerprint: String,
    pub min_freq: usize,
    pub vocab_size: usize,
    pub inputs: Vec<InputRecord>,
}

pub fn cache_file(split: Split) -> String {
    format!("{split}.cache.jsonl")
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("corpus {} cannot be read", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn fingerprint(min_freq: usize, hashes: &[(Split, String)]) -> String {
    let mut h = Sha256::new();
    h.update(format!("v{CACHE_VERSION};min_freq={min_freq}"));
    for (split, hash) in hashes {
        h.update(format!(";{split}={hash}"));
    }
    hex::encode(h.finalize())
}

pub struct Prepared {
    pub dir: PathBuf,
    pub manifest: PrepManifest,
    /// False when the existing cache was already up to date.
    pub wrote: bool,
}

/// Builds (or confirms) the cache for the given splits. The vocabulary
/// comes from the train split.
pub fn preprocess(out_dir: &Path, inputs: &[(Split, &Path)], min_freq: usize) -> Result<Prepared> {
    if !inputs.iter().any(|(s, _)| *s == Split::Train) {
        bail!("preprocess needs a train corpus (paths.train or --train)");
    }
    let mut hashes = Vec::new();
    for (split, path) in inputs {
        if !path.exists() {
            bail!("corpus {} does not exist", path.display());
        }
        hashes.push((*split, sha256_file(path)?));
    }
    let fp = fingerprint(min_freq, &hashes);
    let dir = out_dir.join(PREP_DIR);
    if let Some(existing) = read_manifest(&dir)? {
        let complete = dir.join(VOCAB).exists() && inputs.iter().all(|(s, _)| dir.join(cache_file(*s)).exists());
        if existing.fingerprint == fp && complete {
            log::info!("{} is up to date", dir.display());
            return Ok(Prepared {
                dir,
                manifest: existing,
                wrote: false,
            });
        }
    }

    let mut corpora = Vec::new();
    for (split, path) in inputs {
        let examples = load_corpus(path, *split).with_context(|| format!("validating {}", path.display()))?;
        corpora.push((*split, path.to_path_buf(), examples));
    }
    let train = &corpora.iter().find(|(s, ..)| *s == Split::Train).expect("checked above").2;
    let vocab = build_vocab(train, min_freq)?;

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(VOCAB), vocab.to_text().as_bytes())?;
    let mut records = Vec::new();
    for ((split, path, examples), (_, hash)) in corpora.into_iter().zip(hashes) {
        let rows: Vec<CacheRecord> = examples
            .into_iter()
            .map(|e| CacheRecord {
                id: e.id.clone(),
                levi: to_levi(&e.graph),
                target: align_copy_targets(&e),
                example: e,
            })
            .collect();
        write_jsonl(dir.join(cache_file(split)), &rows)?;
        records.push(InputRecord {
            split,
            path,
            sha256: hash,
            examples: rows.len(),
        });
    }
    let manifest = PrepManifest {
        cache_version: CACHE_VERSION,
        fingerprint: fp,
        min_freq,
        vocab_size: vocab.len(),
        inputs: records,
    };
    // manifest last: its presence marks a complete cache
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(Prepared {
        dir,
        manifest,
        wrote: true,
    })
}

fn read_manifest(dir: &Path) -> Result<Option<PrepManifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    // an unreadable manifest just means the cache is rebuilt
    Ok(serde_json::from_str(&text).ok())
}

pub fn load_vocab(prep: &Prepared) -> Result<Vocabulary> {
    Ok(Vocabulary::load(prep.dir.join(VOCAB))?)
}

pub fn load_cache(prep: &Prepared, split: Split) -> Result<Vec<CacheRecord>> {
    let path = prep.dir.join(cache_file(split));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}
