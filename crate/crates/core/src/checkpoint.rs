//! Checkpoint directories: a JSON manifest, raw little-endian tensors, the
//! vocabulary and (when used) the KG embedding table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamState, ParamStore, Scalar};
use crate::dataset::Vocabulary;
use crate::embed_init::KgEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Graph2Seq;
use crate::trainer::{Stage, Trainer};
use crate::training::{Config, EarlyStopping, PlateauScheduler};

pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";
pub const VOCAB: &str = "vocab.txt";
pub const KG_TABLE: &str = "kg_table.tsv";

const MAGIC: &[u8; 8] = b"KGQGTNS1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Indices of rows the optimizer must not move.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_hash: String,
    pub config: Config,
    pub stage: Stage,
    pub epoch: usize,
    pub step: u64,
    pub dev_bleu4: Option<f64>,
    pub best_dev_bleu4: Option<f64>,
    pub rng: ChaCha8Rng,
    pub adam: AdamState,
    pub scheduler: PlateauScheduler,
    pub stopper: EarlyStopping,
    /// Parameter order in `tensors.bin`. Each tensor is followed by its two
    /// Adam moments when `has_moments` is set.
    pub tensors: Vec<TensorEntry>,
    pub has_moments: bool,
    pub kg_table: bool,
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn push_tensor<F: Scalar>(out: &mut Vec<u8>, a: &Array2<F>) {
    for &x in a.iter() {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
}

/// Saves everything needed to resume `trainer` or to decode with it.
/// `dev_bleu4` is the score of the current parameters.
pub fn save<F: Scalar>(dir: &Path, trainer: &Trainer<F>, dev_bleu4: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = &trainer.store;
    let (m, v) = trainer.adam.moments();
    let mut bytes = MAGIC.to_vec();
    let mut tensors = Vec::new();
    for id in store.ids() {
        let value = store.get(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            rows: value.nrows(),
            cols: value.ncols(),
            frozen_rows: store
                .frozen_rows(id)
                .map(|f| f.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect())
                .unwrap_or_default(),
        });
        push_tensor(&mut bytes, value);
        push_tensor(&mut bytes, &m[id.index()]);
        push_tensor(&mut bytes, &v[id.index()]);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_hash: trainer.config.model_hash(),
        config: trainer.config.clone(),
        stage: trainer.stage,
        epoch: trainer.epoch,
        step: trainer.step,
        dev_bleu4,
        best_dev_bleu4: trainer.stopper.best,
        rng: trainer.rng.clone(),
        adam: trainer.adam.state(),
        scheduler: trainer.scheduler.clone(),
        stopper: trainer.stopper.clone(),
        tensors,
        has_moments: true,
        kg_table: trainer.model.kg.is_some(),
    };
    write_atomic(&dir.join(TENSORS), &bytes)?;
    write_atomic(&dir.join(VOCAB), trainer.model.vocab.to_text().as_bytes())?;
    if let Some(kg) = &trainer.model.kg {
        write_atomic(&dir.join(KG_TABLE), kg.to_text().as_bytes())?;
    }
    // manifest last: a directory with a manifest is complete
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            path.display(),
            manifest.format_version
        )));
    }
    if manifest.config.model_hash() != manifest.model_hash {
        return Err(Error::Checkpoint(format!(
            "{}: stored model hash does not match the stored configuration",
            path.display()
        )));
    }
    Ok(manifest)
}

/// A checkpoint rebuilt in memory.
pub struct Loaded<F> {
    pub manifest: Manifest,
    pub model: Graph2Seq,
    pub store: ParamStore<F>,
    moments: Option<(Vec<Array2<F>>, Vec<Array2<F>>)>,
}

pub fn load<F: Scalar>(dir: &Path) -> Result<Loaded<F>> {
    let manifest = read_manifest(dir)?;
    let vocab = Arc::new(Vocabulary::load(dir.join(VOCAB))?);
    let kg = if manifest.kg_table {
        Some(KgEmbeddingTable::load(dir.join(KG_TABLE))?)
    } else {
        None
    };
    // initial values are overwritten below; the seed is irrelevant
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Graph2Seq::new(&mut store, manifest.config.model.clone(), vocab, None, kg, &mut rng)?;
    if store.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, model has {}",
            manifest.tensors.len(),
            store.len()
        )));
    }

    let path = dir.join(TENSORS);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let per_tensor = if manifest.has_moments { 3 } else { 1 };
    let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * per_tensor).sum();
    let payload = &bytes[MAGIC.len()..];
    if payload.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes of tensor data, expected {}",
            path.display(),
            payload.len(),
            expected * 8
        )));
    }
    let mut chunks = payload.chunks_exact(8).map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())));
    let mut take = |rows: usize, cols: usize| -> Array2<F> {
        Array2::from_shape_fn((rows, cols), |_| chunks.next().expect("length checked"))
    };
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for entry in &manifest.tensors {
        let id = store
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no parameter {}", entry.name)))?;
        if store.get(id).dim() != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!(
                "{}: stored shape {}x{}, model expects {:?}",
                entry.name,
                entry.rows,
                entry.cols,
                store.get(id).dim()
            )));
        }
        *store.get_mut(id) = take(entry.rows, entry.cols);
        if manifest.has_moments {
            m.push((id, take(entry.rows, entry.cols)));
            v.push((id, take(entry.rows, entry.cols)));
        }
        if !entry.frozen_rows.is_empty() {
            let mut frozen = vec![false; entry.rows];
            for &r in &entry.frozen_rows {
                *frozen.get_mut(r).ok_or_else(|| Error::Checkpoint(format!("{}: frozen row {r} out of range", entry.name)))? = true;
            }
            store.set_frozen_rows(id, frozen);
        }
    }
    if !store.all_finite() {
        return Err(Error::Checkpoint(format!("{}: non-finite parameters", path.display())));
    }
    let moments = manifest.has_moments.then(|| {
        m.sort_by_key(|(id, _)| *id);
        v.sort_by_key(|(id, _)| *id);
        (m.into_iter().map(|(_, a)| a).collect(), v.into_iter().map(|(_, a)| a).collect())
    });
    Ok(Loaded {
        manifest,
        model,
        store,
        moments,
    })
}

impl<F: Scalar> Loaded<F> {
    /// The trainer exactly as it was saved: optimizer moments, random
    /// stream, schedules and counters.
    pub fn resume(self) -> Result<Trainer<F>> {
        let Loaded {
            manifest,
            model,
            store,
            moments,
        } = self;
        let mut t = Trainer::new(model, store, manifest.config, manifest.stage);
        let (m, v) = moments.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        t.adam = Adam::new(&t.store, manifest.adam.lr);
        t.adam.restore(&manifest.adam, m, v);
        t.rng = manifest.rng;
        t.epoch = manifest.epoch;
        t.step = manifest.step;
        t.scheduler = manifest.scheduler;
        t.stopper = manifest.stopper;
        Ok(t)
    }

    /// A fresh trainer for `stage` starting from these parameters, with a
    /// new optimizer and schedules. `config` may change training settings
    /// but not the model.
    pub fn restart(self, config: Config, stage: Stage) -> Result<Trainer<F>> {
        if config.model_hash() != self.manifest.model_hash {
            return Err(Error::Checkpoint(
                "model configuration differs from the checkpoint's".into(),
            ));
        }
        let mut t = Trainer::new(self.model, self.store, config, stage);
        t.step = self.manifest.step;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy_trainer;

    #[test]
    fn round_trip_preserves_parameters_and_scores() {
        let dir = tempfile::tempdir().unwrap();
        let (mut t, data) = toy_trainer(Stage::Xent, 5);
        for _ in 0..3 {
            t.train_epoch(&data).unwrap();
        }
        let before = t.evaluate(&data).unwrap();
        save(dir.path(), &t, Some(before.bleu4)).unwrap();
        let loaded = load::<f32>(dir.path()).unwrap();
        for id in t.store.ids() {
            let other = loaded.store.find(t.store.name(id)).unwrap();
            assert_eq!(t.store.get(id), loaded.store.get(other));
            assert_eq!(t.store.frozen_rows(id), loaded.store.frozen_rows(other));
        }
        let resumed = loaded.resume().unwrap();
        let after = resumed.evaluate(&data).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let (mut a, data) = toy_trainer(Stage::Xent, 9);
        a.train_epoch(&data).unwrap();
        save(dir.path(), &a, None).unwrap();
        let mut b = load::<f32>(dir.path()).unwrap().resume().unwrap();
        for _ in 0..2 {
            assert_eq!(a.train_epoch(&data).unwrap(), b.train_epoch(&data).unwrap());
        }
    }

    #[test]
    fn restart_rejects_other_model_config() {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = toy_trainer(Stage::Xent, 1);
        save(dir.path(), &t, None).unwrap();
        let mut config = t.config.clone();
        config.train.gamma = 0.5;
        assert!(load::<f32>(dir.path()).unwrap().restart(config.clone(), Stage::Rl).is_ok());
        config.model.hops += 1;
        assert!(matches!(
            load::<f32>(dir.path()).unwrap().restart(config, Stage::Rl),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_tensors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = toy_trainer(Stage::Xent, 1);
        save(dir.path(), &t, None).unwrap();
        let path = dir.path().join(TENSORS);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load::<f32>(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn tampered_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = toy_trainer(Stage::Xent, 1);
        save(dir.path(), &t, None).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"hops\": 2", "\"hops\": 3");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Checkpoint(_))));
    }
}
