//! Checkpoint files: a JSON map of named parameters plus a `.meta.json` sidecar
//! holding what is needed to rebuild the model around them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainingConfig;
use crate::model::{Model, ModelShape};
use crate::tensor::{Tensor, TensorError};
use crate::text::Vocabulary;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint file {path}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    /// `[rows, cols]`
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainingConfig,
    pub shape: ModelShape,
    pub vocabulary: Vocabulary,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn params_to_map(model: &Model) -> BTreeMap<String, ParamEntry> {
    model
        .store
        .iter()
        .map(|(_, name, t)| (name.to_string(), ParamEntry { shape: [t.rows(), t.cols()], data: t.data().to_vec() }))
        .collect()
}

pub fn params_from_map(map: &BTreeMap<String, ParamEntry>) -> Result<BTreeMap<String, Tensor>, TensorError> {
    map.iter().map(|(k, e)| Ok((k.clone(), Tensor::new(e.shape[0], e.shape[1], e.data.clone())?))).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CheckpointError> {
    let text = serde_json::to_string(value).map_err(|source| CheckpointError::Json { path: path.into(), source })?;
    fs::write(path, text).map_err(|source| CheckpointError::Io { path: path.into(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CheckpointError::Json { path: path.into(), source })
}

/// Writes the parameters to `path` and the metadata next to it.
pub fn save(path: &Path, model: &Model, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    if vocab.len() != model.shape.vocab_size {
        return Err(CheckpointError::Incompatible(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.shape.vocab_size
        )));
    }
    write_json(path, &params_to_map(model))?;
    let meta = CheckpointMeta { config: model.cfg.clone(), shape: model.shape.clone(), vocabulary: vocab.clone() };
    write_json(&meta_path(path), &meta)
}

/// Rebuilds the model described by the sidecar and loads the parameters into it.
pub fn load(path: &Path) -> Result<(Model, Vocabulary), CheckpointError> {
    let meta: CheckpointMeta = read_json(&meta_path(path))?;
    meta.config.validate().map_err(CheckpointError::Incompatible)?;
    if meta.vocabulary.len() != meta.shape.vocab_size {
        return Err(CheckpointError::Incompatible("vocabulary size disagrees with model shape".into()));
    }
    let map: BTreeMap<String, ParamEntry> = read_json(path)?;
    let mut model = Model::new(&meta.config, meta.shape);
    model.store.load_named(&params_from_map(&map)?)?;
    Ok((model, meta.vocabulary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Model, Vocabulary) {
        let vocab = Vocabulary::build(["a", "b", "c"]);
        let cfg = TrainingConfig { d_model: 4, mlp_hidden: 4, n_p: 2, max_positions: 8, l_enc: 1, l_dec: 1, seed: 3, ..Default::default() };
        (Model::new(&cfg, ModelShape { vocab_size: vocab.len(), feature_dim: 2 }), vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let (mut model, vocab) = small();
        let w = model.head.w;
        model.store.get_mut(w).set(0, 0, 0.1 + 0.2);
        model.store.get_mut(w).set(0, 1, -1.0e-300);
        save(&path, &model, &vocab).unwrap();
        assert!(meta_path(&path).exists());
        let (back, v) = load(&path).unwrap();
        assert_eq!(v, vocab);
        assert_eq!(back.cfg, model.cfg);
        for ((_, n1, a), (_, n2, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let (model, vocab) = small();
        save(&path, &model, &vocab).unwrap();
        let mut map: BTreeMap<String, ParamEntry> = read_json(&path).unwrap();
        let name = model.store.name(model.head.b).to_string();
        map.insert(name, ParamEntry { shape: [1, 1], data: vec![0.0] });
        write_json(&path, &map).unwrap();
        assert!(load(&path).is_err());
        assert!(save(&path, &model, &Vocabulary::build(["a"])).is_err());
        assert!(matches!(load(&dir.path().join("missing.json")), Err(CheckpointError::Io { .. })));
    }
}
