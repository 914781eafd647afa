//! Model checkpoints: a JSON manifest plus one little-endian `f64` blob per
//! tensor, stored next to it as `<stem>.<tensor>.f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{DummyModel, FcModel, LinearHead, ModelKind, ProjModel};
use crate::error::{Error, Result};
use crate::model::{CBLayer, ConceptModel, SupCbm};
use crate::optim::{EpochMetrics, TrainConfig};
use crate::vocab::VocabBundle;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub kind: ModelKind,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub alpha: f64,
    #[serde(rename = "vocab-sha256", default, skip_serializing_if = "Option::is_none")]
    pub vocab_sha256: Option<String>,
    pub seed: u64,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochMetrics>,
}

/// Any of the trainable models.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Supcbm(SupCbm),
    Fc(FcModel),
    Dummy(DummyModel),
    Proj(ProjModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Supcbm(_) => ModelKind::Supcbm,
            Model::Fc(_) => ModelKind::SupcbmFc,
            Model::Dummy(_) => ModelKind::Dummy,
            Model::Proj(_) => ModelKind::CbmProj,
        }
    }

    pub fn as_dyn(&self) -> &dyn ConceptModel {
        match self {
            Model::Supcbm(m) => m,
            Model::Fc(m) => m,
            Model::Dummy(m) => m,
            Model::Proj(m) => m,
        }
    }

    /// Named tensors with their `(rows, cols)`.
    fn tensors(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        match self {
            Model::Supcbm(m) => layer_tensors(&m.layer),
            Model::Fc(m) => {
                let mut t = layer_tensors(&m.layer);
                let l = m.head_bias.len();
                t.push(("head", m.layer.num_concepts(), l, &m.head));
                t.push(("head_bias", 1, l, &m.head_bias));
                t
            }
            Model::Dummy(m) => head_tensors(&m.head),
            Model::Proj(m) => {
                let mut t = vec![("concepts", m.head.inputs, m.dim, m.concepts.as_slice())];
                t.extend(head_tensors(&m.head));
                t
            }
        }
    }
}

fn layer_tensors(layer: &CBLayer) -> Vec<(&'static str, usize, usize, &[f64])> {
    vec![
        ("weights", layer.num_concepts(), layer.dim, &layer.weights),
        ("bias", 1, layer.num_concepts(), &layer.bias),
    ]
}

fn head_tensors(head: &LinearHead) -> Vec<(&'static str, usize, usize, &[f64])> {
    vec![
        ("head", head.num_classes(), head.inputs, &head.weights),
        ("head_bias", 1, head.num_classes(), &head.bias),
    ]
}

/// Writes `model` to `manifest_path` and its tensor blobs alongside.
pub fn save(
    manifest_path: &Path,
    model: &Model,
    config: &TrainConfig,
    vocab_sha256: Option<String>,
    history: &[EpochMetrics],
) -> Result<CheckpointManifest> {
    let dyn_model = model.as_dyn();
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut tensors = Vec::new();
    for (name, rows, cols, data) in model.tensors() {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = format!("{stem}.{name}.f64");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows,
            cols,
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind: model.kind(),
        d: dyn_model.input_dim(),
        m: dyn_model.num_units(),
        l: dyn_model.num_classes(),
        alpha: config.alpha,
        vocab_sha256,
        seed: config.seed,
        config: config.clone(),
        tensors,
        history: history.to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(manifest_path: &Path) -> Result<CheckpointManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: CheckpointManifest =
        serde_path_to_error::deserialize(de).map_err(|e| Error::Malformed {
            origin: manifest_path.display().to_string(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(manifest)
}

struct Blobs<'a> {
    dir: &'a Path,
    manifest: &'a CheckpointManifest,
}

impl Blobs<'_> {
    fn get(&self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let entry = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name:?}")))?;
        if (entry.rows, entry.cols) != (rows, cols) {
            return Err(Error::shape(
                format!("{name} {rows}x{cols}"),
                format!("{}x{}", entry.rows, entry.cols),
            ));
        }
        let path = self.dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != rows * cols * 8 {
            return Err(Error::SizeMismatch(format!(
                "{} holds {} bytes, expected {}",
                path.display(),
                bytes.len(),
                rows * cols * 8
            )));
        }
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(Error::ChecksumMismatch(format!("{}", path.display())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(values)
    }
}

/// Loads a checkpoint. Bottleneck models scored through the intervention
/// matrix need the vocabulary they were trained with; its fingerprint must
/// match the one recorded in the manifest.
pub fn load(manifest_path: &Path, vocab: Option<&VocabBundle>) -> Result<Model> {
    let manifest = read_manifest(manifest_path)?;
    if let (Some(expected), Some(bundle)) = (&manifest.vocab_sha256, vocab) {
        let actual = bundle.fingerprint();
        if &actual != expected {
            return Err(Error::ChecksumMismatch(format!(
                "checkpoint was trained against vocabulary {expected}, got {actual}"
            )));
        }
    }
    let blobs = Blobs {
        dir: manifest_path.parent().unwrap_or(Path::new(".")),
        manifest: &manifest,
    };
    let (d, m, l) = (manifest.d, manifest.m, manifest.l);
    let layer = || -> Result<CBLayer> {
        Ok(CBLayer {
            dim: d,
            weights: blobs.get("weights", m, d)?,
            bias: blobs.get("bias", 1, m)?,
        })
    };
    let head = |inputs: usize| -> Result<LinearHead> {
        Ok(LinearHead {
            inputs,
            weights: blobs.get("head", l, inputs)?,
            bias: blobs.get("head_bias", 1, l)?,
        })
    };
    Ok(match manifest.kind {
        ModelKind::Supcbm => {
            let bundle = vocab.ok_or_else(|| {
                Error::Config("a vocabulary is required to load this checkpoint".into())
            })?;
            if manifest.vocab_sha256.is_none() {
                return Err(Error::Validation("checkpoint does not record its vocabulary".into()));
            }
            if bundle.matrix.num_classes() != l {
                return Err(Error::shape(l, bundle.matrix.num_classes()));
            }
            Model::Supcbm(SupCbm::new(layer()?, bundle.matrix.clone())?)
        }
        ModelKind::SupcbmFc => Model::Fc(FcModel {
            layer: layer()?,
            head: blobs.get("head", m, l)?,
            head_bias: blobs.get("head_bias", 1, l)?,
        }),
        ModelKind::Dummy => Model::Dummy(DummyModel { head: head(d)? }),
        ModelKind::CbmProj => Model::Proj(ProjModel {
            dim: d,
            concepts: blobs.get("concepts", m, d)?,
            head: head(m)?,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{ingest_concept_dump, ConceptDump, IngestOptions};
    use rand::SeedableRng;

    fn bundle(extra: &str) -> VocabBundle {
        let dump: ConceptDump = serde_json::from_value(serde_json::json!([
            {"class": "a", "parts": [{"name": "p", "descriptions": ["x", "y"]}]},
            {"class": "b", "parts": [{"name": "p", "descriptions": ["z", extra]}]}
        ]))
        .unwrap();
        VocabBundle::new(ingest_concept_dump(&dump, IngestOptions::default()).unwrap())
    }

    #[test]
    fn supcbm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let b = bundle("w");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let layer = CBLayer::init(4, 3, &mut rng);
        let model = Model::Supcbm(SupCbm::new(layer, b.matrix.clone()).unwrap());
        let manifest = save(&path, &model, &TrainConfig::default(), Some(b.fingerprint()), &[]).unwrap();
        assert_eq!((manifest.d, manifest.m, manifest.l), (3, 4, 2));
        assert_eq!(load(&path, Some(&b)).unwrap(), model);
        let raw = std::fs::read(dir.path().join("model.weights.f64")).unwrap();
        assert_eq!(raw.len(), 4 * 3 * 8);
    }

    #[test]
    fn wrong_vocabulary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let b = bundle("w");
        let model = Model::Supcbm(SupCbm::new(CBLayer::zeros(4, 3), b.matrix.clone()).unwrap());
        save(&path, &model, &TrainConfig::default(), Some(b.fingerprint()), &[]).unwrap();
        let other = bundle("v");
        assert!(matches!(load(&path, Some(&other)), Err(Error::ChecksumMismatch(_))));
        assert!(matches!(load(&path, None), Err(Error::Config(_))));
    }

    #[test]
    fn baselines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let models = [
            Model::Dummy(DummyModel {
                head: LinearHead::init(5, 3, &mut rng),
            }),
            Model::Proj(ProjModel {
                dim: 5,
                concepts: vec![0.2; 20],
                head: LinearHead::init(4, 3, &mut rng),
            }),
            Model::Fc(FcModel {
                layer: CBLayer::init(4, 5, &mut rng),
                head: vec![0.5; 12],
                head_bias: vec![0.1; 3],
            }),
        ];
        for (i, model) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}.json"));
            save(&path, model, &TrainConfig::default(), None, &[]).unwrap();
            assert_eq!(&load(&path, None).unwrap(), model);
        }
    }

    #[test]
    fn corrupted_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let model = Model::Dummy(DummyModel {
            head: LinearHead::init(2, 2, &mut rng),
        });
        save(&path, &model, &TrainConfig::default(), None, &[]).unwrap();
        let blob = dir.path().join("d.head.f64");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&blob, bytes).unwrap();
        assert!(matches!(load(&path, None), Err(Error::ChecksumMismatch(_))));
    }
}
