//! Dense embedding storage: a JSON manifest next to a raw little-endian
//! `f32` blob, plus cosine similarity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Image,
    ConceptText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// `n × d` row-major matrix of finite `f32` values with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    kind: EmbeddingKind,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(kind: EmbeddingKind, dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::SizeMismatch(format!(
                "{} values for {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / dim,
                col: k % dim,
            });
        }
        Ok(Self {
            kind,
            dim,
            ids,
            data,
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    fn blob_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Writes `<manifest>` and its blob (same stem, `.bin`).
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        write_store(manifest_path, self, None, None)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        Ok(load(manifest_path)?.embeddings)
    }
}

/// Image embeddings with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(embeddings: EmbeddingMatrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if labels.len() != embeddings.len() {
            return Err(Error::SizeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                embeddings.len()
            )));
        }
        if embeddings.kind() != EmbeddingKind::Image {
            return Err(Error::Validation("labeled datasets hold image embeddings".into()));
        }
        Ok(Self {
            embeddings,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&y| y >= num_classes) {
            Some(i) => Err(Error::Validation(format!(
                "row {i} has label {} but only {num_classes} classes exist",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        write_store(
            manifest_path,
            &self.embeddings,
            Some(&self.labels),
            Some(self.split),
        )
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let loaded = load(manifest_path)?;
        let labels = loaded.labels.ok_or_else(|| {
            Error::Validation(format!("{} has no labels", manifest_path.display()))
        })?;
        Self::new(loaded.embeddings, labels, loaded.split.unwrap_or(Split::Test))
    }
}

/// Manifest document. Unknown keys (exporter metadata such as the backbone
/// id or text template) are preserved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub kind: EmbeddingKind,
    pub dtype: String,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Blob file name relative to the manifest; defaults to `<stem>.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    pub sha256: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Result of [`load`]: the matrix, plus labels when the manifest has them.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub embeddings: EmbeddingMatrix,
    pub labels: Option<Vec<usize>>,
    pub split: Option<Split>,
    pub manifest: StoreManifest,
}

pub fn blob_path_for(manifest_path: &Path, blob: Option<&str>) -> PathBuf {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    match blob {
        Some(name) => dir.join(name),
        None => manifest_path.with_extension("bin"),
    }
}

fn write_store(
    manifest_path: &Path,
    m: &EmbeddingMatrix,
    labels: Option<&[usize]>,
    split: Option<Split>,
) -> Result<()> {
    let bytes = m.blob_bytes();
    let blob_path = blob_path_for(manifest_path, None);
    let manifest = StoreManifest {
        version: STORE_FORMAT_VERSION,
        n: m.len(),
        d: m.dim(),
        kind: m.kind(),
        dtype: DTYPE_F32LE.into(),
        ids: m.ids().to_vec(),
        labels: labels.map(<[usize]>::to_vec),
        split,
        blob: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned()),
        sha256: hex::encode(Sha256::digest(&bytes)),
        extra: Default::default(),
    };
    std::fs::write(&blob_path, &bytes).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}

/// Loads and validates a manifest + blob pair.
pub fn load(manifest_path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let origin = manifest_path.display().to_string();
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: StoreManifest =
        serde_path_to_error::deserialize(de).map_err(|e| Error::Malformed {
            origin: origin.clone(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
    if manifest.version != STORE_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: STORE_FORMAT_VERSION,
        });
    }
    if manifest.dtype != DTYPE_F32LE {
        return Err(Error::Malformed {
            origin,
            message: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }
    if manifest.ids.len() != manifest.n {
        return Err(Error::SizeMismatch(format!(
            "manifest lists {} ids for n = {}",
            manifest.ids.len(),
            manifest.n
        )));
    }
    let blob_path = blob_path_for(manifest_path, manifest.blob.as_deref());
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected = manifest.n * manifest.d * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch(format!(
            "{} holds {} bytes, manifest implies {expected} ({} x {} x 4)",
            blob_path.display(),
            bytes.len(),
            manifest.n,
            manifest.d
        )));
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    if !digest.eq_ignore_ascii_case(&manifest.sha256) {
        return Err(Error::ChecksumMismatch(format!(
            "{}: blob sha256 {digest}, manifest says {}",
            blob_path.display(),
            manifest.sha256
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let embeddings = EmbeddingMatrix::new(manifest.kind, manifest.d, manifest.ids.clone(), data)?;
    if let Some(labels) = &manifest.labels {
        if labels.len() != manifest.n {
            return Err(Error::SizeMismatch(format!(
                "{} labels for n = {}",
                labels.len(),
                manifest.n
            )));
        }
    }
    Ok(Loaded {
        embeddings,
        labels: manifest.labels.clone(),
        split: manifest.split,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Similarity

/// Left-to-right dot product accumulated in `f64`.
pub fn dot<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> f64 {
    u.iter()
        .zip(v)
        .fold(0.0, |acc, (&a, &b)| acc + a.into() * b.into())
}

pub fn norm<T: Copy + Into<f64>>(u: &[T]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`, accumulated in `f64`.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Copy of `rows` with every row scaled to unit length.
pub fn unit_rows(m: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    m.rows()
        .map(|r| {
            let n = norm(r);
            if n == 0.0 {
                Err(Error::ZeroNorm)
            } else {
                Ok(r.iter().map(|&v| v as f64 / n).collect())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            EmbeddingKind::Image,
            3,
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0, 3.0, -0.5, 0.25, 1e-7],
        )
        .unwrap()
    }

    #[test]
    fn two_by_three_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        tiny().save(&path).unwrap();
        assert_eq!(std::fs::metadata(path.with_extension("bin")).unwrap().len(), 24);
        let back = EmbeddingMatrix::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 3);
        let bits = |m: &EmbeddingMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&tiny()));
    }

    #[test]
    fn truncated_blob_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        tiny().save(&path).unwrap();
        let blob = path.with_extension("bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 1]).unwrap();
        let err = EmbeddingMatrix::load(&path).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn nan_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        tiny().save(&path).unwrap();
        let blob = path.with_extension("bin");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&blob, &bytes).unwrap();
        // Fix up the checksum so the NaN check is what trips.
        let mut m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        m["sha256"] = hex::encode(Sha256::digest(&bytes)).into();
        std::fs::write(&path, m.to_string()).unwrap();
        let err = EmbeddingMatrix::load(&path).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 1 }), "{err}");
    }

    #[test]
    fn version_and_checksum_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        tiny().save(&path).unwrap();
        let orig: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();

        let mut m = orig.clone();
        m["version"] = 2.into();
        std::fs::write(&path, m.to_string()).unwrap();
        assert!(matches!(EmbeddingMatrix::load(&path), Err(Error::Version { .. })));

        let mut m = orig;
        m["sha256"] = "00".into();
        std::fs::write(&path, m.to_string()).unwrap();
        assert!(matches!(EmbeddingMatrix::load(&path), Err(Error::ChecksumMismatch(_))));
    }

    #[test]
    fn extra_manifest_keys_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        tiny().save(&path).unwrap();
        let mut m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        m["backbone"] = "clip-rn50".into();
        std::fs::write(&path, m.to_string()).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.manifest.extra["backbone"], "clip-rn50");
    }

    #[test]
    fn labeled_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let ds = LabeledDataset::new(tiny(), vec![0, 1], Split::Train).unwrap();
        ds.save(&path).unwrap();
        assert_eq!(LabeledDataset::load(&path).unwrap(), ds);
        assert!(ds.check_labels(1).is_err());
    }

    #[test]
    fn cosine_basics() {
        let e1 = [1.0f64, 0.0, 0.0];
        let e2 = [0.0f64, 1.0, 0.0];
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(cosine(&e1, &[0.0; 3]), Err(Error::ZeroNorm)));
        assert!(cosine(&e1, &[1.0; 2]).is_err());
    }

    fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
        let mut uv = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for i in 0..u.len() {
            uv += u[i] * v[i];
            uu += u[i] * u[i];
            vv += v[i] * v[i];
        }
        uv / (uu.sqrt() * vv.sqrt())
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_matches_loop_oracle((u, v) in vec_pair()) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - naive_cosine(&u, &v)).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn cosine_symmetric((u, v) in vec_pair()) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            prop_assert_eq!(cosine(&u, &v).unwrap(), cosine(&v, &u).unwrap());
        }

        #[test]
        fn cosine_scale_invariant((u, v) in vec_pair(), alpha in prop::sample::select(vec![0.5, 2.0, 10.0])) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-12);
        }
    }
}
