//! Label-aware concept annotation with concept pooling.
//!
//! An image of class `y` is only ever annotated with concepts of `y`. Within
//! each of `y`'s perceptual groups, the `k` pairs most similar to the image
//! become positives; everything else in the vocabulary is a negative.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{cosine, EmbeddingMatrix, LabeledDataset};
use crate::vocab::{ConceptVocabulary, InterventionMatrix};

/// Cosine similarity of one image to each member of one perceptual group,
/// as `(global id, similarity)` in group order.
pub type GroupScores = Vec<(usize, f64)>;

pub fn score_class_concepts(
    x: &[f32],
    class: usize,
    vocab: &ConceptVocabulary,
    concepts: &EmbeddingMatrix,
) -> Result<Vec<GroupScores>> {
    if concepts.dim() != x.len() {
        return Err(Error::shape(
            format!("image dimension {}", concepts.dim()),
            x.len(),
        ));
    }
    vocab
        .groups(class)
        .iter()
        .map(|g| {
            g.ids
                .iter()
                .map(|&id| {
                    if id >= concepts.len() {
                        return Err(Error::MissingEmbedding(id));
                    }
                    Ok((id, cosine(x, concepts.row(id))?))
                })
                .collect()
        })
        .collect()
}

/// Grouped top-k: from every group keep the `min(k, len)` highest scores,
/// breaking ties toward the lower id. Returns the union, ascending.
pub fn pool(groups: &[GroupScores], k: usize) -> Vec<usize> {
    let mut selected = Vec::new();
    for g in groups {
        let mut g = g.clone();
        let take = k.min(g.len());
        if take == 0 {
            continue;
        }
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if take < g.len() {
            g.select_nth_unstable_by(take - 1, order);
        }
        selected.extend(g[..take].iter().map(|&(id, _)| id));
    }
    selected.sort_unstable();
    selected.dedup();
    selected
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub label: usize,
    /// Positive concept ids, ascending.
    pub selected: Vec<usize>,
}

/// Per-image positives. The dense ground-truth vector is 1 on `selected`
/// and 0 on every other concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    num_concepts: usize,
    entries: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(num_concepts: usize, entries: Vec<Annotation>) -> Result<Self> {
        for e in &entries {
            if let Some(&id) = e.selected.iter().find(|&&id| id >= num_concepts) {
                return Err(Error::UnknownConcept {
                    id,
                    count: num_concepts,
                });
            }
        }
        Ok(Self {
            num_concepts,
            entries,
        })
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_concepts];
        for &id in &self.entries[i].selected {
            v[id] = 1.0;
        }
        v
    }

    /// Checks the annotation against a dataset and matrix: same rows, same
    /// labels, and every positive involved in its image's class.
    pub fn check_consistent(&self, data: &LabeledDataset, matrix: &InterventionMatrix) -> Result<()> {
        if self.entries.len() != data.len() {
            return Err(Error::SizeMismatch(format!(
                "{} annotations for {} images",
                self.entries.len(),
                data.len()
            )));
        }
        if self.num_concepts != matrix.num_concepts() {
            return Err(Error::shape(matrix.num_concepts(), self.num_concepts));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.label != data.labels[i] {
                return Err(Error::Validation(format!(
                    "annotation {i} has label {} but the dataset says {}",
                    e.label, data.labels[i]
                )));
            }
            if let Some(&id) = e.selected.iter().find(|&&id| !matrix.get(id, e.label)) {
                return Err(Error::Validation(format!(
                    "annotation {i} selects concept {id}, which is not involved in class {}",
                    e.label
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).expect("annotation serializes");
            w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, num_concepts: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Annotation = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                origin: path.display().to_string(),
                message: format!("line {}: {e}", n + 1),
            })?;
            entries.push(e);
        }
        Self::new(num_concepts, entries)
    }
}

/// Annotates every image using only its ground-truth class's groups.
/// Images are processed in parallel; output order follows the dataset.
pub fn annotate_dataset(
    data: &LabeledDataset,
    vocab: &ConceptVocabulary,
    concepts: &EmbeddingMatrix,
    k: usize,
) -> Result<AnnotationSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    data.check_labels(vocab.num_classes())?;
    if concepts.len() < vocab.num_concepts() {
        return Err(Error::MissingEmbedding(concepts.len()));
    }
    let entries = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let label = data.labels[i];
            let scores = score_class_concepts(data.embeddings.row(i), label, vocab, concepts)?;
            Ok(Annotation {
                image_id: data.embeddings.ids()[i].clone(),
                label,
                selected: pool(&scores, k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotationSet::new(vocab.num_concepts(), entries)
}
