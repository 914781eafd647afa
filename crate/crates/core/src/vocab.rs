//! Two-level concept vocabulary and the binary intervention matrix.
//!
//! A dump lists, per class, a handful of perceptual parts ("tail", "beak"),
//! each with descriptive characteristics ("long and thin"). Ingestion turns
//! this into globally deduplicated `(perceptual, descriptive)` pairs while
//! keeping the per-class group structure that concept pooling relies on.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::num::NonZeroUsize;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Maximum length, in characters, of a descriptive concept.
pub const MAX_DESCRIPTIVE_CHARS: usize = 40;

/// Version tag written into serialized vocabulary documents.
pub const VOCAB_FORMAT_VERSION: u32 = 1;

const PARTS_TEMPLATE: &str =
    "To identify {CLS} visually, please list the most important {p} visual parts which a {CLS} has.";
const CHARACTERISTICS_TEMPLATE: &str = "To visually identify {CLS}, please describe the {q} most common characteristics of {CLS}'s {CEP} from the three dimensions of shape, color, or size.";

/// Placeholder left unresolved in second-level prompt templates.
pub const PART_PLACEHOLDER: &str = "{CEP}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionTag {
    Shape,
    Color,
    Size,
    #[default]
    Unspecified,
}

impl DimensionTag {
    fn parse(raw: &str) -> Option<Self> {
        match normalize_text(raw).as_str() {
            "shape" => Some(Self::Shape),
            "color" | "colour" => Some(Self::Color),
            "size" => Some(Self::Size),
            "" | "unspecified" => Some(Self::Unspecified),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub perceptual: String,
    pub descriptive: String,
    #[serde(default)]
    pub dimension: DimensionTag,
}

impl ConceptPair {
    /// Case-insensitive, whitespace-collapsed `(perceptual, descriptive)` key.
    pub fn key(&self) -> String {
        pair_key(&self.perceptual, &self.descriptive)
    }
}

impl fmt::Display for ConceptPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.descriptive, self.perceptual)
    }
}

pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn pair_key(perceptual: &str, descriptive: &str) -> String {
    format!(
        "({}, {})",
        normalize_text(perceptual),
        normalize_text(descriptive)
    )
}

/// One perceptual concept of a class together with the global ids of its
/// descriptive pairs, in dump order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub perceptual: String,
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub class: String,
    pub part: String,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Prompts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// First level: ask for the `p` visual parts of a class.
    Parts,
    /// Second level: ask for `q` characteristics of one part. `{CEP}` is left
    /// in the text until a part name is known.
    Characteristics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub class: String,
    pub kind: PromptKind,
    pub text: String,
}

pub fn parts_prompt(class: &str, p: NonZeroUsize) -> String {
    PARTS_TEMPLATE
        .replace("{CLS}", class)
        .replace("{p}", &p.to_string())
}

/// Second-level prompt. Pass [`PART_PLACEHOLDER`] as `part` to get the template.
pub fn characteristics_prompt(class: &str, part: &str, q: NonZeroUsize) -> String {
    CHARACTERISTICS_TEMPLATE
        .replace("{CLS}", class)
        .replace("{q}", &q.to_string())
        .replace(PART_PLACEHOLDER, part)
}

pub fn emit_prompts(classes: &[ClassLabel], p: NonZeroUsize, q: NonZeroUsize) -> Vec<Prompt> {
    classes
        .iter()
        .flat_map(|c| {
            [
                Prompt {
                    class: c.name.clone(),
                    kind: PromptKind::Parts,
                    text: parts_prompt(&c.name, p),
                },
                Prompt {
                    class: c.name.clone(),
                    kind: PromptKind::Characteristics,
                    text: characteristics_prompt(&c.name, PART_PLACEHOLDER, q),
                },
            ]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dump ingestion

/// A concept dump: the hand-auditable JSON answer set collected from the
/// prompts above.
///
/// ```json
/// [{"class": "cat", "parts": [{"name": "tail",
///    "descriptions": ["long and thin", {"text": "striped", "dimension": "color"}]}]}]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptDump(pub Vec<DumpClass>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpClass {
    pub class: String,
    pub parts: Vec<DumpPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpPart {
    pub name: String,
    pub descriptions: Vec<DumpDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DumpDescription {
    Text(String),
    Tagged {
        text: String,
        #[serde(default)]
        dimension: Option<String>,
    },
}

impl DumpDescription {
    fn text(&self) -> &str {
        match self {
            Self::Text(t) | Self::Tagged { text: t, .. } => t,
        }
    }

    fn dimension(&self) -> Option<&str> {
        match self {
            Self::Text(_) => None,
            Self::Tagged { dimension, .. } => dimension.as_deref(),
        }
    }
}

impl ConceptDump {
    /// Parses a dump, reporting the JSON path and line/column of the first
    /// structural problem.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Malformed {
            origin: origin.to_string(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

/// Optional structural expectations checked during ingestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Require exactly this many parts per class.
    pub parts_per_class: Option<usize>,
    /// Reject parts listing more than this many descriptions.
    pub max_descriptions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVocabulary {
    classes: Vec<ClassLabel>,
    pairs: Vec<ConceptPair>,
    groups: Vec<Vec<ConceptGroup>>,
    warnings: Vec<IngestWarning>,
}

pub fn ingest_concept_dump(dump: &ConceptDump, opts: IngestOptions) -> Result<ConceptVocabulary> {
    let mut classes = Vec::with_capacity(dump.0.len());
    let mut seen_classes: HashMap<String, usize> = HashMap::new();
    let mut pairs: Vec<ConceptPair> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut groups = Vec::with_capacity(dump.0.len());
    let mut warnings = Vec::new();

    for (ci, entry) in dump.0.iter().enumerate() {
        let name = entry.class.trim();
        if name.is_empty() {
            return Err(Error::Validation(format!("class #{ci} has an empty name")));
        }
        if let Some(prev) = seen_classes.insert(normalize_text(name), ci) {
            return Err(Error::Validation(format!(
                "duplicate class name {name:?} (entries #{prev} and #{ci})"
            )));
        }
        if let Some(p) = opts.parts_per_class {
            if entry.parts.len() != p {
                return Err(Error::Validation(format!(
                    "class {name:?} lists {} parts, expected {p}",
                    entry.parts.len()
                )));
            }
        }

        let mut class_groups = Vec::with_capacity(entry.parts.len());
        let mut surviving = 0usize;
        for (pi, part) in entry.parts.iter().enumerate() {
            let part_name = part.name.trim();
            if part_name.is_empty() {
                return Err(Error::Validation(format!(
                    "class {name:?}, part #{pi}: empty perceptual concept"
                )));
            }
            if let Some(q) = opts.max_descriptions {
                if part.descriptions.len() > q {
                    return Err(Error::Validation(format!(
                        "class {name:?}, part {part_name:?}: {} descriptions, at most {q} allowed",
                        part.descriptions.len()
                    )));
                }
            }
            let mut ids = Vec::with_capacity(part.descriptions.len());
            for (di, desc) in part.descriptions.iter().enumerate() {
                let text = desc.text().trim();
                if text.is_empty() {
                    return Err(Error::Validation(format!(
                        "class {name:?}, part {part_name:?}, description #{di}: empty text"
                    )));
                }
                let chars = text.chars().count();
                if chars > MAX_DESCRIPTIVE_CHARS {
                    warnings.push(IngestWarning {
                        class: name.to_string(),
                        part: part_name.to_string(),
                        message: format!(
                            "dropped description #{di} ({chars} chars > {MAX_DESCRIPTIVE_CHARS}): {text:?}"
                        ),
                    });
                    continue;
                }
                let dimension = match desc.dimension() {
                    None => DimensionTag::Unspecified,
                    Some(raw) => DimensionTag::parse(raw).ok_or_else(|| {
                        Error::Validation(format!(
                            "class {name:?}, part {part_name:?}, description #{di}: unknown dimension {raw:?}"
                        ))
                    })?,
                };
                let key = pair_key(part_name, text);
                let id = *by_key.entry(key).or_insert_with(|| {
                    pairs.push(ConceptPair {
                        perceptual: part_name.to_string(),
                        descriptive: text.to_string(),
                        dimension,
                    });
                    pairs.len() - 1
                });
                if ids.contains(&id) {
                    warnings.push(IngestWarning {
                        class: name.to_string(),
                        part: part_name.to_string(),
                        message: format!("duplicate description #{di} within group: {text:?}"),
                    });
                    continue;
                }
                ids.push(id);
            }
            surviving += ids.len();
            class_groups.push(ConceptGroup {
                perceptual: part_name.to_string(),
                ids,
            });
        }
        if surviving == 0 {
            return Err(Error::Validation(format!(
                "class {name:?} has no concept pairs after filtering"
            )));
        }
        classes.push(ClassLabel {
            index: ci,
            name: name.to_string(),
        });
        groups.push(class_groups);
    }

    Ok(ConceptVocabulary {
        classes,
        pairs,
        groups,
        warnings,
    })
}

impl ConceptVocabulary {
    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn pairs(&self) -> &[ConceptPair] {
        &self.pairs
    }

    /// Groups of class `class`, one per perceptual concept.
    pub fn groups(&self, class: usize) -> &[ConceptGroup] {
        &self.groups[class]
    }

    pub fn warnings(&self) -> &[IngestWarning] {
        &self.warnings
    }

    pub fn num_concepts(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        let wanted = normalize_text(name);
        self.classes
            .iter()
            .position(|c| normalize_text(&c.name) == wanted)
    }

    /// Distinct concept ids involved in `class`, ascending.
    pub fn class_concepts(&self, class: usize) -> BTreeSet<usize> {
        self.groups[class]
            .iter()
            .flat_map(|g| g.ids.iter().copied())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.groups.len() != self.classes.len() {
            return Err(Error::Validation(format!(
                "{} classes but {} group lists",
                self.classes.len(),
                self.groups.len()
            )));
        }
        let mut names = BTreeSet::new();
        for (i, c) in self.classes.iter().enumerate() {
            if c.index != i {
                return Err(Error::Validation(format!(
                    "class {:?} has index {}, expected {i}",
                    c.name, c.index
                )));
            }
            if c.name.trim().is_empty() || !names.insert(normalize_text(&c.name)) {
                return Err(Error::Validation(format!("bad or duplicate class name {:?}", c.name)));
            }
        }
        let mut keys = BTreeSet::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.perceptual.trim().is_empty() || p.descriptive.trim().is_empty() {
                return Err(Error::Validation(format!("pair {i} has empty text")));
            }
            if p.descriptive.chars().count() > MAX_DESCRIPTIVE_CHARS {
                return Err(Error::Validation(format!("pair {i} descriptive text too long")));
            }
            if !keys.insert(p.key()) {
                return Err(Error::Validation(format!("pair {i} duplicates key {}", p.key())));
            }
        }
        for (ci, gs) in self.groups.iter().enumerate() {
            let mut any = false;
            for g in gs {
                for &id in &g.ids {
                    if id >= self.pairs.len() {
                        return Err(Error::UnknownConcept {
                            id,
                            count: self.pairs.len(),
                        });
                    }
                    any = true;
                }
            }
            if !any {
                return Err(Error::Validation(format!("class {ci} has no concepts")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Intervention matrix

/// Binary concepts × classes matrix: entry (i, j) is set when concept `i`
/// takes part in predicting class `j`. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionMatrix {
    rows: usize,
    cols: usize,
    /// Row-major bitset, bit `i * cols + j`, least significant bit first.
    bits: Vec<u8>,
    row_classes: Vec<Vec<usize>>,
    col_concepts: Vec<Vec<usize>>,
}

pub fn build_intervention_matrix(vocab: &ConceptVocabulary) -> InterventionMatrix {
    let mut entries = Vec::new();
    for j in 0..vocab.num_classes() {
        for i in vocab.class_concepts(j) {
            entries.push((i, j));
        }
    }
    InterventionMatrix::from_entries(vocab.num_concepts(), vocab.num_classes(), entries)
        .expect("vocabulary ids are in range")
}

impl InterventionMatrix {
    pub fn from_entries(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut bits = vec![0u8; (rows * cols).div_ceil(8)];
        for (i, j) in entries {
            if i >= rows || j >= cols {
                return Err(Error::shape(
                    format!("entry inside {rows}x{cols}"),
                    format!("({i}, {j})"),
                ));
            }
            let b = i * cols + j;
            bits[b / 8] |= 1 << (b % 8);
        }
        Ok(Self::from_bits(rows, cols, bits))
    }

    /// Builds from a dense row-major 0/1 slice.
    pub fn from_dense(rows: usize, cols: usize, dense: &[bool]) -> Result<Self> {
        if dense.len() != rows * cols {
            return Err(Error::shape(rows * cols, dense.len()));
        }
        Self::from_entries(
            rows,
            cols,
            dense
                .iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(k, _)| (k / cols, k % cols)),
        )
    }

    fn from_bits(rows: usize, cols: usize, bits: Vec<u8>) -> Self {
        let mut row_classes = vec![Vec::new(); rows];
        let mut col_concepts = vec![Vec::new(); cols];
        for i in 0..rows {
            for j in 0..cols {
                let b = i * cols + j;
                if bits[b / 8] >> (b % 8) & 1 == 1 {
                    row_classes[i].push(j);
                    col_concepts[j].push(i);
                }
            }
        }
        Self {
            rows,
            cols,
            bits,
            row_classes,
            col_concepts,
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.rows
    }

    pub fn num_classes(&self) -> usize {
        self.cols
    }

    pub fn get(&self, concept: usize, class: usize) -> bool {
        let b = concept * self.cols + class;
        self.bits[b / 8] >> (b % 8) & 1 == 1
    }

    /// Classes that concept `concept` participates in, ascending.
    pub fn classes_of(&self, concept: usize) -> &[usize] {
        &self.row_classes[concept]
    }

    /// Concepts involved in class `class`, ascending.
    pub fn concepts_of(&self, class: usize) -> &[usize] {
        &self.col_concepts[class]
    }

    pub fn popcount(&self, class: usize) -> usize {
        self.col_concepts[class].len()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Matrix with classes `a` and `b` swapped.
    pub fn swap_classes(&self, a: usize, b: usize) -> Self {
        let perm = |j: usize| {
            if j == a {
                b
            } else if j == b {
                a
            } else {
                j
            }
        };
        Self::from_entries(
            self.rows,
            self.cols,
            (0..self.rows).flat_map(|i| self.row_classes[i].iter().map(move |&j| (i, perm(j)))),
        )
        .expect("permutation stays in range")
    }
}

// ---------------------------------------------------------------------------
// Overlap report

/// Shared and unique concept counts of one unordered class pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub class_a: usize,
    pub class_b: usize,
    pub shared: usize,
    pub only_a: usize,
    pub only_b: usize,
    /// Set when `only_a` or `only_b` is zero: from the concepts alone, that
    /// class cannot be told apart from the other one.
    pub indistinguishable: bool,
}

pub fn overlap_report(matrix: &InterventionMatrix) -> Vec<OverlapRecord> {
    let l = matrix.num_classes();
    let mut out = Vec::with_capacity(l * l.saturating_sub(1) / 2);
    for a in 0..l {
        for b in (a + 1)..l {
            let (ca, cb) = (matrix.concepts_of(a), matrix.concepts_of(b));
            // Both columns are sorted; merge-count the intersection.
            let (mut x, mut y, mut shared) = (0, 0, 0);
            while x < ca.len() && y < cb.len() {
                match ca[x].cmp(&cb[y]) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        shared += 1;
                        x += 1;
                        y += 1;
                    }
                }
            }
            let only_a = ca.len() - shared;
            let only_b = cb.len() - shared;
            out.push(OverlapRecord {
                class_a: a,
                class_b: b,
                shared,
                only_a,
                only_b,
                indistinguishable: only_a == 0 || only_b == 0,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Serialized form

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    /// Row-major bitset, base64.
    bits: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabDoc {
    version: u32,
    classes: Vec<ClassLabel>,
    pairs: Vec<ConceptPair>,
    groups: Vec<Vec<ConceptGroup>>,
    matrix: MatrixDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<IngestWarning>,
}

/// Vocabulary plus its matrix, as written to and read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabBundle {
    pub vocab: ConceptVocabulary,
    pub matrix: InterventionMatrix,
}

impl VocabBundle {
    pub fn new(vocab: ConceptVocabulary) -> Self {
        let matrix = build_intervention_matrix(&vocab);
        Self { vocab, matrix }
    }

    fn to_doc(&self) -> VocabDoc {
        VocabDoc {
            version: VOCAB_FORMAT_VERSION,
            classes: self.vocab.classes.clone(),
            pairs: self.vocab.pairs.clone(),
            groups: self.vocab.groups.clone(),
            matrix: MatrixDoc {
                rows: self.matrix.rows,
                cols: self.matrix.cols,
                bits: BASE64.encode(&self.matrix.bits),
            },
            warnings: self.vocab.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("vocabulary serializes")
    }

    /// SHA-256 over the canonical document, excluding ingestion warnings.
    /// Checkpoints record it to pin the vocabulary they were trained against.
    pub fn fingerprint(&self) -> String {
        let mut doc = self.to_doc();
        doc.warnings.clear();
        let bytes = serde_json::to_vec(&doc).expect("vocabulary serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: VocabDoc =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Malformed {
                origin: origin.to_string(),
                message: format!("at `{}`: {}", e.path(), e.inner()),
            })?;
        if doc.version != VOCAB_FORMAT_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: VOCAB_FORMAT_VERSION,
            });
        }
        let vocab = ConceptVocabulary {
            classes: doc.classes,
            pairs: doc.pairs,
            groups: doc.groups,
            warnings: doc.warnings,
        };
        vocab.validate()?;
        let bits = BASE64.decode(doc.matrix.bits.as_bytes()).map_err(|e| Error::Malformed {
            origin: origin.to_string(),
            message: format!("at `matrix.bits`: {e}"),
        })?;
        let (rows, cols) = (doc.matrix.rows, doc.matrix.cols);
        if rows != vocab.num_concepts() || cols != vocab.num_classes() {
            return Err(Error::shape(
                format!("{}x{}", vocab.num_concepts(), vocab.num_classes()),
                format!("{rows}x{cols}"),
            ));
        }
        if bits.len() != (rows * cols).div_ceil(8) {
            return Err(Error::SizeMismatch(format!(
                "matrix bitset has {} bytes, expected {}",
                bits.len(),
                (rows * cols).div_ceil(8)
            )));
        }
        let matrix = InterventionMatrix::from_bits(rows, cols, bits);
        if matrix != build_intervention_matrix(&vocab) {
            return Err(Error::Validation(
                "stored intervention matrix disagrees with the concept groups".into(),
            ));
        }
        Ok(Self { vocab, matrix })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
