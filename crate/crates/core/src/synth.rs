//! Seeded synthetic fixtures with known generating concepts.
//!
//! Every class gets `p` perceptual groups of `q` descriptive pairs. Inside
//! each group `k` positions are "generating": an image of the class is the
//! normalized sum of its generating concept vectors plus isotropic noise.
//! Adjacent class pairs can share one generating pair, and the last class
//! pairs can be made exact duplicates of each other.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingKind, EmbeddingMatrix, LabeledDataset, Split};
use crate::vocab::{
    ingest_concept_dump, ConceptDump, DumpClass, DumpDescription, DumpPart, IngestOptions,
    VocabBundle,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub dim: usize,
    pub images_per_class: usize,
    /// Expected Euclidean norm of the additive noise (per-coordinate
    /// standard deviation is `noise / √dim`).
    pub noise: f64,
    pub seed: u64,
    /// Let classes `2t` and `2t + 1` share one generating pair.
    pub share_adjacent: bool,
    /// Number of trailing class pairs whose concept sets are identical.
    pub duplicate_pairs: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            p: 5,
            q: 6,
            k: 2,
            dim: 256,
            images_per_class: 200,
            noise: 0.1,
            seed: 7,
            share_adjacent: true,
            duplicate_pairs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingTruth {
    /// Generating concept ids per class, ascending.
    pub per_class: Vec<Vec<usize>>,
    /// Class pairs that share generating pairs.
    pub shared: Vec<(usize, usize)>,
    /// Class pairs with identical concept sets.
    pub duplicates: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub config: SyntheticConfig,
    pub dump: ConceptDump,
    pub bundle: VocabBundle,
    pub concepts: EmbeddingMatrix,
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    pub test: LabeledDataset,
    pub truth: GeneratingTruth,
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn split_of(r: usize) -> Split {
    match r % 5 {
        0..=2 => Split::Train,
        3 => Split::Dev,
        _ => Split::Test,
    }
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticFixture> {
    let c = config;
    if c.num_classes == 0 || c.p == 0 || c.q == 0 || c.k == 0 || c.dim == 0 {
        return Err(Error::Config("classes, p, q, k and dim must all be positive".into()));
    }
    if c.k > c.q {
        return Err(Error::Config(format!("k = {} exceeds q = {}", c.k, c.q)));
    }
    if 2 * c.duplicate_pairs > c.num_classes {
        return Err(Error::Config("not enough classes for the requested duplicates".into()));
    }
    if !(c.noise >= 0.0 && c.noise.is_finite()) {
        return Err(Error::Config(format!("noise {}", c.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    // texts[class][group][member], generating[class][group] = member positions
    let mut texts: Vec<Vec<Vec<String>>> = (0..c.num_classes)
        .map(|cl| {
            (0..c.p)
                .map(|g| (0..c.q).map(|m| format!("c{cl} g{g} m{m}")).collect())
                .collect()
        })
        .collect();
    let mut generating: Vec<Vec<Vec<usize>>> = (0..c.num_classes)
        .map(|_| {
            (0..c.p)
                .map(|_| {
                    let mut pos = sample(&mut rng, c.q, c.k).into_vec();
                    pos.sort_unstable();
                    pos
                })
                .collect()
        })
        .collect();

    let mut shared = Vec::new();
    let dup_start = c.num_classes - 2 * c.duplicate_pairs;
    if c.share_adjacent {
        for a in (0..dup_start.saturating_sub(1)).step_by(2) {
            let b = a + 1;
            let (sa, sb) = (generating[a][0][0], generating[b][0][0]);
            texts[b][0][sb] = texts[a][0][sa].clone();
            shared.push((a, b));
        }
    }
    let mut duplicates = Vec::new();
    for t in 0..c.duplicate_pairs {
        let (a, b) = (dup_start + 2 * t, dup_start + 2 * t + 1);
        texts[b] = texts[a].clone();
        generating[b] = generating[a].clone();
        duplicates.push((a, b));
    }

    let dump = ConceptDump(
        texts
            .iter()
            .enumerate()
            .map(|(cl, groups)| DumpClass {
                class: format!("class{cl}"),
                parts: groups
                    .iter()
                    .enumerate()
                    .map(|(g, members)| DumpPart {
                        name: format!("part{g}"),
                        descriptions: members
                            .iter()
                            .enumerate()
                            .map(|(m, t)| DumpDescription::Tagged {
                                text: t.clone(),
                                dimension: Some(["shape", "color", "size"][m % 3].to_string()),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    );
    let vocab = ingest_concept_dump(
        &dump,
        IngestOptions {
            parts_per_class: Some(c.p),
            max_descriptions: Some(c.q),
        },
    )?;

    let per_class: Vec<Vec<usize>> = (0..c.num_classes)
        .map(|cl| {
            let mut ids: Vec<usize> = vocab
                .groups(cl)
                .iter()
                .zip(&generating[cl])
                .flat_map(|(grp, pos)| pos.iter().map(|&m| grp.ids[m]))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
        .collect();

    let concept_vecs: Vec<Vec<f64>> = (0..vocab.num_concepts())
        .map(|_| unit_gaussian(c.dim, &mut rng))
        .collect();
    let concepts = EmbeddingMatrix::new(
        EmbeddingKind::ConceptText,
        c.dim,
        vocab.pairs().iter().map(|p| p.key()).collect(),
        concept_vecs.iter().flatten().map(|&v| v as f32).collect(),
    )?;

    let sigma = c.noise / (c.dim as f64).sqrt();
    let mut buckets: [(Vec<String>, Vec<f32>, Vec<usize>); 3] = Default::default();
    for (cl, ids) in per_class.iter().enumerate() {
        let mut center = vec![0.0f64; c.dim];
        for &id in ids {
            for (s, v) in center.iter_mut().zip(&concept_vecs[id]) {
                *s += v;
            }
        }
        let n = center.iter().map(|x| x * x).sum::<f64>().sqrt();
        center.iter_mut().for_each(|v| *v /= n);
        for r in 0..c.images_per_class {
            let bucket = &mut buckets[split_of(r) as usize];
            bucket.0.push(format!("img{cl}-{r}"));
            for &v in &center {
                let e: f64 = StandardNormal.sample(&mut rng);
                bucket.1.push((v + sigma * e) as f32);
            }
            bucket.2.push(cl);
        }
    }
    let [train, dev, test] = buckets;
    let make = |(ids, data, labels): (Vec<String>, Vec<f32>, Vec<usize>), split| {
        LabeledDataset::new(
            EmbeddingMatrix::new(EmbeddingKind::Image, c.dim, ids, data)?,
            labels,
            split,
        )
    };

    Ok(SyntheticFixture {
        config: c.clone(),
        dump,
        bundle: VocabBundle::new(vocab),
        concepts,
        train: make(train, Split::Train)?,
        dev: make(dev, Split::Dev)?,
        test: make(test, Split::Test)?,
        truth: GeneratingTruth {
            per_class,
            shared,
            duplicates,
        },
    })
}

/// File names used by [`SyntheticFixture::save`].
pub mod files {
    pub const DUMP: &str = "dump.json";
    pub const VOCAB: &str = "vocab.json";
    pub const CONCEPTS: &str = "concepts.json";
    pub const TRAIN: &str = "train.json";
    pub const DEV: &str = "dev.json";
    pub const TEST: &str = "test.json";
    pub const TRUTH: &str = "truth.json";
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("fixture serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl SyntheticFixture {
    /// Writes every artifact of the fixture into `dir` (see [`files`]).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(files::DUMP), &self.dump)?;
        write_json(&dir.join(files::TRUTH), &(&self.config, &self.truth))?;
        self.bundle.save(&dir.join(files::VOCAB))?;
        self.concepts.save(&dir.join(files::CONCEPTS))?;
        self.train.save(&dir.join(files::TRAIN))?;
        self.dev.save(&dir.join(files::DEV))?;
        self.test.save(&dir.join(files::TEST))
    }
}
