use proptest::prelude::*;

use supcbm::annotate::{pool, GroupScores};
use supcbm::model::label_scores;
use supcbm::vocab::{
    build_intervention_matrix, ingest_concept_dump, ConceptDump, ConceptVocabulary, DumpClass,
    DumpDescription, DumpPart, IngestOptions, InterventionMatrix,
};

fn sort_oracle(groups: &[GroupScores], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for g in groups {
        let mut g = g.clone();
        g.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out.extend(g.iter().take(k).map(|e| e.0));
    }
    out.sort();
    out.dedup();
    out
}

fn groups_strategy() -> impl Strategy<Value = Vec<GroupScores>> {
    // Scores drawn from a handful of values so ties are common; ids may
    // repeat across groups.
    prop::collection::vec(
        prop::collection::vec((0usize..40, (0u8..6).prop_map(|v| v as f64 / 5.0 - 0.5)), 0..9),
        0..6,
    )
    .prop_map(|gs| {
        gs.into_iter()
            .map(|mut g| {
                g.sort_by_key(|e| e.0);
                g.dedup_by_key(|e| e.0);
                g
            })
            .collect()
    })
}

fn matrix_strategy() -> impl Strategy<Value = (InterventionMatrix, Vec<f64>)> {
    (1usize..30, 1usize..8).prop_flat_map(|(m, l)| {
        (
            prop::collection::vec(any::<bool>(), m * l),
            prop::collection::vec(0.0f64..1.0, m),
        )
            .prop_map(move |(dense, c)| (InterventionMatrix::from_dense(m, l, &dense).unwrap(), c))
    })
}

const PARTS: [&str; 5] = ["head", "tail", "wing", "leg", "beak"];
const DESCS: [&str; 6] = ["red", "long", "Red", "short  and thin", "round", "blue"];

fn dump_strategy() -> impl Strategy<Value = ConceptDump> {
    prop::collection::vec(
        prop::sample::subsequence(PARTS.to_vec(), 1..=PARTS.len()).prop_flat_map(|parts| {
            parts
                .into_iter()
                .map(|name| {
                    prop::collection::vec(prop::sample::select(DESCS.to_vec()), 1..5).prop_map(
                        move |ds| DumpPart {
                            name: name.to_string(),
                            descriptions: ds
                                .into_iter()
                                .map(|d| DumpDescription::Text(d.to_string()))
                                .collect(),
                        },
                    )
                })
                .collect::<Vec<_>>()
        }),
        1..6,
    )
    .prop_map(|classes| {
        ConceptDump(
            classes
                .into_iter()
                .enumerate()
                .map(|(i, parts)| DumpClass {
                    class: format!("class {i}"),
                    parts,
                })
                .collect(),
        )
    })
}

fn redump(vocab: &ConceptVocabulary) -> ConceptDump {
    ConceptDump(
        vocab
            .classes()
            .iter()
            .map(|c| DumpClass {
                class: c.name.clone(),
                parts: vocab
                    .groups(c.index)
                    .iter()
                    .map(|g| DumpPart {
                        name: g.perceptual.clone(),
                        descriptions: g
                            .ids
                            .iter()
                            .map(|&i| DumpDescription::Text(vocab.pairs()[i].descriptive.clone()))
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pooling_matches_full_sort(groups in groups_strategy(), k in 1usize..6) {
        prop_assert_eq!(pool(&groups, k), sort_oracle(&groups, k));
    }

    #[test]
    fn pooled_size_bounded(groups in groups_strategy(), k in 1usize..6) {
        let bound: usize = groups.iter().map(|g| g.len().min(k)).sum();
        prop_assert!(pool(&groups, k).len() <= bound);
    }

    #[test]
    fn label_scores_match_loop((matrix, c) in matrix_strategy()) {
        let l = label_scores(&c, &matrix);
        for j in 0..matrix.num_classes() {
            let mut want = 0.0;
            for (i, ci) in c.iter().enumerate() {
                if matrix.get(i, j) {
                    want += ci;
                }
            }
            prop_assert_eq!(l[j].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn matrix_agrees_with_vocabulary(dump in dump_strategy()) {
        let vocab = ingest_concept_dump(&dump, IngestOptions::default()).unwrap();
        let matrix = build_intervention_matrix(&vocab);
        prop_assert_eq!(matrix.num_concepts(), vocab.num_concepts());
        for j in 0..vocab.num_classes() {
            let members = vocab.class_concepts(j);
            for i in 0..vocab.num_concepts() {
                prop_assert_eq!(matrix.get(i, j), members.contains(&i));
            }
            let listed: usize = vocab.groups(j).iter().map(|g| g.ids.len()).sum();
            prop_assert!(matrix.popcount(j) >= 1);
            prop_assert!(matrix.popcount(j) <= listed);
            prop_assert!(listed <= PARTS.len() * 4);
        }
        for i in 0..vocab.num_concepts() {
            prop_assert!(!matrix.classes_of(i).is_empty());
        }
    }

    #[test]
    fn ingestion_is_idempotent(dump in dump_strategy()) {
        let once = ingest_concept_dump(&dump, IngestOptions::default()).unwrap();
        let twice = ingest_concept_dump(&redump(&once), IngestOptions::default()).unwrap();
        prop_assert!(twice.warnings().is_empty());
        prop_assert_eq!(once.pairs(), twice.pairs());
        prop_assert_eq!(build_intervention_matrix(&once), build_intervention_matrix(&twice));
    }

    #[test]
    fn duplicated_dump_entries_add_nothing(dump in dump_strategy()) {
        let once = ingest_concept_dump(&dump, IngestOptions::default()).unwrap();
        let doubled = ConceptDump(
            dump.0
                .iter()
                .map(|c| DumpClass {
                    class: c.class.clone(),
                    parts: c
                        .parts
                        .iter()
                        .map(|p| DumpPart {
                            name: p.name.clone(),
                            descriptions: p.descriptions.iter().chain(&p.descriptions).cloned().collect(),
                        })
                        .collect(),
                })
                .collect(),
        );
        let again = ingest_concept_dump(&doubled, IngestOptions::default()).unwrap();
        prop_assert_eq!(once.pairs(), again.pairs());
        prop_assert_eq!(build_intervention_matrix(&once), build_intervention_matrix(&again));
    }
}
