//! Accuracy, concept importance, the concept-removal leakage benchmark, and
//! inference-time interventions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_with_ties, ConceptModel, PredictionRecord};
use crate::store::LabeledDataset;

/// Removal grid used when none is given.
pub const DEFAULT_FRACTIONS: [f64; 8] = [0.0, 0.01, 0.02, 0.05, 0.10, 0.25, 0.5, 1.0];

fn check_input(model: &dyn ConceptModel, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.input_dim() {
        return Err(Error::shape(
            format!("embeddings of dimension {}", model.input_dim()),
            data.dim(),
        ));
    }
    data.check_labels(model.num_classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n: usize,
    pub accuracy: f64,
    /// Samples whose top score is shared by several classes.
    pub ambiguous: usize,
    /// How often each class pair tied for the top score, keyed "a-b".
    pub tied_pairs: BTreeMap<String, usize>,
}

/// Fraction of samples whose arg-max (lowest index on ties) is the label.
pub fn accuracy(model: &dyn ConceptModel, data: &LabeledDataset) -> Result<f64> {
    Ok(evaluate(model, data)?.accuracy)
}

pub fn evaluate(model: &dyn ConceptModel, data: &LabeledDataset) -> Result<EvalReport> {
    check_input(model, data)?;
    let mut hits = 0;
    let mut ambiguous = 0;
    let mut tied_pairs = BTreeMap::new();
    for i in 0..data.len() {
        let (pred, ties) = argmax_with_ties(&model.scores(&data.embeddings.row_f64(i)));
        hits += usize::from(pred == data.labels[i]);
        if ties.len() > 1 {
            ambiguous += 1;
            for (x, &a) in ties.iter().enumerate() {
                for &b in &ties[x + 1..] {
                    *tied_pairs.entry(format!("{a}-{b}")).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(EvalReport {
        model: model.tag().to_string(),
        n: data.len(),
        accuracy: hits as f64 / data.len() as f64,
        ambiguous,
        tied_pairs,
    })
}

/// Accuracy when every sample ties across all classes and the lowest index
/// wins.
pub fn tie_break_floor(data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(data.labels.iter().filter(|&&y| y == 0).count() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// Unit ids, most important first.
    pub order: Vec<usize>,
    /// `scores[k]` is the importance of `order[k]`; non-increasing.
    pub scores: Vec<f64>,
}

/// Mean contribution of each unit to the predicted class's score over
/// `data`. Ties are ordered by unit id.
pub fn rank_importance(model: &dyn ConceptModel, data: &LabeledDataset) -> Result<ImportanceRanking> {
    check_input(model, data)?;
    let units = model.num_units();
    let mut totals = vec![0.0; units];
    for i in 0..data.len() {
        let act = model.activations(&data.embeddings.row_f64(i));
        let (pred, _) = argmax_with_ties(&model.head(&act));
        for (u, t) in totals.iter_mut().enumerate() {
            *t += model.contribution(&act, u, pred);
        }
    }
    let n = data.len() as f64;
    let means: Vec<f64> = totals.into_iter().map(|t| t / n).collect();
    let mut order: Vec<usize> = (0..units).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let scores = order.iter().map(|&u| means[u]).collect();
    Ok(ImportanceRanking { order, scores })
}

/// `⌈f · units⌉`, ignoring floating-point noise just above an integer.
pub fn removal_count(fraction: f64, units: usize) -> usize {
    let raw = fraction * units as f64;
    let r = raw.round();
    let n = if (raw - r).abs() < 1e-9 { r } else { raw.ceil() };
    (n.max(0.0) as usize).min(units)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageCurve {
    pub model: String,
    pub fractions: Vec<f64>,
    pub removed: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub ranking: ImportanceRanking,
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&0.0) {
        return Err(Error::Config("removal fractions must start at 0".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config("removal fractions must lie in [0, 1]".into()));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("removal fractions must be strictly ascending".into()));
    }
    Ok(())
}

/// Zeroes the top-ranked units before the scoring head and re-measures
/// accuracy at every fraction. The ranking is computed once, on `data`,
/// with nothing removed.
pub fn leakage_curve(
    model: &dyn ConceptModel,
    data: &LabeledDataset,
    fractions: &[f64],
) -> Result<LeakageCurve> {
    check_fractions(fractions)?;
    let ranking = rank_importance(model, data)?;
    let units = model.num_units();
    let activations: Vec<Vec<f64>> = (0..data.len())
        .map(|i| model.activations(&data.embeddings.row_f64(i)))
        .collect();

    let mut removed = Vec::with_capacity(fractions.len());
    let mut accuracies = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let count = removal_count(f, units);
        let mut keep = vec![true; units];
        for &u in &ranking.order[..count] {
            keep[u] = false;
        }
        let hits = activations
            .iter()
            .zip(&data.labels)
            .filter(|(act, &y)| {
                let masked: Vec<f64> = act
                    .iter()
                    .zip(&keep)
                    .map(|(&a, &k)| if k { a } else { 0.0 })
                    .collect();
                argmax_with_ties(&model.head(&masked)).0 == y
            })
            .count();
        removed.push(count);
        accuracies.push(hits as f64 / data.len() as f64);
    }
    Ok(LeakageCurve {
        model: model.tag().to_string(),
        fractions: fractions.to_vec(),
        removed,
        accuracies,
        ranking,
    })
}

/// CSV with header `fraction,accuracy,model`.
pub fn curves_to_csv(curves: &[LeakageCurve]) -> String {
    let mut out = String::from("fraction,accuracy,model\n");
    for c in curves {
        for (f, a) in c.fractions.iter().zip(&c.accuracies) {
            writeln!(out, "{f},{a},{}", c.model).unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Interventions

/// A user override of one concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    /// Force the concept to probability 0.
    #[serde(alias = "set-0", alias = "0")]
    Off,
    /// Force the concept to probability 1.
    #[serde(alias = "set-1", alias = "1")]
    On,
    /// Drop any override and keep the predicted value.
    Clear,
}

impl std::str::FromStr for Edit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "off" | "set-0" => Ok(Edit::Off),
            "1" | "on" | "set-1" => Ok(Edit::On),
            "clear" => Ok(Edit::Clear),
            other => Err(Error::Config(format!("unknown edit {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub before: PredictionRecord,
    pub after: PredictionRecord,
}

/// Unit activations, class scores and arg-max for one input.
pub fn predict(model: &dyn ConceptModel, x: &[f64]) -> Result<PredictionRecord> {
    if x.len() != model.input_dim() {
        return Err(Error::shape(model.input_dim(), x.len()));
    }
    let c = model.activations(x);
    let l = model.head(&c);
    Ok(PredictionRecord::from_scores(c, l))
}

/// Overrides concept activations and re-scores the labels.
pub fn intervene(
    model: &dyn ConceptModel,
    x: &[f64],
    edits: &BTreeMap<usize, Edit>,
) -> Result<Intervention> {
    let units = model.num_units();
    if let Some((&id, _)) = edits.iter().find(|(&id, _)| id >= units) {
        return Err(Error::UnknownConcept { id, count: units });
    }
    let before = predict(model, x)?;
    let mut edited = before.c.clone();
    for (&id, edit) in edits {
        match edit {
            Edit::Off => edited[id] = 0.0,
            Edit::On => edited[id] = 1.0,
            Edit::Clear => {}
        }
    }
    let l = model.head(&edited);
    Ok(Intervention {
        before,
        after: PredictionRecord::from_scores(edited, l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CBLayer, SupCbm};
    use crate::store::{EmbeddingKind, EmbeddingMatrix, Split};
    use crate::vocab::InterventionMatrix;

    fn dataset(rows: &[&[f32]], labels: &[usize]) -> LabeledDataset {
        let d = rows[0].len();
        LabeledDataset::new(
            EmbeddingMatrix::new(
                EmbeddingKind::Image,
                d,
                (0..rows.len()).map(|i| format!("s{i}")).collect(),
                rows.iter().flat_map(|r| r.iter().copied()).collect(),
            )
            .unwrap(),
            labels.to_vec(),
            Split::Test,
        )
        .unwrap()
    }

    /// 3 concepts, 2 classes: concept 0 → class 0, concept 1 → class 1,
    /// concept 2 → nothing. Concept i's logit is x_i.
    fn toy() -> SupCbm {
        let mut layer = CBLayer::zeros(3, 3);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let m = InterventionMatrix::from_entries(3, 2, [(0, 0), (1, 1)]).unwrap();
        SupCbm::new(layer, m).unwrap()
    }

    #[test]
    fn constant_model_on_one_class() {
        let model = toy();
        let data = dataset(&[&[5.0, -5.0, 0.0], &[4.0, -1.0, 0.0]], &[0, 0]);
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
        let data = dataset(&[&[5.0, -5.0, 0.0], &[4.0, -1.0, 0.0]], &[1, 1]);
        assert_eq!(accuracy(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty = LabeledDataset::new(
            EmbeddingMatrix::new(EmbeddingKind::Image, 3, vec![], vec![]).unwrap(),
            vec![],
            Split::Test,
        )
        .unwrap();
        assert!(matches!(accuracy(&toy(), &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn uninvolved_concept_ranks_last_with_zero() {
        let model = toy();
        let data = dataset(&[&[2.0, 0.0, 9.0], &[0.0, 3.0, 9.0]], &[0, 1]);
        let r = rank_importance(&model, &data).unwrap();
        assert_eq!(*r.order.last().unwrap(), 2);
        assert_eq!(*r.scores.last().unwrap(), 0.0);
        assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn single_sample_ranking_matches_hand_computation() {
        let model = toy();
        let x = [1.0f32, -0.5, 0.0];
        let data = dataset(&[&x], &[0]);
        let r = rank_importance(&model, &data).unwrap();
        // Predicted class 0: only concept 0 contributes, with σ(1).
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert_eq!(r.order, vec![0, 1, 2]);
        assert_eq!(r.scores, vec![s1, 0.0, 0.0]);
    }

    #[test]
    fn duplicated_concepts_score_equally() {
        let mut layer = CBLayer::zeros(3, 2);
        layer.weights = vec![1.0, 0.5, 1.0, 0.5, -1.0, 0.0];
        let m = InterventionMatrix::from_entries(3, 2, [(0, 0), (1, 0), (2, 1)]).unwrap();
        let model = SupCbm::new(layer, m).unwrap();
        let data = dataset(&[&[0.3, 0.1], &[-0.2, 0.7]], &[0, 1]);
        let r = rank_importance(&model, &data).unwrap();
        let pos = |u| r.order.iter().position(|&o| o == u).unwrap();
        assert_eq!(r.scores[pos(0)], r.scores[pos(1)]);
    }

    #[test]
    fn removal_counts() {
        assert_eq!(removal_count(0.1, 300), 30);
        assert_eq!(removal_count(0.01, 295), 3);
        assert_eq!(removal_count(0.25, 256), 64);
        assert_eq!(removal_count(1.0, 7), 7);
        assert_eq!(removal_count(0.0, 7), 0);
    }

    #[test]
    fn curve_endpoints() {
        let model = toy();
        let data = dataset(&[&[2.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 1.0, 0.0]], &[0, 1, 1]);
        let curve = leakage_curve(&model, &data, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(curve.accuracies[0], accuracy(&model, &data).unwrap());
        assert_eq!(curve.accuracies[2], tie_break_floor(&data).unwrap());
        assert_eq!(curve.removed, vec![0, 2, 3]);
    }

    #[test]
    fn bad_fraction_grids() {
        let model = toy();
        let data = dataset(&[&[1.0, 0.0, 0.0]], &[0]);
        assert!(leakage_curve(&model, &data, &[0.1, 0.5]).is_err());
        assert!(leakage_curve(&model, &data, &[0.0, 0.5, 0.5]).is_err());
        assert!(leakage_curve(&model, &data, &[0.0, 1.5]).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = LeakageCurve {
            model: "m".into(),
            fractions: vec![0.0, 1.0],
            removed: vec![0, 3],
            accuracies: vec![1.0, 0.5],
            ranking: ImportanceRanking {
                order: vec![],
                scores: vec![],
            },
        };
        assert_eq!(curves_to_csv(&[c]), "fraction,accuracy,model\n0,1,m\n1,0.5,m\n");
    }

    #[test]
    fn empty_edits_change_nothing() {
        let model = toy();
        let r = intervene(&model, &[0.5, 0.2, 0.0], &BTreeMap::new()).unwrap();
        assert_eq!(r.before, r.after);
    }

    #[test]
    fn zeroing_predicted_class_concepts_zeroes_its_score() {
        let model = toy();
        let x = [2.0, 0.1, 0.0];
        let before = model.predict(&x).unwrap();
        let edits = model
            .matrix
            .concepts_of(before.predicted)
            .iter()
            .map(|&i| (i, Edit::Off))
            .collect();
        let r = intervene(&model, &x, &edits).unwrap();
        assert_eq!(r.after.l[before.predicted], 0.0);
        assert_eq!(r.after.predicted, 1);
    }

    #[test]
    fn unknown_ids_rejected() {
        let edits = BTreeMap::from([(7, Edit::On)]);
        assert!(matches!(
            intervene(&toy(), &[0.0; 3], &edits),
            Err(Error::UnknownConcept { id: 7, count: 3 })
        ));
    }

    #[test]
    fn edit_parsing() {
        let m: BTreeMap<usize, Edit> =
            serde_json::from_str(r#"{"1": "on", "2": "set-0", "3": "clear"}"#).unwrap();
        assert_eq!(m[&1], Edit::On);
        assert_eq!(m[&2], Edit::Off);
        assert_eq!("1".parse::<Edit>().unwrap(), Edit::On);
    }
}
