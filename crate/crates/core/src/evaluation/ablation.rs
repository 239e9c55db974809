//! Feature ablation: one trained scorer per tabular feature set, each scored
//! end to end and on held-out rows.

use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{classification_report, evaluate};
use super::report::percent;
use crate::bootstrap::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::ScoreClass;
use crate::patterns::RuleSet;
use crate::pipeline::Detector;
use crate::scoring::{train, FeatureSet, ScorerKind, TabularFeatures, TrainConfig};
use crate::transcript::Corpus;

pub const ABLATION_FEATURE_SETS: [FeatureSet; 4] =
    [FeatureSet::TEXT_ONLY, FeatureSet::TEXT_START, FeatureSet::TEXT_SIDE, FeatureSet::ALL];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub features: String,
    /// Call-level metrics on the evaluation corpus, averaged over domains.
    pub precision: f64,
    pub hit_rate: f64,
    pub f1: f64,
    /// Precision of the positive class on the validation split.
    pub positive_precision: f64,
}

/// Trains on the train split of `dataset` once per feature set.
pub fn run_ablation(
    dataset: &Dataset,
    corpus: &Corpus,
    rules: &RuleSet,
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let examples = dataset.examples(Split::Train);
    let held_out: Vec<_> = dataset.split(Split::Validation).collect();
    if held_out.is_empty() {
        return Err(Error::Empty("validation split is empty"));
    }
    ABLATION_FEATURE_SETS
        .par_iter()
        .map(|&features| {
            let config = TrainConfig { features, ..base.clone() };
            let scorer = train::<f64>(&examples, &config)?;

            let gold: Vec<ScoreClass> = held_out.iter().map(|r| r.label).collect();
            let predicted: Vec<ScoreClass> = held_out
                .iter()
                .map(|r| scorer.predict(&r.text, TabularFeatures::new(r.start_time_s, r.initiator)).argmax())
                .collect();
            let cls = classification_report(&gold, &predicted)?;

            let detector = Detector::new(rules.clone(), ScorerKind::Trained(Box::new(scorer)));
            let results = detector.detect_corpus(&corpus.calls)?;
            let report = evaluate(
                features.label(),
                results.iter().map(|(id, d)| (id.as_str(), d.as_ref().map(|d| d.utterance_index))),
                &corpus.gold,
            )?;
            Ok(AblationRow {
                features: features.label().to_string(),
                precision: report.overall.precision,
                hit_rate: report.overall.hit_rate,
                f1: report.overall.f1,
                positive_precision: cls.precision[ScoreClass::Purpose.index()],
            })
        })
        .collect()
}

pub fn render_ablation_tsv(rows: &[AblationRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("ablation has no rows"));
    }
    let mut s = String::from("features\tprecision\thit_rate\tf1\tpositive_precision\n");
    for r in rows {
        writeln!(
            s,
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            r.features, r.precision, r.hit_rate, r.f1, r.positive_precision
        )
        .expect("writing to a String");
    }
    Ok(s)
}

pub fn render_ablation_text(rows: &[AblationRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("ablation has no rows"));
    }
    let w = rows.iter().map(|r| r.features.len()).max().unwrap_or(0).max("Features".len());
    let mut s = format!("{:<w$}  {:>5}  {:>5}  {:>5}  {:>5}\n", "Features", "P", "HR", "F1", "PP");
    for r in rows {
        writeln!(
            s,
            "{:<w$}  {:>5}  {:>5}  {:>5}  {:>5}",
            r.features,
            percent(r.precision),
            percent(r.hit_rate),
            percent(r.f1),
            percent(r.positive_precision)
        )
        .expect("writing to a String");
    }
    Ok(s)
}
