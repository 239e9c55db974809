use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Domain, ScoreClass};
use crate::num::harmonic_mean;
use crate::protocol::GoldRecord;

/// Calls shorter than this are not counted in the hit rate.
pub const MIN_ELIGIBLE_DURATION_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub calls: usize,
    /// Calls lasting at least 30 seconds.
    pub eligible: usize,
    /// Decisions made, over all calls.
    pub decisions: usize,
    /// Decisions that select the gold index.
    pub correct: usize,
    /// Eligible calls with a decision.
    pub hits: usize,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.calls += other.calls;
        self.eligible += other.eligible;
        self.decisions += other.decisions;
        self.correct += other.correct;
        self.hits += other.hits;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub precision: f64,
    pub hit_rate: f64,
    pub f1: f64,
    pub counts: Counts,
    /// Set when precision or hit rate had an empty denominator and is reported as 0.
    pub degenerate: bool,
}

impl MetricRow {
    pub fn from_counts(counts: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let p = ratio(counts.correct, counts.decisions);
        let hr = ratio(counts.hits, counts.eligible);
        let precision = p.unwrap_or(0.0);
        let hit_rate = hr.unwrap_or(0.0);
        MetricRow {
            precision,
            hit_rate,
            f1: harmonic_mean(precision, hit_rate),
            counts,
            degenerate: p.is_none() || hr.is_none(),
        }
    }

    /// Arithmetic mean of the rows' metrics; counts are summed.
    pub fn mean_of(rows: &[MetricRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows to average"));
        }
        let n = rows.len() as f64;
        let mut counts = Counts::default();
        for r in rows {
            counts.add(&r.counts);
        }
        Ok(MetricRow {
            precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
            hit_rate: rows.iter().map(|r| r.hit_rate).sum::<f64>() / n,
            f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
            counts,
            degenerate: rows.iter().any(|r| r.degenerate),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Name of the evaluated system, e.g. `rules` or `hybrid`.
    pub model: String,
    /// One row per domain present in the gold set.
    pub domains: BTreeMap<Domain, MetricRow>,
    pub overall: MetricRow,
}

/// Scores final decisions (`call_id`, chosen utterance index) against gold.
/// Gold calls without an entry in `decisions` count as misses.
pub fn evaluate<'a>(
    model: &str,
    decisions: impl IntoIterator<Item = (&'a str, Option<u32>)>,
    gold: &BTreeMap<String, GoldRecord>,
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::Empty("gold set has no calls"));
    }
    let mut chosen: BTreeMap<&str, Option<u32>> = BTreeMap::new();
    for (call_id, index) in decisions {
        if !gold.contains_key(call_id) {
            return Err(Error::Validation(format!("decision for call {call_id} which has no gold record")));
        }
        if chosen.insert(call_id, index).is_some() {
            return Err(Error::Validation(format!("more than one decision for call {call_id}")));
        }
    }

    let mut counts: BTreeMap<Domain, Counts> = BTreeMap::new();
    for (call_id, g) in gold {
        let c = counts.entry(g.domain).or_default();
        c.calls += 1;
        let eligible = g.duration_s >= MIN_ELIGIBLE_DURATION_S;
        c.eligible += usize::from(eligible);
        if let Some(index) = chosen.get(call_id.as_str()).copied().flatten() {
            c.decisions += 1;
            c.correct += usize::from(g.purpose_index == Some(index));
            c.hits += usize::from(eligible);
        }
    }

    let domains: BTreeMap<Domain, MetricRow> =
        counts.into_iter().map(|(d, c)| (d, MetricRow::from_counts(c))).collect();
    let rows: Vec<MetricRow> = domains.values().cloned().collect();
    Ok(EvalReport { model: model.to_string(), overall: MetricRow::mean_of(&rows)?, domains })
}

/// Utterance-level classification quality of a scorer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Per-class precision, indexed by [`ScoreClass::index`].
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    /// `confusion[gold][predicted]`
    pub confusion: [[usize; 3]; 3],
}

pub fn classification_report(gold: &[ScoreClass], predicted: &[ScoreClass]) -> Result<ClassificationReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Dimension { expected: gold.len(), got: predicted.len() });
    }
    if gold.is_empty() {
        return Err(Error::Empty("no rows to classify"));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(predicted) {
        confusion[g.index()][p.index()] += 1;
    }
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1_sum = 0.0;
    for k in 0..3 {
        let tp = confusion[k][k] as f64;
        let predicted_k: usize = (0..3).map(|g| confusion[g][k]).sum();
        let gold_k: usize = confusion[k].iter().sum();
        precision[k] = if predicted_k == 0 { 0.0 } else { tp / predicted_k as f64 };
        recall[k] = if gold_k == 0 { 0.0 } else { tp / gold_k as f64 };
        f1_sum += harmonic_mean(precision[k], recall[k]);
    }
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    Ok(ClassificationReport {
        n: gold.len(),
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1: f1_sum / 3.0,
        precision,
        recall,
        confusion,
    })
}

/// Report of the constant predictor that always outputs the most frequent
/// label of `train_labels`, scored on `eval_labels`.
pub fn majority_baseline(train_labels: &[ScoreClass], eval_labels: &[ScoreClass]) -> Result<ClassificationReport> {
    let mut freq = [0usize; 3];
    for l in train_labels {
        freq[l.index()] += 1;
    }
    if train_labels.is_empty() {
        return Err(Error::Empty("no training labels"));
    }
    // ties go to the class listed first
    let majority = ScoreClass::ALL
        .into_iter()
        .max_by(|a, b| freq[a.index()].cmp(&freq[b.index()]).then(b.index().cmp(&a.index())))
        .expect("three classes");
    classification_report(eval_labels, &vec![majority; eval_labels.len()])
}
