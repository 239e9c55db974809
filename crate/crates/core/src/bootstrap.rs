//! Weak labeling of calls with the rule pipeline and resampling of the labels
//! into a training set for the learned scorer.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Call, CallSide, PatternTag, ScoreClass, Utterance};
use crate::num::Scalar;
use crate::patterns::RuleSet;
use crate::pipeline::Detector;
use crate::scoring::TrainingExample;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub utterance: Utterance,
    pub label: ScoreClass,
    /// Dominant tag of the decision, for positives.
    pub source_pattern: Option<PatternTag>,
    /// Whether the rule pipeline detected a purpose in this call.
    pub from_hit_call: bool,
    pub initiator: bool,
}

/// Labels every gated utterance: the call's final decision is positive,
/// question prompts are questions, the rest negative.
pub fn weak_label<T: Scalar>(detector: &Detector<T>, calls: &[Call]) -> Result<Vec<LabeledUtterance>> {
    if calls.is_empty() {
        return Err(Error::Empty("corpus has no calls"));
    }
    let per_call = calls
        .par_iter()
        .map(|call| {
            let decision = detector.detect_call(call)?;
            let initiator = call.initiator();
            let hit = decision.is_some();
            let rows: Vec<LabeledUtterance> = call
                .utterances
                .iter()
                .filter(|u| detector.gate.admits(u))
                .map(|u| {
                    let (label, source_pattern) = match &decision {
                        Some(d) if d.utterance_index == u.index => {
                            (ScoreClass::Purpose, PatternTag::dominant(&d.tags))
                        }
                        _ if detector.rules.cues(&u.text).prompt => (ScoreClass::Question, None),
                        _ => (ScoreClass::Negative, None),
                    };
                    LabeledUtterance {
                        utterance: u.clone(),
                        label,
                        source_pattern,
                        from_hit_call: hit,
                        initiator: u.side == initiator,
                    }
                })
                .collect();
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_call.into_iter().flatten().collect())
}

/// Drops positives matching the false-positive rules.
pub fn filter_false_positives(rows: Vec<LabeledUtterance>, rules: &RuleSet) -> Vec<LabeledUtterance> {
    rows.into_iter()
        .filter(|r| r.label != ScoreClass::Purpose || !rules.is_false_positive(&r.utterance.text))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Validation];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMix {
    pub positive: f64,
    pub negative: f64,
    pub question: f64,
}

/// Shares of positives by source pattern; `other` pools the remaining purpose tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositiveMix {
    pub call_purpose_phrase: f64,
    pub desire_phrase: f64,
    pub problem_phrase: f64,
    pub other: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMix {
    pub train: f64,
    pub dev: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub size: usize,
    pub labels: LabelMix,
    pub positives: PositiveMix,
    pub splits: SplitMix,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            size: 10_000,
            labels: LabelMix { positive: 0.425, negative: 0.425, question: 0.15 },
            positives: PositiveMix { call_purpose_phrase: 0.30, desire_phrase: 0.30, problem_phrase: 0.20, other: 0.20 },
            splits: SplitMix { train: 0.8, dev: 0.1, validation: 0.1 },
            seed: 0,
        }
    }
}

fn check_mix(name: &str, weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Validation(format!("{name}: weights must be non-negative")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{name}: weights sum to {sum}, not 1")));
    }
    Ok(())
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        let l = &self.labels;
        check_mix("label mix", &[l.positive, l.negative, l.question])?;
        let p = &self.positives;
        check_mix("positive mix", &[p.call_purpose_phrase, p.desire_phrase, p.problem_phrase, p.other])?;
        let s = &self.splits;
        check_mix("split mix", &[s.train, s.dev, s.validation])?;
        if self.size == 0 {
            return Err(Error::Validation("sample size must be positive".into()));
        }
        Ok(())
    }
}

/// Sampling strata; positives are split by source pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stratum {
    CallPurposePhrase,
    DesirePhrase,
    ProblemPhrase,
    OtherPositive,
    Question,
    Negative,
}

impl Stratum {
    fn of(row: &LabeledUtterance) -> Stratum {
        match (row.label, row.source_pattern) {
            (ScoreClass::Purpose, Some(PatternTag::CallPurposePhrase)) => Stratum::CallPurposePhrase,
            (ScoreClass::Purpose, Some(PatternTag::DesirePhrase)) => Stratum::DesirePhrase,
            (ScoreClass::Purpose, Some(PatternTag::ProblemPhrase)) => Stratum::ProblemPhrase,
            (ScoreClass::Purpose, _) => Stratum::OtherPositive,
            (ScoreClass::Question, _) => Stratum::Question,
            (ScoreClass::Negative, _) => Stratum::Negative,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stratum::CallPurposePhrase => "positive/call_purpose_phrase",
            Stratum::DesirePhrase => "positive/desire_phrase",
            Stratum::ProblemPhrase => "positive/problem_phrase",
            Stratum::OtherPositive => "positive/other",
            Stratum::Question => "question",
            Stratum::Negative => "negative",
        }
    }
}

/// Splits `total` by `weights` with the largest-remainder method.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total.saturating_sub(counts.iter().sum::<usize>());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// One record of the training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub text: String,
    pub label: ScoreClass,
    #[serde(default)]
    pub tag: Option<PatternTag>,
    pub call_id: String,
    pub index: u32,
    pub start_time_s: f64,
    pub side: CallSide,
    pub initiator: bool,
    pub split: Split,
}

impl DatasetRow {
    pub fn to_example(&self) -> TrainingExample {
        TrainingExample {
            text: self.text.clone(),
            label: self.label,
            start_time_s: self.start_time_s,
            initiator: self.initiator,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Sorted by split, then call id and utterance index.
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn examples(&self, split: Split) -> Vec<TrainingExample> {
        self.split(split).map(DatasetRow::to_example).collect()
    }

    pub fn write_ndjson<W: Write>(&self, out: &mut W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut *out, row).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?,
            );
        }
        Ok(Dataset { rows })
    }
}

/// Draws a stratified sample from rows of hit calls and assigns whole calls
/// to train/dev/validation.
pub fn resample(rows: &[LabeledUtterance], spec: &SamplingSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut pools: BTreeMap<Stratum, Vec<&LabeledUtterance>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.from_hit_call) {
        pools.entry(Stratum::of(r)).or_default().push(r);
    }

    let l = &spec.labels;
    let by_label = apportion(spec.size, &[l.positive, l.question, l.negative]);
    let p = &spec.positives;
    let by_pattern = apportion(by_label[0], &[p.call_purpose_phrase, p.desire_phrase, p.problem_phrase, p.other]);
    let quotas = [
        (Stratum::CallPurposePhrase, by_pattern[0]),
        (Stratum::DesirePhrase, by_pattern[1]),
        (Stratum::ProblemPhrase, by_pattern[2]),
        (Stratum::OtherPositive, by_pattern[3]),
        (Stratum::Question, by_label[1]),
        (Stratum::Negative, by_label[2]),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sampled: Vec<&LabeledUtterance> = Vec::with_capacity(spec.size);
    for (stratum, needed) in quotas {
        let mut pool = pools.remove(&stratum).unwrap_or_default();
        if pool.len() < needed {
            return Err(Error::InsufficientRows {
                stratum: stratum.name().to_string(),
                needed,
                available: pool.len(),
            });
        }
        pool.sort_by(|a, b| {
            (&a.utterance.call_id, a.utterance.index).cmp(&(&b.utterance.call_id, b.utterance.index))
        });
        let (chosen, _) = pool.partial_shuffle(&mut rng, needed);
        sampled.extend(chosen.iter().copied());
    }

    // Whole calls go to the split furthest below its target share.
    let mut per_call: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &sampled {
        *per_call.entry(r.utterance.call_id.as_str()).or_default() += 1;
    }
    let mut calls: Vec<(&str, usize)> = per_call.into_iter().collect();
    calls.shuffle(&mut rng);
    let s = &spec.splits;
    let targets = [s.train, s.dev, s.validation].map(|w| w * sampled.len() as f64);
    let mut filled = [0usize; 3];
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (call_id, n) in calls {
        let k = (0..3)
            .max_by(|&a, &b| {
                let da = targets[a] - filled[a] as f64;
                let db = targets[b] - filled[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("three splits");
        filled[k] += n;
        assignment.insert(call_id, Split::ALL[k]);
    }

    let mut out: Vec<DatasetRow> = sampled
        .into_iter()
        .map(|r| {
            let u = &r.utterance;
            DatasetRow {
                text: u.text.clone(),
                label: r.label,
                tag: r.source_pattern,
                call_id: u.call_id.clone(),
                index: u.index,
                start_time_s: u.start_time_s,
                side: u.side,
                initiator: r.initiator,
                split: assignment[u.call_id.as_str()],
            }
        })
        .collect();
    out.sort_by(|a, b| (a.split, &a.call_id, a.index).cmp(&(b.split, &b.call_id, b.index)));
    Ok(Dataset { rows: out })
}

/// Call ids appearing in more than one split.
pub fn split_overlap(dataset: &Dataset) -> BTreeSet<String> {
    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    let mut overlap = BTreeSet::new();
    for r in &dataset.rows {
        if let Some(prev) = seen.insert(&r.call_id, r.split) {
            if prev != r.split {
                overlap.insert(r.call_id.clone());
            }
        }
    }
    overlap
}
