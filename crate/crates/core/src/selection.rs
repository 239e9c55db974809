//! The outer selection model: candidate gate, cross-side question boost,
//! per-pattern thresholds and the best-so-far decision of a call.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CallSide, PatternTag, PurposeDecision, ScoreTriple, Utterance};
use crate::num::Scalar;

/// Bounds an utterance must satisfy to be scored at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Inclusive upper bound on the utterance start time.
    pub max_start_time_s: f64,
    /// Exclusive upper bound on the 0-based index.
    pub max_utterance_index: u32,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            max_start_time_s: 180.0,
            max_utterance_index: 30,
            min_tokens: 4,
            max_tokens: 150,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_start_time_s > 0.0
            && self.max_utterance_index > 0
            && self.min_tokens > 0
            && self.max_tokens > 0;
        if !positive || !self.max_start_time_s.is_finite() {
            return Err(Error::Config("gate bounds must be positive".into()));
        }
        if self.min_tokens > self.max_tokens {
            return Err(Error::Config("gate min_tokens exceeds max_tokens".into()));
        }
        Ok(())
    }

    pub fn admits(&self, u: &Utterance) -> bool {
        u.start_time_s <= self.max_start_time_s
            && u.index < self.max_utterance_index
            && (self.min_tokens..=self.max_tokens).contains(&u.token_count)
    }
}

/// Free-function form of [`GateConfig::admits`].
pub fn gate(config: &GateConfig, u: &Utterance) -> bool {
    config.admits(u)
}

/// Serialized form of a threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub default: f64,
    pub tags: BTreeMap<PatternTag, f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            default: 0.60,
            tags: BTreeMap::from([(PatternTag::CallPurposePhrase, 0.85)]),
        }
    }
}

/// Admission threshold on the combined score, keyed by the dominant tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable<T> {
    default: T,
    tags: BTreeMap<PatternTag, T>,
}

impl<T: Scalar> Default for ThresholdTable<T> {
    fn default() -> Self {
        ThresholdTable::from_config(&ThresholdConfig::default()).expect("default thresholds are valid")
    }
}

impl<T: Scalar> ThresholdTable<T> {
    pub fn from_config(config: &ThresholdConfig) -> Result<Self> {
        let finite = |x: f64| x.is_finite() && x >= 0.0;
        if !finite(config.default) || !config.tags.values().copied().all(finite) {
            return Err(Error::Config("thresholds must be finite and non-negative".into()));
        }
        if let Some(t) = config.tags.keys().find(|t| !t.is_purpose()) {
            return Err(Error::Config(format!("threshold given for non-purpose tag {t}")));
        }
        let table = ThresholdTable {
            default: T::lit(config.default),
            tags: config.tags.iter().map(|(&k, &v)| (k, T::lit(v))).collect(),
        };
        if table.get(PatternTag::CallPurposePhrase) < table.default {
            return Err(Error::Config(
                "the call_purpose_phrase threshold may not be below the default".into(),
            ));
        }
        Ok(table)
    }

    pub fn default_threshold(&self) -> T {
        self.default
    }

    pub fn get(&self, tag: PatternTag) -> T {
        self.tags.get(&tag).copied().unwrap_or(self.default)
    }

    /// Threshold for a candidate with these tags (default when untagged).
    pub fn for_tags(&self, tags: &BTreeSet<PatternTag>) -> T {
        PatternTag::dominant(tags).map_or(self.default, |t| self.get(t))
    }
}

/// Question-score ring of the last two utterances of one side.
#[derive(Debug, Clone, Default)]
struct QuestionRing<T> {
    scores: [Option<T>; 2],
}

impl<T: Scalar> QuestionRing<T> {
    fn push(&mut self, q: T) {
        self.scores = [self.scores[1], Some(q)];
    }

    fn max(&self) -> T {
        self.scores.iter().flatten().copied().fold(T::zero(), T::max)
    }

    fn len(&self) -> usize {
        self.scores.iter().flatten().count()
    }
}

/// Streaming state of one call.
#[derive(Debug, Clone)]
pub struct CallSession<T> {
    call_id: String,
    utterances_seen: usize,
    rings: [QuestionRing<T>; 2],
    best: Option<PurposeDecision<T>>,
    closed: bool,
}

impl<T: Scalar> CallSession<T> {
    pub fn new(call_id: impl Into<String>) -> Self {
        CallSession {
            call_id: call_id.into(),
            utterances_seen: 0,
            rings: Default::default(),
            best: None,
            closed: false,
        }
    }

    pub fn call_id(&self) -> &str {
        &self.call_id
    }

    pub fn utterances_seen(&self) -> usize {
        self.utterances_seen
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn best(&self) -> Option<&PurposeDecision<T>> {
        self.best.as_ref()
    }

    /// Number of recorded question scores for `side` (at most 2).
    pub fn history_len(&self, side: CallSide) -> usize {
        self.rings[side.slot()].len()
    }

    /// `p_purpose` plus the largest question score among the last two utterances of the other side.
    pub fn combine_scores(&self, triple: &ScoreTriple<T>, side: CallSide) -> T {
        triple.purpose + self.rings[side.other().slot()].max()
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::State(format!("call {} is already closed", self.call_id)))
        } else {
            Ok(())
        }
    }

    /// Records an utterance that did not pass the gate; it contributes no question score.
    pub fn observe_ungated(&mut self, side: CallSide) -> Result<()> {
        self.ensure_open()?;
        self.rings[side.slot()].push(T::zero());
        self.utterances_seen += 1;
        Ok(())
    }

    /// Scores a gated candidate. Emits a decision only when the combined score
    /// strictly beats the current best and reaches the threshold of the
    /// candidate's dominant tag. `simplify` runs only on emission.
    pub fn consider(
        &mut self,
        utterance: &Utterance,
        triple: &ScoreTriple<T>,
        tags: &BTreeSet<PatternTag>,
        thresholds: &ThresholdTable<T>,
        simplify: impl FnOnce(&str) -> String,
    ) -> Result<Option<PurposeDecision<T>>> {
        self.ensure_open()?;
        let combined = self.combine_scores(triple, utterance.side);
        self.rings[utterance.side.slot()].push(triple.question);
        self.utterances_seen += 1;

        let beats = self.best.as_ref().is_none_or(|b| combined > b.combined_score);
        if !(beats && combined >= thresholds.for_tags(tags)) {
            return Ok(None);
        }
        let decision = PurposeDecision {
            call_id: self.call_id.clone(),
            utterance_index: utterance.index,
            combined_score: combined,
            tags: tags.clone(),
            original_text: utterance.text.clone(),
            simplified_text: simplify(&utterance.text),
            decided_at_utterance_index: utterance.index,
        };
        self.best = Some(decision.clone());
        Ok(Some(decision))
    }

    /// Marks the session closed and returns the final decision, if any.
    pub fn close(&mut self) -> Result<Option<PurposeDecision<T>>> {
        self.ensure_open()?;
        self.closed = true;
        Ok(self.best.clone())
    }
}
