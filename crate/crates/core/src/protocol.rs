//! Newline-delimited JSON records shared by transcript files, gold corpora and
//! the streaming service. One record per line, UTF-8. Unknown fields are
//! ignored; an unknown `type` is rejected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{CallSide, Direction, Domain, PatternTag, PurposeDecision};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputEvent {
    /// Optional call metadata; may precede the first utterance.
    CallStart(CallStartEvent),
    Utterance(UtteranceEvent),
    CallEnd(CallEndEvent),
    /// Gold annotation (evaluation corpora only; the service ignores it).
    Gold(GoldRecord),
    /// Service statistics request.
    Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallStartEvent {
    pub call_id: String,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEvent {
    pub call_id: String,
    pub index: u32,
    pub side: CallSide,
    pub start_time_s: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEndEvent {
    pub call_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

/// Per-call gold annotation: the correct purpose utterance, or none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub call_id: String,
    pub purpose_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternTag>,
    #[serde(default)]
    pub domain: Domain,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputEvent {
    PurposeUpdate(DecisionRecord),
    /// Emitted once per call on `call_end`: the final decision or an explicit miss.
    FinalDecision(FinalRecord),
    Error(ErrorRecord),
    Stats(StatsRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub call_id: String,
    pub utterance_index: u32,
    pub combined_score: f64,
    pub text: String,
    pub simplified_text: String,
    pub tags: BTreeSet<PatternTag>,
}

impl DecisionRecord {
    pub fn from_decision<T: Scalar>(d: &PurposeDecision<T>) -> Self {
        DecisionRecord {
            call_id: d.call_id.clone(),
            utterance_index: d.utterance_index,
            combined_score: d.combined_score.as_f64(),
            text: d.original_text.clone(),
            simplified_text: d.simplified_text.clone(),
            tags: d.tags.clone(),
        }
    }
}

/// Final per-call result; `decision` is `None` for a miss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub call_id: String,
    pub decision: Option<DecisionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub utterances_processed: u64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub deadline_overruns: u64,
    pub active_sessions: u64,
    pub sessions_opened: u64,
    pub sessions_closed: u64,
    pub sessions_evicted: u64,
    pub errors: u64,
}

impl OutputEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("output events serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_ignored() {
        let line = r#"{"type":"utterance","call_id":"a","index":0,"side":"agent","start_time_s":0.5,"text":"hi","extra":42}"#;
        let ev: InputEvent = serde_json::from_str(line).unwrap();
        assert!(matches!(ev, InputEvent::Utterance(u) if u.call_id == "a"));
    }

    #[test]
    fn unknown_type_is_rejected() {
        let line = r#"{"type":"hangup","call_id":"a"}"#;
        assert!(serde_json::from_str::<InputEvent>(line).is_err());
    }

    #[test]
    fn stats_request_parses() {
        let ev: InputEvent = serde_json::from_str(r#"{"type":"stats"}"#).unwrap();
        assert_eq!(ev, InputEvent::Stats);
    }
}
