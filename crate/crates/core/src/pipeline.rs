//! Per-utterance pipeline: gate, rule analysis, scoring, combination,
//! selection and simplification. The streaming service and the batch
//! detector share [`CallProcessor`], so both produce identical decisions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Call, CallSide, Direction, PurposeDecision, Utterance};
use crate::num::Scalar;
use crate::patterns::{ContextEntry, MatchContext, RuleSet};
use crate::protocol::{DecisionRecord, FinalRecord};
use crate::scoring::{ScoreContext, Scorer, ScorerKind};
use crate::selection::{CallSession, GateConfig, ThresholdTable};

/// Immutable detection configuration shared by every call.
#[derive(Debug, Clone)]
pub struct Detector<T> {
    pub rules: RuleSet,
    pub scorer: ScorerKind<T>,
    pub gate: GateConfig,
    pub thresholds: ThresholdTable<T>,
}

impl<T: Scalar> Detector<T> {
    /// Bundled rules, rule scorer, default gate and thresholds.
    pub fn with_default_rules() -> Self {
        Detector::new(RuleSet::default_rules(), ScorerKind::rules())
    }

    pub fn new(rules: RuleSet, scorer: ScorerKind<T>) -> Self {
        Detector {
            rules,
            scorer,
            gate: GateConfig::default(),
            thresholds: ThresholdTable::default(),
        }
    }

    pub fn processor(&self, call_id: impl Into<String>, direction: Direction) -> CallProcessor<'_, T> {
        CallProcessor {
            detector: self,
            session: CallSession::new(call_id),
            context: MatchContext::default(),
            direction,
            first_speaker: None,
            last_index: None,
        }
    }

    /// Runs a completed call through the streaming path.
    pub fn detect_call(&self, call: &Call) -> Result<Option<PurposeDecision<T>>> {
        let mut p = self.processor(call.call_id.clone(), call.direction);
        for u in &call.utterances {
            p.process(u)?;
        }
        p.close()
    }

    /// Final decisions for every call, sorted by call id.
    pub fn detect_corpus(&self, calls: &[Call]) -> Result<Vec<(String, Option<PurposeDecision<T>>)>> {
        let mut out = calls
            .par_iter()
            .map(|c| Ok((c.call_id.clone(), self.detect_call(c)?)))
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

/// Streaming state of one call bound to a detector.
#[derive(Debug)]
pub struct CallProcessor<'a, T> {
    detector: &'a Detector<T>,
    session: CallSession<T>,
    context: MatchContext,
    direction: Direction,
    first_speaker: Option<CallSide>,
    last_index: Option<u32>,
}

impl<'a, T: Scalar> CallProcessor<'a, T> {
    pub fn call_id(&self) -> &str {
        self.session.call_id()
    }

    pub fn session(&self) -> &CallSession<T> {
        &self.session
    }

    /// Sets the direction if it is still unknown.
    pub fn learn_direction(&mut self, direction: Direction) {
        if self.direction == Direction::Unknown {
            self.direction = direction;
        }
    }

    /// The side that placed the call. With unknown direction the side that
    /// did not speak first is taken as the initiator.
    pub fn initiator(&self) -> Option<CallSide> {
        self.direction
            .initiator()
            .or_else(|| self.first_speaker.map(CallSide::other))
    }

    /// Feeds the next utterance; returns a decision when the best changes.
    pub fn process(&mut self, u: &Utterance) -> Result<Option<PurposeDecision<T>>> {
        if self.session.is_closed() {
            return Err(Error::State(format!("call {} is already closed", u.call_id)));
        }
        if u.call_id != self.session.call_id() {
            return Err(Error::Validation(format!(
                "utterance for call {} sent to call {}",
                u.call_id,
                self.session.call_id()
            )));
        }
        if let Some(last) = self.last_index {
            if u.index <= last {
                return Err(Error::Validation(format!(
                    "call {}: utterance index {} does not follow {last}",
                    u.call_id, u.index
                )));
            }
        }
        self.last_index = Some(u.index);
        self.first_speaker.get_or_insert(u.side);

        let d = self.detector;
        let decision = if d.gate.admits(u) {
            let analysis = d.rules.analyze(u, &self.context);
            let ctx = ScoreContext {
                utterance: u,
                analysis: &analysis,
                is_initiator: self.initiator() == Some(u.side),
            };
            let triple = d.scorer.score(&ctx);
            self.session.consider(u, &triple, &analysis.qualifying, &d.thresholds, |t| {
                d.rules.simplification.simplify(t).text
            })?
        } else {
            self.session.observe_ungated(u.side)?;
            None
        };
        self.context.push(ContextEntry {
            index: u.index,
            side: u.side,
            cues: d.rules.cues(&u.text),
        });
        Ok(decision)
    }

    pub fn close(&mut self) -> Result<Option<PurposeDecision<T>>> {
        self.session.close()
    }
}

/// Wire records for batch results, in the given order.
pub fn final_records<T: Scalar>(results: &[(String, Option<PurposeDecision<T>>)]) -> Vec<FinalRecord> {
    results
        .iter()
        .map(|(id, d)| FinalRecord {
            call_id: id.clone(),
            decision: d.as_ref().map(DecisionRecord::from_decision),
        })
        .collect()
}
