//! Shared data model: calls, utterances, pattern tags, score triples and decisions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tokenize::word_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSide {
    Agent,
    Customer,
}

impl CallSide {
    pub fn other(self) -> CallSide {
        match self {
            CallSide::Agent => CallSide::Customer,
            CallSide::Customer => CallSide::Agent,
        }
    }

    pub(crate) fn slot(self) -> usize {
        match self {
            CallSide::Agent => 0,
            CallSide::Customer => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Inbound,
    Outbound,
    #[default]
    Unknown,
}

impl Direction {
    /// Side that placed the call, when the direction is known.
    pub fn initiator(self) -> Option<CallSide> {
        match self {
            Direction::Inbound => Some(CallSide::Customer),
            Direction::Outbound => Some(CallSide::Agent),
            Direction::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Support,
    Sales,
    General,
    #[default]
    Unknown,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Support => "support",
            Domain::Sales => "sales",
            Domain::General => "general",
            Domain::Unknown => "unknown",
        }
    }
}

/// One transcribed speech segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub call_id: String,
    /// 0-based arrival order within the call.
    pub index: u32,
    pub side: CallSide,
    /// Start of the utterance, seconds from call start.
    pub start_time_s: f64,
    pub text: String,
    /// Word tokens in `text`.
    pub token_count: usize,
}

impl Utterance {
    pub fn new(
        call_id: impl Into<String>,
        index: u32,
        side: CallSide,
        start_time_s: f64,
        text: impl Into<String>,
    ) -> Result<Self> {
        if !start_time_s.is_finite() || start_time_s < 0.0 {
            return Err(Error::Validation(format!(
                "start_time_s must be a finite non-negative number, got {start_time_s}"
            )));
        }
        let text = text.into();
        let token_count = word_count(&text);
        Ok(Utterance {
            call_id: call_id.into(),
            index,
            side,
            start_time_s,
            text,
            token_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub call_id: String,
    pub direction: Direction,
    pub domain: Domain,
    pub duration_s: f64,
    pub utterances: Vec<Utterance>,
}

impl Call {
    /// Side that initiated the call. With an unknown direction the side that did
    /// not speak first is assumed, since the recipient usually answers the phone.
    pub fn initiator(&self) -> CallSide {
        self.direction.initiator().unwrap_or_else(|| {
            self.utterances
                .first()
                .map(|u| u.side.other())
                .unwrap_or(CallSide::Customer)
        })
    }
}

/// Language patterns, prompts and filters recognised by the rule layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternTag {
    CallPurposePhrase,
    DesirePhrase,
    QuestionResponse,
    Greeting,
    ProblemPhrase,
    Update,
    Continuation,
    QuestionPrompt,
    NegativeFilter,
}

impl PatternTag {
    pub const ALL: [PatternTag; 9] = [
        PatternTag::CallPurposePhrase,
        PatternTag::DesirePhrase,
        PatternTag::QuestionResponse,
        PatternTag::Greeting,
        PatternTag::ProblemPhrase,
        PatternTag::Update,
        PatternTag::Continuation,
        PatternTag::QuestionPrompt,
        PatternTag::NegativeFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternTag::CallPurposePhrase => "call_purpose_phrase",
            PatternTag::DesirePhrase => "desire_phrase",
            PatternTag::QuestionResponse => "question_response",
            PatternTag::Greeting => "greeting",
            PatternTag::ProblemPhrase => "problem_phrase",
            PatternTag::Update => "update",
            PatternTag::Continuation => "continuation",
            PatternTag::QuestionPrompt => "question_prompt",
            PatternTag::NegativeFilter => "negative_filter",
        }
    }

    /// Tags that can mark a Purpose-of-Call candidate.
    pub fn is_purpose(self) -> bool {
        !matches!(self, PatternTag::QuestionPrompt | PatternTag::NegativeFilter)
    }

    /// Rank used to choose the dominant tag; lower wins.
    pub fn priority(self) -> Option<u8> {
        Some(match self {
            PatternTag::CallPurposePhrase => 0,
            PatternTag::Update => 1,
            PatternTag::ProblemPhrase => 2,
            PatternTag::DesirePhrase => 3,
            PatternTag::Continuation => 4,
            PatternTag::QuestionResponse => 5,
            PatternTag::Greeting => 6,
            PatternTag::QuestionPrompt | PatternTag::NegativeFilter => return None,
        })
    }

    /// Highest-priority purpose tag in `tags`.
    pub fn dominant<'a>(tags: impl IntoIterator<Item = &'a PatternTag>) -> Option<PatternTag> {
        tags.into_iter()
            .filter_map(|t| t.priority().map(|p| (p, *t)))
            .min()
            .map(|(_, t)| t)
    }
}

impl fmt::Display for PatternTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown pattern tag `{s}`")))
    }
}

/// Class index into a [`ScoreTriple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreClass {
    #[serde(rename = "positive")]
    Purpose,
    Question,
    Negative,
}

impl ScoreClass {
    pub const ALL: [ScoreClass; 3] = [ScoreClass::Purpose, ScoreClass::Question, ScoreClass::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreClass::Purpose => "positive",
            ScoreClass::Question => "question",
            ScoreClass::Negative => "negative",
        }
    }
}

/// Probabilities over {purpose, question, negative}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTriple<T> {
    pub purpose: T,
    pub question: T,
    pub negative: T,
}

impl<T: Scalar> ScoreTriple<T> {
    /// Validates the simplex invariant.
    pub fn new(purpose: T, question: T, negative: T) -> Result<Self> {
        let triple = ScoreTriple {
            purpose,
            question,
            negative,
        };
        let in_range = |p: T| p >= T::zero() && p <= T::one();
        if ![purpose, question, negative].into_iter().all(in_range) {
            return Err(Error::Validation(format!(
                "score components must lie in [0, 1]: {triple:?}"
            )));
        }
        if (triple.sum() - T::one()).abs() > T::simplex_tolerance() {
            return Err(Error::Validation(format!(
                "score components must sum to 1: {triple:?}"
            )));
        }
        Ok(triple)
    }

    pub fn from_array(p: [T; 3]) -> Result<Self> {
        Self::new(p[0], p[1], p[2])
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.purpose, self.question, self.negative]
    }

    pub fn sum(&self) -> T {
        self.purpose + self.question + self.negative
    }

    /// Most probable class; ties resolve in class order.
    pub fn argmax(&self) -> ScoreClass {
        let mut best = ScoreClass::Purpose;
        let p = self.as_array();
        for class in [ScoreClass::Question, ScoreClass::Negative] {
            if p[class.index()] > p[best.index()] {
                best = class;
            }
        }
        best
    }

    pub fn cast<U: Scalar>(&self) -> ScoreTriple<U> {
        ScoreTriple {
            purpose: U::lit(self.purpose.as_f64()),
            question: U::lit(self.question.as_f64()),
            negative: U::lit(self.negative.as_f64()),
        }
    }
}

/// The currently best Purpose of Call for a call.
#[derive(Debug, Clone, PartialEq)]
pub struct PurposeDecision<T> {
    pub call_id: String,
    pub utterance_index: u32,
    pub combined_score: T,
    pub tags: BTreeSet<PatternTag>,
    pub original_text: String,
    pub simplified_text: String,
    /// Index of the utterance whose arrival triggered the emission.
    pub decided_at_utterance_index: u32,
}
