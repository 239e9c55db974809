//! Purpose-of-Call detection for two-party call transcripts.
//!
//! Each utterance of a call passes a candidate gate, a rule layer and a
//! scorer producing a {purpose, question, negative} triple. The purpose score
//! is boosted by recent question prompts from the other side, compared against
//! a per-pattern threshold, and the best candidate so far is reported with
//! greetings and pleasantries stripped.
//!
//! The numeric core is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, with `*32` variants for single precision.

pub mod bootstrap;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod num;
pub mod patterns;
pub mod pipeline;
pub mod protocol;
pub mod scoring;
pub mod selection;
pub mod service;
pub mod simplify;
pub mod tokenize;
pub mod transcript;

pub use error::{Error, Result};
pub use model::{Call, CallSide, Direction, Domain, PatternTag, ScoreClass, Utterance};
pub use num::Scalar;
pub use patterns::RuleSet;

pub type Detector = pipeline::Detector<f64>;
pub type Detector32 = pipeline::Detector<f32>;
pub type ScoreTriple = model::ScoreTriple<f64>;
pub type ScoreTriple32 = model::ScoreTriple<f32>;
pub type PurposeDecision = model::PurposeDecision<f64>;
pub type PurposeDecision32 = model::PurposeDecision<f32>;
pub type TrainedScorer = scoring::TrainedScorer<f64>;
pub type TrainedScorer32 = scoring::TrainedScorer<f32>;
pub type ScorerKind = scoring::ScorerKind<f64>;
pub type ScorerKind32 = scoring::ScorerKind<f32>;
pub type Engine = service::Engine<f64>;
pub type Engine32 = service::Engine<f32>;
