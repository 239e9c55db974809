//! The inner scoring model: a probability triple over {purpose, question, negative}
//! for one utterance.

mod features;
mod trained;

use std::collections::BTreeMap;
use std::fmt::Debug;

pub use features::{
    FeatureSet, Featurizer, TabularFeatures, DEFAULT_HASH_DIM, DEFAULT_MAX_NGRAM, DEFAULT_MAX_TOKENS,
    START_TIME_CAP_S,
};
pub use trained::{
    gated_fuse, train, GatedFusion, Gradients, Matrix, TrainConfig, TrainedScorer, TrainingExample,
    TrainingMeta, MODEL_FORMAT_VERSION,
};

use crate::error::Result;
use crate::model::{ScoreTriple, Utterance};
use crate::num::Scalar;
use crate::patterns::Analysis;

/// Everything a scorer may look at for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub utterance: &'a Utterance,
    /// Rule-layer analysis of the utterance in its call context.
    pub analysis: &'a Analysis,
    /// Whether the speaker initiated the call.
    pub is_initiator: bool,
}

/// Pure function of its inputs and frozen parameters; output is on the simplex.
pub trait Scorer<T: Scalar>: Send + Sync + Debug {
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTriple<T>;
}

/// Fixed triples the rule scorer maps pattern outcomes to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTable<T> {
    pub purpose: ScoreTriple<T>,
    pub question: ScoreTriple<T>,
    pub negative: ScoreTriple<T>,
}

impl<T: Scalar> Default for ScoreTable<T> {
    fn default() -> Self {
        let t = |a, b, c| ScoreTriple::new(T::lit(a), T::lit(b), T::lit(c)).expect("default triple");
        ScoreTable {
            purpose: t(0.90, 0.02, 0.08),
            question: t(0.05, 0.90, 0.05),
            negative: t(0.05, 0.05, 0.90),
        }
    }
}

/// Qualifying purpose tags map to the purpose triple, a question prompt to the
/// question triple, anything else (including a veto) to the negative triple.
pub fn rule_score<T: Scalar>(analysis: &Analysis, table: &ScoreTable<T>) -> ScoreTriple<T> {
    if !analysis.qualifying.is_empty() {
        table.purpose
    } else if analysis.prompt() {
        table.question
    } else {
        table.negative
    }
}

#[derive(Debug, Clone)]
pub struct RuleScorer<T> {
    pub table: ScoreTable<T>,
}

impl<T: Scalar> Default for RuleScorer<T> {
    fn default() -> Self {
        RuleScorer { table: ScoreTable::default() }
    }
}

impl<T: Scalar> Scorer<T> for RuleScorer<T> {
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTriple<T> {
        rule_score(ctx.analysis, &self.table)
    }
}

/// Reads gold labels: the annotated purpose utterance scores (1, 0, 0), everything else (0, 0, 1).
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    gold: BTreeMap<String, Option<u32>>,
}

impl OracleScorer {
    pub fn new(gold: impl IntoIterator<Item = (String, Option<u32>)>) -> Self {
        OracleScorer { gold: gold.into_iter().collect() }
    }
}

impl<T: Scalar> Scorer<T> for OracleScorer {
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTriple<T> {
        let u = ctx.utterance;
        let hit = self.gold.get(&u.call_id).copied().flatten() == Some(u.index);
        let (p, n) = if hit { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
        ScoreTriple { purpose: p, question: T::zero(), negative: n }
    }
}

/// The scorer a pipeline runs with.
#[derive(Debug, Clone)]
pub enum ScorerKind<T> {
    Rules(RuleScorer<T>),
    Trained(Box<TrainedScorer<T>>),
    Oracle(OracleScorer),
}

impl<T: Scalar> ScorerKind<T> {
    pub fn rules() -> Self {
        ScorerKind::Rules(RuleScorer::default())
    }

    pub fn load_trained(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(ScorerKind::Trained(Box::new(TrainedScorer::load(path)?)))
    }
}

impl<T: Scalar> Scorer<T> for ScorerKind<T> {
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTriple<T> {
        match self {
            ScorerKind::Rules(s) => s.score(ctx),
            ScorerKind::Trained(s) => s.score(ctx),
            ScorerKind::Oracle(s) => s.score(ctx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CallSide, ScoreClass};
    use crate::patterns::{MatchContext, RuleSet};

    fn scored(rules: &RuleSet, side: CallSide, text: &str) -> ScoreTriple<f64> {
        let u = Utterance::new("c", 1, side, 3.0, text).unwrap();
        let analysis = rules.analyze(&u, &MatchContext::default());
        rule_score(&analysis, &ScoreTable::default())
    }

    #[test]
    fn rule_score_mapping() {
        let rules = RuleSet::default_rules();
        let p = scored(
            &rules,
            CallSide::Customer,
            "The reason for my call is I moved to a new address, so I need to change it on my profile.",
        );
        assert_eq!(p.as_array(), [0.90, 0.02, 0.08]);
        assert_eq!(scored(&rules, CallSide::Agent, "How can I help you?").argmax(), ScoreClass::Question);
        assert_eq!(scored(&rules, CallSide::Agent, "Okay let me check that.").argmax(), ScoreClass::Negative);
    }

    #[test]
    fn oracle_reads_gold() {
        let oracle = OracleScorer::new([("c".to_string(), Some(1))]);
        let rules = RuleSet::from_toml_str("").unwrap();
        let u = Utterance::new("c", 1, CallSide::Customer, 3.0, "anything").unwrap();
        let analysis = rules.analyze(&u, &MatchContext::default());
        let ctx = ScoreContext { utterance: &u, analysis: &analysis, is_initiator: true };
        let t: ScoreTriple<f32> = oracle.score(&ctx);
        assert_eq!(t.argmax(), ScoreClass::Purpose);
    }
}
