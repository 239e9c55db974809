//! Declarative pattern engine: loads the rules file and tags utterances with
//! purpose patterns, question prompts and negative filters.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use regex::{Regex, RegexBuilder, RegexSet, RegexSetBuilder};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{CallSide, PatternTag, Utterance};
use crate::simplify::{SimplificationRuleSet, SimplifyRuleSpec};

/// Rules shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../data/default_rules.toml");

/// Rules file format version understood by this build.
pub const RULES_FORMAT_VERSION: u32 = 1;

/// A greeting purpose needs at least this many word tokens.
pub const GREETING_MIN_TOKENS: usize = 30;
/// A greeting purpose must occur before this 0-based index.
pub const GREETING_MAX_INDEX: u32 = 6;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesDocument {
    #[serde(default = "default_version")]
    version: u32,
    #[serde(default)]
    positive: Vec<RuleSpec>,
    #[serde(default)]
    negative: Vec<RuleSpec>,
    #[serde(default)]
    prompt: Vec<RuleSpec>,
    #[serde(default)]
    signpost: Vec<RuleSpec>,
    #[serde(default)]
    false_positive: Vec<RuleSpec>,
    #[serde(default)]
    simplify: Vec<SimplifyRuleSpec>,
}

fn default_version() -> u32 {
    RULES_FORMAT_VERSION
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    id: String,
    tag: Option<PatternTag>,
    min_tokens: Option<usize>,
    max_utterance_index: Option<u32>,
    expressions: Vec<String>,
}

/// One compiled rule: a tag and the expressions that trigger it.
#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    pub tag: PatternTag,
    pub min_tokens: Option<usize>,
    /// Exclusive upper bound on the 0-based utterance index.
    pub max_utterance_index: Option<u32>,
    expressions: Vec<Regex>,
    set: RegexSet,
}

impl Rule {
    fn compile(spec: RuleSpec, default_tag: Option<PatternTag>) -> Result<Rule> {
        let tag = match (spec.tag, default_tag) {
            (Some(t), Some(d)) if t != d => {
                return Err(Error::RulesFormat(format!(
                    "rule {}: tag `{t}` is not allowed in this section (expected `{d}`)",
                    spec.id
                )))
            }
            (Some(t), _) => t,
            (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::RulesFormat(format!("rule {} names no tag", spec.id)))
            }
        };
        if default_tag.is_none() && !tag.is_purpose() {
            return Err(Error::RulesFormat(format!(
                "rule {}: positive rules must name a purpose pattern, got `{tag}`",
                spec.id
            )));
        }
        let expressions = compile_expressions(&spec.id, &spec.expressions)?;
        let set = RegexSetBuilder::new(&spec.expressions)
            .case_insensitive(true)
            .build()
            .map_err(|e| Error::RuleCompile {
                rule_id: spec.id.clone(),
                expression: spec.expressions.join(" | "),
                message: e.to_string(),
            })?;
        Ok(Rule {
            id: spec.id,
            tag,
            min_tokens: spec.min_tokens,
            max_utterance_index: spec.max_utterance_index,
            expressions,
            set,
        })
    }

    pub fn expressions(&self) -> impl Iterator<Item = &Regex> {
        self.expressions.iter()
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.set.is_match(text)
    }

    /// First match span of every expression that matches.
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        self.set
            .matches(text)
            .into_iter()
            .filter_map(|i| self.expressions[i].find(text).map(|m| m.range()))
            .collect()
    }

    fn admits(&self, utterance: &Utterance) -> bool {
        self.min_tokens.is_none_or(|min| utterance.token_count >= min)
            && self
                .max_utterance_index
                .is_none_or(|max| utterance.index < max)
    }
}

pub(crate) fn compile_expressions(rule_id: &str, expressions: &[String]) -> Result<Vec<Regex>> {
    expressions
        .iter()
        .map(|expr| {
            RegexBuilder::new(expr)
                .case_insensitive(true)
                .build()
                .map_err(|e| Error::RuleCompile {
                    rule_id: rule_id.to_string(),
                    expression: expr.clone(),
                    message: e.to_string(),
                })
        })
        .collect()
}

/// A tag found in an utterance. `span` is a byte range into the utterance text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternMatch {
    pub tag: PatternTag,
    pub span: Range<usize>,
    pub rule_id: String,
}

/// Cheap per-utterance cues that later utterances consult.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cues {
    pub prompt: bool,
    pub signpost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextEntry {
    pub index: u32,
    pub side: CallSide,
    pub cues: Cues,
}

/// The two most recent preceding utterances of each side.
#[derive(Debug, Clone, Default)]
pub struct MatchContext {
    recent: [Vec<ContextEntry>; 2],
}

impl MatchContext {
    pub const DEPTH: usize = 2;

    pub fn push(&mut self, entry: ContextEntry) {
        let ring = &mut self.recent[entry.side.slot()];
        if ring.len() == Self::DEPTH {
            ring.remove(0);
        }
        ring.push(entry);
    }

    /// Oldest first.
    pub fn recent(&self, side: CallSide) -> &[ContextEntry] {
        &self.recent[side.slot()]
    }

    /// Builds the context for the utterance at `position` in `utterances`.
    pub fn from_history(rules: &RuleSet, history: &[Utterance]) -> Self {
        let mut ctx = MatchContext::default();
        for u in history {
            ctx.push(ContextEntry {
                index: u.index,
                side: u.side,
                cues: rules.cues(&u.text),
            });
        }
        ctx
    }

    fn prompt_from(&self, side: CallSide) -> bool {
        self.recent(side).iter().any(|e| e.cues.prompt)
    }

    fn previous_signpost(&self, side: CallSide) -> bool {
        self.recent(side).last().is_some_and(|e| e.cues.signpost)
    }
}

/// Everything the rule layer knows about one utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analysis {
    pub matches: Vec<PatternMatch>,
    pub negative: bool,
    /// Purpose tags whose rules' own constraints are met; empty when vetoed.
    pub qualifying: BTreeSet<PatternTag>,
}

impl Analysis {
    pub fn has_tag(&self, tag: PatternTag) -> bool {
        self.matches.iter().any(|m| m.tag == tag)
    }

    pub fn prompt(&self) -> bool {
        self.has_tag(PatternTag::QuestionPrompt)
    }

    /// Purpose tags found, regardless of rule constraints.
    pub fn purpose_tags(&self) -> BTreeSet<PatternTag> {
        self.matches
            .iter()
            .map(|m| m.tag)
            .filter(|t| t.is_purpose())
            .collect()
    }
}

/// Compiled, immutable rule inventory.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub positive_rules: Vec<Rule>,
    pub negative_rules: Vec<Rule>,
    pub prompt_rules: Vec<Rule>,
    pub signpost_rules: Vec<Rule>,
    pub false_positive_rules: Vec<Rule>,
    pub simplification: SimplificationRuleSet,
}

impl RuleSet {
    pub fn default_rules() -> RuleSet {
        RuleSet::from_toml_str(DEFAULT_RULES).expect("bundled rules compile")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RuleSet> {
        let text = std::fs::read_to_string(path.as_ref())?;
        RuleSet::from_toml_str(&text)
    }

    /// Parses and compiles a rules document. Fails as a whole on any bad rule.
    pub fn from_toml_str(text: &str) -> Result<RuleSet> {
        let doc: RulesDocument =
            toml::from_str(text).map_err(|e| Error::RulesFormat(e.to_string()))?;
        if doc.version != RULES_FORMAT_VERSION {
            return Err(Error::RulesFormat(format!(
                "unsupported rules format version {} (expected {RULES_FORMAT_VERSION})",
                doc.version
            )));
        }
        let compile = |specs: Vec<RuleSpec>, tag: Option<PatternTag>| -> Result<Vec<Rule>> {
            specs.into_iter().map(|s| Rule::compile(s, tag)).collect()
        };
        Ok(RuleSet {
            positive_rules: compile(doc.positive, None)?,
            negative_rules: compile(doc.negative, Some(PatternTag::NegativeFilter))?,
            prompt_rules: compile(doc.prompt, Some(PatternTag::QuestionPrompt))?,
            signpost_rules: compile(doc.signpost, Some(PatternTag::Continuation))?,
            false_positive_rules: compile(doc.false_positive, Some(PatternTag::NegativeFilter))?,
            simplification: SimplificationRuleSet::compile(doc.simplify)?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.positive_rules.is_empty()
            && self.negative_rules.is_empty()
            && self.prompt_rules.is_empty()
            && self.signpost_rules.is_empty()
    }

    pub fn cues(&self, text: &str) -> Cues {
        Cues {
            prompt: self.prompt_rules.iter().any(|r| r.is_match(text)),
            signpost: self.signpost_rules.iter().any(|r| r.is_match(text)),
        }
    }

    pub fn is_negative_filtered(&self, text: &str) -> bool {
        self.negative_rules.iter().any(|r| r.is_match(text))
    }

    pub fn is_false_positive(&self, text: &str) -> bool {
        self.false_positive_rules.iter().any(|r| r.is_match(text))
    }

    /// All pattern matches for `utterance` given its preceding context.
    pub fn match_patterns(&self, utterance: &Utterance, context: &MatchContext) -> Vec<PatternMatch> {
        self.analyze(utterance, context).matches
    }

    /// Purpose tags that qualify under their rules' constraints, or `None`.
    pub fn rule_classify(
        &self,
        utterance: &Utterance,
        context: &MatchContext,
    ) -> Option<BTreeSet<PatternTag>> {
        let analysis = self.analyze(utterance, context);
        (!analysis.qualifying.is_empty()).then_some(analysis.qualifying)
    }

    pub fn analyze(&self, utterance: &Utterance, context: &MatchContext) -> Analysis {
        let text = utterance.text.as_str();
        let mut matches = Vec::new();
        let mut qualifying = BTreeSet::new();

        let own_signpost = self.signpost_rules.iter().any(|r| r.is_match(text));
        let prompted = context.prompt_from(utterance.side.other());
        let signposted = own_signpost || context.previous_signpost(utterance.side);

        for rule in &self.positive_rules {
            let allowed = match rule.tag {
                PatternTag::Greeting => {
                    utterance.token_count >= GREETING_MIN_TOKENS
                        && utterance.index < GREETING_MAX_INDEX
                }
                PatternTag::QuestionResponse => prompted,
                PatternTag::Continuation => signposted,
                _ => true,
            };
            if !allowed {
                continue;
            }
            let mut spans = rule.spans(text);
            if rule.tag == PatternTag::Greeting {
                spans.retain(|s| is_prefix_position(text, s.start));
            }
            if spans.is_empty() {
                continue;
            }
            if rule.admits(utterance) {
                qualifying.insert(rule.tag);
            }
            matches.extend(spans.into_iter().map(|span| PatternMatch {
                tag: rule.tag,
                span,
                rule_id: rule.id.clone(),
            }));
        }

        for rule in self.prompt_rules.iter().chain(&self.negative_rules) {
            matches.extend(rule.spans(text).into_iter().map(|span| PatternMatch {
                tag: rule.tag,
                span,
                rule_id: rule.id.clone(),
            }));
        }

        let negative = self.negative_rules.iter().any(|r| r.is_match(text));
        if negative {
            qualifying.clear();
        }
        matches.sort_by(|a, b| (a.span.start, a.span.end, a.tag, &a.rule_id).cmp(&(b.span.start, b.span.end, b.tag, &b.rule_id)));
        matches.dedup();
        Analysis {
            matches,
            negative,
            qualifying,
        }
    }
}

/// True when only non-word characters precede `pos`.
fn is_prefix_position(text: &str, pos: usize) -> bool {
    !text[..pos].chars().any(char::is_alphanumeric)
}
