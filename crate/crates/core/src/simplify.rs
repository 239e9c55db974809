//! Strips greetings, pleasantries, introductions and audio trouble from the
//! winning utterance. Only deletes: leading spans, trailing spans and whole
//! standalone sentences. Never returns an empty string.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::compile_expressions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanCategory {
    Greeting,
    Pleasantry,
    Introduction,
    TechnicalProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanPosition {
    Leading,
    Trailing,
    Sentence,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SimplifyRuleSpec {
    id: String,
    category: SpanCategory,
    position: SpanPosition,
    expressions: Vec<String>,
}

#[derive(Debug, Clone)]
struct SimplifyRule {
    category: SpanCategory,
    position: SpanPosition,
    expressions: Vec<Regex>,
}

#[derive(Debug, Clone, Default)]
pub struct SimplificationRuleSet {
    rules: Vec<SimplifyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpan {
    pub category: SpanCategory,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Simplified {
    pub text: String,
    pub removed: Vec<RemovedSpan>,
}

impl Simplified {
    pub fn changed(&self) -> bool {
        !self.removed.is_empty()
    }
}

impl SimplificationRuleSet {
    pub(crate) fn compile(specs: Vec<SimplifyRuleSpec>) -> Result<Self> {
        let rules = specs
            .into_iter()
            .map(|s| {
                Ok(SimplifyRule {
                    category: s.category,
                    position: s.position,
                    expressions: compile_expressions(&s.id, &s.expressions)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimplificationRuleSet { rules })
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// True when no expression matches `text`, nor, for sentence rules, any
    /// single sentence of it.
    pub fn is_pattern_free(&self, text: &str) -> bool {
        let sentences: Vec<&str> = split_sentences(text).into_iter().map(str::trim).collect();
        !self.rules.iter().any(|r| {
            r.expressions.iter().any(|re| {
                re.is_match(text)
                    || (r.position == SpanPosition::Sentence && sentences.iter().any(|s| re.is_match(s)))
            })
        })
    }

    pub fn simplify(&self, text: &str) -> Simplified {
        let mut current = text.to_string();
        let mut removed = Vec::new();
        loop {
            let before = removed.len();
            let next = self.pass(&current, &mut removed);
            if removed.len() == before {
                break;
            }
            current = next;
        }
        if removed.is_empty() {
            return Simplified {
                text: text.to_string(),
                removed,
            };
        }
        if !current.chars().any(char::is_alphanumeric) {
            return Simplified {
                text: text.to_string(),
                removed: Vec::new(),
            };
        }
        Simplified {
            text: current,
            removed,
        }
    }

    /// One removal pass. Returns the input unchanged when nothing matched.
    fn pass(&self, text: &str, removed: &mut Vec<RemovedSpan>) -> String {
        let start_len = removed.len();
        let mut s = text;

        // leading spans
        'leading: loop {
            let trimmed = trim_leading_junk(s);
            for rule in self.rules.iter().filter(|r| r.position == SpanPosition::Leading) {
                for re in &rule.expressions {
                    if let Some(m) = re.find(trimmed) {
                        if m.start() == 0 && !m.as_str().is_empty() {
                            removed.push(RemovedSpan {
                                category: rule.category,
                                text: m.as_str().to_string(),
                            });
                            s = &trimmed[m.end()..];
                            continue 'leading;
                        }
                    }
                }
            }
            if removed.len() > start_len {
                s = trimmed;
            }
            break;
        }

        // trailing spans
        'trailing: loop {
            for rule in self.rules.iter().filter(|r| r.position == SpanPosition::Trailing) {
                for re in &rule.expressions {
                    if let Some(m) = re.find(s) {
                        if m.end() == s.len() && !m.as_str().trim().is_empty() {
                            removed.push(RemovedSpan {
                                category: rule.category,
                                text: m.as_str().to_string(),
                            });
                            s = s[..m.start()].trim_end_matches(|c: char| {
                                c.is_whitespace() || matches!(c, ',' | ';' | ':' | '-')
                            });
                            continue 'trailing;
                        }
                    }
                }
            }
            break;
        }

        // standalone sentences
        let mut kept = String::with_capacity(s.len());
        for sentence in split_sentences(s) {
            let body = sentence.trim();
            let drop = !body.is_empty()
                && self
                    .rules
                    .iter()
                    .filter(|r| r.position == SpanPosition::Sentence)
                    .find(|r| {
                        r.expressions.iter().any(|re| {
                            re.find(body)
                                .is_some_and(|m| m.start() == 0 && m.end() == body.len())
                        })
                    })
                    .map(|r| {
                        removed.push(RemovedSpan {
                            category: r.category,
                            text: body.to_string(),
                        })
                    })
                    .is_some();
            if !drop {
                kept.push_str(sentence);
            }
        }

        if removed.len() == start_len {
            return text.to_string();
        }
        collapse_whitespace(trim_leading_junk(&kept))
    }
}

/// Drops whitespace and separator punctuation left at the front by a removal.
fn trim_leading_junk(s: &str) -> &str {
    s.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '-' | '.'))
}

/// Sentence pieces including their terminal punctuation and following whitespace.
fn split_sentences(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = s.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if matches!(d, '.' | '?' | '!') || d.is_whitespace() {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(&s[start..end]);
            start = end;
        }
    }
    if start < s.len() {
        out.push(&s[start..]);
    }
    out
}

/// Trims both ends and keeps only the first character of each whitespace run.
fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for c in s.trim().chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(c);
            }
            in_ws = true;
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplificationStats {
    /// Fraction of decisions with at least one removed span.
    pub fraction_simplified: f64,
    /// Mean relative character-length reduction over all decisions.
    pub mean_length_reduction: f64,
}

/// Aggregates simplification outcomes as `(original, simplified)` pairs.
pub fn simplification_stats<'a, I>(pairs: I) -> Result<SimplificationStats>
where
    I: IntoIterator<Item = (&'a str, &'a Simplified)>,
{
    let mut n = 0usize;
    let mut changed = 0usize;
    let mut reduction = 0.0;
    for (original, simplified) in pairs {
        n += 1;
        if simplified.changed() {
            changed += 1;
        }
        let before = original.chars().count();
        if before > 0 {
            let after = simplified.text.chars().count();
            reduction += (before.saturating_sub(after)) as f64 / before as f64;
        }
    }
    if n == 0 {
        return Err(Error::Empty("simplification statistics need at least one decision"));
    }
    Ok(SimplificationStats {
        fraction_simplified: changed as f64 / n as f64,
        mean_length_reduction: reduction / n as f64,
    })
}
