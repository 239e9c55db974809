//! Synthetic gold corpora: filler conversation around at most one planted
//! purpose utterance per call.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Call, CallSide, Direction, Domain, PatternTag, Utterance};
use crate::patterns::GREETING_MAX_INDEX;
use crate::protocol::GoldRecord;
use crate::tokenize::word_count;
use crate::transcript::Corpus;

pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");

/// Realized purpose utterances never exceed the gate's token ceiling.
pub const MAX_PURPOSE_TOKENS: usize = 150;
/// Average seconds between consecutive utterances before the purpose.
const SECONDS_PER_TURN: f64 = 5.5;
const WORDS_PER_SECOND: f64 = 2.5;
/// Problem purposes are planted before this index.
const PROBLEM_MAX_INDEX: usize = 10;
/// Minimum token counts some patterns need to be recognizable.
const GREETING_MIN_WORDS: usize = 30;
const PROBLEM_MIN_WORDS: usize = 12;
const PROMPTED_MIN_WORDS: usize = 5;

/// Pattern frequencies (percent) of purpose statements.
const PATTERN_PERCENT: [(PatternTag, f64); 7] = [
    (PatternTag::CallPurposePhrase, 32.7),
    (PatternTag::DesirePhrase, 31.7),
    (PatternTag::QuestionResponse, 15.8),
    (PatternTag::Greeting, 9.1),
    (PatternTag::ProblemPhrase, 4.4),
    (PatternTag::Update, 5.8),
    (PatternTag::Continuation, 0.4),
];

/// Normal distribution clipped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClippedNormal {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ClippedNormal {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = [self.mean, self.sd, self.min, self.max].iter().all(|x| x.is_finite())
            && self.sd >= 0.0
            && self.min >= 0.0
            && self.min <= self.max;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("{name}: need finite values, sd >= 0 and 0 <= min <= max")))
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = Normal::new(self.mean, self.sd).expect("validated normal").sample(rng);
        x.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n_calls: usize,
    pub seed: u64,
    /// Weights per domain; must sum to 1.
    pub domain_mix: BTreeMap<Domain, f64>,
    pub inbound_rate: f64,
    /// Start time of the purpose utterance in seconds.
    pub purpose_time: ClippedNormal,
    /// Target purpose length in word tokens; realized lengths are capped at 150.
    pub purpose_length: ClippedNormal,
    /// Weights per purpose pattern; must sum to 1.
    pub pattern_mix: BTreeMap<PatternTag, f64>,
    pub no_purpose_rate: f64,
    /// Probability that the call initiator speaks the purpose.
    pub initiator_purpose_rate: f64,
    /// Probability that a customer purpose is preceded by an agent prompt
    /// (question_response purposes always are).
    pub prompt_rate: f64,
    /// Overall fraction of purposes that open with a removable greeting.
    /// Greeting-pattern purposes always do; the others get a prefix at the
    /// rate that makes the total match.
    pub greeting_prefix_rate: f64,
    /// Calls end no earlier than this, so hit-rate eligibility does not
    /// depend on whether a purpose was planted.
    pub min_call_duration_s: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        let total: f64 = PATTERN_PERCENT.iter().map(|(_, p)| p).sum();
        GenSpec {
            n_calls: 1000,
            seed: 0,
            domain_mix: BTreeMap::from([(Domain::Support, 0.4), (Domain::Sales, 0.3), (Domain::General, 0.3)]),
            inbound_rate: 0.592,
            purpose_time: ClippedNormal { mean: 29.9, sd: 19.1, min: 0.0, max: 180.0 },
            purpose_length: ClippedNormal { mean: 45.5, sd: 29.9, min: 4.0, max: 224.0 },
            pattern_mix: PATTERN_PERCENT.iter().map(|&(t, p)| (t, p / total)).collect(),
            no_purpose_rate: 0.07,
            initiator_purpose_rate: 0.93,
            prompt_rate: 0.4,
            greeting_prefix_rate: 0.25,
            min_call_duration_s: 35.0,
        }
    }
}

fn check_rate(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must lie in [0, 1], got {x}")))
    }
}

fn check_mix<K: std::fmt::Debug>(name: &str, mix: &BTreeMap<K, f64>) -> Result<()> {
    if mix.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Validation(format!("{name} weights must be non-negative")));
    }
    let sum: f64 = mix.values().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("{name} must sum to 1, got {sum}")));
    }
    Ok(())
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        check_mix("domain_mix", &self.domain_mix)?;
        check_mix("pattern_mix", &self.pattern_mix)?;
        if let Some(t) = self.pattern_mix.keys().find(|t| !t.is_purpose()) {
            return Err(Error::Validation(format!("pattern_mix names non-purpose tag {t}")));
        }
        for (name, rate) in [
            ("inbound_rate", self.inbound_rate),
            ("no_purpose_rate", self.no_purpose_rate),
            ("initiator_purpose_rate", self.initiator_purpose_rate),
            ("prompt_rate", self.prompt_rate),
            ("greeting_prefix_rate", self.greeting_prefix_rate),
        ] {
            check_rate(name, rate)?;
        }
        if !(self.min_call_duration_s.is_finite() && self.min_call_duration_s >= 0.0) {
            return Err(Error::Validation("min_call_duration_s must be a finite non-negative number".into()));
        }
        self.purpose_time.validate("purpose_time")?;
        self.purpose_length.validate("purpose_length")?;
        Ok(())
    }

    /// Prefix probability for non-greeting purposes.
    fn prefix_rate_for_others(&self) -> f64 {
        let w = self.pattern_mix.get(&PatternTag::Greeting).copied().unwrap_or(0.0);
        if w >= 1.0 {
            return 0.0;
        }
        ((self.greeting_prefix_rate - w) / (1.0 - w)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Cues {
    signpost: Vec<String>,
    prompt: Vec<String>,
    greeting_prefix: Vec<String>,
    padding: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fillers {
    pub agent_opening: Vec<String>,
    pub customer_opening: Vec<String>,
    pub agent_pre: Vec<String>,
    pub customer_pre: Vec<String>,
    pub agent_post: Vec<String>,
    pub customer_post: Vec<String>,
    pub agent_closing: Vec<String>,
    pub customer_closing: Vec<String>,
}

impl Fillers {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        [
            &self.agent_opening,
            &self.customer_opening,
            &self.agent_pre,
            &self.customer_pre,
            &self.agent_post,
            &self.customer_post,
            &self.agent_closing,
            &self.customer_closing,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    version: u32,
    slots: BTreeMap<String, Vec<String>>,
    purpose: BTreeMap<PatternTag, Vec<String>>,
    cues: Cues,
    filler: Fillers,
}

/// Template families with slot vocabularies.
#[derive(Debug, Clone)]
pub struct Templates {
    pub slots: BTreeMap<String, Vec<String>>,
    pub purpose: BTreeMap<PatternTag, Vec<String>>,
    pub signpost: Vec<String>,
    pub prompt: Vec<String>,
    pub greeting_prefix: Vec<String>,
    pub padding: Vec<String>,
    pub filler: Fillers,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::from_toml_str(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl Templates {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| Error::Validation(format!("templates: {e}")))?;
        if file.version != 1 {
            return Err(Error::Validation(format!("templates: unsupported version {}", file.version)));
        }
        let t = Templates {
            slots: file.slots,
            purpose: file.purpose,
            signpost: file.cues.signpost,
            prompt: file.cues.prompt,
            greeting_prefix: file.cues.greeting_prefix,
            padding: file.cues.padding,
            filler: file.filler,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Templates::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let families = self
            .purpose
            .values()
            .chain([&self.signpost, &self.prompt, &self.greeting_prefix, &self.padding])
            .chain([
                &self.filler.agent_opening,
                &self.filler.customer_opening,
                &self.filler.agent_pre,
                &self.filler.customer_pre,
                &self.filler.agent_post,
                &self.filler.customer_post,
                &self.filler.agent_closing,
                &self.filler.customer_closing,
            ]);
        for family in families {
            if family.is_empty() {
                return Err(Error::Validation("templates: empty template family".into()));
            }
            for template in family {
                for slot in slot_names(template) {
                    if self.slots.get(slot).is_none_or(|v| v.is_empty()) {
                        return Err(Error::Validation(format!(
                            "templates: unknown or empty slot `{slot}` in \"{template}\""
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fills every `{slot}` with a random vocabulary entry.
    pub fn fill(&self, template: &str, rng: &mut ChaCha8Rng) -> String {
        let mut out = String::with_capacity(template.len() + 16);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else { break };
            out.push_str(&rest[..open]);
            let name = &rest[open + 1..open + close];
            let choices = &self.slots[name];
            out.push_str(&choices[rng.gen_range(0..choices.len())]);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        out
    }

    fn pick(&self, family: &[String], rng: &mut ChaCha8Rng) -> String {
        let template = family.choose(rng).expect("validated family is non-empty");
        self.fill(template, rng)
    }
}

fn slot_names(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    out
}

fn weighted<K: Copy>(mix: &BTreeMap<K, f64>, rng: &mut ChaCha8Rng) -> K {
    let mut x = rng.gen::<f64>();
    let mut last = None;
    for (&k, &w) in mix {
        if w <= 0.0 {
            continue;
        }
        last = Some(k);
        if x < w {
            return k;
        }
        x -= w;
    }
    last.expect("mix has a positive weight")
}

fn speaking_time(text: &str) -> f64 {
    word_count(text) as f64 / WORDS_PER_SECOND + 0.5
}

struct Planted {
    text: String,
    side: CallSide,
}

/// Generates a gold corpus. Deterministic under `spec.seed`.
pub fn generate(spec: &GenSpec) -> Result<Corpus> {
    generate_with(spec, &Templates::default())
}

pub fn generate_with(spec: &GenSpec, templates: &Templates) -> Result<Corpus> {
    spec.validate()?;
    for (tag, w) in &spec.pattern_mix {
        if *w > 0.0 && !templates.purpose.contains_key(tag) {
            return Err(Error::Validation(format!("templates have no family for pattern {tag}")));
        }
    }
    let prefix_rate = spec.prefix_rate_for_others();
    let generated: Vec<(Call, GoldRecord)> = (0..spec.n_calls)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            generate_call(spec, templates, prefix_rate, format!("call-{i:06}"), &mut rng)
        })
        .collect();
    let mut corpus = Corpus::default();
    for (call, gold) in generated {
        corpus.gold.insert(call.call_id.clone(), gold);
        corpus.calls.push(call);
    }
    Ok(corpus)
}

fn generate_call(
    spec: &GenSpec,
    t: &Templates,
    prefix_rate: f64,
    call_id: String,
    rng: &mut ChaCha8Rng,
) -> (Call, GoldRecord) {
    let domain = weighted(&spec.domain_mix, rng);
    let direction = if rng.gen_bool(spec.inbound_rate) { Direction::Inbound } else { Direction::Outbound };
    let initiator = direction.initiator().expect("generated calls have a direction");
    let recipient = initiator.other();
    let has_purpose = !rng.gen_bool(spec.no_purpose_rate);

    let mut turns: Vec<(CallSide, String, f64)> = Vec::new();
    let mut purpose_index = None;
    let mut pattern = None;

    let pre_text = |side: CallSide, i: usize, rng: &mut ChaCha8Rng| {
        let f = &t.filler;
        let family = match (side, i) {
            (CallSide::Agent, 0) => &f.agent_opening,
            (CallSide::Customer, 0) => &f.customer_opening,
            (CallSide::Agent, _) => &f.agent_pre,
            (CallSide::Customer, _) => &f.customer_pre,
        };
        t.pick(family, rng)
    };

    let mut next_start = 0.0;
    if has_purpose {
        let tag = weighted(&spec.pattern_mix, rng);
        let t_p = spec.purpose_time.sample(rng);
        let side = if tag == PatternTag::QuestionResponse {
            CallSide::Customer
        } else if rng.gen_bool(spec.initiator_purpose_rate) {
            initiator
        } else {
            recipient
        };
        let prompted = match tag {
            PatternTag::QuestionResponse => true,
            PatternTag::Continuation => false,
            _ => side == CallSide::Customer && rng.gen_bool(spec.prompt_rate),
        };
        let signposted = tag == PatternTag::Continuation;
        let max_k = match tag {
            PatternTag::Greeting => GREETING_MAX_INDEX as usize - 1,
            PatternTag::ProblemPhrase => PROBLEM_MAX_INDEX - 1,
            _ => 29,
        };
        let min_k = usize::from(prompted || signposted);
        let k = ((t_p / SECONDS_PER_TURN).round() as usize).clamp(min_k, max_k);

        for i in 0..k {
            let mut s = if i % 2 == 0 { recipient } else { initiator };
            let text = if i + 1 == k && prompted {
                s = side.other();
                t.pick(&t.prompt, rng)
            } else if i + 1 == k && signposted {
                s = side;
                t.pick(&t.signpost, rng)
            } else {
                pre_text(s, i, rng)
            };
            let start = t_p * (i as f64 + 0.1 + 0.8 * rng.gen::<f64>()) / k as f64;
            turns.push((s, text, start));
        }

        let planted = plant_purpose(spec, t, tag, side, prefix_rate, prompted, rng);
        next_start = t_p + speaking_time(&planted.text) + rng.gen_range(0.2..1.0);
        turns.push((planted.side, planted.text, t_p));
        purpose_index = Some(k as u32);
        pattern = Some(tag);

        let post = rng.gen_range(2..=10);
        let first = side.other();
        for j in 0..post {
            let s = if j % 2 == 0 { first } else { first.other() };
            let family = match (s, post - j <= 2) {
                (CallSide::Agent, true) => &t.filler.agent_closing,
                (CallSide::Customer, true) => &t.filler.customer_closing,
                (CallSide::Agent, false) => &t.filler.agent_post,
                (CallSide::Customer, false) => &t.filler.customer_post,
            };
            let text = t.pick(family, rng);
            let start = next_start;
            next_start = start + speaking_time(&text) + rng.gen_range(0.2..1.0);
            turns.push((s, text, start));
        }
    } else {
        let n = rng.gen_range(6..=16);
        for i in 0..n {
            let s = if i % 2 == 0 { recipient } else { initiator };
            let text = if n - i <= 2 {
                let f = &t.filler;
                t.pick(if s == CallSide::Agent { &f.agent_closing } else { &f.customer_closing }, rng)
            } else if i < n / 2 {
                pre_text(s, i, rng)
            } else {
                let f = &t.filler;
                t.pick(if s == CallSide::Agent { &f.agent_post } else { &f.customer_post }, rng)
            };
            let start = next_start;
            next_start = start + speaking_time(&text) + rng.gen_range(0.2..1.0);
            turns.push((s, text, start));
        }
    }

    let utterances: Vec<Utterance> = turns
        .into_iter()
        .enumerate()
        .map(|(i, (side, text, start))| {
            Utterance::new(call_id.clone(), i as u32, side, start, text).expect("generated utterance is valid")
        })
        .collect();
    let last = utterances.last().expect("calls are never empty");
    let duration_s = (last.start_time_s + speaking_time(&last.text))
        .max(next_start)
        .max(spec.min_call_duration_s);
    let gold = GoldRecord {
        call_id: call_id.clone(),
        purpose_index,
        pattern,
        domain,
        duration_s,
    };
    (Call { call_id, direction, domain, duration_s, utterances }, gold)
}

fn plant_purpose(
    spec: &GenSpec,
    t: &Templates,
    tag: PatternTag,
    side: CallSide,
    prefix_rate: f64,
    prompted: bool,
    rng: &mut ChaCha8Rng,
) -> Planted {
    let mut target = spec.purpose_length.sample(rng).round() as usize;
    target = match tag {
        PatternTag::Greeting => target.max(GREETING_MIN_WORDS),
        PatternTag::ProblemPhrase => target.max(PROBLEM_MIN_WORDS),
        _ if prompted => target.max(PROMPTED_MIN_WORDS),
        _ => target,
    }
    .min(MAX_PURPOSE_TOKENS);

    let mut text = t.pick(&t.purpose[&tag], rng);
    if tag != PatternTag::Greeting && rng.gen_bool(prefix_rate) {
        text = format!("{} {}", t.pick(&t.greeting_prefix, rng), text);
    }
    let mut words = word_count(&text);
    loop {
        let pad = t.pick(&t.padding, rng);
        let n = word_count(&pad);
        let closer = words.abs_diff(target) > (words + n).abs_diff(target);
        let must = words < target.min(GREETING_MIN_WORDS) && tag == PatternTag::Greeting
            || words < target.min(PROBLEM_MIN_WORDS) && tag == PatternTag::ProblemPhrase;
        if words + n > MAX_PURPOSE_TOKENS || !(closer || must) {
            break;
        }
        text.push(' ');
        text.push_str(&pad);
        words += n;
    }
    Planted { text, side }
}
