//! Acceptance criteria. Built without the libtest harness so that every
//! criterion prints its PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use callpurpose::bootstrap::{
    filter_false_positives, resample, split_overlap, weak_label, Dataset, LabeledUtterance, SamplingSpec, Split,
};
use callpurpose::evaluation::{classification_report, evaluate, generate, majority_baseline, GenSpec};
use callpurpose::model::ScoreTriple;
use callpurpose::patterns::MatchContext;
use callpurpose::pipeline::{final_records, Detector};
use callpurpose::protocol::GoldRecord;
use callpurpose::scoring::{train, FeatureSet, ScoreTable, TabularFeatures, TrainConfig, TrainedScorer};
use callpurpose::selection::{gate, CallSession, GateConfig, ThresholdConfig, ThresholdTable};
use callpurpose::service::{collect_finals, Engine, ServiceConfig};
use callpurpose::simplify::simplification_stats;
use callpurpose::transcript::{write_call, Corpus};
use callpurpose::{CallSide, Domain, PatternTag, RuleSet, ScoreClass, Utterance};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: callpurpose::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { name: "metric arithmetic", budget: secs(1), run: metric_oracle },
        Criterion { name: "gate boundaries", budget: secs(1), run: gate_boundaries },
        Criterion { name: "score combination", budget: secs(1), run: combination },
        Criterion { name: "streaming equals batch", budget: secs(60), run: streaming_equals_batch },
        Criterion { name: "end-to-end detection", budget: secs(120), run: end_to_end },
        Criterion { name: "bootstrap distribution", budget: secs(30), run: bootstrap_distribution },
        Criterion { name: "scorer properties", budget: secs(120), run: scorer_properties },
        Criterion { name: "simplification properties", budget: secs(30), run: simplification },
        Criterion { name: "latency", budget: secs(120), run: latency },
        Criterion { name: "pattern fixtures", budget: secs(1), run: pattern_fixtures },
    ];

    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the time budget")),
            other => other,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if result.is_err() {
            failed += 1;
        }
        println!(
            "criterion {:>2} {status} {}: {detail} [{:.2}s, budget {}s]",
            i + 1,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1

/// Published per-domain rows: (domain, model, precision %, hit rate %, F1 %).
const PUBLISHED_ROWS: [(Domain, &str, f64, f64, f64); 6] = [
    (Domain::Support, "rules", 93.5, 80.0, 86.2),
    (Domain::Support, "hybrid", 91.0, 90.4, 90.7),
    (Domain::General, "rules", 90.0, 74.2, 81.3),
    (Domain::General, "hybrid", 89.0, 85.6, 87.3),
    (Domain::Sales, "rules", 88.5, 78.7, 83.5),
    (Domain::Sales, "hybrid", 87.0, 88.9, 87.9),
];
/// Published averages: (model, precision %, hit rate %, F1 %).
const PUBLISHED_AVG: [(&str, f64, f64, f64); 2] = [("rules", 90.6, 77.6, 83.6), ("hybrid", 89.6, 88.3, 88.6)];
/// Absolute tolerance on metrics in [0, 1].
const METRIC_TOL: f64 = 0.05;
const CALLS_PER_ROW: usize = 10_000;

/// Adds `CALLS_PER_ROW` eligible calls whose decisions realize the given
/// precision and hit rate as count ratios.
fn plant_row(
    domain: Domain,
    precision: f64,
    hit_rate: f64,
    gold: &mut BTreeMap<String, GoldRecord>,
    decisions: &mut Vec<(String, Option<u32>)>,
) {
    let hits = (hit_rate / 100.0 * CALLS_PER_ROW as f64).round() as usize;
    let correct = (precision / 100.0 * hits as f64).round() as usize;
    for i in 0..CALLS_PER_ROW {
        let call_id = format!("{}-{i:05}", domain.as_str());
        gold.insert(
            call_id.clone(),
            GoldRecord { call_id: call_id.clone(), purpose_index: Some(0), pattern: None, domain, duration_s: 60.0 },
        );
        let chosen = if i < correct {
            Some(0)
        } else if i < hits {
            Some(1)
        } else {
            None
        };
        decisions.push((call_id, chosen));
    }
}

fn metric_oracle() -> Outcome {
    let mut worst_row = 0.0f64;
    let mut worst_avg = 0.0f64;
    for (model, avg_p, avg_hr, avg_f1) in PUBLISHED_AVG {
        let mut all_gold = BTreeMap::new();
        let mut all_decisions = Vec::new();
        for &(domain, _, p, hr, f1) in PUBLISHED_ROWS.iter().filter(|r| r.1 == model) {
            let mut gold = BTreeMap::new();
            let mut decisions = Vec::new();
            plant_row(domain, p, hr, &mut gold, &mut decisions);
            let report = lib(evaluate(model, decisions.iter().map(|(c, d)| (c.as_str(), *d)), &gold))?;
            let row = &report.domains[&domain];
            let dev = (row.f1 - f1 / 100.0).abs();
            worst_row = worst_row.max(dev);
            ensure(dev <= METRIC_TOL, || format!("{model}/{}: F1 {:.4} vs {f1}", domain.as_str(), row.f1))?;
            all_gold.extend(gold);
            all_decisions.extend(decisions);
        }
        let report = lib(evaluate(model, all_decisions.iter().map(|(c, d)| (c.as_str(), *d)), &all_gold))?;
        let o = &report.overall;
        for (got, want) in [(o.precision, avg_p), (o.hit_rate, avg_hr), (o.f1, avg_f1)] {
            let dev = (got - want / 100.0).abs();
            worst_avg = worst_avg.max(dev);
            ensure(dev <= METRIC_TOL, || format!("{model}/avg: {got:.4} vs {want}"))?;
        }
    }
    Ok(format!(
        "8 rows; max |dF1| {worst_row:.4}, max avg-row deviation {worst_avg:.4} (tolerance {METRIC_TOL})"
    ))
}

// 2

const EPS: f64 = 1e-6;

fn gate_boundaries() -> Outcome {
    let config = GateConfig::default();
    let cases: [(&str, f64, u32, usize, bool); 8] = [
        ("start 180-eps", 180.0 - EPS, 5, 10, true),
        ("start 180+eps", 180.0 + EPS, 5, 10, false),
        ("index 29", 60.0, 29, 10, true),
        ("index 30", 60.0, 30, 10, false),
        ("3 tokens", 60.0, 5, 3, false),
        ("4 tokens", 60.0, 5, 4, true),
        ("150 tokens", 60.0, 5, 150, true),
        ("151 tokens", 60.0, 5, 151, false),
    ];
    for (name, start, index, tokens, admitted) in cases {
        let text = format!("{}.", vec!["word"; tokens].join(" "));
        let u = lib(Utterance::new("g", index, CallSide::Customer, start, text))?;
        ensure(u.token_count == tokens, || format!("{name}: token count {}", u.token_count))?;
        ensure(gate(&config, &u) == admitted, || format!("{name}: expected admitted={admitted}"))?;
    }
    Ok("8/8 boundary cases".into())
}

// 3

fn triple(p: f64, q: f64, n: f64) -> ScoreTriple<f64> {
    ScoreTriple::new(p, q, n).expect("test triple on the simplex")
}

/// A preceding utterance: its side and triple, or `None` for an ungated one.
type Prior = (CallSide, Option<ScoreTriple<f64>>);
/// Name, preceding utterances, candidate side and triple, expected combined score.
type CombinationCase = (&'static str, Vec<Prior>, CallSide, ScoreTriple<f64>, f64);

fn combination() -> Outcome {
    use CallSide::{Agent, Customer};
    let cases: Vec<CombinationCase> = vec![
        (
            "two agent prompts",
            vec![(Agent, Some(triple(0.05, 0.9, 0.05))), (Agent, Some(triple(0.4, 0.3, 0.3)))],
            Customer,
            triple(0.6, 0.1, 0.3),
            0.6 + f64::max(0.9, 0.3),
        ),
        (
            "same side only",
            vec![(Customer, Some(triple(0.05, 0.9, 0.05))), (Customer, Some(triple(0.2, 0.7, 0.1)))],
            Customer,
            triple(0.5, 0.2, 0.3),
            0.5,
        ),
        (
            "mixed sides",
            vec![(Agent, Some(triple(0.1, 0.8, 0.1))), (Customer, Some(triple(0.025, 0.95, 0.025)))],
            Customer,
            triple(0.3, 0.3, 0.4),
            0.3 + 0.8,
        ),
        (
            "ungated opposite",
            vec![(Agent, None), (Agent, Some(triple(0.5, 0.2, 0.3)))],
            Customer,
            triple(0.7, 0.1, 0.2),
            0.7 + f64::max(0.0, 0.2),
        ),
        (
            "agent candidate",
            vec![(Customer, Some(triple(0.3, 0.4, 0.3))), (Agent, Some(triple(0.2, 0.6, 0.2)))],
            Agent,
            triple(0.35, 0.15, 0.5),
            0.35 + 0.4,
        ),
        (
            "older prompt ignored",
            vec![
                (Agent, Some(triple(0.05, 0.9, 0.05))),
                (Agent, Some(triple(0.8, 0.1, 0.1))),
                (Agent, Some(triple(0.6, 0.2, 0.2))),
            ],
            Customer,
            triple(0.6, 0.1, 0.3),
            0.6 + f64::max(0.1, 0.2),
        ),
    ];
    let thresholds: ThresholdTable<f64> = lib(ThresholdTable::from_config(&ThresholdConfig::default()))?;
    let no_tags = BTreeSet::new();
    for (name, priors, side, candidate, expected) in &cases {
        let mut session = CallSession::<f64>::new(*name);
        for (i, (prior_side, t)) in priors.iter().enumerate() {
            match t {
                Some(t) => {
                    let u = lib(Utterance::new(*name, i as u32, *prior_side, i as f64, "one two three four"))?;
                    lib(session.consider(&u, t, &no_tags, &thresholds, str::to_string))?;
                }
                None => lib(session.observe_ungated(*prior_side))?,
            }
        }
        let combined = session.combine_scores(candidate, *side);
        ensure(combined == *expected, || format!("{name}: {combined} != {expected}"))?;
        let u = lib(Utterance::new(*name, priors.len() as u32, *side, 10.0, "one two three four"))?;
        if let Some(d) = lib(session.consider(&u, candidate, &no_tags, &thresholds, str::to_string))? {
            ensure(d.combined_score == *expected, || format!("{name}: decision {}", d.combined_score))?;
        }
    }
    Ok(format!("{} cases exact", cases.len()))
}

// 4

fn serialize(corpus: &Corpus) -> Result<Vec<u8>, String> {
    let mut input = Vec::new();
    for c in &corpus.calls {
        lib(write_call(c, &mut input))?;
    }
    Ok(input)
}

fn streaming_equals_batch() -> Outcome {
    let corpus = lib(generate(&GenSpec { n_calls: 1000, seed: 41, ..GenSpec::default() }))?;
    let engine = lib(Engine::<f64>::new(Detector::with_default_rules(), ServiceConfig::default()))?;
    let mut out = Vec::new();
    lib(engine.serve_stream(&serialize(&corpus)?[..], &mut out))?;
    let streamed = lib(collect_finals(&out[..]))?;
    let batch = final_records(&lib(engine.detector().detect_corpus(&corpus.calls))?);
    ensure(streamed.len() == corpus.calls.len(), || format!("{} streamed finals", streamed.len()))?;
    let same = streamed.iter().zip(&batch).filter(|(a, b)| a == b).count();
    ensure(same == batch.len(), || format!("{same}/{} calls identical", batch.len()))?;
    Ok(format!("{same}/{} calls identical", batch.len()))
}

// 5

const MIN_PRECISION: f64 = 0.90;
const MIN_HIT_RATE: f64 = 0.75;

fn end_to_end() -> Outcome {
    let corpus = lib(generate(&GenSpec { n_calls: 1000, seed: 5, ..GenSpec::default() }))?;
    let detector = Detector::<f64>::with_default_rules();
    let results = lib(detector.detect_corpus(&corpus.calls))?;
    let decisions = results.iter().map(|(id, d)| (id.as_str(), d.as_ref().map(|d| d.utterance_index)));
    let o = lib(evaluate("rules", decisions, &corpus.gold))?.overall;
    let detail = format!("precision {:.3}, hit rate {:.3}, F1 {:.3}", o.precision, o.hit_rate, o.f1);
    ensure(o.precision >= MIN_PRECISION && o.hit_rate >= MIN_HIT_RATE, || detail.clone())?;
    Ok(detail)
}

// 6

const LABEL_TOL: f64 = 0.01;
const PATTERN_TOL: f64 = 0.02;

/// Pool generator with enough problem-phrase purposes for large resamples.
fn pool_spec(n_calls: usize, seed: u64) -> GenSpec {
    GenSpec {
        n_calls,
        seed,
        pattern_mix: BTreeMap::from([
            (PatternTag::CallPurposePhrase, 0.3),
            (PatternTag::DesirePhrase, 0.3),
            (PatternTag::ProblemPhrase, 0.2),
            (PatternTag::Update, 0.1),
            (PatternTag::QuestionResponse, 0.1),
        ]),
        ..GenSpec::default()
    }
}

fn labeled_pool(n_calls: usize, seed: u64) -> Result<Vec<LabeledUtterance>, String> {
    let corpus = lib(generate(&pool_spec(n_calls, seed)))?;
    let detector = Detector::<f64>::with_default_rules();
    let rows = lib(weak_label(&detector, &corpus.calls))?;
    Ok(filter_false_positives(rows, &detector.rules))
}

fn share(dataset: &Dataset, pred: impl Fn(&callpurpose::bootstrap::DatasetRow) -> bool) -> f64 {
    dataset.rows.iter().filter(|r| pred(r)).count() as f64
}

fn bootstrap_distribution() -> Outcome {
    let pool = labeled_pool(10_000, 17)?;
    let spec = SamplingSpec { size: 10_000, seed: 1, ..SamplingSpec::default() };
    let dataset = lib(resample(&pool, &spec))?;
    let n = dataset.rows.len() as f64;
    ensure(dataset.rows.len() == spec.size, || format!("{} rows", dataset.rows.len()))?;

    let mut worst_label = 0.0f64;
    for (class, target) in [
        (ScoreClass::Purpose, spec.labels.positive),
        (ScoreClass::Negative, spec.labels.negative),
        (ScoreClass::Question, spec.labels.question),
    ] {
        let got = share(&dataset, |r| r.label == class) / n;
        worst_label = worst_label.max((got - target).abs());
        ensure((got - target).abs() <= LABEL_TOL, || format!("{}: {got:.4} vs {target}", class.as_str()))?;
    }

    let positives = share(&dataset, |r| r.label == ScoreClass::Purpose);
    let named = [PatternTag::CallPurposePhrase, PatternTag::DesirePhrase, PatternTag::ProblemPhrase];
    let p = &spec.positives;
    let mut worst_pattern = 0.0f64;
    for (name, target, pred) in [
        ("call_purpose_phrase", p.call_purpose_phrase, Some(named[0])),
        ("desire_phrase", p.desire_phrase, Some(named[1])),
        ("problem_phrase", p.problem_phrase, Some(named[2])),
        ("other", p.other, None),
    ] {
        let got = share(&dataset, |r| {
            r.label == ScoreClass::Purpose
                && match pred {
                    Some(tag) => r.tag == Some(tag),
                    None => !r.tag.is_some_and(|t| named.contains(&t)),
                }
        }) / positives;
        worst_pattern = worst_pattern.max((got - target).abs());
        ensure((got - target).abs() <= PATTERN_TOL, || format!("{name}: {got:.4} vs {target}"))?;
    }

    let overlap = split_overlap(&dataset);
    ensure(overlap.is_empty(), || format!("{} calls span several splits", overlap.len()))?;
    ensure(lib(resample(&pool, &spec))? == dataset, || "resample differs under the same seed".into())?;
    Ok(format!(
        "max label deviation {worst_label:.4} (tol {LABEL_TOL}), max pattern deviation {worst_pattern:.4} \
         (tol {PATTERN_TOL}), splits call-disjoint, deterministic"
    ))
}

// 7

const SIMPLEX_TOL: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-4;

/// Central difference with one Richardson step.
fn numeric_derivative(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3;
    let d = |e: f64| (f(e) - f(-e)) / (2.0 * e);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Loss taken from the forward pass only.
fn loss(m: &TrainedScorer<f64>, text: &str, tab: TabularFeatures<f64>, y: ScoreClass) -> f64 {
    -m.predict(text, tab).as_array()[y.index()].ln()
}

fn max_gradient_error(m: &TrainedScorer<f64>, text: &str, tab: TabularFeatures<f64>) -> f64 {
    let n_wg = m.fusion.w_g.data.len();
    let n_bg = m.fusion.b_g.len();
    let mut worst = 0.0f64;
    for y in ScoreClass::ALL {
        let (_, grads) = m.loss_and_gradients(text, tab, y);
        let analytic = grads.w_g.data.iter().chain(&grads.b_g).chain(&grads.w_t.data);
        for (k, &a) in analytic.enumerate() {
            let numeric = numeric_derivative(|delta| {
                let mut p = m.clone();
                if k < n_wg {
                    p.fusion.w_g.data[k] += delta;
                } else if k < n_wg + n_bg {
                    p.fusion.b_g[k - n_wg] += delta;
                } else {
                    p.fusion.w_t.data[k - n_wg - n_bg] += delta;
                }
                loss(&p, text, tab, y)
            });
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

fn simplex_error<T: callpurpose::Scalar>(t: &ScoreTriple<T>) -> f64 {
    (t.sum().to_f64().unwrap_or(f64::NAN) - 1.0).abs()
}

fn scorer_properties() -> Outcome {
    let pool = labeled_pool(5000, 23)?;
    let dataset = lib(resample(&pool, &SamplingSpec { size: 3000, seed: 2, ..SamplingSpec::default() }))?;
    let train_set = dataset.examples(Split::Train);
    let held_out = dataset.examples(Split::Validation);
    let config = TrainConfig { seed: 3, ..TrainConfig::default() };
    let m64: TrainedScorer<f64> = lib(train(&train_set, &config))?;
    let m32: TrainedScorer<f32> = lib(train(&train_set, &config))?;

    // simplex
    let mut worst_simplex = 0.0f64;
    for e in train_set.iter().chain(&held_out) {
        worst_simplex = worst_simplex.max(simplex_error(&m64.predict(&e.text, TabularFeatures::new(e.start_time_s, e.initiator))));
        worst_simplex = worst_simplex.max(simplex_error(&m32.predict(&e.text, TabularFeatures::new(e.start_time_s, e.initiator))));
    }
    let t64 = ScoreTable::<f64>::default();
    let t32 = ScoreTable::<f32>::default();
    for e in [simplex_error(&t64.purpose), simplex_error(&t64.question), simplex_error(&t64.negative)]
        .into_iter()
        .chain([simplex_error(&t32.purpose), simplex_error(&t32.question), simplex_error(&t32.negative)])
    {
        worst_simplex = worst_simplex.max(e);
    }
    ensure(worst_simplex <= SIMPLEX_TOL, || format!("triple sum off by {worst_simplex:e}"))?;

    // truncation
    let words: Vec<&str> = train_set.iter().flat_map(|e| e.text.split_whitespace()).take(150).collect();
    ensure(words.len() == 150, || "not enough words for the truncation probe".into())?;
    let base = words.join(" ");
    let tab = TabularFeatures::new(12.0, true);
    for tail in ["and then the rest of it", "completely different ending words here", "refund refund refund"] {
        let long = format!("{base} {tail}");
        ensure(m64.predict(&long, tab) == m64.predict(&base, tab), || format!("f64 output changed by {tail:?}"))?;
        let tab32 = TabularFeatures::new(12.0, true);
        ensure(m32.predict(&long, tab32) == m32.predict(&base, tab32), || format!("f32 output changed by {tail:?}"))?;
    }

    // gated-fusion gradient on dim-8 models
    let mut worst_grad = 0.0f64;
    for seed in 0..2 {
        let small = TrainConfig { dim: 8, epochs: 1, seed, features: FeatureSet::ALL, ..TrainConfig::default() };
        let m: TrainedScorer<f64> = lib(train(&train_set[..400], &small))?;
        for e in held_out.iter().take(4) {
            worst_grad = worst_grad.max(max_gradient_error(&m, &e.text, TabularFeatures::new(e.start_time_s, e.initiator)));
        }
    }
    ensure(worst_grad <= GRADIENT_TOL, || format!("gradient relative error {worst_grad:e}"))?;

    // held-out quality
    let gold: Vec<ScoreClass> = held_out.iter().map(|e| e.label).collect();
    let predicted: Vec<ScoreClass> = held_out
        .iter()
        .map(|e| m64.predict(&e.text, TabularFeatures::new(e.start_time_s, e.initiator)).argmax())
        .collect();
    let report = lib(classification_report(&gold, &predicted))?;
    let train_labels: Vec<ScoreClass> = train_set.iter().map(|e| e.label).collect();
    let baseline = lib(majority_baseline(&train_labels, &gold))?;
    ensure(report.accuracy > baseline.accuracy && report.macro_f1 > baseline.macro_f1, || {
        format!("accuracy {:.3} / macro-F1 {:.3} vs baseline {:.3} / {:.3}", report.accuracy, report.macro_f1, baseline.accuracy, baseline.macro_f1)
    })?;

    Ok(format!(
        "max simplex error {worst_simplex:.1e}, truncation exact, max gradient error {worst_grad:.1e}, \
         held-out accuracy {:.3} vs baseline {:.3} (n = {})",
        report.accuracy, baseline.accuracy, report.n
    ))
}

// 8

const FUZZ_SIZE: usize = 10_000;
const SIMPLIFIED_RANGE: (f64, f64) = (0.45, 0.55);

const FUZZ_PIECES: &[&str] = &[
    "Hi", "hi", "Hello", "hello?", "Hey", "Good morning", "good afternoon", "this is Christine", "my name is Dana",
    "thanks", "thank you so much", "how are you", "I'm good", "can you hear me", "sorry, you're breaking up",
    "I need", "a refund", "my order", "never arrived", "the reason for my call is", "I'm calling because",
    "my invoice", "is wrong", "the app", "keeps crashing", "on my account", "please", "okay", "so", "um",
    ",", ".", "?", "!", "...", "  ", "\t",
];

fn fuzz_inputs(seed: u64) -> Result<Vec<String>, String> {
    let corpus = lib(generate(&GenSpec { n_calls: 300, seed, greeting_prefix_rate: 0.5, ..GenSpec::default() }))?;
    let mut inputs: Vec<String> = corpus.calls.iter().flat_map(|c| c.utterances.iter().map(|u| u.text.clone())).collect();
    inputs.truncate(FUZZ_SIZE / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while inputs.len() < FUZZ_SIZE {
        let n = rng.gen_range(1..=20);
        let mut s = String::new();
        for _ in 0..n {
            let piece = FUZZ_PIECES.choose(&mut rng).expect("non-empty pieces");
            if !s.is_empty() && rng.gen_bool(0.8) {
                s.push(' ');
            }
            s.push_str(piece);
        }
        if s.chars().any(char::is_alphanumeric) {
            inputs.push(s);
        }
    }
    Ok(inputs)
}

/// Non-whitespace characters of `sub` appear in order in `text`.
fn is_subsequence(sub: &str, text: &str) -> bool {
    let mut it = text.chars().filter(|c| !c.is_whitespace());
    sub.chars().filter(|c| !c.is_whitespace()).all(|c| it.any(|t| t == c))
}

fn simplification() -> Outcome {
    let rules = RuleSet::default_rules();
    let s = &rules.simplification;
    let inputs = fuzz_inputs(8)?;
    let mut pattern_free = 0;
    for text in &inputs {
        let once = s.simplify(text);
        ensure(!once.text.trim().is_empty(), || format!("empty output for {text:?}"))?;
        ensure(s.simplify(&once.text).text == once.text, || format!("not idempotent on {text:?}"))?;
        ensure(is_subsequence(&once.text, text), || format!("output rewrites {text:?}"))?;
        if s.is_pattern_free(text) {
            pattern_free += 1;
            ensure(once.text == *text && once.removed.is_empty(), || format!("changed pattern-free {text:?}"))?;
        }
    }

    let corpus = lib(generate(&GenSpec { n_calls: 2000, seed: 9, greeting_prefix_rate: 0.5, ..GenSpec::default() }))?;
    let purposes: Vec<&str> = corpus
        .calls
        .iter()
        .filter_map(|c| {
            let i = corpus.gold[&c.call_id].purpose_index?;
            c.utterances.iter().find(|u| u.index == i).map(|u| u.text.as_str())
        })
        .collect();
    let simplified: Vec<_> = purposes.iter().map(|t| s.simplify(t)).collect();
    let stats = lib(simplification_stats(purposes.iter().copied().zip(&simplified)))?;
    let f = stats.fraction_simplified;
    ensure((SIMPLIFIED_RANGE.0..=SIMPLIFIED_RANGE.1).contains(&f), || format!("fraction simplified {f:.3}"))?;
    Ok(format!(
        "{} fuzz inputs ({pattern_free} pattern-free) hold all properties; fraction simplified {f:.3} over {} purposes",
        inputs.len(),
        purposes.len()
    ))
}

// 9

const REPLAY_UTTERANCES: usize = 10_000;
const P95_LIMIT_MS: f64 = 100.0;

fn latency() -> Outcome {
    let corpus = lib(generate(&GenSpec { n_calls: 2000, seed: 13, ..GenSpec::default() }))?;
    let mut calls = Vec::new();
    let mut n = 0;
    for c in &corpus.calls {
        if n >= REPLAY_UTTERANCES {
            break;
        }
        n += c.utterances.len();
        calls.push(c.clone());
    }
    ensure(n >= REPLAY_UTTERANCES, || format!("only {n} utterances"))?;
    let replay = Corpus { calls, gold: BTreeMap::new() };

    let config = ServiceConfig { workers: 1, ..ServiceConfig::default() };
    let engine = lib(Engine::<f64>::new(Detector::with_default_rules(), config))?;
    lib(engine.serve_stream(&serialize(&replay)?[..], std::io::sink()))?;
    let snapshot = engine.stats().snapshot();
    ensure(snapshot.utterances_processed as usize == n, || format!("{} processed", snapshot.utterances_processed))?;

    // direct per-utterance timing, exact quantile
    let detector = engine.detector();
    let mut times = Vec::with_capacity(n);
    for c in &replay.calls {
        let mut p = detector.processor(c.call_id.as_str(), c.direction);
        for u in &c.utterances {
            let t = Instant::now();
            lib(p.process(u))?;
            times.push(t.elapsed());
        }
        lib(p.close())?;
    }
    times.sort();
    let direct_p95 = times[(times.len() * 95).div_ceil(100) - 1].as_secs_f64() * 1e3;
    let service_p95 = snapshot.latency_p95_ms;
    let detail = format!("{n} utterances; service p95 {service_p95:.3} ms, direct p95 {direct_p95:.3} ms (limit {P95_LIMIT_MS} ms)");
    ensure(service_p95 < P95_LIMIT_MS && direct_p95 < P95_LIMIT_MS, || detail.clone())?;
    Ok(detail)
}

// 10

const GREETING_EXAMPLE: &str = "Hey, this is Christine. There is a police report, it was next to you guys why you heard it, \
    and the officer told me to call the office today so somebody could explain what happened to my car last night.";
const COUNTEREXAMPLE: &str = "I'm calling to ask a question.";

fn pattern_fixtures() -> Outcome {
    use CallSide::{Agent, Customer};
    let rules = RuleSet::default_rules();
    let fixtures: [(PatternTag, &[(CallSide, &str)]); 7] = [
        (
            PatternTag::CallPurposePhrase,
            &[(Customer, "The reason for my call is I moved to a new address, so I need to change it on my profile.")],
        ),
        (PatternTag::DesirePhrase, &[(Customer, "Hi, I need a refund for my order.")]),
        (
            PatternTag::QuestionResponse,
            &[(Agent, "How can I help you?"), (Customer, "I received a message that my order has been delayed.")],
        ),
        (PatternTag::Greeting, &[(Customer, GREETING_EXAMPLE)]),
        (PatternTag::ProblemPhrase, &[(Customer, "I'm having an issue with the delivery.")]),
        (PatternTag::Update, &[(Agent, "I have an update on your passport status.")]),
        (
            PatternTag::Continuation,
            &[(Customer, "Hi, I'm calling because I have a question."), (Customer, "Do you accept new patients?")],
        ),
    ];
    for (tag, turns) in fixtures {
        let utterances = turns
            .iter()
            .enumerate()
            .map(|(i, (side, text))| Utterance::new("fixture", i as u32, *side, 2.0 * i as f64, *text))
            .collect::<callpurpose::Result<Vec<_>>>();
        let utterances = lib(utterances)?;
        let (last, history) = utterances.split_last().expect("fixture has turns");
        let ctx = MatchContext::from_history(&rules, history);
        let tags: BTreeSet<PatternTag> = rules.match_patterns(last, &ctx).into_iter().map(|m| m.tag).collect();
        ensure(tags.contains(&tag), || format!("{tag:?} example got {tags:?}"))?;
    }

    ensure(rules.is_false_positive(COUNTEREXAMPLE), || "counterexample not flagged".into())?;
    let u = lib(Utterance::new("fp", 1, Customer, 5.0, COUNTEREXAMPLE))?;
    let row = LabeledUtterance {
        utterance: u,
        label: ScoreClass::Purpose,
        source_pattern: Some(PatternTag::CallPurposePhrase),
        from_hit_call: true,
        initiator: true,
    };
    ensure(filter_false_positives(vec![row], &rules).is_empty(), || "counterexample kept as positive".into())?;
    Ok("7/7 examples tagged, counterexample filtered".into())
}
