use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use callpurpose::bootstrap::{filter_false_positives, resample, weak_label, Dataset, SamplingSpec, Split};
use callpurpose::evaluation::{
    classification_report, evaluate, generate_with, majority_baseline, render_ablation_text, render_ablation_tsv,
    render_text, render_tsv, run_ablation, GenSpec, Templates,
};
use callpurpose::model::ScoreClass;
use callpurpose::num::Scalar;
use callpurpose::pipeline::{final_records, Detector};
use callpurpose::protocol::{FinalRecord, GoldRecord};
use callpurpose::scoring::{train, FeatureSet, OracleScorer, ScorerKind, TabularFeatures, TrainConfig, TrainedScorer};
use callpurpose::service::{serve_tcp, Engine, ServiceConfig};
use callpurpose::transcript::{parse_corpus, write_corpus, Corpus};
use callpurpose::{Error, RuleSet};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Detects the Purpose-of-Call utterance in call transcripts.
#[derive(Debug, Parser)]
#[command(name = "callpurpose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the event protocol on stdin/stdout or a TCP address.
    Serve(ServeArgs),
    /// Final decision per call for transcript files or directories.
    Detect(DetectArgs),
    /// Generate a synthetic gold corpus.
    Synth(SynthArgs),
    /// Weak-label a corpus with the rules and resample a training set.
    Bootstrap(BootstrapArgs),
    /// Train the scorer on a bootstrapped dataset.
    Train(TrainArgs),
    /// Score decisions against gold and print the metric table.
    Eval(EvalArgs),
    /// Train one scorer per feature set and compare them.
    Ablate(AblateArgs),
    /// Strip greetings and pleasantries from utterances (one per line).
    Simplify(SimplifyArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Args)]
struct DetectorArgs {
    /// Service configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rules file; overrides the config.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Trained scorer; overrides the config. Without one the rule scorer is used.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Floating point precision of the scorer.
    #[arg(long, value_enum, default_value_t)]
    precision: Precision,
}

impl DetectorArgs {
    fn service_config(&self) -> Result<ServiceConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => ServiceConfig::load(path)?,
            None => ServiceConfig::default(),
        };
        if self.rules.is_some() {
            config.rules.clone_from(&self.rules);
        }
        if self.model.is_some() {
            config.model.clone_from(&self.model);
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    /// Listen on `host:port` instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    /// Score with the gold annotations in the input instead of a model.
    #[arg(long, conflicts_with = "model")]
    oracle: bool,
    /// Output file (default stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Transcript files or directories of `.jsonl` files; `-` reads stdin.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n_calls: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generator spec file (TOML); flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Template file replacing the bundled templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    /// Rules file used for weak labeling.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Rows to sample.
    #[arg(long, default_value_t = 10_000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling spec file (TOML); `--size` and `--seed` override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Features {
    Text,
    TextStart,
    TextSide,
    All,
}

impl Features {
    fn set(self) -> FeatureSet {
        match self {
            Features::Text => FeatureSet::TEXT_ONLY,
            Features::TextStart => FeatureSet::TEXT_START,
            Features::TextSide => FeatureSet::TEXT_SIDE,
            Features::All => FeatureSet::ALL,
        }
    }
}

#[derive(Debug, Args)]
struct TrainOptions {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl TrainOptions {
    fn config(&self, features: FeatureSet) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            dim: self.dim.unwrap_or(d.dim),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: self.seed,
            features,
            ..d
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset written by `bootstrap`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    features: Features,
    #[command(flatten)]
    options: TrainOptions,
    #[arg(long, value_enum, default_value_t)]
    precision: Precision,
    /// Model file to write.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Tsv,
    Json,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, conflicts_with = "model")]
    oracle: bool,
    /// Score these final decisions (output of `detect`) instead of running detection.
    #[arg(long, conflicts_with_all = ["oracle", "model"])]
    decisions: Option<PathBuf>,
    /// Model name printed in the table.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Gold corpora.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    options: TrainOptions,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Gold corpora for the end-to-end metrics.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SimplifyArgs {
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Input file (default stdin).
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Error message plus process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn at(path: &Path, e: impl Into<Failure>) -> Failure {
    let f = e.into();
    Failure { code: f.code, message: format!("{}: {}", path.display(), f.message) }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve(a) => match a.detector.precision {
            Precision::F32 => serve::<f32>(a),
            Precision::F64 => serve::<f64>(a),
        },
        Command::Detect(a) => match a.detector.precision {
            Precision::F32 => detect::<f32>(a),
            Precision::F64 => detect::<f64>(a),
        },
        Command::Synth(a) => synth(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Train(a) => match a.precision {
            Precision::F32 => train_cmd::<f32>(a),
            Precision::F64 => train_cmd::<f64>(a),
        },
        Command::Eval(a) => match a.detector.precision {
            Precision::F32 => eval::<f32>(a),
            Precision::F64 => eval::<f64>(a),
        },
        Command::Ablate(a) => ablate(a),
        Command::Simplify(a) => simplify(a),
    }
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| at(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn is_transcript_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson" | "json"))
}

/// Expands directories to their transcript files, sorted by name.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| at(input, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_transcript_file(p))
                .collect();
            if found.is_empty() {
                return Err(at(input, data_error("directory holds no .jsonl transcript files")));
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

/// Reads and merges every input; call ids must be unique across files.
fn read_inputs(inputs: &[PathBuf]) -> Result<Corpus, Failure> {
    let mut corpus = Corpus::default();
    for path in expand_inputs(inputs)? {
        let part = if path.as_os_str() == "-" {
            parse_corpus(io::stdin().lock())
        } else {
            let file = File::open(&path).map_err(|e| at(&path, e))?;
            parse_corpus(BufReader::new(file))
        }
        .map_err(|e| at(&path, e))?;
        for call in part.calls {
            if corpus.calls.iter().any(|c| c.call_id == call.call_id) {
                return Err(at(&path, data_error(format!("call {} also appears in an earlier input", call.call_id))));
            }
            corpus.calls.push(call);
        }
        corpus.gold.extend(part.gold);
    }
    if corpus.calls.is_empty() {
        return Err(data_error("input holds no calls"));
    }
    Ok(corpus)
}

fn oracle(gold: &std::collections::BTreeMap<String, GoldRecord>) -> Result<OracleScorer, Failure> {
    if gold.is_empty() {
        return Err(data_error("--oracle needs gold records in the input"));
    }
    Ok(OracleScorer::new(gold.values().map(|g| (g.call_id.clone(), g.purpose_index))))
}

fn build_detector<T: Scalar>(args: &DetectorArgs, oracle_from: Option<&Corpus>) -> Result<Detector<T>, Failure> {
    let config = args.service_config()?;
    let mut detector = config.build_detector::<T>()?;
    if let Some(corpus) = oracle_from {
        detector.scorer = ScorerKind::Oracle(oracle(&corpus.gold)?);
    }
    Ok(detector)
}

fn serve<T: Scalar>(a: ServeArgs) -> Result<(), Failure> {
    let mut config = a.detector.service_config()?;
    if a.listen.is_some() {
        config.listen.clone_from(&a.listen);
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    let engine = Engine::<T>::from_config(config.clone())?;
    match &config.listen {
        Some(addr) => serve_tcp(Arc::new(engine), addr.as_str())?,
        None => engine.serve_stream(io::stdin().lock(), io::stdout())?,
    }
    Ok(())
}

fn write_lines<S: serde::Serialize>(out: &mut dyn Write, records: &[S]) -> Result<(), Failure> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn detect<T: Scalar>(a: DetectArgs) -> Result<(), Failure> {
    let corpus = read_inputs(&a.inputs)?;
    let detector = build_detector::<T>(&a.detector, a.oracle.then_some(&corpus))?;
    let results = detector.detect_corpus(&corpus.calls)?;
    let mut out = open_output(&a.output)?;
    write_lines(&mut *out, &final_records(&results))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec: GenSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| at(p, e))?;
            toml::from_str(&text).map_err(|e| at(p, Error::Config(e.to_string())))?
        }
        None => GenSpec::default(),
    };
    if let Some(n) = a.n_calls {
        spec.n_calls = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let templates = match &a.templates {
        Some(p) => Templates::load(p).map_err(|e| at(p, e))?,
        None => Templates::default(),
    };
    let corpus = generate_with(&spec, &templates)?;
    let mut out = open_output(&a.output)?;
    write_corpus(&corpus, &mut out)?;
    out.flush()?;
    Ok(())
}

fn load_rules(path: &Option<PathBuf>) -> Result<RuleSet, Failure> {
    match path {
        Some(p) => RuleSet::load(p).map_err(|e| at(p, e)),
        None => Ok(RuleSet::default_rules()),
    }
}

fn bootstrap(a: BootstrapArgs) -> Result<(), Failure> {
    let mut spec: SamplingSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| at(p, e))?;
            toml::from_str(&text).map_err(|e| at(p, Error::Config(e.to_string())))?
        }
        None => SamplingSpec::default(),
    };
    spec.size = a.size;
    spec.seed = a.seed;
    let corpus = read_inputs(&a.inputs)?;
    let rules = load_rules(&a.rules)?;
    let detector = Detector::<f64>::new(rules, ScorerKind::rules());
    let rows = filter_false_positives(weak_label(&detector, &corpus.calls)?, &detector.rules);
    let dataset = resample(&rows, &spec)?;
    let mut out = open_output(&a.output)?;
    dataset.write_ndjson(&mut out)?;
    out.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    let file = File::open(path).map_err(|e| at(path, e))?;
    Dataset::read_ndjson(BufReader::new(file)).map_err(|e| at(path, e))
}

fn train_cmd<T: Scalar>(a: TrainArgs) -> Result<(), Failure> {
    let dataset = read_dataset(&a.data)?;
    let examples = dataset.examples(Split::Train);
    let scorer: TrainedScorer<T> = train(&examples, &a.options.config(a.features.set()))?;
    scorer.save(&a.output).map_err(|e| at(&a.output, e))?;

    let held_out: Vec<_> = dataset.split(Split::Validation).collect();
    if !held_out.is_empty() {
        let gold: Vec<ScoreClass> = held_out.iter().map(|r| r.label).collect();
        let predicted: Vec<ScoreClass> = held_out
            .iter()
            .map(|r| {
                scorer
                    .predict(&r.text, TabularFeatures::new(r.start_time_s, r.initiator))
                    .argmax()
            })
            .collect();
        let report = classification_report(&gold, &predicted)?;
        let train_labels: Vec<ScoreClass> = examples.iter().map(|e| e.label).collect();
        let baseline = majority_baseline(&train_labels, &gold)?;
        eprintln!(
            "validation: accuracy {:.3}, macro-F1 {:.3} (majority baseline {:.3} / {:.3})",
            report.accuracy, report.macro_f1, baseline.accuracy, baseline.macro_f1
        );
    }
    Ok(())
}

fn read_decisions(path: &Path) -> Result<Vec<FinalRecord>, Failure> {
    let file = File::open(path).map_err(|e| at(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FinalRecord = serde_json::from_str(&line)
            .map_err(|e| at(path, Error::Parse { line: i + 1, message: e.to_string() }))?;
        out.push(record);
    }
    Ok(out)
}

fn eval<T: Scalar>(a: EvalArgs) -> Result<(), Failure> {
    let corpus = read_inputs(&a.inputs)?;
    if corpus.gold.is_empty() {
        return Err(data_error("input holds no gold records"));
    }
    let (finals, default_name) = match &a.decisions {
        Some(path) => (read_decisions(path)?, "decisions"),
        None => {
            let detector = build_detector::<T>(&a.detector, a.oracle.then_some(&corpus))?;
            let name = match detector.scorer {
                ScorerKind::Rules(_) => "rules",
                ScorerKind::Trained(_) => "hybrid",
                ScorerKind::Oracle(_) => "oracle",
            };
            (final_records(&detector.detect_corpus(&corpus.calls)?), name)
        }
    };
    let name = a.name.as_deref().unwrap_or(default_name);
    let report = evaluate(
        name,
        finals.iter().map(|f| (f.call_id.as_str(), f.decision.as_ref().map(|d| d.utterance_index))),
        &corpus.gold,
    )?;
    let mut out = open_output(&a.output)?;
    let text = match a.format {
        Format::Text => render_text(std::slice::from_ref(&report))?,
        Format::Tsv => render_tsv(std::slice::from_ref(&report))?,
        Format::Json => serde_json::to_string_pretty(&report).map_err(io::Error::from)? + "\n",
    };
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), Failure> {
    let dataset = read_dataset(&a.data)?;
    let corpus = read_inputs(&a.inputs)?;
    if corpus.gold.is_empty() {
        return Err(data_error("input holds no gold records"));
    }
    let rules = load_rules(&a.rules)?;
    let rows = run_ablation(&dataset, &corpus, &rules, &a.options.config(FeatureSet::ALL))?;
    let text = match a.format {
        Format::Text => render_ablation_text(&rows)?,
        Format::Tsv => render_ablation_tsv(&rows)?,
        Format::Json => serde_json::to_string_pretty(&rows).map_err(io::Error::from)? + "\n",
    };
    let mut out = open_output(&a.output)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct SimplifiedLine<'a> {
    text: &'a str,
    simplified: String,
    removed: Vec<String>,
}

fn simplify(a: SimplifyArgs) -> Result<(), Failure> {
    let rules = load_rules(&a.rules)?;
    let input: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| at(p, e))?)),
        None => Box::new(io::stdin().lock()),
    };
    let mut out = open_output(&a.output)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = rules.simplification.simplify(&line);
        let record = SimplifiedLine {
            text: &line,
            removed: s.removed.iter().map(|r| r.text.trim().to_string()).collect(),
            simplified: s.text,
        };
        serde_json::to_writer(&mut out, &record).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
