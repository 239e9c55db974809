use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("call {call_id}: duplicate utterance index {index}")]
    DuplicateIndex { call_id: String, index: u32 },

    #[error("rule {rule_id}: expression {expression:?} does not compile: {message}")]
    RuleCompile {
        rule_id: String,
        expression: String,
        message: String,
    },

    #[error("rules file: {0}")]
    RulesFormat(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training data is missing label `{0}`")]
    MissingLabel(&'static str),

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("session state: {0}")]
    State(String),

    #[error("insufficient rows in stratum `{stratum}`: need {needed}, have {available}")]
    InsufficientRows {
        stratum: String,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line surface: 2 for data errors, 3 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Divergence { .. } | Error::State(_) => 3,
            _ => 2,
        }
    }
}
