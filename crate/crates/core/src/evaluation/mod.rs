//! Metrics against gold annotations, report rendering and the synthetic gold
//! corpus generator.

mod ablation;
mod generate;
mod metrics;
mod report;

pub use ablation::{render_ablation_text, render_ablation_tsv, run_ablation, AblationRow, ABLATION_FEATURE_SETS};
pub use generate::{generate, generate_with, ClippedNormal, Fillers, GenSpec, Templates, DEFAULT_TEMPLATES};
pub use metrics::{
    classification_report, evaluate, majority_baseline, ClassificationReport, Counts, EvalReport, MetricRow,
    MIN_ELIGIBLE_DURATION_S,
};
pub use report::{percent, render_text, render_tsv, OVERALL_LABEL};
