//! Synthetic data, evaluation protocol and reports.

pub mod dataset;
pub mod evaluation;
pub mod metrics;
pub mod synthetic;

pub use dataset::{write_dataset, DatasetSpec, QueryRecord, QuerySet, QuerySpec, Sweep};
pub use evaluation::{
    aggregate, evaluate, report_table, run_evaluation, run_evaluation_with, EvalConfig, EvalReport, PositiveMode,
    RegisterTarget,
};
pub use metrics::{precision_at_m, top1_cd};
pub use synthetic::{
    generate_synthetic, label_agreement, symmetrize_features, Family, SyntheticObject,
    SyntheticSpec,
};
