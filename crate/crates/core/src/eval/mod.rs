//! Temporal IoU metrics, prediction files, and the loss ablation runner.

mod ablation;
mod metrics;
mod predictions;

pub use ablation::{
    run_ablation, AblationPlan, AblationRun, AblationSummary, AblationTable, ABLATION_CONFIGS,
};
pub use metrics::{
    accuracy_at, alpha_key, mean_tiou, tiou, tiou_with, EvalReport, InvertedPolicy, DEFAULT_ALPHAS,
};
pub use predictions::{
    attach_ground_truth, evaluate_records, load_predictions, parse_jsonl, predict_sample,
    predict_samples, to_jsonl, write_predictions, PredictionRecord,
};
