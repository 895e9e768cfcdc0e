//! Cross-validation protocol, metrics and reports.

mod curve;
mod cv;
mod folds;
mod metrics;

pub use curve::{curve_plan, learning_curve, CurvePlan, CurveRow, LearningCurve};
pub use cv::{
    evaluate_unseen, held_out_report, run_cv, Aggregate, ClassRow, CvFailure, EvalReport, Example, HeldOutReport,
    MeanStd, Predictor, RunReport, Trainer, REPORT_SCHEMA_VERSION,
};
pub use folds::{stratified_kfold, FoldPlan};
pub use metrics::{
    accuracy, confusion_matrix, macro_f1, macro_from_confusion, macro_metrics, per_class_metrics,
    ClassMetrics, ConfusionMatrix, MacroMetrics,
};
