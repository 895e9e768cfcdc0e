use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use super::metrics::{confusion_matrix, macro_from_confusion, per_class_metrics, ClassMetrics, ConfusionMatrix, MacroMetrics};
use crate::annotator::LabeledParagraph;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::topic::Topic;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: Topic,
}

impl Example {
    pub fn new(text: impl Into<String>, label: Topic) -> Self {
        Example {
            text: text.into(),
            label,
        }
    }
}

impl From<&LabeledParagraph> for Example {
    fn from(p: &LabeledParagraph) -> Self {
        Example::new(p.text.clone(), p.topic)
    }
}

/// A fitted model. Labels on the examples are ignored by real models.
pub trait Predictor: Send + Sync {
    fn predict(&self, examples: &[Example]) -> Result<Vec<Topic>>;
}

/// Something that can be fit on a training split, optionally selecting on a
/// validation split.
pub trait Trainer: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &[Example], validation: &[Example], seed: u64) -> Result<Box<dyn Predictor>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: Topic,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub test_fold: usize,
    pub validation_fold: usize,
    pub test_size: usize,
    pub metrics: MacroMetrics,
    pub per_class: Vec<ClassRow>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divisor = number of runs).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

impl Aggregate {
    pub fn of(runs: &[MacroMetrics]) -> Self {
        let col = |f: fn(&MacroMetrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub size: usize,
    pub metrics: MacroMetrics,
    pub per_class: Vec<ClassRow>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model: String,
    pub k: usize,
    pub fold_seed: u64,
    pub std: String,
    pub validation_rule: String,
    pub config: serde_json::Value,
    pub runs: Vec<RunReport>,
    pub aggregate: Aggregate,
    /// Model trained on the training folds of run 0 and scored on a separate
    /// unseen set.
    pub unseen: Option<HeldOutReport>,
}

fn class_rows(cm: &ConfusionMatrix) -> Vec<ClassRow> {
    per_class_metrics(cm)
        .iter()
        .zip(Topic::ALL)
        .map(|(m, class)| ClassRow { class, metrics: *m })
        .collect()
}

pub fn held_out_report(predictions: &[Topic], golds: &[Topic]) -> Result<HeldOutReport> {
    let cm = confusion_matrix(predictions, golds)?;
    Ok(HeldOutReport {
        size: golds.len(),
        metrics: macro_from_confusion(&cm),
        per_class: class_rows(&cm),
        confusion: cm,
    })
}

/// Failure inside cross-validation, with the runs that did finish.
#[derive(Debug)]
pub struct CvFailure {
    pub failed_run: usize,
    pub completed: Vec<RunReport>,
    pub source: Error,
}

impl std::fmt::Display for CvFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run {} failed after {} completed runs: {}",
            self.failed_run,
            self.completed.len(),
            self.source
        )
    }
}

impl std::error::Error for CvFailure {}

impl From<CvFailure> for Error {
    fn from(e: CvFailure) -> Self {
        match e.source {
            Error::Config(_) | Error::Validation { .. } | Error::Load(_) | Error::Io { .. } => e.source,
            _ => Error::Fit(e.to_string()),
        }
    }
}

fn pick(data: &[Example], idx: &[usize]) -> Vec<Example> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

/// One run per fold: test fold `r`, validation fold `(r + 1) mod k`, train on
/// the rest. Run seeds derive from the plan seed.
pub fn run_cv(
    trainer: &dyn Trainer,
    data: &[Example],
    plan: &FoldPlan,
    config: serde_json::Value,
) -> std::result::Result<EvalReport, CvFailure> {
    let mut runs = Vec::with_capacity(plan.k);
    if let Err(source) = plan.check(data.len()) {
        return Err(CvFailure {
            failed_run: 0,
            completed: runs,
            source,
        });
    }
    for r in 0..plan.k {
        let seed = derive_seed(plan.seed, r as u64);
        let outcome = (|| -> Result<RunReport> {
            let (test, val, train) = plan.split(r);
            let model = trainer.fit(&pick(data, &train), &pick(data, &val), seed)?;
            let test_ex = pick(data, &test);
            let preds = model.predict(&test_ex)?;
            let golds: Vec<Topic> = test_ex.iter().map(|e| e.label).collect();
            let cm = confusion_matrix(&preds, &golds)?;
            Ok(RunReport {
                run: r,
                seed,
                test_fold: r,
                validation_fold: (r + 1) % plan.k,
                test_size: test.len(),
                metrics: macro_from_confusion(&cm),
                per_class: class_rows(&cm),
                confusion: cm,
            })
        })();
        match outcome {
            Ok(run) => runs.push(run),
            Err(source) => {
                return Err(CvFailure {
                    failed_run: r,
                    completed: runs,
                    source,
                })
            }
        }
    }
    let aggregate = Aggregate::of(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: trainer.name(),
        k: plan.k,
        fold_seed: plan.seed,
        std: "population".into(),
        validation_rule: "test = fold r, validation = fold (r + 1) mod k, train = remaining folds".into(),
        config,
        runs,
        aggregate,
        unseen: None,
    })
}

/// Fit on the training folds of run 0 and score an unseen set.
pub fn evaluate_unseen(
    trainer: &dyn Trainer,
    data: &[Example],
    plan: &FoldPlan,
    unseen: &[Example],
) -> Result<HeldOutReport> {
    let (_, val, train) = plan.split(0);
    let model = trainer.fit(&pick(data, &train), &pick(data, &val), derive_seed(plan.seed, u64::MAX))?;
    let preds = model.predict(unseen)?;
    let golds: Vec<Topic> = unseen.iter().map(|e| e.label).collect();
    held_out_report(&preds, &golds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::folds::stratified_kfold;

    struct Oracle;
    struct Truth;
    impl Predictor for Truth {
        fn predict(&self, ex: &[Example]) -> Result<Vec<Topic>> {
            Ok(ex.iter().map(|e| e.label).collect())
        }
    }
    impl Trainer for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn fit(&self, _: &[Example], _: &[Example], _: u64) -> Result<Box<dyn Predictor>> {
            Ok(Box::new(Truth))
        }
    }

    struct Constant;
    struct Always;
    impl Predictor for Always {
        fn predict(&self, ex: &[Example]) -> Result<Vec<Topic>> {
            Ok(vec![Topic::Other; ex.len()])
        }
    }
    impl Trainer for Constant {
        fn name(&self) -> String {
            "constant".into()
        }
        fn fit(&self, _: &[Example], _: &[Example], _: u64) -> Result<Box<dyn Predictor>> {
            Ok(Box::new(Always))
        }
    }

    struct FailsOnRun(usize);
    impl Trainer for FailsOnRun {
        fn name(&self) -> String {
            "flaky".into()
        }
        fn fit(&self, train: &[Example], _: &[Example], _: u64) -> Result<Box<dyn Predictor>> {
            static CALLS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
            let c = CALLS.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let _ = train;
            if c == self.0 {
                Err(Error::Fit("boom".into()))
            } else {
                Ok(Box::new(Truth))
            }
        }
    }

    fn table_one() -> Vec<Example> {
        [1955, 1213, 1137, 1472, 5232]
            .iter()
            .zip(Topic::ALL)
            .flat_map(|(&n, t)| (0..n).map(move |i| Example::new(format!("{t} {i}"), t)))
            .collect()
    }

    #[test]
    fn oracle_and_constant() {
        let data = table_one();
        let labels: Vec<Topic> = data.iter().map(|e| e.label).collect();
        let plan = stratified_kfold(&labels, 5, 7).unwrap();
        let r = run_cv(&Oracle, &data, &plan, serde_json::Value::Null).unwrap();
        assert_eq!(r.aggregate.f1, MeanStd { mean: 1.0, std: 0.0 });
        assert_eq!(r.runs.iter().map(|x| x.test_size).sum::<usize>(), data.len());
        for run in &r.runs {
            assert_eq!(run.confusion.iter().flatten().sum::<usize>(), run.test_size);
        }
        let c = run_cv(&Constant, &data, &plan, serde_json::Value::Null).unwrap();
        assert!((c.aggregate.recall.mean - 0.2).abs() < 1e-12);
        assert_eq!(c, run_cv(&Constant, &data, &plan, serde_json::Value::Null).unwrap());
    }

    #[test]
    fn failure_carries_completed_runs() {
        let data: Vec<Example> = (0..25).map(|i| Example::new(format!("t{i}"), Topic::ALL[i % 5])).collect();
        let labels: Vec<Topic> = data.iter().map(|e| e.label).collect();
        let plan = stratified_kfold(&labels, 5, 0).unwrap();
        let err = run_cv(&FailsOnRun(2), &data, &plan, serde_json::Value::Null).unwrap_err();
        assert_eq!(err.failed_run, 2);
        assert_eq!(err.completed.len(), 2);
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m, MeanStd { mean: 2.0, std: 1.0 });
    }
}
