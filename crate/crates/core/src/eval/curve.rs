use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cv::{Example, Trainer};
use super::metrics::macro_f1;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::topic::Topic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    pub model: String,
    pub f1: f64,
    pub train_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub holdout_per_class: usize,
    pub holdout_size: usize,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    pub warnings: Vec<String>,
}

impl LearningCurve {
    /// `size,model,f1` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,model,f1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.size, r.model, r.f1));
        }
        s
    }
}

/// Index plan behind a learning curve.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurvePlan {
    pub holdout: Vec<usize>,
    /// Sorted, deduplicated sizes with their training indices.
    pub subsets: Vec<(usize, Vec<usize>)>,
    pub warnings: Vec<String>,
}

pub fn curve_plan(labels: &[Topic], sizes: &[usize], holdout_per_class: usize, seed: u64) -> Result<CurvePlan> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::Config("learning curve needs at least one size".into()));
    }
    let max = *sizes.last().unwrap();
    let mut holdout = Vec::new();
    let mut pools: Vec<(Topic, Vec<usize>)> = Vec::new();
    let mut warnings = Vec::new();
    for t in Topic::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == t).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut seeded(derive_seed(seed, t.index() as u64)));
        let h = holdout_per_class.min(idx.len().saturating_sub(1));
        if idx.len() < holdout_per_class + max {
            warnings.push(format!(
                "class {t} has {} examples; holdout {h} and training sizes capped at {}",
                idx.len(),
                idx.len() - h
            ));
        }
        holdout.extend_from_slice(&idx[..h]);
        pools.push((t, idx[h..].to_vec()));
    }
    holdout.sort_unstable();
    let subsets = sizes
        .iter()
        .map(|&s| {
            let mut train = Vec::new();
            for (t, pool) in &pools {
                let mut p = pool.clone();
                p.shuffle(&mut seeded(derive_seed(derive_seed(seed, s as u64), t.index() as u64)));
                train.extend(p.into_iter().take(s));
            }
            train.sort_unstable();
            (s, train)
        })
        .collect();
    Ok(CurvePlan {
        holdout,
        subsets,
        warnings,
    })
}

/// Train each model on `size` samples per class and score macro-F1 on a fixed
/// per-class holdout.
pub fn learning_curve(
    trainers: &[&dyn Trainer],
    data: &[Example],
    sizes: &[usize],
    holdout_per_class: usize,
    seed: u64,
) -> Result<LearningCurve> {
    let labels: Vec<Topic> = data.iter().map(|e| e.label).collect();
    let plan = curve_plan(&labels, sizes, holdout_per_class, seed)?;
    let test: Vec<Example> = plan.holdout.iter().map(|&i| data[i].clone()).collect();
    let golds: Vec<Topic> = test.iter().map(|e| e.label).collect();
    let mut rows = Vec::new();
    for (size, idx) in &plan.subsets {
        let train: Vec<Example> = idx.iter().map(|&i| data[i].clone()).collect();
        for t in trainers {
            let model = t.fit(&train, &[], derive_seed(seed, *size as u64))?;
            let f1 = macro_f1(&model.predict(&test)?, &golds)?;
            rows.push(CurveRow {
                size: *size,
                model: t.name(),
                f1,
                train_count: train.len(),
            });
        }
    }
    Ok(LearningCurve {
        holdout_per_class,
        holdout_size: test.len(),
        seed,
        rows,
        warnings: plan.warnings,
    })
}
