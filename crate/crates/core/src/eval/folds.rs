use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::topic::Topic;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of every example.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == f).collect()
    }

    /// Test, validation and training indices of run `r`: test is fold `r`,
    /// validation fold `(r + 1) mod k`, training the rest.
    pub fn split(&self, r: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let val = (r + 1) % self.k;
        let (mut test, mut validation, mut train) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == r {
                test.push(i);
            } else if f == val && self.k > 1 {
                validation.push(i);
            } else {
                train.push(i);
            }
        }
        (test, validation, train)
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.assignments.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.assignments.len(),
            });
        }
        if self.k < 2 || self.assignments.iter().any(|&f| f >= self.k) {
            return Err(Error::Config(format!("fold plan with k = {} is invalid", self.k)));
        }
        Ok(())
    }
}

/// Shuffle each class with a class-specific seed, then deal round-robin.
/// The starting fold rotates between classes so fold totals stay balanced.
pub fn stratified_kfold(labels: &[Topic], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut assignments = vec![0usize; labels.len()];
    let mut offset = 0;
    for t in Topic::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == t).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::Validation {
                line: None,
                message: format!("class {t} has {} examples, fewer than k = {k}", idx.len()),
            });
        }
        idx.shuffle(&mut seeded(derive_seed(seed, t.index() as u64)));
        for (j, &i) in idx.iter().enumerate() {
            assignments[i] = (offset + j) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(FoldPlan { k, seed, assignments })
}
