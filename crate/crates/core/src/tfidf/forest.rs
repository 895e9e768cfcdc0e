use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, class_set, Classifier, FeatureVector};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};
use crate::topic::Topic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub tree_count: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(informative features))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            tree_count: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

/// Flat node arena; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub classes: Vec<Topic>,
    pub feature_len: usize,
    pub trees: Vec<Tree>,
    pub tree_count: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    num_classes: usize,
    informative: &'a [usize],
    per_split: usize,
    hyper: &'a ForestHyper,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl TreeBuilder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &s in samples {
            c[self.y[s]] += 1;
        }
        c
    }

    fn best_split_on(&self, samples: &[usize], feature: usize) -> Option<BestSplit> {
        let mut order: Vec<(f64, usize)> = samples.iter().map(|&s| (self.x[[s, feature]], self.y[s])).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = order.len();
        let mut left = vec![0usize; self.num_classes];
        let mut right = vec![0usize; self.num_classes];
        for &(_, c) in &order {
            right[c] += 1;
        }
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            let c = order[i].1;
            left[c] += 1;
            right[c] -= 1;
            let nl = i + 1;
            if order[i].0 == order[i + 1].0 || nl < self.hyper.min_leaf || n - nl < self.hyper.min_leaf {
                continue;
            }
            let imp = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if best.as_ref().is_none_or(|b| imp < b.impurity) {
                best = Some(BestSplit {
                    feature,
                    threshold: 0.5 * (order[i].0 + order[i + 1].0),
                    impurity: imp,
                });
            }
        }
        best
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let counts = self.counts(&samples);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.hyper.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || samples.len() < 2 * self.hyper.min_leaf.max(1) {
            return id;
        }

        // Try a random subset first; if none of those can split this node, keep
        // drawing from the remaining informative features.
        let k = self.informative.len();
        let mut candidates: Vec<usize> = sample(rng, k, k).into_iter().map(|i| self.informative[i]).collect();
        let (first, rest) = candidates.split_at_mut(self.per_split.min(k));
        let mut best: Option<BestSplit> = None;
        for &f in first.iter() {
            if let Some(s) = self.best_split_on(&samples, f) {
                if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                    best = Some(s);
                }
            }
        }
        if best.is_none() {
            for &f in rest.iter() {
                if let Some(s) = self.best_split_on(&samples, f) {
                    best = Some(s);
                    break;
                }
            }
        }
        let Some(split) = best else {
            return id;
        };

        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| self.x[[s, split.feature]] <= split.threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Random forest of CART trees split on Gini impurity.
///
/// Tree `i` uses seed `derive_seed(hyper.seed, i)`, so trees fit in parallel
/// and the result does not depend on scheduling. Features that are constant
/// over the whole training set are never candidates.
pub fn train_random_forest(features: &Array2<f64>, labels: &[Topic], hyper: &ForestHyper) -> Result<ForestModel> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension {
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    let classes = class_set(labels)?;
    if hyper.tree_count == 0 {
        return Err(Error::Config("tree_count must be at least 1".into()));
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let n = features.nrows();
    let informative: Vec<usize> = (0..features.ncols())
        .filter(|&f| {
            let col = features.column(f);
            col.iter().any(|&v| v != col[0])
        })
        .collect();
    let per_split = hyper
        .features_per_split
        .unwrap_or_else(|| (informative.len() as f64).sqrt().floor() as usize)
        .max(1);

    let trees = (0..hyper.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(derive_seed(hyper.seed, t as u64));
            let samples: Vec<usize> = if hyper.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x: features,
                y: &y,
                num_classes: classes.len(),
                informative: &informative,
                per_split,
                hyper,
                nodes: Vec::new(),
            };
            builder.build(samples, 0, &mut rng);
            Tree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestModel {
        classes,
        feature_len: features.ncols(),
        trees,
        tree_count: hyper.tree_count,
    })
}

impl Tree {
    pub fn leaf_counts(&self, x: ArrayView1<'_, f64>) -> &[usize] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict_index(&self, x: ArrayView1<'_, f64>) -> usize {
        let counts: Vec<f64> = self.leaf_counts(x).iter().map(|&c| c as f64).collect();
        argmax(&counts)
    }
}

impl Classifier for ForestModel {
    fn classes(&self) -> &[Topic] {
        &self.classes
    }

    fn feature_len(&self) -> usize {
        self.feature_len
    }

    /// Vote counts per class.
    fn scores(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let view = ArrayView1::from(&x.0);
        let mut votes = vec![0.0; self.classes.len()];
        for t in &self.trees {
            votes[t.predict_index(view)] += 1.0;
        }
        Ok(votes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{concatenate, Axis};

    fn pure_split() -> (Array2<f64>, Vec<Topic>) {
        // 20 points per class; a bootstrap draw missing a class has probability 2^-39.
        let x = Array2::from_shape_fn((40, 1), |(i, _)| if i < 20 { i as f64 / 100.0 } else { 0.5 + i as f64 / 100.0 });
        let y = (0..40).map(|i| if i < 20 { Topic::Absorption } else { Topic::Metabolism }).collect();
        (x, y)
    }

    fn fv(row: ArrayView1<'_, f64>) -> FeatureVector {
        FeatureVector(row.to_vec())
    }

    #[test]
    fn every_tree_fits_pure_split() {
        let (x, y) = pure_split();
        let m = train_random_forest(&x, &y, &ForestHyper::default()).unwrap();
        for tree in &m.trees {
            for (row, label) in x.rows().into_iter().zip(&y) {
                assert_eq!(m.classes[tree.predict_index(row)], *label);
            }
        }
        for (row, label) in x.rows().into_iter().zip(&y) {
            assert_eq!(m.predict(&fv(row)).unwrap(), *label);
        }
    }

    #[test]
    fn single_tree_without_bootstrap() {
        let (x, y) = pure_split();
        let hyper = ForestHyper {
            tree_count: 1,
            bootstrap: false,
            ..Default::default()
        };
        let m = train_random_forest(&x, &y, &hyper).unwrap();
        for (row, label) in x.rows().into_iter().zip(&y) {
            assert_eq!(m.predict(&fv(row)).unwrap(), *label);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Array2::from_shape_fn((40, 6), |(i, j)| ((i * 7 + j * 13) % 11) as f64 / 11.0);
        let y: Vec<Topic> = (0..40).map(|i| Topic::ALL[i % 3]).collect();
        let hyper = ForestHyper {
            tree_count: 15,
            seed: 5,
            ..Default::default()
        };
        let a = train_random_forest(&x, &y, &hyper).unwrap();
        let b = train_random_forest(&x, &y, &hyper).unwrap();
        assert_eq!(a, b);
        for row in x.rows() {
            assert_eq!(a.scores(&fv(row)).unwrap(), b.scores(&fv(row)).unwrap());
        }
    }

    #[test]
    fn vote_tie_goes_to_lowest_class() {
        let m = ForestModel {
            classes: vec![Topic::Distribution, Topic::Other],
            feature_len: 1,
            tree_count: 2,
            trees: vec![
                Tree { nodes: vec![Node::Leaf { counts: vec![0, 3] }] },
                Tree { nodes: vec![Node::Leaf { counts: vec![2, 0] }] },
            ],
        };
        assert_eq!(m.predict(&FeatureVector(vec![0.0])).unwrap(), Topic::Distribution);
    }

    #[test]
    fn empty_input_is_an_error() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(train_random_forest(&x, &[], &ForestHyper::default()).is_err());
    }

    #[test]
    fn zero_columns_do_not_change_predictions() {
        let x = Array2::from_shape_fn((30, 5), |(i, j)| ((i * 3 + j * 5) % 7) as f64);
        let y: Vec<Topic> = (0..30).map(|i| Topic::ALL[(i * 7 / 30) % 4]).collect();
        let xz = concatenate![Axis(1), x, Array2::zeros((30, 4))];
        let hyper = ForestHyper {
            tree_count: 10,
            seed: 2,
            ..Default::default()
        };
        let a = train_random_forest(&x, &y, &hyper).unwrap();
        let b = train_random_forest(&xz, &y, &hyper).unwrap();
        for (r, rz) in x.rows().into_iter().zip(xz.rows()) {
            assert_eq!(a.predict(&fv(r)).unwrap(), b.predict(&fv(rz)).unwrap());
        }
    }
}
