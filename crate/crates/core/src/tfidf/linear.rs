use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::{class_set, Classifier, FeatureVector};
use crate::error::{Error, Result};
use crate::topic::Topic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub classes: Vec<Topic>,
    /// `[num_classes x feature_len]`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearHyper {
    pub l2_strength: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        LinearHyper {
            l2_strength: 1e-3,
            learning_rate: 4.0,
            epochs: 1000,
            seed: 0,
        }
    }
}

fn class_indices(classes: &[Topic], labels: &[Topic]) -> Vec<usize> {
    labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class set"))
        .collect()
}

fn check_shapes(features: &Array2<f64>, labels: &[Topic]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension {
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    Ok(())
}

/// Row-wise softmax of `features · weightsᵀ + bias`.
fn softmax_scores(weights: &Array2<f64>, bias: &Array1<f64>, features: &Array2<f64>) -> Array2<f64> {
    let mut logits = features.dot(&weights.t()) + bias;
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

/// Mean softmax cross-entropy plus `l2 / 2 * ||W||²` (bias unpenalized), and its
/// gradient with respect to weights and bias.
pub fn logistic_loss_and_grad(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    features: &Array2<f64>,
    targets: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = features.nrows() as f64;
    let mut probs = softmax_scores(weights, bias, features);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(f64::MIN_POSITIVE).ln();
        probs[[i, t]] -= 1.0;
    }
    loss = loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let grad_w = probs.t().dot(features) / n + weights * l2;
    let grad_b = probs.sum_axis(Axis(0)) / n;
    (loss, grad_w, grad_b)
}

/// Multinomial logistic regression by full-batch gradient descent.
/// Returns the model and the per-epoch loss history (before each update).
pub fn train_logistic(
    features: &Array2<f64>,
    labels: &[Topic],
    hyper: &LinearHyper,
) -> Result<(LinearModel, Vec<f64>)> {
    check_shapes(features, labels)?;
    let classes = class_set(labels)?;
    let targets = class_indices(&classes, labels);
    let mut weights = Array2::zeros((classes.len(), features.ncols()));
    let mut bias = Array1::zeros(classes.len());
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        let (loss, gw, gb) = logistic_loss_and_grad(&weights, &bias, features, &targets, hyper.l2_strength);
        history.push(loss);
        weights.scaled_add(-hyper.learning_rate, &gw);
        bias.scaled_add(-hyper.learning_rate, &gb);
    }
    history.push(logistic_loss_and_grad(&weights, &bias, features, &targets, hyper.l2_strength).0);
    Ok((
        LinearModel {
            kind: LinearKind::Logistic,
            classes,
            weights,
            bias,
        },
        history,
    ))
}

/// One-vs-rest linear SVM: mean hinge loss plus `l2 / 2 * ||w_k||²` per class,
/// minimized by subgradient descent with step `learning_rate / sqrt(epoch + 1)`.
pub fn train_linear_svm(features: &Array2<f64>, labels: &[Topic], hyper: &LinearHyper) -> Result<LinearModel> {
    check_shapes(features, labels)?;
    let classes = class_set(labels)?;
    let targets = class_indices(&classes, labels);
    let n = features.nrows() as f64;
    let mut weights = Array2::<f64>::zeros((classes.len(), features.ncols()));
    let mut bias = Array1::<f64>::zeros(classes.len());
    for epoch in 0..hyper.epochs {
        let step = hyper.learning_rate / ((epoch + 1) as f64).sqrt();
        let margins = features.dot(&weights.t()) + &bias;
        // coef[i, k] = -y_ik when the hinge is active, else 0
        let mut coef = Array2::<f64>::zeros(margins.raw_dim());
        for ((i, k), &m) in margins.indexed_iter() {
            let y = if targets[i] == k { 1.0 } else { -1.0 };
            if y * m < 1.0 {
                coef[[i, k]] = -y;
            }
        }
        let grad_w = coef.t().dot(features) / n + &weights * hyper.l2_strength;
        let grad_b = coef.sum_axis(Axis(0)) / n;
        weights.scaled_add(-step, &grad_w);
        bias.scaled_add(-step, &grad_b);
    }
    Ok(LinearModel {
        kind: LinearKind::Svm,
        classes,
        weights,
        bias,
    })
}

impl LinearModel {
    /// Logistic: class probabilities. SVM: raw margins.
    pub fn raw_scores(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let logits = self.weights.dot(&x) + &self.bias;
        match self.kind {
            LinearKind::Svm => logits.to_vec(),
            LinearKind::Logistic => {
                let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exp.iter().sum();
                exp.into_iter().map(|e| e / sum).collect()
            }
        }
    }
}

impl Classifier for LinearModel {
    fn classes(&self) -> &[Topic] {
        &self.classes
    }

    fn feature_len(&self) -> usize {
        self.weights.ncols()
    }

    fn scores(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(self.raw_scores(ArrayView1::from(&x.0)))
    }
}
