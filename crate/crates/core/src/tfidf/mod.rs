//! TF-IDF features and the classical classifiers trained on them.

mod forest;
mod linear;

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topic::Topic;

pub use forest::{train_random_forest, ForestHyper, ForestModel, Node, Tree};
pub use linear::{
    logistic_loss_and_grad, train_linear_svm, train_logistic, LinearHyper, LinearKind, LinearModel,
};

pub const DEFAULT_MAX_FEATURES: usize = 128;

/// Lowercase, split on runs of non-alphanumeric characters, drop empties.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Ordered by descending document frequency, then lexicographically.
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub doc_count: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Fit vocabulary and smoothed idf: `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
pub fn fit_tfidf(corpus: &[Vec<String>], max_features: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Fit("TF-IDF needs a non-empty corpus".into()));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let mut uniq: Vec<&str> = doc.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut terms: Vec<(&str, usize)> = df.into_iter().collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    terms.truncate(max_features);

    let n = corpus.len() as f64;
    let vocabulary: Vec<String> = terms.iter().map(|(t, _)| t.to_string()).collect();
    let idf = terms
        .iter()
        .map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel::from_parts(vocabulary, idf, corpus.len()))
}

impl TfidfModel {
    pub fn from_parts(vocabulary: Vec<String>, idf: Vec<f64>, doc_count: usize) -> Self {
        let index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TfidfModel {
            vocabulary,
            idf,
            doc_count,
            index,
        }
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// Raw counts times idf, L2-normalized. All-zero stays all-zero.
    pub fn transform(&self, tokens: &[String]) -> FeatureVector {
        let mut v = vec![0.0; self.dim()];
        for t in tokens {
            if let Some(&i) = self.index.get(t) {
                v[i] += 1.0;
            }
        }
        for (x, idf) in v.iter_mut().zip(&self.idf) {
            *x *= idf;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        FeatureVector(v)
    }

    pub fn transform_text(&self, text: &str) -> FeatureVector {
        self.transform(&tokenize_words(text))
    }
}

/// Stack feature vectors into a samples-by-features matrix.
pub fn stack(features: &[FeatureVector]) -> Result<Array2<f64>> {
    let dim = features.first().map_or(0, FeatureVector::len);
    let mut m = Array2::zeros((features.len(), dim));
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: f.len(),
            });
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&f.0));
    }
    Ok(m)
}

/// Argmax with ties to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Sorted distinct labels; at least two are required to train a classifier.
pub(crate) fn class_set(labels: &[Topic]) -> Result<Vec<Topic>> {
    if labels.is_empty() {
        return Err(Error::Fit("no training samples".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least two classes, found only {}",
            classes[0]
        )));
    }
    Ok(classes)
}

/// Scoring interface shared by the TF-IDF classifiers.
pub trait Classifier {
    fn classes(&self) -> &[Topic];
    fn feature_len(&self) -> usize;
    fn scores(&self, x: &FeatureVector) -> Result<Vec<f64>>;

    fn predict(&self, x: &FeatureVector) -> Result<Topic> {
        let s = self.scores(x)?;
        Ok(self.classes()[argmax(&s)])
    }

    fn check_len(&self, x: &FeatureVector) -> Result<()> {
        if x.len() != self.feature_len() {
            return Err(Error::Dimension {
                expected: self.feature_len(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}
