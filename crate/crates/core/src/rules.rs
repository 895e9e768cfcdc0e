//! Keyword rule baseline.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tfidf::tokenize_words;
use crate::topic::Topic;

/// Keywords per ADME topic. A keyword matches any word token it is a prefix of,
/// so "absorb" hits "absorbed" and "metabolize" hits "metabolized".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub keywords: BTreeMap<Topic, Vec<String>>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        default_keyword_table()
    }
}

pub fn default_keyword_table() -> KeywordTable {
    let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    KeywordTable {
        keywords: BTreeMap::from([
            (Topic::Absorption, words(&["absorption", "absorb", "food"])),
            (Topic::Distribution, words(&["distribution", "distribute"])),
            (Topic::Metabolism, words(&["metabolism", "metabolize"])),
            (Topic::Excretion, words(&["excretion", "elimination", "excrete", "eliminate"])),
        ]),
    }
}

impl KeywordTable {
    pub fn validate(&self) -> Result<()> {
        let keys: Vec<Topic> = self.keywords.keys().copied().collect();
        if keys != Topic::ADME {
            return Err(Error::Config(
                "keyword table needs exactly the four ADME topics".into(),
            ));
        }
        let mut seen = std::collections::HashMap::new();
        for (topic, words) in &self.keywords {
            if words.is_empty() {
                return Err(Error::Config(format!("no keywords for {topic}")));
            }
            for w in words {
                if w.is_empty() || *w != w.to_lowercase() {
                    return Err(Error::Config(format!("keyword {w:?} must be non-empty lowercase")));
                }
                if let Some(prev) = seen.insert(w.clone(), *topic) {
                    return Err(Error::Config(format!("keyword {w:?} listed under {prev} and {topic}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keywords.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Topics with at least one keyword hit, in class order.
    pub fn matched_topics(&self, text: &str) -> Vec<Topic> {
        let tokens = tokenize_words(text);
        self.keywords
            .iter()
            .filter(|(_, kws)| {
                kws.iter()
                    .any(|k| tokens.iter().any(|t| t.starts_with(k.as_str())))
            })
            .map(|(t, _)| *t)
            .collect()
    }
}

/// Classify one paragraph. Several matched topics are broken by a uniform draw
/// from a generator seeded with `seed`.
pub fn rule_classify(text: &str, table: &KeywordTable, seed: u64) -> Topic {
    let matched = table.matched_topics(text);
    match matched.len() {
        0 => Topic::Other,
        1 => matched[0],
        n => matched[seeded(seed).gen_range(0..n)],
    }
}

/// Rule classifier bound to a report seed. Each text gets its own tie-break
/// seed derived from the report seed and the text, so ties are independent
/// across paragraphs but stable for a given paragraph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleClassifier {
    pub table: KeywordTable,
    pub seed: u64,
}

impl RuleClassifier {
    pub fn new(table: KeywordTable, seed: u64) -> Result<Self> {
        table.validate()?;
        Ok(RuleClassifier { table, seed })
    }

    pub fn classify(&self, text: &str) -> Topic {
        rule_classify(text, &self.table, derive_seed(self.seed, fnv1a(text.as_bytes())))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
