//! Synthetic pharmacokinetics-style corpus for experiments that need more
//! labeled text than the fixtures provide.
//!
//! Each class owns a lexicon of rare pseudo-words and a handful of frequent
//! ones. A labeled paragraph mixes filler words and stock phrases (partly
//! drawn from a class-specific ranking) with two or three rare cues of its
//! class, sometimes a frequent cue, and at fixed rates a real keyword-table
//! word of its own or of another class. Rare cues are too many to be learned
//! from the labeled paragraphs alone. Unlabeled paragraphs carry many more
//! cues each, so their co-occurrence is what a masked-LM pretraining run can
//! pick up.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::annotator::{LabeledParagraph, Source};
use crate::error::{Error, Result};
use crate::eval::Example;
use crate::rng::{derive_seed, seeded, Rng};
use crate::rules::{default_keyword_table, KeywordTable};
use crate::topic::Topic;

const SYLLABLES: &[&str] = &[
    "ba", "be", "bo", "da", "de", "di", "do", "fa", "fe", "ga", "go", "ka", "ke", "ki", "la", "le", "li", "lo", "ma",
    "me", "mi", "mo", "na", "ne", "ni", "no", "pa", "pe", "pi", "ra", "re", "ri", "ro", "sa", "se", "ta", "te", "to",
    "va", "ve", "vi", "za",
];

const FILLER: &[&str] = &[
    "the", "of", "and", "in", "was", "to", "a", "with", "after", "is", "were", "at", "mg", "dose", "plasma",
    "patients", "following", "administration", "concentrations", "hours", "oral", "single", "healthy", "subjects",
    "study", "mean", "approximately", "than", "by", "for", "on", "not", "be", "or", "are", "from", "this", "that",
    "as", "drug", "daily", "steady", "state", "half", "life", "clearance", "levels", "increase", "decrease",
    "observed", "compared", "similar", "about", "may", "effect", "total", "peak", "time", "reached", "within",
    "doses", "range", "kg", "ml", "min", "l", "h", "ng", "auc", "cmax", "tablet", "capsule", "solution",
    "administered", "given", "values", "higher", "lower", "percent", "data", "group", "age", "weight", "renal",
    "hepatic", "impairment", "elderly", "children", "adults", "twice", "once", "days", "weeks", "during",
    "treatment", "therapy", "concomitant", "use", "when", "there", "no", "significant", "difference", "both",
    "men", "women", "clinical", "trials", "response", "results", "shown", "table", "figure", "model",
    "population", "variability", "linear", "proportional", "over", "between", "each", "other", "its", "these",
    "has", "have", "been", "which", "also", "more", "less", "following", "intravenous", "infusion", "bolus",
    "formulation", "fasting", "fed", "conditions", "serum", "blood", "whole", "fraction", "unbound", "volume",
    "apparent", "terminal", "phase", "active", "parent", "compound", "moiety", "free", "bound", "sample",
];

const PHRASES: &[&str] = &[
    "following oral administration of",
    "peak plasma concentrations were reached within",
    "the mean half life was approximately",
    "in healthy subjects",
    "at steady state",
    "after a single dose",
    "compared with the fasting state",
    "was not significantly different",
    "in patients with renal impairment",
    "in patients with hepatic impairment",
    "the apparent volume of",
    "the fraction unbound in plasma",
    "over the dose range of",
    "increased in a dose proportional manner",
    "no clinically significant difference was observed",
    "in elderly subjects compared with younger adults",
    "data from clinical trials",
    "the parent compound and its active moiety",
    "when given once daily",
    "after twice daily dosing for days",
    "total clearance was higher in men than in women",
    "population pharmacokinetic model",
    "concentrations in whole blood and serum",
    "during concomitant use",
    "as shown in the table",
    "the terminal phase",
    "of the administered dose",
    "with food",
    "by intravenous infusion",
    "mg kg",
];

/// Generator settings. Rates are per paragraph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub paragraphs: usize,
    /// Unlabeled paragraphs for masked-LM pretraining.
    pub unlabeled: usize,
    /// Relative class frequencies in `Topic::ALL` order.
    pub class_weights: [f64; 5],
    /// Rare cue words per class.
    pub lexicon_size: usize,
    /// Frequent cue words per class.
    pub frequent_size: usize,
    /// Number of filler words drawn from the built-in list.
    pub filler_size: usize,
    /// Chance that a filler unit is a stock phrase instead of a single word.
    pub phrase_rate: f64,
    /// Chance that a filler unit is drawn from the class-specific ranking of
    /// the shared filler words and phrases instead of the global one.
    pub topicality: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Range of rare cue words per paragraph.
    pub min_cues: usize,
    pub max_cues: usize,
    /// Range of rare cue words per unlabeled paragraph.
    pub unlabeled_min_cues: usize,
    pub unlabeled_max_cues: usize,
    /// Chance of one frequent cue word of the own class.
    pub frequent_rate: f64,
    /// Chance of a cue word (rare or frequent) borrowed from another class.
    pub borrow_rate: f64,
    /// Chance that an ADME paragraph mentions one of its own keywords.
    pub keyword_rate: f64,
    /// Chance that any paragraph mentions a keyword of another ADME class.
    pub confound_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            paragraphs: 2000,
            unlabeled: 10_000,
            class_weights: [1955.0, 1213.0, 1137.0, 1472.0, 5232.0],
            lexicon_size: 500,
            frequent_size: 6,
            filler_size: 80,
            phrase_rate: 0.5,
            topicality: 0.5,
            min_words: 6,
            max_words: 10,
            min_cues: 2,
            max_cues: 3,
            unlabeled_min_cues: 10,
            unlabeled_max_cues: 14,
            frequent_rate: 0.4,
            borrow_rate: 0.3,
            keyword_rate: 0.6,
            confound_rate: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("synth.{name} must be in [0, 1], got {v}")))
            }
        };
        rate("frequent_rate", self.frequent_rate)?;
        rate("phrase_rate", self.phrase_rate)?;
        rate("topicality", self.topicality)?;
        rate("borrow_rate", self.borrow_rate)?;
        rate("keyword_rate", self.keyword_rate)?;
        rate("confound_rate", self.confound_rate)?;
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("synth.class_weights must be positive".into()));
        }
        if self.min_words == 0
            || self.min_words > self.max_words
            || self.min_cues > self.max_cues
            || self.unlabeled_min_cues > self.unlabeled_max_cues
        {
            return Err(Error::Config("synth word or cue range is empty".into()));
        }
        if self.filler_size == 0 || self.filler_size > FILLER.len() {
            return Err(Error::Config(format!("synth.filler_size must be in 1..={}", FILLER.len())));
        }
        if self.lexicon_size == 0 || self.frequent_size == 0 {
            return Err(Error::Config("synth lexicons must be non-empty".into()));
        }
        if self.paragraphs < Topic::COUNT {
            return Err(Error::Config("synth.paragraphs must cover every class".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<String>,
}

impl SynthCorpus {
    pub fn paragraphs(&self) -> Vec<LabeledParagraph> {
        self.labeled
            .iter()
            .enumerate()
            .map(|(i, e)| LabeledParagraph {
                id: format!("synth-{i:05}"),
                set_id: "synthetic".into(),
                application_number: None,
                text: e.text.clone(),
                topic: e.label,
                source: Source::Synthetic,
                raw_title: None,
            })
            .collect()
    }
}

struct Lexicons {
    rare: Vec<Vec<String>>,
    frequent: Vec<Vec<String>>,
}

fn lexicons(cfg: &SynthConfig, rng: &mut Rng) -> Lexicons {
    let mut seen: std::collections::HashSet<String> = FILLER.iter().map(|w| w.to_string()).collect();
    let mut draw = |rng: &mut Rng, n: usize| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let k = rng.gen_range(2..=3);
            let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if w.len() > 4 && seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    };
    let frequent = (0..Topic::COUNT).map(|_| draw(rng, cfg.frequent_size)).collect();
    let rare = (0..Topic::COUNT).map(|_| draw(rng, cfg.lexicon_size)).collect();
    Lexicons { rare, frequent }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    lex: Lexicons,
    keywords: KeywordTable,
    /// Global ranking first, then one ranking per class.
    filler: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    phrases: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

fn zipf_rankings(n: usize, rng: &mut Rng) -> Result<Vec<(Vec<usize>, WeightedIndex<f64>)>> {
    let weights: Vec<f64> = (1..=n).map(|r| 1.0 / r as f64).collect();
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = vec![((0..n).collect::<Vec<_>>(), dist.clone())];
    for _ in 0..Topic::COUNT {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        out.push((order, dist.clone()));
    }
    Ok(out)
}

fn draw(rankings: &[(Vec<usize>, WeightedIndex<f64>)], which: usize, rng: &mut Rng) -> usize {
    let (order, dist) = &rankings[which];
    order[dist.sample(rng)]
}

impl Generator<'_> {
    fn paragraph(&self, topic: Topic, cues: (usize, usize), rng: &mut Rng) -> String {
        let cfg = self.cfg;
        let c = topic.index();
        let len = rng.gen_range(cfg.min_words..=cfg.max_words);
        let mut words: Vec<String> = Vec::with_capacity(len + 8);
        let mut slots = vec![0];
        while words.len() < len {
            let which = if rng.gen_bool(cfg.topicality) { c + 1 } else { 0 };
            if rng.gen_bool(cfg.phrase_rate) {
                words.extend(PHRASES[draw(&self.phrases, which, rng)].split(' ').map(String::from));
            } else {
                words.push(FILLER[draw(&self.filler, which, rng)].to_string());
            }
            slots.push(words.len());
        }
        let mut inserts = Vec::new();
        for _ in 0..rng.gen_range(cues.0..=cues.1) {
            inserts.push(self.lex.rare[c].choose(rng).unwrap().clone());
        }
        if rng.gen_bool(cfg.frequent_rate) {
            inserts.push(self.lex.frequent[c].choose(rng).unwrap().clone());
        }
        if rng.gen_bool(cfg.borrow_rate) {
            let other = (c + rng.gen_range(1..Topic::COUNT)) % Topic::COUNT;
            let pool = if rng.gen_bool(0.5) { &self.lex.frequent[other] } else { &self.lex.rare[other] };
            inserts.push(pool.choose(rng).unwrap().clone());
        }
        if topic.is_adme() && rng.gen_bool(cfg.keyword_rate) {
            inserts.push(self.keywords.keywords[&topic].choose(rng).unwrap().clone());
        }
        if rng.gen_bool(cfg.confound_rate) {
            let others: Vec<Topic> = Topic::ADME.into_iter().filter(|t| *t != topic).collect();
            let t = others.choose(rng).unwrap();
            inserts.push(self.keywords.keywords[t].choose(rng).unwrap().clone());
        }
        // Cue words go between filler units so phrases stay intact.
        let mut placed: Vec<(usize, String)> = inserts.into_iter().map(|w| (*slots.choose(rng).unwrap(), w)).collect();
        placed.sort_by(|a, b| b.0.cmp(&a.0));
        for (at, w) in placed {
            words.insert(at, w);
        }
        let mut text = words.join(" ");
        text.push('.');
        text
    }
}

/// Generate a corpus. Equal seeds and settings give identical output.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = seeded(derive_seed(seed, 0));
    let lex = lexicons(cfg, &mut rng);
    let filler = zipf_rankings(cfg.filler_size, &mut rng)?;
    let phrases = zipf_rankings(PHRASES.len(), &mut rng)?;
    let gen = Generator {
        cfg,
        lex,
        keywords: default_keyword_table(),
        filler,
        phrases,
    };

    // Every class gets at least one paragraph; the rest follow the weights.
    let total: f64 = cfg.class_weights.iter().sum();
    let mut counts: Vec<usize> = cfg
        .class_weights
        .iter()
        .map(|w| ((w / total) * cfg.paragraphs as f64).floor().max(1.0) as usize)
        .collect();
    let mut c = Topic::COUNT - 1;
    while counts.iter().sum::<usize>() < cfg.paragraphs {
        counts[c] += 1;
        c = (c + Topic::COUNT - 1) % Topic::COUNT;
    }
    while counts.iter().sum::<usize>() > cfg.paragraphs {
        let big = (0..Topic::COUNT).max_by_key(|&i| counts[i]).unwrap();
        counts[big] -= 1;
    }

    let mut rng = seeded(derive_seed(seed, 1));
    let mut labels: Vec<Topic> = counts
        .iter()
        .zip(Topic::ALL)
        .flat_map(|(&n, t)| std::iter::repeat(t).take(n))
        .collect();
    labels.shuffle(&mut rng);
    let labeled = labels
        .into_iter()
        .map(|t| Example::new(gen.paragraph(t, (cfg.min_cues, cfg.max_cues), &mut rng), t))
        .collect();

    // Unlabeled classes are uniform so every lexicon gets the same exposure.
    let mut rng = seeded(derive_seed(seed, 2));
    let cues = (cfg.unlabeled_min_cues, cfg.unlabeled_max_cues);
    let unlabeled = (0..cfg.unlabeled)
        .map(|_| {
            let t = *Topic::ALL.choose(&mut rng).unwrap();
            gen.paragraph(t, cues, &mut rng)
        })
        .collect();
    Ok(SynthCorpus { labeled, unlabeled })
}
