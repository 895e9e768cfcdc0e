use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_PIECES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";

/// Subword vocabulary. Ids 0..5 are the special tokens; continuation pieces
/// carry a `##` prefix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
    }
}

/// Lowercase, split on whitespace, and split every non-alphanumeric character
/// off as its own word.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for ch in chunk.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() {
                cur.push(ch);
            } else {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

/// Alphabet of a corpus: every character both as a word-initial piece and as a
/// `##` continuation, sorted.
pub fn alphabet(corpus: &[String]) -> Vec<String> {
    let mut chars: Vec<char> = corpus
        .iter()
        .flat_map(|t| pre_tokenize(t))
        .flat_map(|w| w.chars().collect::<Vec<_>>())
        .collect();
    chars.sort_unstable();
    chars.dedup();
    let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    out.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
    out.sort();
    out
}

/// Build a vocabulary by repeatedly merging the most frequent adjacent symbol
/// pair (ties go to the pair seen first in corpus order) until `target_size`
/// pieces exist or no pair occurs more than once.
pub fn train_subword_vocab(corpus: &[String], target_size: usize) -> Result<SubwordVocab> {
    let mut word_counts: HashMap<String, usize> = HashMap::new();
    let mut words: Vec<String> = Vec::new();
    for text in corpus {
        for w in pre_tokenize(text) {
            let c = word_counts.entry(w.clone()).or_insert(0);
            if *c == 0 {
                words.push(w);
            }
            *c += 1;
        }
    }
    if words.is_empty() {
        return Err(Error::Fit("cannot build a vocabulary from an empty corpus".into()));
    }
    let alpha = alphabet(corpus);
    let minimum = alpha.len() + NUM_SPECIALS;
    if target_size < minimum {
        return Err(Error::Config(format!(
            "vocabulary target {target_size} is below the minimum {minimum} (alphabet plus specials)"
        )));
    }

    let mut pieces: Vec<String> = SPECIAL_PIECES.iter().map(|s| s.to_string()).collect();
    pieces.extend(alpha);
    let mut index: HashMap<String, u32> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();

    let counts: Vec<usize> = words.iter().map(|w| word_counts[w]).collect();
    let mut symbols: Vec<Vec<u32>> = words
        .iter()
        .map(|w| {
            w.chars()
                .enumerate()
                .map(|(i, c)| {
                    let p = if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") };
                    index[&p]
                })
                .collect()
        })
        .collect();

    while pieces.len() < target_size {
        // (count, first seen)
        let mut pairs: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for (syms, &n) in symbols.iter().zip(&counts) {
            for pair in syms.windows(2) {
                let e = pairs.entry((pair[0], pair[1])).or_insert((0, order));
                e.0 += n;
                order += 1;
            }
        }
        let Some((&(a, b), &(count, _))) = pairs
            .iter()
            .max_by(|x, y| x.1 .0.cmp(&y.1 .0).then_with(|| y.1 .1.cmp(&x.1 .1)))
        else {
            break;
        };
        if count < 2 {
            break;
        }
        let merged = format!(
            "{}{}",
            pieces[a as usize],
            pieces[b as usize].trim_start_matches(CONTINUATION)
        );
        let id = match index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                index.insert(merged.clone(), id);
                pieces.push(merged);
                id
            }
        };
        for syms in &mut symbols {
            let mut i = 0;
            let mut out = Vec::with_capacity(syms.len());
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }

    Ok(SubwordVocab { pieces, index })
}

/// Token ids, mask and word alignment for one text, all of length `max_len`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Word index for each piece; `None` for special and padding positions.
    pub word_alignment: Vec<Option<usize>>,
}

impl Encoding {
    /// Number of non-padding positions.
    pub fn len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SubwordVocab {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < NUM_SPECIALS || pieces[..NUM_SPECIALS] != SPECIAL_PIECES {
            return Err(Error::Load("vocabulary must start with the five special pieces".into()));
        }
        let index: HashMap<String, u32> = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        if index.len() != pieces.len() {
            return Err(Error::Load("vocabulary pieces are not unique".into()));
        }
        Ok(SubwordVocab { pieces, index })
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(self) -> Result<Self> {
        Self::from_pieces(self.pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    /// Greedy longest-match-first split of one pre-tokenized word. Characters
    /// that no piece covers become `UNK`.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let body: String = chars[start..end].iter().collect();
                let piece = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
                if let Some(id) = self.id(&piece) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    start += 1;
                }
            }
        }
        out
    }

    /// `[CLS] pieces... [SEP]` then padding. Pieces beyond `max_len - 2` are cut.
    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let mut ids = vec![CLS];
        let mut align = vec![None];
        'words: for (w, word) in pre_tokenize(text).iter().enumerate() {
            for id in self.tokenize_word(word) {
                if ids.len() == max_len - 1 {
                    break 'words;
                }
                ids.push(id);
                align.push(Some(w));
            }
        }
        ids.push(SEP);
        align.push(None);
        let used = ids.len();
        ids.resize(max_len, PAD);
        align.resize(max_len, None);
        let mut attention_mask = vec![1u8; used];
        attention_mask.resize(max_len, 0);
        Encoding {
            ids,
            attention_mask,
            word_alignment: align,
        }
    }
}

/// Free-function form of [`SubwordVocab::encode`].
pub fn encode_text(vocab: &SubwordVocab, text: &str, max_len: usize) -> Encoding {
    vocab.encode(text, max_len)
}
