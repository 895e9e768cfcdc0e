//! Regex title detection and ADME labeling of pharmacokinetics paragraphs.
//!
//! Two title styles are recognized: a title segment on its own line
//! ("Absorption") that labels every following paragraph until the next title,
//! and an inline title at the start of a paragraph ("Distribution: ...") that
//! labels that paragraph only.

use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::read_jsonl_lines;
use crate::error::{Error, Result};
use crate::spl::{normalize_whitespace, RawSegment};
use crate::topic::Topic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    RegexOutside,
    RegexInline,
    Manual,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledParagraph {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub set_id: String,
    #[serde(default)]
    pub application_number: Option<String>,
    pub text: String,
    pub topic: Topic,
    pub source: Source,
    #[serde(default)]
    pub raw_title: Option<String>,
}

/// One recognized title spelling and the topic it stands for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleAlias {
    pub title: String,
    pub topic: Topic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub titles: Vec<TitleAlias>,
    /// Drop the inline title (and its delimiter) from the paragraph text.
    pub strip_inline_title: bool,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        let alias = |title: &str, topic| TitleAlias {
            title: title.into(),
            topic,
        };
        AnnotatorConfig {
            titles: vec![
                alias("absorption", Topic::Absorption),
                alias("distribution", Topic::Distribution),
                alias("metabolism", Topic::Metabolism),
                alias("excretion", Topic::Excretion),
                alias("elimination", Topic::Excretion),
                alias("food effect", Topic::Absorption),
                alias("bioavailability", Topic::Absorption),
            ],
            strip_inline_title: true,
        }
    }
}

pub struct Annotator {
    config: AnnotatorConfig,
    outside: Regex,
    inline: Regex,
}

impl Default for Annotator {
    fn default() -> Self {
        Annotator::new(AnnotatorConfig::default()).expect("default title list compiles")
    }
}

impl Annotator {
    pub fn new(config: AnnotatorConfig) -> Result<Self> {
        if config.titles.is_empty() {
            return Err(Error::Config("annotator title list is empty".into()));
        }
        let mut titles: Vec<String> = config
            .titles
            .iter()
            .map(|a| regex::escape(&normalize_whitespace(&a.title).to_lowercase()))
            .collect();
        // Longest first so that e.g. "food effect" wins over a shorter alias.
        titles.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let alternatives = titles.join("|");
        let build = |pattern: String| {
            RegexBuilder::new(&pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| Error::Config(e.to_string()))
        };
        Ok(Annotator {
            outside: build(format!("^({alternatives})$"))?,
            inline: build(format!(r"^({alternatives})\s*(:|-)"))?,
            config,
        })
    }

    pub fn config(&self) -> &AnnotatorConfig {
        &self.config
    }

    /// Whole-segment title match; returns the lowercased title.
    pub fn detect_outside_title(&self, segment: &RawSegment) -> Option<String> {
        let text = normalize_whitespace(&segment.text).to_lowercase();
        self.outside.is_match(&text).then_some(text)
    }

    /// Leading "Title:" or "Title -" match; returns the lowercased title and the
    /// text after the delimiter with leading whitespace and delimiters removed.
    pub fn detect_inline_title(&self, paragraph: &str) -> Option<(String, String)> {
        let caps = self.inline.captures(paragraph)?;
        let title = normalize_whitespace(&caps[1]).to_lowercase();
        let rest = &paragraph[caps.get(0).unwrap().end()..];
        let rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ':' || c == '-');
        Some((title, rest.to_string()))
    }

    pub fn canonicalize_topic(&self, raw_title: &str) -> Topic {
        let key = normalize_whitespace(raw_title).to_lowercase();
        self.config
            .titles
            .iter()
            .find(|a| normalize_whitespace(&a.title).to_lowercase() == key)
            .map_or(Topic::Other, |a| a.topic)
    }

    /// Label the paragraphs of one pharmacokinetics section.
    ///
    /// `segments` should come from `segment_paragraphs`. The current topic starts
    /// as Other; an outside title sets it (a title outside the list resets it to
    /// Other) and emits nothing. An inline-titled paragraph takes its own title's
    /// topic; any other paragraph takes the current topic.
    pub fn annotate_document(
        &self,
        segments: &[RawSegment],
        set_id: &str,
        application_number: Option<&str>,
    ) -> Vec<LabeledParagraph> {
        let mut current: (Topic, Option<String>) = (Topic::Other, None);
        let mut out = Vec::new();
        for seg in segments {
            if let Some(title) = self.detect_outside_title(seg) {
                current = (self.canonicalize_topic(&title), Some(title));
                continue;
            }
            if seg.is_title() {
                current = (Topic::Other, None);
                continue;
            }
            let (topic, source, text, raw_title) = match self.detect_inline_title(&seg.text) {
                Some((title, rest)) => {
                    let text = if self.config.strip_inline_title && !rest.is_empty() {
                        rest
                    } else {
                        seg.text.clone()
                    };
                    (self.canonicalize_topic(&title), Source::RegexInline, text, Some(title))
                }
                None => (current.0, Source::RegexOutside, seg.text.clone(), current.1.clone()),
            };
            out.push(LabeledParagraph {
                id: format!("{set_id}:{}", out.len()),
                set_id: set_id.to_string(),
                application_number: application_number.map(str::to_string),
                text,
                topic,
                source,
                raw_title,
            });
        }
        out
    }
}

/// Default-configuration shorthands.
pub fn detect_outside_title(segment: &RawSegment) -> Option<String> {
    Annotator::default().detect_outside_title(segment)
}

pub fn detect_inline_title(paragraph: &str) -> Option<(String, String)> {
    Annotator::default().detect_inline_title(paragraph)
}

pub fn canonicalize_topic(raw_title: &str) -> Topic {
    Annotator::default().canonicalize_topic(raw_title)
}

#[derive(Deserialize)]
struct ManualRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    set_id: Option<String>,
    #[serde(default)]
    application_number: Option<String>,
    text: String,
    topic: String,
}

/// Load hand-labeled paragraphs (one JSON object per line with `text` and
/// `topic`). Topics must be one of the five canonical names.
pub fn import_manual(path: &Path) -> Result<Vec<LabeledParagraph>> {
    let mut out = Vec::new();
    for (line_no, line) in read_jsonl_lines(path)? {
        let rec: ManualRecord = serde_json::from_str(&line).map_err(|e| Error::Validation {
            line: Some(line_no),
            message: e.to_string(),
        })?;
        let topic: Topic = rec.topic.parse().map_err(|_| Error::Validation {
            line: Some(line_no),
            message: format!("unknown topic {:?}", rec.topic),
        })?;
        let text = normalize_whitespace(&rec.text);
        if text.is_empty() {
            return Err(Error::Validation {
                line: Some(line_no),
                message: "empty text".into(),
            });
        }
        out.push(LabeledParagraph {
            id: rec.id.unwrap_or_else(|| format!("manual:{line_no}")),
            set_id: rec.set_id.unwrap_or_default(),
            application_number: rec.application_number,
            text,
            topic,
            source: Source::Manual,
            raw_title: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn outside_titles() {
        let a = Annotator::default();
        assert_eq!(a.detect_outside_title(&RawSegment::title("Absorption")).as_deref(), Some("absorption"));
        assert_eq!(a.detect_outside_title(&RawSegment::title("  FOOD   Effect ")).as_deref(), Some("food effect"));
        assert_eq!(a.detect_outside_title(&RawSegment::title("Specific Populations")), None);
        assert_eq!(a.detect_outside_title(&RawSegment::title("A. Absorption")), None);
        assert_eq!(
            a.detect_outside_title(&RawSegment::paragraph(
                "absorption of methotrexate appears dose dependent."
            )),
            None
        );
    }

    #[test]
    fn inline_titles() {
        let (t, rest) = detect_inline_title(
            "Distribution: Paroxetine distributes throughout the body, including the CNS.",
        )
        .unwrap();
        assert_eq!(t, "distribution");
        assert!(rest.starts_with("Paroxetine distributes"));
        let (t, rest) =
            detect_inline_title("Elimination: Elimination of Lopressor is mainly by biotransformation.").unwrap();
        assert_eq!(t, "elimination");
        assert_eq!(rest, "Elimination of Lopressor is mainly by biotransformation.");
        assert_eq!(detect_inline_title("Metabolism - CYP3A4 mediated.").unwrap().1, "CYP3A4 mediated.");
        assert!(detect_inline_title("In pediatric patients with ALL, oral absorption is variable.").is_none());
    }

    #[test]
    fn canonical_topics() {
        assert_eq!(canonicalize_topic("elimination"), Topic::Excretion);
        assert_eq!(canonicalize_topic("food effect"), Topic::Absorption);
        assert_eq!(canonicalize_topic("Metabolism"), Topic::Metabolism);
        assert_eq!(canonicalize_topic("absorption and bioavailability"), Topic::Other);
    }

    #[test]
    fn untitled_document_is_other() {
        let segs = [RawSegment::paragraph("One."), RawSegment::paragraph("Two.")];
        let out = Annotator::default().annotate_document(&segs, "s", None);
        assert!(out.iter().all(|p| p.topic == Topic::Other && p.source == Source::RegexOutside));
    }

    #[test]
    fn non_adme_title_resets_state() {
        let segs = [
            RawSegment::title("Metabolism"),
            RawSegment::paragraph("Hepatic."),
            RawSegment::title("Drug Interaction Studies"),
            RawSegment::paragraph("Ketoconazole raised exposure."),
        ];
        let topics: Vec<_> = Annotator::default()
            .annotate_document(&segs, "s", None)
            .iter()
            .map(|p| p.topic)
            .collect();
        assert_eq!(topics, [Topic::Metabolism, Topic::Other]);
    }

    #[test]
    fn strip_flag_off_keeps_title() {
        let a = Annotator::new(AnnotatorConfig {
            strip_inline_title: false,
            ..Default::default()
        })
        .unwrap();
        let out = a.annotate_document(&[RawSegment::paragraph("Excretion: Renal.")], "s", None);
        assert_eq!(out[0].text, "Excretion: Renal.");
        assert_eq!(out[0].topic, Topic::Excretion);
    }

    #[test]
    fn concatenation_after_non_adme_title_matches_per_document() {
        let a = Annotator::default();
        let doc1 = vec![
            RawSegment::title("Absorption"),
            RawSegment::paragraph("Rapid."),
            RawSegment::title("Specific Populations"),
        ];
        let doc2 = vec![RawSegment::paragraph("Untitled."), RawSegment::title("Excretion"), RawSegment::paragraph("Urine.")];
        let mut joined = doc1.clone();
        joined.extend(doc2.clone());
        let topics = |v: Vec<LabeledParagraph>| v.into_iter().map(|p| p.topic).collect::<Vec<_>>();
        let mut separate = topics(a.annotate_document(&doc1, "s", None));
        separate.extend(topics(a.annotate_document(&doc2, "s", None)));
        assert_eq!(topics(a.annotate_document(&joined, "s", None)), separate);
    }

    proptest! {
        #[test]
        fn inline_remainder_is_clean(title in "(Absorption|Distribution|Elimination)", gap in "[ \\t]{0,3}", delim in "[:-]", tail in "[ :\\-]{0,4}[a-z ]{0,12}") {
            let text = format!("{title}{gap}{delim}{tail}");
            let (_, rest) = detect_inline_title(&text).unwrap();
            prop_assert!(!rest.starts_with(|c: char| c.is_whitespace() || c == ':' || c == '-'));
        }
    }
}
