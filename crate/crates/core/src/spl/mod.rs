//! Structured Product Labeling ingestion: label index access, XML parsing,
//! label selection and pharmacokinetics paragraph segmentation.

mod fetch;
mod parse;
mod segment;
mod select;

use serde::{Deserialize, Serialize};

pub use fetch::{
    fetch_label_index, parse_index_page, FetchOptions, HttpIndexSource, IndexPage, IndexSource,
    LabelIndexEntry, LocalIndexSource,
};
pub use parse::parse_spl;
pub use segment::segment_paragraphs;
pub use select::select_labels;

/// LOINC code of the pharmacokinetics section.
pub const PK_LOINC: &str = "43682-4";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Title,
    Paragraph,
    Item,
}

/// The smallest text unit delimited by a `<title>`, `<paragraph>` or `<item>` tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSegment {
    pub kind: SegmentKind,
    pub text: String,
}

impl RawSegment {
    /// Builds a segment, normalizing whitespace. Returns `None` when nothing is left.
    pub fn new(kind: SegmentKind, text: &str) -> Option<Self> {
        let text = normalize_whitespace(text);
        (!text.is_empty()).then_some(RawSegment { kind, text })
    }

    pub fn title(text: &str) -> Self {
        Self::new(SegmentKind::Title, text).expect("non-empty title")
    }

    pub fn paragraph(text: &str) -> Self {
        Self::new(SegmentKind::Paragraph, text).expect("non-empty paragraph")
    }

    pub fn is_title(&self) -> bool {
        self.kind == SegmentKind::Title
    }
}

/// A parsed drug label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplDocument {
    pub set_id: String,
    pub application_number: Option<String>,
    pub version: u32,
    /// LOINC code to segments, in order of first appearance. Repeated codes are
    /// merged into one entry with segments concatenated in document order.
    pub sections: Vec<(String, Vec<RawSegment>)>,
}

impl SplDocument {
    pub fn section(&self, code: &str) -> Option<&[RawSegment]> {
        self.sections
            .iter()
            .find(|(c, _)| c == code)
            .map(|(_, segs)| segs.as_slice())
    }

    pub fn has_section(&self, code: &str) -> bool {
        self.section(code).is_some()
    }

    pub(crate) fn section_entry(&mut self, code: &str) -> &mut Vec<RawSegment> {
        let pos = match self.sections.iter().position(|(c, _)| c == code) {
            Some(pos) => pos,
            None => {
                self.sections.push((code.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        &mut self.sections[pos].1
    }

    pub fn is_nda(&self) -> bool {
        self.application_number
            .as_deref()
            .is_some_and(|a| a.starts_with("NDA"))
    }
}

/// Pharmacokinetics section segments, or an empty list when the label has none.
pub fn extract_pk_section(doc: &SplDocument) -> Vec<RawSegment> {
    doc.section(PK_LOINC).map(<[_]>::to_vec).unwrap_or_default()
}

/// Collapse whitespace runs to a single space and trim both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `letters + digits`, e.g. `NDA208400`. Inner whitespace is dropped first.
pub fn normalize_application_number(raw: &str) -> Option<String> {
    let compact: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    let split = compact.find(|c: char| c.is_ascii_digit())?;
    let (prefix, digits) = compact.split_at(split);
    let valid = !prefix.is_empty()
        && prefix.chars().all(|c| c.is_ascii_alphabetic())
        && digits.chars().all(|c| c.is_ascii_digit());
    valid.then(|| compact.to_ascii_uppercase())
}
