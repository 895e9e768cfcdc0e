use super::{RawSegment, SegmentKind};

/// Turn raw segments into paragraphs.
///
/// Titles pass through. A paragraph or item whose text does not end with '.'
/// is a fragment: it is carried forward and prefixed to the next non-title
/// segment. A fragment still pending at the end of input is kept as-is.
pub fn segment_paragraphs(segments: &[RawSegment]) -> Vec<RawSegment> {
    let mut out = Vec::with_capacity(segments.len());
    let mut pending: Option<String> = None;
    for seg in segments {
        if seg.kind == SegmentKind::Title {
            out.push(seg.clone());
            continue;
        }
        let text = match pending.take() {
            Some(prefix) => format!("{prefix} {}", seg.text),
            None => seg.text.clone(),
        };
        if text.ends_with('.') {
            out.push(RawSegment {
                kind: seg.kind,
                text,
            });
        } else {
            pending = Some(text);
        }
    }
    if let Some(text) = pending {
        out.push(RawSegment {
            kind: SegmentKind::Paragraph,
            text,
        });
    }
    out
}
