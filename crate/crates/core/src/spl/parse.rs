use quick_xml::escape::resolve_predefined_entity;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{normalize_application_number, RawSegment, SegmentKind, SplDocument};
use crate::error::{Error, Result};

struct SectionFrame {
    code: Option<String>,
}

struct OpenSegment {
    kind: SegmentKind,
    text: String,
    depth: usize,
    /// Set when this is the heading `<title>` of a section; the heading is not
    /// part of that section's own segment list.
    heading_of: Option<usize>,
}

#[derive(Default)]
struct Builder {
    set_id: Option<String>,
    version: Option<u32>,
    application_number: Option<String>,
    sections: Vec<SectionFrame>,
    segments: Vec<OpenSegment>,
    doc: Option<SplDocument>,
}

impl Builder {
    fn doc(&mut self) -> &mut SplDocument {
        self.doc.get_or_insert_with(|| SplDocument {
            set_id: String::new(),
            application_number: None,
            version: 1,
            sections: Vec::new(),
        })
    }

    fn push_text(&mut self, text: &str) {
        if let Some(open) = self.segments.last_mut() {
            open.text.push_str(text);
        }
    }

    fn emit(&mut self, kind: SegmentKind, text: &str, heading_of: Option<usize>) {
        let Some(segment) = RawSegment::new(kind, text) else {
            return;
        };
        let codes: Vec<String> = self
            .sections
            .iter()
            .enumerate()
            .filter(|(i, _)| heading_of != Some(*i))
            .filter_map(|(_, f)| f.code.clone())
            .collect();
        for code in codes {
            self.doc().section_entry(&code).push(segment.clone());
        }
    }

    /// Emit whatever the innermost open segment has accumulated so far, so that
    /// a nested segment that starts now keeps document order.
    fn flush_partial(&mut self) {
        if let Some(open) = self.segments.last_mut() {
            let text = std::mem::take(&mut open.text);
            let (kind, heading) = (open.kind, open.heading_of);
            self.emit(kind, &text, heading);
        }
    }

    fn attrs(&mut self, parent: Option<&str>, in_approval: bool, e: &BytesStart<'_>, offset: u64) -> Result<()> {
        let name = local_name(e);
        match (name.as_str(), parent) {
            ("code", Some("section")) => {
                if let Some(code) = attr(e, b"code", offset)? {
                    if let Some(frame) = self.sections.last_mut() {
                        if frame.code.is_none() {
                            self.doc().section_entry(&code);
                            self.sections.last_mut().unwrap().code = Some(code);
                        }
                    }
                }
            }
            ("setId", Some("document")) => {
                if self.set_id.is_none() {
                    self.set_id = attr(e, b"root", offset)?;
                }
            }
            ("versionNumber", Some("document")) => {
                if let Some(v) = attr(e, b"value", offset)? {
                    let v: u32 = v.trim().parse().map_err(|_| Error::Parse {
                        offset,
                        message: format!("invalid versionNumber {v:?}"),
                    })?;
                    self.version = Some(v.max(1));
                }
            }
            ("id", _) if in_approval && self.application_number.is_none() => {
                if let Some(ext) = attr(e, b"extension", offset)? {
                    self.application_number = normalize_application_number(&ext);
                }
            }
            ("br", _) => self.push_text(" "),
            _ => {}
        }
        Ok(())
    }
}

fn local_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.local_name().as_ref()).into_owned()
}

fn attr(e: &BytesStart<'_>, key: &[u8], offset: u64) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Parse {
            offset,
            message: err.to_string(),
        })?;
        if a.key.local_name().as_ref() == key {
            let v = a.unescape_value().map_err(|err| Error::Parse {
                offset,
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn segment_kind(name: &str) -> Option<SegmentKind> {
    match name {
        "title" => Some(SegmentKind::Title),
        "paragraph" => Some(SegmentKind::Paragraph),
        "item" => Some(SegmentKind::Item),
        _ => None,
    }
}

/// Parse one SPL XML document.
///
/// Every `<title>`, `<paragraph>` and `<item>` under a coded `<section>` becomes a
/// segment of that section (and of every coded ancestor section), in document
/// order. A section's own heading title is excluded from its own list. Tables
/// are skipped. Nested segments are flattened: text of the enclosing segment
/// that precedes a nested one is emitted first.
pub fn parse_spl(bytes: &[u8]) -> Result<SplDocument> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().check_end_names = true;
    let mut buf = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut skip_depth = 0usize;
    let mut b = Builder::default();

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event_into(&mut buf).map_err(|e| Error::Parse {
            offset: reader.buffer_position(),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let name = local_name(&e);
                if skip_depth > 0 || name == "table" {
                    skip_depth += 1;
                    stack.push(name);
                    buf.clear();
                    continue;
                }
                let parent = stack.last().map(String::as_str);
                let in_approval = stack.iter().any(|s| s == "approval");
                b.attrs(parent, in_approval, &e, offset)?;
                if name == "section" {
                    b.sections.push(SectionFrame { code: None });
                } else if let Some(kind) = segment_kind(&name) {
                    b.flush_partial();
                    let heading_of = (kind == SegmentKind::Title && parent == Some("section"))
                        .then(|| b.sections.len().checked_sub(1))
                        .flatten();
                    b.segments.push(OpenSegment {
                        kind,
                        text: String::new(),
                        depth: stack.len(),
                        heading_of,
                    });
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                if skip_depth == 0 {
                    let parent = stack.last().map(String::as_str);
                    let in_approval = stack.iter().any(|s| s == "approval");
                    b.attrs(parent, in_approval, &e, offset)?;
                }
            }
            Event::End(_) => {
                let name = stack.pop().ok_or_else(|| Error::Parse {
                    offset,
                    message: "unexpected closing tag".into(),
                })?;
                if skip_depth > 0 {
                    skip_depth -= 1;
                } else if name == "section" {
                    b.sections.pop();
                } else if segment_kind(&name).is_some()
                    && b.segments.last().is_some_and(|s| s.depth == stack.len())
                {
                    let open = b.segments.pop().unwrap();
                    b.emit(open.kind, &open.text, open.heading_of);
                }
            }
            Event::Text(t) if skip_depth == 0 => {
                let text = t.decode().map_err(|e| Error::Parse {
                    offset,
                    message: e.to_string(),
                })?;
                b.push_text(&text);
            }
            Event::CData(t) if skip_depth == 0 => {
                let text = String::from_utf8_lossy(&t).into_owned();
                b.push_text(&text);
            }
            Event::GeneralRef(r) if skip_depth == 0 => {
                let resolved = match r.resolve_char_ref() {
                    Ok(Some(ch)) => ch.to_string(),
                    Ok(None) => {
                        let name = r.decode().map_err(|e| Error::Parse {
                            offset,
                            message: e.to_string(),
                        })?;
                        match resolve_predefined_entity(&name) {
                            Some(s) => s.to_string(),
                            None => format!("&{name};"),
                        }
                    }
                    Err(e) => {
                        return Err(Error::Parse {
                            offset,
                            message: e.to_string(),
                        })
                    }
                };
                b.push_text(&resolved);
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    if let Some(open) = stack.last() {
        return Err(Error::Parse {
            offset: reader.buffer_position(),
            message: format!("unexpected end of input inside <{open}>"),
        });
    }
    let set_id = b.set_id.clone().ok_or_else(|| Error::Parse {
        offset: reader.buffer_position(),
        message: "missing document id (setId root)".into(),
    })?;
    let version = b.version.unwrap_or(1);
    let application_number = b.application_number.clone();
    let mut doc = b.doc.take().unwrap_or(SplDocument {
        set_id: String::new(),
        application_number: None,
        version: 1,
        sections: Vec::new(),
    });
    doc.set_id = set_id;
    doc.version = version;
    doc.application_number = application_number;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spl::{extract_pk_section, PK_LOINC};

    fn wrap(body: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<document xmlns="urn:hl7-org:v3">
  <setId root="set-1"/>
  <versionNumber value="3"/>
  {body}
</document>"#
        )
    }

    #[test]
    fn reads_identifiers() {
        let xml = wrap(
            r#"<subjectOf><approval><id extension="NDA208400" root="2.16.840.1.113883.3.150"/></approval></subjectOf>"#,
        );
        let doc = parse_spl(xml.as_bytes()).unwrap();
        assert_eq!(doc.set_id, "set-1");
        assert_eq!(doc.version, 3);
        assert_eq!(doc.application_number.as_deref(), Some("NDA208400"));
        assert!(!doc.has_section(PK_LOINC));
    }

    #[test]
    fn nested_items_flatten_in_order() {
        let xml = wrap(
            r#"<section><code code="43682-4"/><title>12.3 Pharmacokinetics</title><text>
              <list><item>outer one<list><item>inner a.</item><item>inner b.</item></list>tail.</item>
              <item>outer two.</item></list></text></section>"#,
        );
        let doc = parse_spl(xml.as_bytes()).unwrap();
        let texts: Vec<_> = extract_pk_section(&doc).into_iter().map(|s| s.text).collect();
        assert_eq!(texts, ["outer one", "inner a.", "inner b.", "tail.", "outer two."]);
    }

    #[test]
    fn inline_markup_and_entities() {
        let xml = wrap(
            r#"<section><code code="43682-4"/><text><paragraph><content styleCode="bold">Distribution</content>:
               Protein binding &lt; 10&#37; &amp; low.</paragraph></text></section>"#,
        );
        let doc = parse_spl(xml.as_bytes()).unwrap();
        assert_eq!(
            extract_pk_section(&doc)[0].text,
            "Distribution: Protein binding < 10% & low."
        );
    }

    #[test]
    fn tables_are_skipped() {
        let xml = wrap(
            r#"<section><code code="43682-4"/><text><paragraph>Before.</paragraph>
               <table><tbody><tr><td><paragraph>cell</paragraph></td></tr></tbody></table>
               <paragraph>After.</paragraph></text></section>"#,
        );
        let doc = parse_spl(xml.as_bytes()).unwrap();
        let texts: Vec<_> = extract_pk_section(&doc).into_iter().map(|s| s.text).collect();
        assert_eq!(texts, ["Before.", "After."]);
    }

    #[test]
    fn malformed_xml_reports_position() {
        let xml = wrap("<section><code code=\"43682-4\"/><paragraph>x</section>");
        match parse_spl(xml.as_bytes()) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_spl(b"<document><setId root=\"a\"/>"), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_document_id() {
        let err = parse_spl(b"<document><versionNumber value=\"1\"/></document>").unwrap_err();
        assert!(err.to_string().contains("missing document id"));
    }
}
