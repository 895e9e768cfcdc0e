use std::collections::{BTreeMap, HashMap, HashSet};

use super::{extract_pk_section, LabelIndexEntry, SplDocument};

/// Select the labels that enter the corpus.
///
/// Keeps NDA-numbered labels only, keeps the highest `version` per application
/// number, and drops labels whose pharmacokinetics section is missing or empty.
/// The application number on the parsed document wins; the index entry's is a
/// fallback. Output is ordered by application number.
pub fn select_labels(
    entries: &[LabelIndexEntry],
    docs: &HashMap<String, SplDocument>,
) -> Vec<SplDocument> {
    let mut best: BTreeMap<String, &SplDocument> = BTreeMap::new();
    let mut seen = HashSet::new();

    for entry in entries {
        if !seen.insert(entry.set_id.as_str()) {
            continue;
        }
        let Some(doc) = docs.get(&entry.set_id) else {
            continue;
        };
        let Some(app) = doc
            .application_number
            .clone()
            .or_else(|| entry.application_number.clone())
        else {
            continue;
        };
        if !app.starts_with("NDA") || extract_pk_section(doc).is_empty() {
            continue;
        }
        let replace = match best.get(&app) {
            None => true,
            Some(cur) => (doc.version, &doc.set_id) > (cur.version, &cur.set_id),
        };
        if replace {
            best.insert(app, doc);
        }
    }

    best.into_iter()
        .map(|(app, doc)| {
            let mut doc = doc.clone();
            if doc.application_number.is_none() {
                doc.application_number = Some(app);
            }
            doc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spl::{RawSegment, PK_LOINC};

    fn doc(set_id: &str, app: Option<&str>, version: u32, pk: bool) -> SplDocument {
        SplDocument {
            set_id: set_id.into(),
            application_number: app.map(Into::into),
            version,
            sections: if pk {
                vec![(PK_LOINC.into(), vec![RawSegment::paragraph("Text.")])]
            } else {
                vec![(PK_LOINC.into(), vec![])]
            },
        }
    }

    fn entry(d: &SplDocument) -> LabelIndexEntry {
        LabelIndexEntry {
            set_id: d.set_id.clone(),
            application_number: d.application_number.clone(),
            version: d.version,
            published: String::new(),
        }
    }

    fn run(docs: Vec<SplDocument>) -> Vec<SplDocument> {
        let entries: Vec<_> = docs.iter().map(entry).collect();
        let map = docs.into_iter().map(|d| (d.set_id.clone(), d)).collect();
        select_labels(&entries, &map)
    }

    #[test]
    fn latest_version_wins() {
        let out = run(vec![
            doc("a", Some("NDA017963"), 3, true),
            doc("b", Some("NDA017963"), 7, true),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].version, 7);
    }

    #[test]
    fn non_nda_and_empty_pk_dropped() {
        let out = run(vec![
            doc("a", Some("ANDA076543"), 1, true),
            doc("b", Some("NDA020000"), 1, false),
            doc("c", None, 1, true),
            doc("d", Some("NDA021111"), 2, true),
        ]);
        let ids: Vec<_> = out.iter().map(|d| d.set_id.as_str()).collect();
        assert_eq!(ids, ["d"]);
    }

    #[test]
    fn idempotent() {
        let once = run(vec![
            doc("a", Some("NDA1"), 1, true),
            doc("b", Some("NDA1"), 4, true),
            doc("c", Some("NDA2"), 2, true),
            doc("d", Some("BLA3"), 2, true),
        ]);
        let twice = run(once.clone());
        assert_eq!(once, twice);
        let apps: HashSet<_> = once.iter().map(|d| d.application_number.clone()).collect();
        assert_eq!(apps.len(), once.len());
    }
}
