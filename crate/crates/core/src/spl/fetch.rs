//! Label index access. The index is paged; pages come either from an HTTP
//! endpoint (DailyMed `spls.json` shape) or from a local file with one page
//! payload per line.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelIndexEntry {
    #[serde(alias = "setid")]
    pub set_id: String,
    #[serde(default)]
    pub application_number: Option<String>,
    #[serde(alias = "spl_version")]
    pub version: u32,
    #[serde(default, alias = "published_date")]
    pub published: String,
}

#[derive(Debug, Deserialize)]
struct PageMetadata {
    #[serde(default)]
    total_pages: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct RawPage {
    #[serde(default)]
    metadata: Option<PageMetadata>,
    data: Vec<LabelIndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPage {
    pub entries: Vec<LabelIndexEntry>,
    pub total_pages: Option<usize>,
}

/// Parse one index page payload. Errors carry the byte offset of the problem.
pub fn parse_index_page(payload: &[u8]) -> Result<IndexPage> {
    let raw: RawPage = serde_json::from_slice(payload).map_err(|e| Error::Parse {
        offset: byte_offset(payload, e.line(), e.column()),
        message: format!("malformed index payload: {e}"),
    })?;
    for entry in &raw.data {
        if entry.version < 1 {
            return Err(Error::Validation {
                line: None,
                message: format!("index entry {} has version 0", entry.set_id),
            });
        }
    }
    Ok(IndexPage {
        entries: raw.data,
        total_pages: raw.metadata.and_then(|m| m.total_pages),
    })
}

fn byte_offset(payload: &[u8], line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let line_start: usize = payload
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)) as u64
}

/// A source of index pages (1-based page numbers).
pub trait IndexSource: Sync {
    fn fetch_page(&self, page: usize, page_size: usize) -> Result<Vec<u8>>;

    /// Number of pages known up front, for sources that do not report it in the payload.
    fn page_count_hint(&self) -> Option<usize> {
        None
    }

    /// Fetch one SPL document by set id.
    fn fetch_document(&self, set_id: &str) -> Result<Vec<u8>>;
}

#[derive(Clone, Debug)]
pub struct FetchOptions {
    pub page_limit: Option<usize>,
    pub page_size: usize,
    /// Extra attempts per page after the first failure.
    pub retries: usize,
    /// Ceiling on concurrent page requests.
    pub max_parallel: usize,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            page_limit: None,
            page_size: 100,
            retries: 3,
            max_parallel: 4,
        }
    }
}

fn fetch_with_retry(source: &dyn IndexSource, page: usize, opts: &FetchOptions) -> Result<IndexPage> {
    let mut last = None;
    for _ in 0..=opts.retries {
        match source.fetch_page(page, opts.page_size) {
            Ok(bytes) => return parse_index_page(&bytes),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Ingest {
        cursor: page,
        message: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

/// Fetch the label index: page 1 first, then the remaining pages (up to
/// `page_limit`) with at most `max_parallel` requests in flight. Entries are
/// returned in page order; exact (set_id, version) duplicates are dropped but
/// different versions of one set_id are all kept.
pub fn fetch_label_index(source: &dyn IndexSource, opts: &FetchOptions) -> Result<Vec<LabelIndexEntry>> {
    if opts.page_limit == Some(0) {
        return Ok(Vec::new());
    }
    let first = fetch_with_retry(source, 1, opts)?;
    let total = first
        .total_pages
        .or_else(|| source.page_count_hint())
        .unwrap_or(1);
    let last_page = opts.page_limit.map_or(total, |l| l.min(total));

    let mut pages = vec![first];
    let rest: Vec<usize> = (2..=last_page).collect();
    for chunk in rest.chunks(opts.max_parallel.max(1)) {
        let fetched: Vec<Result<IndexPage>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&p| scope.spawn(move || fetch_with_retry(source, p, opts)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch thread panicked"))
                .collect()
        });
        for page in fetched {
            pages.push(page?);
        }
    }

    let mut seen = std::collections::HashSet::new();
    Ok(pages
        .into_iter()
        .flat_map(|p| p.entries)
        .filter(|e| seen.insert((e.set_id.clone(), e.version)))
        .collect())
}

/// Index pages stored one JSON payload per line; documents looked up as
/// `<doc_dir>/<set_id>.xml`.
pub struct LocalIndexSource {
    pages: Vec<Vec<u8>>,
    doc_dir: Option<PathBuf>,
}

impl LocalIndexSource {
    pub fn open(index: &Path, doc_dir: Option<PathBuf>) -> Result<Self> {
        let bytes = std::fs::read(index).map_err(|e| Error::io(index, e))?;
        let pages = bytes
            .split(|&b| b == b'\n')
            .filter(|l| l.iter().any(|b| !b.is_ascii_whitespace()))
            .map(<[u8]>::to_vec)
            .collect();
        Ok(LocalIndexSource { pages, doc_dir })
    }
}

impl IndexSource for LocalIndexSource {
    fn fetch_page(&self, page: usize, _page_size: usize) -> Result<Vec<u8>> {
        self.pages.get(page.wrapping_sub(1)).cloned().ok_or(Error::Ingest {
            cursor: page,
            message: "page out of range".into(),
        })
    }

    fn page_count_hint(&self) -> Option<usize> {
        Some(self.pages.len())
    }

    fn fetch_document(&self, set_id: &str) -> Result<Vec<u8>> {
        let dir = self
            .doc_dir
            .as_ref()
            .ok_or_else(|| Error::Config("no document directory configured".into()))?;
        let path = dir.join(format!("{set_id}.xml"));
        std::fs::read(&path).map_err(|e| Error::io(path, e))
    }
}

/// HTTP index endpoint. `endpoint` is the paged listing URL; `document_url`
/// contains a `{set_id}` placeholder.
pub struct HttpIndexSource {
    agent: ureq::Agent,
    endpoint: String,
    document_url: String,
}

impl HttpIndexSource {
    pub const DAILYMED_INDEX: &'static str = "https://dailymed.nlm.nih.gov/dailymed/services/v2/spls.json";
    pub const DAILYMED_DOCUMENT: &'static str =
        "https://dailymed.nlm.nih.gov/dailymed/services/v2/spls/{set_id}.xml";

    pub fn new(endpoint: impl Into<String>, document_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpIndexSource {
            agent,
            endpoint: endpoint.into(),
            document_url: document_url.into(),
        }
    }

    fn get(&self, url: &str, cursor: usize) -> Result<Vec<u8>> {
        let to_err = |e: ureq::Error| Error::Ingest {
            cursor,
            message: format!("{url}: {e}"),
        };
        let mut resp = self.agent.get(url).call().map_err(to_err)?;
        resp.body_mut().read_to_vec().map_err(to_err)
    }
}

impl IndexSource for HttpIndexSource {
    fn fetch_page(&self, page: usize, page_size: usize) -> Result<Vec<u8>> {
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        let url = format!("{}{sep}page={page}&pagesize={page_size}", self.endpoint);
        self.get(&url, page)
    }

    fn fetch_document(&self, set_id: &str) -> Result<Vec<u8>> {
        let url = self.document_url.replace("{set_id}", set_id);
        self.get(&url, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn page(entries: &[(&str, u32)], total: usize) -> Vec<u8> {
        let data: Vec<_> = entries
            .iter()
            .map(|(s, v)| serde_json::json!({"setid": s, "spl_version": v, "published_date": "Aug 18, 2021"}))
            .collect();
        serde_json::to_vec(&serde_json::json!({"metadata": {"total_pages": total}, "data": data})).unwrap()
    }

    struct Pages {
        pages: Vec<Vec<u8>>,
        failures_before_success: usize,
        calls: AtomicUsize,
    }

    impl IndexSource for Pages {
        fn fetch_page(&self, page: usize, _: usize) -> Result<Vec<u8>> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                return Err(Error::Ingest {
                    cursor: page,
                    message: "connection reset".into(),
                });
            }
            Ok(self.pages[page - 1].clone())
        }
        fn fetch_document(&self, _: &str) -> Result<Vec<u8>> {
            unreachable!()
        }
    }

    fn source(pages: Vec<Vec<u8>>, failures: usize) -> Pages {
        Pages {
            pages,
            failures_before_success: failures,
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn page_limit_and_duplicates() {
        let src = source(vec![page(&[("a", 2), ("a", 5)], 2), page(&[("b", 1)], 2)], 0);
        let all = fetch_label_index(&src, &FetchOptions::default()).unwrap();
        assert_eq!(all.len(), 3);
        let opts = FetchOptions {
            page_limit: Some(1),
            ..Default::default()
        };
        assert_eq!(fetch_label_index(&src, &opts).unwrap().len(), 2);
    }

    #[test]
    fn retries_then_reports_cursor() {
        let src = source(vec![page(&[("a", 1)], 1)], 2);
        assert_eq!(fetch_label_index(&src, &FetchOptions::default()).unwrap().len(), 1);

        let src = source(vec![page(&[("a", 1)], 1)], 10);
        let opts = FetchOptions {
            retries: 2,
            ..Default::default()
        };
        match fetch_label_index(&src, &opts) {
            Err(Error::Ingest { cursor, .. }) => assert_eq!(cursor, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(src.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_payload_offset() {
        let payload = b"{\"data\": [\n  {\"setid\": 12}]}";
        match parse_index_page(payload) {
            Err(Error::Parse { offset, .. }) => assert!(offset >= 11 && offset < payload.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }
}
