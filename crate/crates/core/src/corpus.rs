//! Line-delimited JSON corpus files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::annotator::LabeledParagraph;
use crate::error::{Error, Result};

/// Non-blank lines of a file, numbered from 1.
pub fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            serde_json::from_str(&line).map_err(|e| Error::Validation {
                line: Some(line_no),
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Load a labeled corpus, rejecting records with empty text.
pub fn read_corpus(path: &Path) -> Result<Vec<LabeledParagraph>> {
    let records: Vec<LabeledParagraph> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        if r.text.trim().is_empty() {
            return Err(Error::Validation {
                line: Some(i + 1),
                message: format!("record {:?} has empty text", r.id),
            });
        }
    }
    Ok(records)
}
