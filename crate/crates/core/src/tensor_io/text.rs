//! Caption tables: UTF-8 TSV, one `id<TAB>text` record per line.

use std::path::Path;

use super::IoError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionEntry {
    pub id: u64,
    pub text: String,
}

/// Ordered captions with unique, strictly increasing ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CaptionTable {
    entries: Vec<CaptionEntry>,
}

impl CaptionTable {
    pub fn new(entries: Vec<CaptionEntry>) -> Result<Self, IoError> {
        for (i, e) in entries.iter().enumerate() {
            if e.text.trim().is_empty() {
                return Err(IoError::EmptyCaption { line: i + 1 });
            }
            if e.text.contains(['\t', '\n', '\r']) {
                return Err(IoError::CaptionControlChar { line: i + 1 });
            }
            if i > 0 && entries[i - 1].id >= e.id {
                return Err(IoError::CaptionOrder {
                    line: i + 1,
                    id: e.id,
                });
            }
        }
        Ok(Self { entries })
    }

    /// Numbers `texts` 0, 1, 2, ...
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Result<Self, IoError> {
        Self::new(
            texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| CaptionEntry {
                    id: i as u64,
                    text: t.into(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[CaptionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pos: usize) -> &CaptionEntry {
        &self.entries[pos]
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut entries = Vec::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            let lineno = i + 1;
            let (id, caption) = line
                .split_once('\t')
                .ok_or(IoError::MalformedLine {
                    line: lineno,
                    reason: "expected id<TAB>text".into(),
                })?;
            let id: u64 = id.parse().map_err(|_| IoError::MalformedLine {
                line: lineno,
                reason: format!("bad id {id:?}"),
            })?;
            entries.push(CaptionEntry {
                id,
                text: caption.to_string(),
            });
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.id.to_string());
            out.push('\t');
            out.push_str(&e.text);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
