//! Whitespace-token chunking and corpus directory loading.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingVector;

pub const DEFAULT_TARGET_TOKENS: usize = 1200;
pub const DEFAULT_OVERLAP_TOKENS: usize = 100;
/// Window size of the flat chunk store used by the flat-chunk baseline.
pub const FLAT_CHUNK_TOKENS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    pub ordinal: usize,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("target_tokens ({target}) must exceed overlap_tokens ({overlap})")]
    Window { target: usize, overlap: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chunked {
    pub chunks: Vec<Chunk>,
    pub warnings: Vec<String>,
}

/// Splits each document into windows of `target_tokens` whitespace tokens,
/// carrying `overlap_tokens` from one window into the next. The last window
/// of a document may be short. Empty documents are skipped with a warning.
pub fn chunk_corpus(
    documents: &[(String, String)],
    target_tokens: usize,
    overlap_tokens: usize,
) -> Result<Chunked, ChunkError> {
    if target_tokens <= overlap_tokens {
        return Err(ChunkError::Window {
            target: target_tokens,
            overlap: overlap_tokens,
        });
    }
    let mut out = Chunked::default();
    for (doc_id, text) in documents {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            out.warnings.push(format!("document {doc_id} is empty; skipped"));
            continue;
        }
        let mut start = 0;
        let mut ordinal = 0;
        loop {
            let end = (start + target_tokens).min(tokens.len());
            out.chunks.push(Chunk {
                id: format!("{doc_id}#{ordinal}"),
                document_id: doc_id.clone(),
                ordinal,
                body: tokens[start..end].join(" "),
                embedding: None,
            });
            if end == tokens.len() {
                break;
            }
            ordinal += 1;
            start = end - overlap_tokens;
        }
    }
    Ok(out)
}

/// Reads every `.txt` / `.md` file under `root`, recursively. The document id
/// is the `/`-separated path relative to `root`; results are sorted by id.
pub fn load_corpus_dir(root: &Path) -> Result<Vec<(String, String)>, ChunkError> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|(id, path)| {
            fs::read_to_string(&path)
                .map(|text| (id, text))
                .map_err(|source| ChunkError::Io { path, source })
        })
        .collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<(), ChunkError> {
    let io_err = |source| ChunkError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt") | Some("md") | Some("markdown")
        ) {
            let rel = path.strip_prefix(root).expect("walked from root");
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push((id, path));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> String {
        (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn under_length_document() {
        let out = chunk_corpus(&[("d".into(), doc(10))], 20, 5).unwrap();
        assert_eq!(out.chunks.len(), 1);
        assert_eq!(out.chunks[0].body, doc(10));
        assert_eq!(out.chunks[0].id, "d#0");
    }

    #[test]
    fn overlapping_windows() {
        let out = chunk_corpus(&[("d".into(), doc(30))], 20, 5).unwrap();
        let bodies: Vec<&str> = out.chunks.iter().map(|c| c.body.as_str()).collect();
        let expect_a = (0..20).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let expect_b = (15..30).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(bodies, vec![expect_a.as_str(), expect_b.as_str()]);
        assert_eq!(out.chunks[1].ordinal, 1);
    }

    #[test]
    fn window_arithmetic_matches_oracle() {
        for n in 1..120 {
            for (target, overlap) in [(20, 5), (7, 0), (10, 9), (3, 1)] {
                let out = chunk_corpus(&[("d".into(), doc(n))], target, overlap).unwrap();
                // oracle: start_k = k * (target - overlap) until a window reaches n
                let mut expect = Vec::new();
                let mut k = 0;
                loop {
                    let s = k * (target - overlap);
                    let e = (s + target).min(n);
                    expect.push((s, e));
                    if e == n {
                        break;
                    }
                    k += 1;
                }
                let got: Vec<String> = out.chunks.iter().map(|c| c.body.clone()).collect();
                let want: Vec<String> = expect
                    .iter()
                    .map(|&(s, e)| (s..e).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" "))
                    .collect();
                assert_eq!(got, want, "n={n} target={target} overlap={overlap}");
            }
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(chunk_corpus(&[], 20, 5).unwrap().chunks.is_empty());
        let out = chunk_corpus(&[("e".into(), "  \n ".into())], 20, 5).unwrap();
        assert!(out.chunks.is_empty());
        assert_eq!(out.warnings.len(), 1);
        assert!(matches!(chunk_corpus(&[], 5, 5), Err(ChunkError::Window { .. })));
    }

    #[test]
    fn corpus_dir_ids_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("b.md"), "beta").unwrap();
        fs::write(dir.path().join("sub/a.txt"), "alpha").unwrap();
        fs::write(dir.path().join("skip.pdf"), "binary").unwrap();
        let docs = load_corpus_dir(dir.path()).unwrap();
        assert_eq!(
            docs,
            vec![("b.md".to_string(), "beta".to_string()), ("sub/a.txt".to_string(), "alpha".to_string())]
        );
    }
}
