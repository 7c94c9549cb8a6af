//! On-disk index layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/concept/{entities,edges,chunks}.jsonl
//! <dir>/instance/{entities,edges,chunks}.jsonl
//! ```
//!
//! Every JSONL file holds one record per line, sorted by id. The manifest
//! records a SHA-256 digest of each data file; the digest of `manifest.json`
//! itself identifies the index.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunk::Chunk;
use crate::hypergraph::{Entity, GraphError, Hyperedge, Hypergraph, Layer};
use crate::pipeline::Graphs;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const DATA_FILES: [&str; 3] = ["entities.jsonl", "edges.jsonl", "chunks.jsonl"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path} line {line}: edge {edge} references unknown entity {entity}")]
    Dangling {
        path: PathBuf,
        line: usize,
        edge: String,
        entity: String,
    },
    #[error("{layer} graph: {source}")]
    Graph {
        layer: Layer,
        #[source]
        source: GraphError,
    },
    #[error("{file}: digest {actual} does not match manifest ({expected})")]
    DigestMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("unsupported index format version {0}")]
    Version(u32),
    #[error("refusing to replace {0}: it exists and is not an index directory")]
    NotAnIndex(PathBuf),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub entities: usize,
    pub edges: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub engine_version: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch at build time.
    pub built_at: u64,
    /// SHA-256 of each input corpus file, keyed by path as given to the build.
    pub corpus_digests: BTreeMap<String, String>,
    pub concept: LayerCounts,
    pub instance: LayerCounts,
    /// SHA-256 of each data file, keyed by path relative to the index root.
    /// Filled in by [`save_index`].
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config_hash: impl Into<String>, built_at: u64) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            built_at,
            corpus_digests: BTreeMap::new(),
            concept: LayerCounts::default(),
            instance: LayerCounts::default(),
            files: BTreeMap::new(),
        }
    }

    /// Returns a warning when the index was built under a different config.
    pub fn compatibility_warning(&self, config_hash: &str) -> Option<String> {
        (self.config_hash != config_hash).then(|| {
            format!(
                "index was built with config {} but the current config hashes to {}; retrieval may be inconsistent",
                self.config_hash, config_hash
            )
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexBundle {
    pub concept_graph: Hypergraph,
    pub instance_graph: Hypergraph,
    pub concept_chunks: Vec<Chunk>,
    pub instance_chunks: Vec<Chunk>,
    /// Flat chunk store: concept chunks followed by instance chunks.
    chunk_store: Vec<Chunk>,
    pub manifest: Manifest,
}

impl IndexBundle {
    pub fn new(
        concept_graph: Hypergraph,
        instance_graph: Hypergraph,
        mut concept_chunks: Vec<Chunk>,
        mut instance_chunks: Vec<Chunk>,
        mut manifest: Manifest,
    ) -> Self {
        concept_chunks.sort_by(|a, b| a.id.cmp(&b.id));
        instance_chunks.sort_by(|a, b| a.id.cmp(&b.id));
        manifest.concept = LayerCounts {
            entities: concept_graph.entity_count(),
            edges: concept_graph.edge_count(),
            chunks: concept_chunks.len(),
        };
        manifest.instance = LayerCounts {
            entities: instance_graph.entity_count(),
            edges: instance_graph.edge_count(),
            chunks: instance_chunks.len(),
        };
        let chunk_store = concept_chunks.iter().chain(&instance_chunks).cloned().collect();
        IndexBundle {
            concept_graph,
            instance_graph,
            concept_chunks,
            instance_chunks,
            chunk_store,
            manifest,
        }
    }

    pub fn chunk_store(&self) -> &[Chunk] {
        &self.chunk_store
    }

    pub fn graphs(&self) -> Graphs<'_> {
        Graphs {
            concept: Some(&self.concept_graph),
            instance: Some(&self.instance_graph),
            chunks: &self.chunk_store,
        }
    }
}

fn jsonl<T: Serialize>(records: impl Iterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r).expect("index records serialize");
        out.push(b'\n');
    }
    out
}

fn layer_dir(layer: Layer) -> &'static str {
    match layer {
        Layer::Concept => "concept",
        Layer::Instance => "instance",
    }
}

fn layer_files(graph: &Hypergraph, chunks: &[Chunk]) -> [Vec<u8>; 3] {
    [jsonl(graph.entities()), jsonl(graph.edges()), jsonl(chunks.iter())]
}

/// Serializes the bundle to bytes keyed by relative path, manifest last.
fn render_bundle(bundle: &IndexBundle) -> (Vec<(String, Vec<u8>)>, String) {
    let mut files = Vec::new();
    let layers = [
        (Layer::Concept, &bundle.concept_graph, &bundle.concept_chunks),
        (Layer::Instance, &bundle.instance_graph, &bundle.instance_chunks),
    ];
    for (layer, graph, chunks) in layers {
        for (name, bytes) in DATA_FILES.iter().zip(layer_files(graph, chunks)) {
            files.push((format!("{}/{}", layer_dir(layer), name), bytes));
        }
    }
    let mut manifest = bundle.manifest.clone();
    manifest.files = files.iter().map(|(p, b)| (p.clone(), sha256_hex(b))).collect();
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    let digest = sha256_hex(&bytes);
    files.push((MANIFEST_FILE.to_string(), bytes));
    (files, digest)
}

/// Writes the bundle to `dir`, replacing any previous index there. Output is
/// written to a sibling temporary directory first and renamed into place, so
/// a failed save leaves no partial index behind. Returns the SHA-256 of
/// `manifest.json`.
pub fn save_index(bundle: &IndexBundle, dir: &Path) -> Result<String, StoreError> {
    if dir.exists() {
        let empty = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_none();
        if !empty && !dir.join(MANIFEST_FILE).is_file() {
            return Err(StoreError::NotAnIndex(dir.to_path_buf()));
        }
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "index".into());
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    let (files, digest) = render_bundle(bundle);

    let write_all = || -> Result<(), StoreError> {
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        for sub in ["concept", "instance"] {
            let d = tmp.join(sub);
            fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        }
        for (rel, bytes) in &files {
            let p = tmp.join(rel);
            fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| io_err(dir, e))
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    Ok(digest)
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn load_layer(dir: &Path, layer: Layer) -> Result<(Hypergraph, Vec<Chunk>), StoreError> {
    let base = dir.join(layer_dir(layer));
    let entities: Vec<(usize, Entity)> = read_lines(&base.join("entities.jsonl"))?;
    let edges_path = base.join("edges.jsonl");
    let edges: Vec<(usize, Hyperedge)> = read_lines(&edges_path)?;
    let chunks: Vec<(usize, Chunk)> = read_lines(&base.join("chunks.jsonl"))?;

    let known: BTreeSet<&str> = entities.iter().map(|(_, e)| e.id.as_str()).collect();
    for (line, edge) in &edges {
        if let Some(m) = edge.members.iter().find(|m| !known.contains(m.as_str())) {
            return Err(StoreError::Dangling {
                path: edges_path.clone(),
                line: *line,
                edge: edge.id.to_string(),
                entity: m.to_string(),
            });
        }
    }
    let graph = Hypergraph::from_parts(
        layer,
        entities.into_iter().map(|(_, e)| e).collect(),
        edges.into_iter().map(|(_, e)| e).collect(),
    )
    .map_err(|source| StoreError::Graph { layer, source })?;
    Ok((graph, chunks.into_iter().map(|(_, c)| c).collect()))
}

/// Reads an index written by [`save_index`]. Both graphs are rebuilt and
/// checked; data files must match the digests recorded in the manifest.
pub fn load_index(dir: &Path) -> Result<IndexBundle, StoreError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_text).map_err(|e| StoreError::Corrupt {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::Version(manifest.format_version));
    }
    let (concept_graph, concept_chunks) = load_layer(dir, Layer::Concept)?;
    let (instance_graph, instance_chunks) = load_layer(dir, Layer::Instance)?;
    for (rel, expected) in &manifest.files {
        let p = dir.join(rel);
        let actual = sha256_hex(&fs::read(&p).map_err(|e| io_err(&p, e))?);
        if &actual != expected {
            return Err(StoreError::DigestMismatch {
                file: rel.clone(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(IndexBundle::new(
        concept_graph,
        instance_graph,
        concept_chunks,
        instance_chunks,
        manifest,
    ))
}

/// SHA-256 of the `manifest.json` in `dir`.
pub fn manifest_digest(dir: &Path) -> Result<String, StoreError> {
    let p = dir.join(MANIFEST_FILE);
    Ok(sha256_hex(&fs::read(&p).map_err(|e| io_err(&p, e))?))
}
