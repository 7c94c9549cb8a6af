//! Engine configuration, provider wiring, and index builds.
//!
//! The config file is a single flat JSON object. Nested settings use dotted
//! keys, for example:
//!
//! ```json
//! {
//!   "completion.mode": "remote",
//!   "completion.endpoint_url": "https://api.openai.com/v1",
//!   "embedding.mode": "local-hash",
//!   "retrieval.alpha": 0.7,
//!   "templates.stage1": "prompts/stage1.txt",
//!   "schema_path": "schema.json"
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chunk::{chunk_corpus, load_corpus_dir, Chunk, ChunkError, DEFAULT_OVERLAP_TOKENS, DEFAULT_TARGET_TOKENS, FLAT_CHUNK_TOKENS};
use crate::concept::{build_concept_hypergraph, BuildReport, ConceptError, Extractor};
use crate::eval::Judge;
use crate::gateway::{CompletionProvider, Embedder, Gateway, GatewayError, ProviderConfig, ProviderMode};
use crate::instance::{build_instance_hypergraph, pack_case, parse_cases, FieldSchema, InstanceError, ParseReport};
use crate::pipeline::{GenerationConfig, Pipeline};
use crate::prompts::PromptTemplates;
use crate::retrieval::{KeywordExtractor, RetrievalConfig};
use crate::store::{sha256_hex, IndexBundle, Manifest};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub target_tokens: usize,
    pub overlap_tokens: usize,
    /// Window size for the flat chunk store; flat chunks do not overlap.
    pub flat_chunk_tokens: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            target_tokens: DEFAULT_TARGET_TOKENS,
            overlap_tokens: DEFAULT_OVERLAP_TOKENS,
            flat_chunk_tokens: FLAT_CHUNK_TOKENS,
        }
    }
}

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub completion: ProviderConfig,
    pub embedding: ProviderConfig,
    pub judge: ProviderConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
    pub chunking: ChunkingConfig,
    pub schema_path: Option<PathBuf>,
    pub stopwords_path: Option<PathBuf>,
    pub templates: BTreeMap<String, PathBuf>,
    pub max_in_flight: usize,
    pub eval_concurrency: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            completion: ProviderConfig::remote(DEFAULT_ENDPOINT),
            embedding: ProviderConfig::local_hash(crate::gateway::DEFAULT_EMBEDDING_DIMENSION),
            judge: ProviderConfig::remote(DEFAULT_ENDPOINT),
            retrieval: RetrievalConfig::default(),
            generation: GenerationConfig::default(),
            chunking: ChunkingConfig::default(),
            schema_path: None,
            stopwords_path: None,
            templates: BTreeMap::new(),
            max_in_flight: Gateway::DEFAULT_MAX_IN_FLIGHT,
            eval_concurrency: Gateway::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Expands `a.b` keys into nested objects.
fn unflatten(flat: Map<String, Value>) -> Result<Value, String> {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("split yields at least one part");
        let mut node = &mut root;
        for p in parts {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| format!("key {key:?} conflicts with scalar {p:?}"))?;
        }
        if node.insert(last.to_string(), value).is_some() {
            return Err(format!("duplicate key {key:?}"));
        }
    }
    Ok(Value::Object(root))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, String> {
        let flat: Map<String, Value> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut cfg: EngineConfig = serde_json::from_value(unflatten(flat)?).map_err(|e| e.to_string())?;
        for p in [&mut cfg.completion, &mut cfg.embedding, &mut cfg.judge] {
            if let Some(f) = p.fixture_path.as_mut() {
                resolve(base_dir, f);
            }
        }
        for p in [cfg.schema_path.as_mut(), cfg.stopwords_path.as_mut()].into_iter().flatten() {
            resolve(base_dir, p);
        }
        for p in cfg.templates.values_mut() {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(|e| EngineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_json_str(&text, base).map_err(|message| EngineError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), EngineError> {
        self.retrieval.validate().map_err(EngineError::Invalid)?;
        let c = &self.chunking;
        if c.target_tokens <= c.overlap_tokens {
            return Err(EngineError::Invalid("chunking.target_tokens must exceed chunking.overlap_tokens".into()));
        }
        if c.flat_chunk_tokens == 0 {
            return Err(EngineError::Invalid("chunking.flat_chunk_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.generation.temperature) {
            return Err(EngineError::Invalid("generation.temperature must be in [0, 2]".into()));
        }
        if self.generation.max_output_tokens == 0 || self.max_in_flight == 0 || self.eval_concurrency == 0 {
            return Err(EngineError::Invalid(
                "generation.max_output_tokens, max_in_flight and eval_concurrency must be positive".into(),
            ));
        }
        let mut files: Vec<(&str, &PathBuf)> = Vec::new();
        for (name, p) in [("completion", &self.completion), ("embedding", &self.embedding), ("judge", &self.judge)] {
            if p.mode == ProviderMode::Scripted {
                if let Some(f) = &p.fixture_path {
                    files.push((name, f));
                }
            }
        }
        files.extend(self.schema_path.iter().map(|p| ("schema_path", p)));
        files.extend(self.stopwords_path.iter().map(|p| ("stopwords_path", p)));
        files.extend(self.templates.iter().map(|(k, p)| (k.as_str(), p)));
        for (name, p) in files {
            if !p.is_file() {
                return Err(EngineError::Invalid(format!("{name}: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Digest of the settings that shape a built index: the embedding
    /// provider, chunking, and the extraction model.
    pub fn index_hash(&self) -> String {
        let relevant = serde_json::json!({
            "embedding.mode": self.embedding.mode,
            "embedding.model_name": self.embedding.model_name,
            "embedding.embedding_dimension": self.embedding.embedding_dimension,
            "chunking": self.chunking,
            "completion.mode": self.completion.mode,
            "completion.model_name": self.completion.model_name,
        });
        sha256_hex(relevant.to_string().as_bytes())
    }

    pub fn schema(&self) -> Result<FieldSchema, EngineError> {
        match &self.schema_path {
            Some(p) => Ok(FieldSchema::load(p)?),
            None => Ok(FieldSchema::misstep_default()),
        }
    }
}

/// Providers and static resources resolved from an [`EngineConfig`].
pub struct Engine {
    pub config: EngineConfig,
    pub gateway: Gateway,
    pub completion: Arc<dyn CompletionProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub templates: PromptTemplates,
    pub keywords: KeywordExtractor,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let gateway = Gateway::new(config.max_in_flight)?;
        Self::with_gateway(config, gateway)
    }

    pub fn with_gateway(config: EngineConfig, gateway: Gateway) -> Result<Self, EngineError> {
        Self::with_providers(config.clone(), gateway.completion(&config.completion)?, gateway.embedder(&config.embedding)?, gateway)
    }

    pub fn with_providers(
        config: EngineConfig,
        completion: Arc<dyn CompletionProvider>,
        embedder: Arc<dyn Embedder>,
        gateway: Gateway,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let templates = PromptTemplates::with_overrides(&config.templates).map_err(EngineError::Invalid)?;
        let keywords = match &config.stopwords_path {
            Some(p) => KeywordExtractor::from_file(p).map_err(|e| EngineError::Invalid(e.to_string()))?,
            None => KeywordExtractor::default(),
        };
        Ok(Engine {
            config,
            gateway,
            completion,
            embedder,
            templates,
            keywords,
        })
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        let mut p = Pipeline::new(&*self.completion, &*self.embedder, &self.keywords, &self.templates);
        p.retrieval = self.config.retrieval.clone();
        p.generation = self.config.generation.clone();
        p
    }

    pub fn judge_provider(&self) -> Result<Arc<dyn CompletionProvider>, EngineError> {
        Ok(self.gateway.completion(&self.config.judge)?)
    }

    pub fn judge<'a>(&'a self, provider: &'a dyn CompletionProvider) -> Judge<'a> {
        let mut j = Judge::new(provider, &self.templates);
        if self.config.judge.mode == ProviderMode::Remote {
            j.model_name = self.config.judge.model_name.clone();
        }
        j
    }

    pub fn extractor(&self) -> Extractor<'_> {
        Extractor::new(&*self.completion, &self.templates)
    }

    /// Builds both layers and the flat chunk store.
    pub fn build(&self, concepts_dir: &Path, cases_path: &Path, schema: &FieldSchema) -> Result<(IndexBundle, BuildSummary), EngineError> {
        let mut warnings = Vec::new();
        let documents = load_corpus_dir(concepts_dir)?;
        let chunking = &self.config.chunking;
        let chunked = chunk_corpus(&documents, chunking.target_tokens, chunking.overlap_tokens)?;
        warnings.extend(chunked.warnings);
        let (concept_graph, concept_report) = build_concept_hypergraph(&chunked.chunks, &self.extractor(), &*self.embedder)?;

        let (cases, parse_report) = parse_cases(cases_path, schema)?;
        for e in &parse_report.errors {
            warnings.push(format!("{} line {}: {}", cases_path.display(), e.line, e.message));
        }
        let instance_graph = build_instance_hypergraph(&cases, &*self.embedder)?;

        let concept_docs: Vec<(String, String)> = documents.iter().map(|(id, body)| (format!("concept/{id}"), body.clone())).collect();
        let case_docs: Vec<(String, String)> = cases.iter().map(|c| (format!("case/{}", c.case_id), pack_case(c))).collect();
        let concept_chunks = self.flat_chunks(&concept_docs, &mut warnings)?;
        let instance_chunks = self.flat_chunks(&case_docs, &mut warnings)?;

        let mut manifest = Manifest::new(self.config.index_hash(), build_timestamp());
        for (id, body) in &documents {
            manifest.corpus_digests.insert(format!("concepts/{id}"), sha256_hex(body.as_bytes()));
        }
        let cases_bytes = fs::read(cases_path).map_err(|e| EngineError::Io {
            path: cases_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cases_name = cases_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.corpus_digests.insert(format!("cases/{cases_name}"), sha256_hex(&cases_bytes));

        let bundle = IndexBundle::new(concept_graph, instance_graph, concept_chunks, instance_chunks, manifest);
        let summary = BuildSummary {
            concept: concept_report,
            cases: parse_report,
            instance_entities: bundle.instance_graph.entity_count(),
            instance_edges: bundle.instance_graph.edge_count(),
            flat_chunks: bundle.chunk_store().len(),
            warnings,
        };
        Ok((bundle, summary))
    }

    fn flat_chunks(&self, docs: &[(String, String)], warnings: &mut Vec<String>) -> Result<Vec<Chunk>, EngineError> {
        let chunked = chunk_corpus(docs, self.config.chunking.flat_chunk_tokens, 0)?;
        warnings.extend(chunked.warnings);
        let mut chunks = chunked.chunks;
        for c in &mut chunks {
            c.embedding = Some(self.embedder.embed(&c.body)?);
        }
        Ok(chunks)
    }
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
pub fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub concept: BuildReport,
    pub cases: ParseReport,
    pub instance_entities: usize,
    pub instance_edges: usize,
    pub flat_chunks: usize,
    pub warnings: Vec<String>,
}
