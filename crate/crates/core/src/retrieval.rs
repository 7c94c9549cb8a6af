//! Keyword extraction, hybrid scoring, and evidence gathering for both layers.
//!
//! Every candidate is scored as
//!
//! ```text
//! score = alpha * max(0, cosine(query, candidate)) + (1 - alpha) * jaccard(K_query, K_candidate)
//! ```
//!
//! where the keyword sets come from deterministic keyword extraction. Ranking
//! is by descending score, ties broken by ascending id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::Chunk;
use crate::gateway::{cosine, CompletionProvider, CompletionRequest, Embedder, EmbeddingVector, GatewayError};
use crate::hypergraph::{ConceptSubgraph, Entity, GraphError, Hyperedge, Hypergraph, Layer};
use crate::prompts::{render, PromptTemplates, KEYWORD_SYSTEM};
use crate::text;

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_K_INSTANCE: usize = 5;
pub const DEFAULT_K_CONCEPT: usize = 8;
pub const DEFAULT_MAX_EDGES_PER_SEED: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("expected a {expected} graph, got {got}")]
    WrongLayer { expected: Layer, got: Layer },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("stopword list {path}: {message}")]
    Stopwords { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub k_instance: usize,
    pub k_concept: usize,
    pub max_edges_per_seed: usize,
    /// Ask the completion provider for query keywords instead of the
    /// deterministic stopword filter.
    pub use_llm_keywords: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            alpha: DEFAULT_ALPHA,
            k_instance: DEFAULT_K_INSTANCE,
            k_concept: DEFAULT_K_CONCEPT,
            max_edges_per_seed: DEFAULT_MAX_EDGES_PER_SEED,
            use_llm_keywords: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.k_instance == 0 || self.k_concept == 0 || self.max_edges_per_seed == 0 {
            return Err("k_instance, k_concept and max_edges_per_seed must be at least 1".into());
        }
        Ok(())
    }
}

/// Stopword-filter keyword extraction.
#[derive(Debug, Clone)]
pub struct KeywordExtractor {
    stopwords: HashSet<String>,
}

impl Default for KeywordExtractor {
    fn default() -> Self {
        KeywordExtractor {
            stopwords: text::default_stopwords().clone(),
        }
    }
}

impl KeywordExtractor {
    /// Loads a replacement stopword list: one word per line, `#` comments.
    pub fn from_file(path: &Path) -> Result<Self, RetrievalError> {
        let body = fs::read_to_string(path).map_err(|e| RetrievalError::Stopwords {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let stopwords = body
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(text::normalize)
            .collect();
        Ok(KeywordExtractor { stopwords })
    }

    /// Normalized tokens minus stopwords, first occurrence kept. If every
    /// token is a stopword, all tokens are returned. Empty input gives an
    /// empty list.
    pub fn keywords_of(&self, input: &str) -> Vec<String> {
        let normalized = text::normalize(input);
        let mut seen = HashSet::new();
        let all: Vec<&str> = normalized
            .split_whitespace()
            .filter(|t| seen.insert(*t))
            .collect();
        let kept: Vec<String> = all
            .iter()
            .filter(|t| !self.stopwords.contains(**t))
            .map(|t| t.to_string())
            .collect();
        if kept.is_empty() {
            all.into_iter().map(str::to_string).collect()
        } else {
            kept
        }
    }

    pub fn extract(&self, query: &str) -> Result<Vec<String>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        Ok(self.keywords_of(query))
    }

    /// Keywords from a comma-separated model reply. Falls back to the
    /// deterministic list when the reply yields nothing.
    pub fn extract_llm(
        &self,
        query: &str,
        provider: &dyn CompletionProvider,
        templates: &PromptTemplates,
    ) -> Result<Vec<String>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let user = render(&templates.keywords, &[("text", query)]);
        let reply = provider.complete(&CompletionRequest::new(KEYWORD_SYSTEM, user))?;
        let parsed = parse_keyword_reply(&reply);
        if parsed.is_empty() {
            Ok(self.keywords_of(query))
        } else {
            Ok(parsed)
        }
    }
}

pub fn parse_keyword_reply(reply: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    reply
        .split([',', '\n', ';'])
        .map(text::normalize)
        .filter(|k| !k.is_empty() && seen.insert(k.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub raw_query: String,
    pub keywords: Vec<String>,
    pub query_embedding: EmbeddingVector,
}

impl QueryContext {
    /// Query keyword tokens (multi-word keywords split) as a set.
    fn keyword_tokens(&self) -> BTreeSet<String> {
        self.keywords
            .iter()
            .flat_map(|k| text::normalize(k).split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitScore {
    pub score: f64,
    pub embedding_component: f64,
    pub lexical_component: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub target_id: String,
    pub score: f64,
    pub embedding_component: f64,
    pub lexical_component: f64,
}

impl ScoredHit {
    fn new(target_id: String, s: HitScore) -> Self {
        ScoredHit {
            target_id,
            score: s.score,
            embedding_component: s.embedding_component,
            lexical_component: s.lexical_component,
        }
    }
}

/// Jaccard index of two sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Descending score, then ascending id.
pub fn rank_order(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.target_id.cmp(&b.target_id))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceEvidence {
    pub hits: Vec<ScoredHit>,
    pub edges: Vec<Hyperedge>,
    pub context_entities: Vec<Entity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptEvidence {
    pub hits: Vec<ScoredHit>,
    pub seed_entities: Vec<Entity>,
    pub subgraph: ConceptSubgraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkHit {
    pub hit: ScoredHit,
    pub chunk: Chunk,
}

pub struct Retriever<'a> {
    pub config: RetrievalConfig,
    pub keywords: &'a KeywordExtractor,
    embedder: &'a dyn Embedder,
    llm: Option<(&'a dyn CompletionProvider, &'a PromptTemplates)>,
}

impl<'a> Retriever<'a> {
    pub fn new(config: RetrievalConfig, keywords: &'a KeywordExtractor, embedder: &'a dyn Embedder) -> Self {
        Retriever {
            config,
            keywords,
            embedder,
            llm: None,
        }
    }

    /// Enables model-based keyword extraction when the config asks for it.
    pub fn with_llm(mut self, provider: &'a dyn CompletionProvider, templates: &'a PromptTemplates) -> Self {
        self.llm = Some((provider, templates));
        self
    }

    pub fn query_context(&self, query: &str) -> Result<QueryContext, RetrievalError> {
        let keywords = match (self.config.use_llm_keywords, self.llm) {
            (true, Some((provider, templates))) => self.keywords.extract_llm(query, provider, templates)?,
            _ => self.keywords.extract(query)?,
        };
        Ok(QueryContext {
            raw_query: query.to_string(),
            keywords,
            query_embedding: self.embedder.embed(query)?,
        })
    }

    pub fn score_candidate(
        &self,
        qc: &QueryContext,
        candidate_text: &str,
        candidate_embedding: &EmbeddingVector,
    ) -> Result<HitScore, RetrievalError> {
        score_with(self.config.alpha, self.keywords, &qc.keyword_tokens(), qc, candidate_text, candidate_embedding)
    }

    fn score_all(
        &self,
        qc: &QueryContext,
        candidates: Vec<(String, String, Option<&EmbeddingVector>)>,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        let query_tokens = qc.keyword_tokens();
        let alpha = self.config.alpha;
        let mut hits = candidates
            .into_par_iter()
            .map(|(id, text, emb)| {
                let owned;
                let emb = match emb {
                    Some(e) => e,
                    None => {
                        owned = self.embedder.embed(&text)?;
                        &owned
                    }
                };
                let s = score_with(alpha, self.keywords, &query_tokens, qc, &text, emb)?;
                Ok(ScoredHit::new(id, s))
            })
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        hits.sort_by(rank_order);
        Ok(hits)
    }

    /// Scores every case edge, keeps the top `k`, and expands each selected
    /// edge to its member entities.
    pub fn retrieve_instances(
        &self,
        graph: &Hypergraph,
        qc: &QueryContext,
        k: usize,
    ) -> Result<InstanceEvidence, RetrievalError> {
        expect_layer(graph, Layer::Instance)?;
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let candidates = graph
            .edges()
            .map(|e| (e.id.0.clone(), e.statement.clone(), e.embedding.as_ref()))
            .collect();
        let mut hits = self.score_all(qc, candidates)?;
        hits.truncate(k);
        let mut evidence = InstanceEvidence::default();
        let mut seen = BTreeSet::new();
        for hit in &hits {
            let id = crate::hypergraph::EdgeId(hit.target_id.clone());
            for member in graph.neighbors_of_edge(&id)? {
                if seen.insert(member.id.clone()) {
                    evidence.context_entities.push(member.clone());
                }
            }
            evidence.edges.push(graph.edge(&id).expect("scored from graph").clone());
        }
        evidence.hits = hits;
        Ok(evidence)
    }

    /// Scores every concept entity against `query_source`, keeps the top
    /// `k` as seeds, and unions their one-step expansions.
    pub fn retrieve_concepts(
        &self,
        graph: &Hypergraph,
        query_source: &str,
        k: usize,
        max_edges_per_seed: usize,
    ) -> Result<ConceptEvidence, RetrievalError> {
        expect_layer(graph, Layer::Concept)?;
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if graph.entity_count() == 0 {
            return Ok(ConceptEvidence::default());
        }
        let qc = self.query_context(query_source)?;
        let candidates = graph
            .entities()
            .map(|e| (e.id.0.clone(), e.retrieval_text(), e.embedding.as_ref()))
            .collect();
        let mut hits = self.score_all(&qc, candidates)?;
        hits.truncate(k);
        let mut evidence = ConceptEvidence::default();
        for hit in &hits {
            let id = crate::hypergraph::EntityId(hit.target_id.clone());
            evidence.seed_entities.push(graph.entity(&id).expect("scored from graph").clone());
            evidence.subgraph.absorb(graph.expand_entity(&id, max_edges_per_seed)?);
        }
        evidence.hits = hits;
        Ok(evidence)
    }

    /// Flat baseline: scores raw chunks with the same scorer.
    pub fn retrieve_chunks(&self, chunks: &[Chunk], qc: &QueryContext, k: usize) -> Result<Vec<ChunkHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let candidates = chunks
            .iter()
            .map(|c| (c.id.clone(), c.body.clone(), c.embedding.as_ref()))
            .collect();
        let mut hits = self.score_all(qc, candidates)?;
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|hit| {
                let chunk = chunks.iter().find(|c| c.id == hit.target_id).expect("scored from list").clone();
                ChunkHit { hit, chunk }
            })
            .collect())
    }
}

fn expect_layer(graph: &Hypergraph, expected: Layer) -> Result<(), RetrievalError> {
    if graph.layer() != expected {
        return Err(RetrievalError::WrongLayer {
            expected,
            got: graph.layer(),
        });
    }
    Ok(())
}

fn score_with(
    alpha: f64,
    keywords: &KeywordExtractor,
    query_tokens: &BTreeSet<String>,
    qc: &QueryContext,
    candidate_text: &str,
    candidate_embedding: &EmbeddingVector,
) -> Result<HitScore, RetrievalError> {
    let embedding_component = cosine(&qc.query_embedding, candidate_embedding)?.max(0.0);
    let candidate_tokens: BTreeSet<String> = keywords.keywords_of(candidate_text).into_iter().collect();
    let lexical_component = jaccard(query_tokens, &candidate_tokens);
    Ok(HitScore {
        score: alpha * embedding_component + (1.0 - alpha) * lexical_component,
        embedding_component,
        lexical_component,
    })
}
