//! Concept-layer construction by prompted extraction.
//!
//! Each chunk goes through three completion calls: entities, pairwise
//! relations, then n-ary relations. Replies use a tab-delimited line
//! protocol:
//!
//! ```text
//! ENTITY<TAB>name<TAB>description
//! REL2<TAB>a<TAB>b<TAB>statement
//! RELN<TAB>a|b|c|...<TAB>statement
//! NONE
//! ```
//!
//! Lines that do not match are ignored with a warning. A reply with no
//! well-formed line at all is re-prompted once and then skipped.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::Chunk;
use crate::gateway::{CompletionProvider, CompletionRequest, Embedder, GatewayError};
use crate::hypergraph::{normalize_name, EntityKind, GraphError, Hypergraph, Layer, OrderClass};
use crate::prompts::{render, PromptTemplates, EXTRACTION_SYSTEM, REPROMPT_SUFFIX};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowRelation {
    pub a: String,
    pub b: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighRelation {
    pub members: Vec<String>,
    pub statement: String,
}

/// Everything extracted from one chunk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionBatch {
    pub chunk_id: String,
    pub entities: Vec<EntityRecord>,
    pub low_relations: Vec<LowRelation>,
    pub high_relations: Vec<HighRelation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    /// Number of lines that followed the protocol, `NONE` included.
    pub well_formed: usize,
    pub warnings: Vec<String>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Parsed {
            records: Vec::new(),
            well_formed: 0,
            warnings: Vec::new(),
        }
    }
}

fn parse_lines<T>(reply: &str, tag: &str, mut parse: impl FnMut(&[&str]) -> Option<T>) -> Parsed<T> {
    let mut out = Parsed::default();
    for (n, raw) in reply.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("NONE") {
            out.well_formed += 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let record = if fields[0] == tag { parse(&fields) } else { None };
        match record {
            Some(r) => {
                out.records.push(r);
                out.well_formed += 1;
            }
            None => out
                .warnings
                .push(format!("ignored malformed {tag} line {}: {:?}", n + 1, truncate(line))),
        }
    }
    out
}

fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}

pub fn parse_entities(reply: &str) -> Parsed<EntityRecord> {
    parse_lines(reply, "ENTITY", |f| match f {
        [_, name, description] if !normalize_name(name).is_empty() => Some(EntityRecord {
            name: name.to_string(),
            description: description.to_string(),
        }),
        _ => None,
    })
}

pub fn parse_low_relations(reply: &str) -> Parsed<LowRelation> {
    parse_lines(reply, "REL2", |f| match f {
        [_, a, b, statement]
            if !normalize_name(a).is_empty()
                && !normalize_name(b).is_empty()
                && normalize_name(a) != normalize_name(b)
                && !statement.is_empty() =>
        {
            Some(LowRelation {
                a: a.to_string(),
                b: b.to_string(),
                statement: statement.to_string(),
            })
        }
        _ => None,
    })
}

pub fn parse_high_relations(reply: &str) -> Parsed<HighRelation> {
    parse_lines(reply, "RELN", |f| match f {
        [_, members, statement] if !statement.is_empty() => {
            let members: Vec<String> = members.split('|').map(|m| m.trim().to_string()).collect();
            let distinct: HashSet<String> = members.iter().map(|m| normalize_name(m)).collect();
            let valid = members.len() >= 3
                && distinct.len() == members.len()
                && !distinct.contains("");
            valid.then(|| HighRelation {
                members,
                statement: statement.to_string(),
            })
        }
        _ => None,
    })
}

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("provider failure during {stage} extraction for chunk {chunk_id}: {source}")]
    Provider {
        stage: &'static str,
        chunk_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("every chunk failed ({} skipped)", .0.skipped_chunks.len())]
    AllChunksFailed(Box<BuildReport>),
    #[error("embedding failure: {0}")]
    Embedding(#[source] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Result of one extraction step after the re-prompt policy.
enum Step<T> {
    Records(Vec<T>),
    Skipped,
}

pub struct Extractor<'a> {
    provider: &'a dyn CompletionProvider,
    templates: &'a PromptTemplates,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl<'a> Extractor<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, templates: &'a PromptTemplates) -> Self {
        Extractor {
            provider,
            templates,
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            max_output_tokens: crate::gateway::DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    fn request(&self, user: String) -> CompletionRequest {
        CompletionRequest {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            ..CompletionRequest::new(EXTRACTION_SYSTEM, user)
        }
    }

    fn run<T>(
        &self,
        stage: &'static str,
        chunk_id: &str,
        user: String,
        parse: fn(&str) -> Parsed<T>,
        warnings: &mut Vec<String>,
    ) -> Result<Step<T>, ConceptError> {
        let provider_err = |source| ConceptError::Provider {
            stage,
            chunk_id: chunk_id.to_string(),
            source,
        };
        let first = parse(&self.provider.complete(&self.request(user.clone())).map_err(provider_err)?);
        warnings.extend(first.warnings.iter().map(|w| format!("{chunk_id}: {w}")));
        if first.well_formed > 0 {
            return Ok(Step::Records(first.records));
        }
        let retry_prompt = format!("{user}{REPROMPT_SUFFIX}");
        let second = parse(&self.provider.complete(&self.request(retry_prompt)).map_err(provider_err)?);
        warnings.extend(second.warnings.iter().map(|w| format!("{chunk_id}: {w} (re-prompt)")));
        if second.well_formed > 0 {
            Ok(Step::Records(second.records))
        } else {
            warnings.push(format!("{chunk_id}: no well-formed {stage} lines after re-prompt; skipped"));
            Ok(Step::Skipped)
        }
    }

    /// Entities in one chunk; `None` when the chunk had to be skipped.
    pub fn extract_entities(
        &self,
        chunk: &Chunk,
        warnings: &mut Vec<String>,
    ) -> Result<Option<Vec<EntityRecord>>, ConceptError> {
        let user = render(&self.templates.entity, &[("chunk", &chunk.body)]);
        Ok(match self.run("entity", &chunk.id, user, parse_entities, warnings)? {
            Step::Records(r) => Some(r),
            Step::Skipped => None,
        })
    }

    pub fn extract_low_order(
        &self,
        chunk: &Chunk,
        known_entities: &[String],
        warnings: &mut Vec<String>,
    ) -> Result<Vec<LowRelation>, ConceptError> {
        let known = known_entities.join("; ");
        let user = render(&self.templates.low, &[("chunk", &chunk.body), ("entities", &known)]);
        Ok(match self.run("low-order", &chunk.id, user, parse_low_relations, warnings)? {
            Step::Records(r) => r,
            Step::Skipped => Vec::new(),
        })
    }

    pub fn extract_high_order(
        &self,
        chunk: &Chunk,
        known_entities: &[String],
        warnings: &mut Vec<String>,
    ) -> Result<Vec<HighRelation>, ConceptError> {
        let known = known_entities.join("; ");
        let user = render(&self.templates.high, &[("chunk", &chunk.body), ("entities", &known)]);
        Ok(match self.run("high-order", &chunk.id, user, parse_high_relations, warnings)? {
            Step::Records(r) => r,
            Step::Skipped => Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedChunk {
    pub chunk_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub chunks_total: usize,
    pub chunks_processed: usize,
    pub skipped_chunks: Vec<SkippedChunk>,
    pub entity_records: usize,
    pub entities: usize,
    pub low_edges: usize,
    pub high_edges: usize,
    pub warnings: Vec<String>,
}

/// Known-entity list handed to the relation prompts: this chunk's entities
/// first, then every name already in the graph.
fn known_names(graph: &Hypergraph, chunk_entities: &[EntityRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    chunk_entities
        .iter()
        .map(|e| e.name.clone())
        .chain(graph.entities().map(|e| e.name.clone()))
        .filter(|n| seen.insert(normalize_name(n)))
        .collect()
}

fn extract_chunk(
    extractor: &Extractor<'_>,
    graph: &Hypergraph,
    chunk: &Chunk,
    warnings: &mut Vec<String>,
) -> Result<Option<ExtractionBatch>, ConceptError> {
    let Some(entities) = extractor.extract_entities(chunk, warnings)? else {
        return Ok(None);
    };
    let known = known_names(graph, &entities);
    let low_relations = extractor.extract_low_order(chunk, &known, warnings)?;
    let high_relations = extractor.extract_high_order(chunk, &known, warnings)?;
    Ok(Some(ExtractionBatch {
        chunk_id: chunk.id.clone(),
        entities,
        low_relations,
        high_relations,
    }))
}

/// Merges one batch into the graph. Relation endpoints that are not yet
/// entities are created with an empty description.
pub fn apply_batch(graph: &mut Hypergraph, batch: &ExtractionBatch, report: &mut BuildReport) -> Result<(), GraphError> {
    let src = batch.chunk_id.as_str();
    for e in &batch.entities {
        graph.add_entity(&e.name, EntityKind::Concept, &e.description, src)?;
    }
    let resolve = |graph: &mut Hypergraph, name: &str| -> Result<_, GraphError> {
        match graph.find_entity(name, EntityKind::Concept) {
            Some(id) => Ok(id.clone()),
            None => graph.add_entity(name, EntityKind::Concept, "", src),
        }
    };
    for rel in &batch.low_relations {
        let members = vec![resolve(graph, &rel.a)?, resolve(graph, &rel.b)?];
        match graph.add_hyperedge(members, OrderClass::Low, &rel.statement, src) {
            Ok(_) => report.low_edges += 1,
            Err(e) => report.warnings.push(format!("{src}: dropped REL2 {:?}: {e}", rel.statement)),
        }
    }
    for rel in &batch.high_relations {
        let members = rel
            .members
            .iter()
            .map(|m| resolve(graph, m))
            .collect::<Result<Vec<_>, _>>()?;
        match graph.add_hyperedge(members, OrderClass::High, &rel.statement, src) {
            Ok(_) => report.high_edges += 1,
            Err(e) => report.warnings.push(format!("{src}: dropped RELN {:?}: {e}", rel.statement)),
        }
    }
    Ok(())
}

/// Attaches embeddings to every entity (name and description) and every
/// edge (statement), in id order.
pub fn embed_graph(graph: &mut Hypergraph, embedder: &dyn Embedder) -> Result<(), GatewayError> {
    let entity_jobs: Vec<_> = graph.entities().map(|e| (e.id.clone(), e.retrieval_text())).collect();
    for (id, text) in entity_jobs {
        let v = embedder.embed(&text)?;
        graph.set_entity_embedding(&id, v).expect("id came from the graph");
    }
    let edge_jobs: Vec<_> = graph.edges().map(|e| (e.id.clone(), e.statement.clone())).collect();
    for (id, text) in edge_jobs {
        let v = embedder.embed(&text)?;
        graph.set_edge_embedding(&id, v).expect("id came from the graph");
    }
    Ok(())
}

/// Builds the concept layer. Chunks are processed in `(document_id,
/// ordinal)` order. A chunk whose extraction fails is skipped and recorded;
/// the build fails only when every chunk fails.
pub fn build_concept_hypergraph(
    chunks: &[Chunk],
    extractor: &Extractor<'_>,
    embedder: &dyn Embedder,
) -> Result<(Hypergraph, BuildReport), ConceptError> {
    let mut ordered: Vec<&Chunk> = chunks.iter().collect();
    ordered.sort_by(|a, b| (&a.document_id, a.ordinal).cmp(&(&b.document_id, b.ordinal)));

    let mut graph = Hypergraph::new(Layer::Concept);
    let mut report = BuildReport {
        chunks_total: chunks.len(),
        ..Default::default()
    };
    for chunk in ordered {
        let mut warnings = Vec::new();
        let outcome = extract_chunk(extractor, &graph, chunk, &mut warnings);
        report.warnings.append(&mut warnings);
        match outcome {
            Ok(Some(batch)) => {
                report.entity_records += batch.entities.len();
                apply_batch(&mut graph, &batch, &mut report)?;
                report.chunks_processed += 1;
            }
            Ok(None) => report.skipped_chunks.push(SkippedChunk {
                chunk_id: chunk.id.clone(),
                reason: "no well-formed entity lines after re-prompt".into(),
            }),
            Err(ConceptError::Provider { stage, source, .. }) => {
                log::warn!("chunk {} skipped: {stage} extraction failed: {source}", chunk.id);
                report.skipped_chunks.push(SkippedChunk {
                    chunk_id: chunk.id.clone(),
                    reason: format!("{stage} extraction failed: {source}"),
                });
            }
            Err(other) => return Err(other),
        }
    }
    if report.chunks_total > 0 && report.chunks_processed == 0 {
        return Err(ConceptError::AllChunksFailed(Box::new(report)));
    }
    embed_graph(&mut graph, embedder).map_err(ConceptError::Embedding)?;
    report.entities = graph.entity_count();
    graph.check_invariants()?;
    Ok((graph, report))
}
