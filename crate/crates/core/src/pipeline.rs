//! Two-stage answer generation and the comparison modes.
//!
//! `full` first recalls similar cases from the instance layer and drafts an
//! answer from them, then retrieves concept evidence for the query plus
//! draft and asks for a refined final answer. The other modes drop one or
//! both layers:
//!
//! | mode           | retrieval                      | completion calls |
//! |----------------|--------------------------------|------------------|
//! | `full`         | instance, then concept         | 2                |
//! | `case_only`    | instance                       | 1                |
//! | `concept_only` | concept (query only)           | 1                |
//! | `no_retrieval` | none                           | 1                |
//! | `flat_chunk`   | raw corpus chunks              | 1                |

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::Chunk;
use crate::gateway::{
    CompletionProvider, CompletionRequest, Embedder, GatewayError, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::hypergraph::{Hypergraph, Layer};
use crate::prompts::{render, PromptTemplates, GENERATION_SYSTEM};
use crate::retrieval::{
    ChunkHit, ConceptEvidence, InstanceEvidence, KeywordExtractor, RetrievalConfig, RetrievalError, Retriever,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Full,
    ConceptOnly,
    CaseOnly,
    NoRetrieval,
    FlatChunk,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 5] = [
        PipelineMode::Full,
        PipelineMode::ConceptOnly,
        PipelineMode::CaseOnly,
        PipelineMode::NoRetrieval,
        PipelineMode::FlatChunk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Full => "full",
            PipelineMode::ConceptOnly => "concept_only",
            PipelineMode::CaseOnly => "case_only",
            PipelineMode::NoRetrieval => "no_retrieval",
            PipelineMode::FlatChunk => "flat_chunk",
        }
    }

    pub fn completion_calls(self) -> usize {
        match self {
            PipelineMode::Full => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_");
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == wanted)
            .ok_or_else(|| format!("unknown mode {s:?} (expected one of full, concept_only, case_only, no_retrieval, flat_chunk)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{mode} mode needs the {layer} graph, which is not loaded")]
    MissingGraph { mode: PipelineMode, layer: Layer },
    #[error("{stage}: provider failure: {source}")]
    Provider {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("{stage}: retrieval failure: {source}")]
    Retrieval {
        stage: &'static str,
        #[source]
        source: RetrievalError,
    },
    #[error("{stage}: provider returned an empty answer")]
    EmptyAnswer { stage: &'static str },
}

impl PipelineError {
    /// Stage label for provider-side failures.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Provider { stage, .. }
            | PipelineError::Retrieval { stage, .. }
            | PipelineError::EmptyAnswer { stage } => Some(stage),
            PipelineError::MissingGraph { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePrompt {
    pub stage: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub query: String,
    pub mode: PipelineMode,
    pub instance_evidence: Option<InstanceEvidence>,
    pub concept_evidence: Option<ConceptEvidence>,
    pub chunk_evidence: Option<Vec<ChunkHit>>,
    pub stage1_answer: Option<String>,
    pub final_answer: String,
    pub prompts: Vec<StagePrompt>,
    /// Every retrieved id, in retrieval order, without duplicates.
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Empty means the provider's configured model.
    pub model_name: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_name: String::new(),
        }
    }
}

/// Borrowed view of whatever the index provides.
#[derive(Debug, Clone, Copy, Default)]
pub struct Graphs<'a> {
    pub concept: Option<&'a Hypergraph>,
    pub instance: Option<&'a Hypergraph>,
    pub chunks: &'a [Chunk],
}

pub fn format_cases(evidence: &InstanceEvidence) -> String {
    evidence
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| format!("CASE {}\n{}\n\n", i + 1, e.statement))
        .collect()
}

fn format_context(evidence: &InstanceEvidence) -> String {
    if evidence.context_entities.is_empty() {
        return "(none)".into();
    }
    evidence
        .context_entities
        .iter()
        .map(|e| format!("- {}", e.name))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_concepts(evidence: &ConceptEvidence) -> String {
    if evidence.subgraph.entities.is_empty() {
        return "(none)".into();
    }
    evidence
        .subgraph
        .entities
        .iter()
        .map(|e| {
            if e.description.is_empty() {
                format!("- {}", e.name)
            } else {
                format!("- {}: {}", e.name, e.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_principles(evidence: &ConceptEvidence) -> String {
    if evidence.subgraph.edges.is_empty() {
        return String::new();
    }
    let mut out = String::from("PRINCIPLES\n");
    for e in &evidence.subgraph.edges {
        out.push_str("- ");
        out.push_str(&e.statement);
        out.push('\n');
    }
    out.push('\n');
    out
}

pub fn compose_stage1_prompt(template: &str, query: &str, evidence: &InstanceEvidence) -> String {
    render(
        template,
        &[
            ("query", query),
            ("cases", &format_cases(evidence)),
            ("context", &format_context(evidence)),
        ],
    )
}

pub fn compose_stage2_prompt(template: &str, query: &str, stage1_answer: &str, evidence: &ConceptEvidence) -> String {
    render(
        template,
        &[
            ("query", query),
            ("draft", stage1_answer),
            ("concepts", &format_concepts(evidence)),
            ("principles", &format_principles(evidence)),
        ],
    )
}

pub fn compose_concept_only_prompt(template: &str, query: &str, evidence: &ConceptEvidence) -> String {
    render(
        template,
        &[
            ("query", query),
            ("concepts", &format_concepts(evidence)),
            ("principles", &format_principles(evidence)),
        ],
    )
}

pub fn compose_no_retrieval_prompt(template: &str, query: &str) -> String {
    render(template, &[("query", query)])
}

pub fn compose_flat_chunk_prompt(template: &str, query: &str, hits: &[ChunkHit]) -> String {
    let passages: String = hits
        .iter()
        .enumerate()
        .map(|(i, h)| format!("PASSAGE {}\n{}\n\n", i + 1, h.chunk.body))
        .collect();
    render(template, &[("query", query), ("passages", &passages)])
}

/// `Q_con`: the raw query followed by the stage-1 draft.
pub fn concept_query_source(query: &str, stage1_answer: &str) -> String {
    format!("{query}\n\n{stage1_answer}")
}

pub struct Pipeline<'a> {
    provider: &'a dyn CompletionProvider,
    embedder: &'a dyn Embedder,
    keywords: &'a KeywordExtractor,
    templates: &'a PromptTemplates,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        provider: &'a dyn CompletionProvider,
        embedder: &'a dyn Embedder,
        keywords: &'a KeywordExtractor,
        templates: &'a PromptTemplates,
    ) -> Self {
        Pipeline {
            provider,
            embedder,
            keywords,
            templates,
            retrieval: RetrievalConfig::default(),
            generation: GenerationConfig::default(),
        }
    }

    fn retriever(&self) -> Retriever<'_> {
        Retriever::new(self.retrieval.clone(), self.keywords, self.embedder).with_llm(self.provider, self.templates)
    }

    fn generate(&self, stage: &'static str, user_prompt: &str) -> Result<String, PipelineError> {
        let request = CompletionRequest {
            model_name: self.generation.model_name.clone(),
            temperature: self.generation.temperature,
            max_output_tokens: self.generation.max_output_tokens,
            ..CompletionRequest::new(GENERATION_SYSTEM, user_prompt)
        };
        let answer = self
            .provider
            .complete(&request)
            .map_err(|source| PipelineError::Provider { stage, source })?;
        if answer.trim().is_empty() {
            return Err(PipelineError::EmptyAnswer { stage });
        }
        Ok(answer)
    }

    /// Runs one query. `k` overrides the top-k of the mode's first
    /// retrieval step (cases, concept seeds in `concept_only`, or chunks).
    pub fn run(
        &self,
        query: &str,
        mode: PipelineMode,
        graphs: Graphs<'_>,
        k: Option<usize>,
    ) -> Result<PipelineResult, PipelineError> {
        fn need(g: Option<&Hypergraph>, mode: PipelineMode, layer: Layer) -> Result<&Hypergraph, PipelineError> {
            g.ok_or(PipelineError::MissingGraph { mode, layer })
        }
        let retriever = self.retriever();
        let retrieval_err = |stage| move |source| PipelineError::Retrieval { stage, source };
        let mut result = PipelineResult {
            query: query.to_string(),
            mode,
            instance_evidence: None,
            concept_evidence: None,
            chunk_evidence: None,
            stage1_answer: None,
            final_answer: String::new(),
            prompts: Vec::new(),
            provenance: Vec::new(),
        };

        match mode {
            PipelineMode::Full | PipelineMode::CaseOnly => {
                let instance = need(graphs.instance, mode, Layer::Instance)?;
                let concept = if mode == PipelineMode::Full {
                    Some(need(graphs.concept, mode, Layer::Concept)?)
                } else {
                    None
                };
                let qc = retriever.query_context(query).map_err(retrieval_err("stage1"))?;
                let k_inst = k.unwrap_or(self.retrieval.k_instance);
                let evidence = retriever
                    .retrieve_instances(instance, &qc, k_inst)
                    .map_err(retrieval_err("stage1"))?;
                let prompt = compose_stage1_prompt(&self.templates.stage1, query, &evidence);
                result.prompts.push(StagePrompt {
                    stage: "stage1".into(),
                    prompt: prompt.clone(),
                });
                result.instance_evidence = Some(evidence);
                let draft = self.generate("stage1", &prompt)?;
                result.stage1_answer = Some(draft.clone());

                if let Some(concept) = concept {
                    let source = concept_query_source(query, &draft);
                    let evidence = retriever
                        .retrieve_concepts(
                            concept,
                            &source,
                            self.retrieval.k_concept,
                            self.retrieval.max_edges_per_seed,
                        )
                        .map_err(retrieval_err("stage2"))?;
                    let prompt = compose_stage2_prompt(&self.templates.stage2, query, &draft, &evidence);
                    result.prompts.push(StagePrompt {
                        stage: "stage2".into(),
                        prompt: prompt.clone(),
                    });
                    result.concept_evidence = Some(evidence);
                    result.final_answer = self.generate("stage2", &prompt)?;
                } else {
                    result.final_answer = draft;
                }
            }
            PipelineMode::ConceptOnly => {
                let concept = need(graphs.concept, mode, Layer::Concept)?;
                let evidence = retriever
                    .retrieve_concepts(
                        concept,
                        query,
                        k.unwrap_or(self.retrieval.k_concept),
                        self.retrieval.max_edges_per_seed,
                    )
                    .map_err(retrieval_err("concept_only"))?;
                let prompt = compose_concept_only_prompt(&self.templates.concept_only, query, &evidence);
                result.prompts.push(StagePrompt {
                    stage: "concept_only".into(),
                    prompt: prompt.clone(),
                });
                result.concept_evidence = Some(evidence);
                result.final_answer = self.generate("concept_only", &prompt)?;
            }
            PipelineMode::NoRetrieval => {
                if query.trim().is_empty() {
                    return Err(PipelineError::Retrieval {
                        stage: "no_retrieval",
                        source: RetrievalError::EmptyQuery,
                    });
                }
                let prompt = compose_no_retrieval_prompt(&self.templates.no_retrieval, query);
                result.prompts.push(StagePrompt {
                    stage: "no_retrieval".into(),
                    prompt: prompt.clone(),
                });
                result.final_answer = self.generate("no_retrieval", &prompt)?;
            }
            PipelineMode::FlatChunk => {
                let qc = retriever.query_context(query).map_err(retrieval_err("flat_chunk"))?;
                let hits = retriever
                    .retrieve_chunks(graphs.chunks, &qc, k.unwrap_or(self.retrieval.k_instance))
                    .map_err(retrieval_err("flat_chunk"))?;
                let prompt = compose_flat_chunk_prompt(&self.templates.flat_chunk, query, &hits);
                result.prompts.push(StagePrompt {
                    stage: "flat_chunk".into(),
                    prompt: prompt.clone(),
                });
                result.chunk_evidence = Some(hits);
                result.final_answer = self.generate("flat_chunk", &prompt)?;
            }
        }
        result.provenance = collect_provenance(&result);
        Ok(result)
    }

    /// Runs independent queries on up to `concurrency` threads. Output order
    /// equals input order.
    pub fn run_batch(
        &self,
        queries: &[String],
        mode: PipelineMode,
        graphs: Graphs<'_>,
        k: Option<usize>,
        concurrency: usize,
    ) -> Vec<Result<PipelineResult, PipelineError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(concurrency.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| queries.par_iter().map(|q| self.run(q, mode, graphs, k)).collect())
    }
}

fn collect_provenance(result: &PipelineResult) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |id: &str| {
        if !out.iter().any(|x| x == id) {
            out.push(id.to_string());
        }
    };
    if let Some(ev) = &result.instance_evidence {
        ev.edges.iter().for_each(|e| push(e.id.as_str()));
        ev.context_entities.iter().for_each(|e| push(e.id.as_str()));
    }
    if let Some(ev) = &result.concept_evidence {
        ev.seed_entities.iter().for_each(|e| push(e.id.as_str()));
        ev.subgraph.entities.iter().for_each(|e| push(e.id.as_str()));
        ev.subgraph.edges.iter().for_each(|e| push(e.id.as_str()));
    }
    if let Some(hits) = &result.chunk_evidence {
        hits.iter().for_each(|h| push(&h.chunk.id));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerFields {
    pub resolution_strategy: Option<String>,
    pub whiteboard_action: Option<String>,
    pub teacher_quote: Option<String>,
    pub free_text: String,
}

impl AnswerFields {
    /// Renders the populated fields as `TEACHER_*: value` lines.
    pub fn render(&self) -> String {
        [
            ("TEACHER_RESOLUTION_STRATEGY", &self.resolution_strategy),
            ("TEACHER_WHITEBOARD_ACTION", &self.whiteboard_action),
            ("TEACHER_QUOTE", &self.teacher_quote),
        ]
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}: {v}")))
        .collect::<Vec<_>>()
        .join("\n")
    }
}

fn field_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:(?:[>*_#\-]+|\d+[.)])\s*)*teacher(?:\\?_|\s)+(resolution(?:\\?_|\s)+strategy|whiteboard(?:\\?_|\s)+action|quote)\s*[*_]*\s*:\s*[*_]*\s*(.*?)\s*$",
        )
        .expect("static regex")
    })
}

/// Lenient scan for the three `TEACHER_*` fields. The first occurrence of
/// each field wins; markdown emphasis around labels and values is ignored.
pub fn parse_answer_fields(answer: &str) -> AnswerFields {
    let mut fields = AnswerFields {
        free_text: answer.to_string(),
        ..Default::default()
    };
    for line in answer.lines() {
        let Some(caps) = field_line().captures(line) else {
            continue;
        };
        let which = caps[1].to_ascii_lowercase();
        let value = caps[2].trim_end_matches(['*', '_']).trim();
        if value.is_empty() {
            continue;
        }
        let slot = if which.starts_with("resolution") {
            &mut fields.resolution_strategy
        } else if which.starts_with("whiteboard") {
            &mut fields.whiteboard_action
        } else {
            &mut fields.teacher_quote
        };
        if slot.is_none() {
            *slot = Some(value.to_string());
        }
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{EntityKind, OrderClass};

    const TABLE3_GOLD: &str = "TEACHER_RESOLUTION_STRATEGY: Teach students to handle whole numbers and fractions separately, then combine.
TEACHER_WHITEBOARD_ACTION: Calculate $1+2$ and $\\frac{2}{5}+\\frac{3}{5}$ separately, then combine results.
TEACHER_QUOTE: \"Solve the whole numbers first, then the fractions.\"";

    #[test]
    fn table3_fields_parse() {
        let f = parse_answer_fields(TABLE3_GOLD);
        assert_eq!(
            f.resolution_strategy.as_deref(),
            Some("Teach students to handle whole numbers and fractions separately, then combine.")
        );
        assert_eq!(
            f.whiteboard_action.as_deref(),
            Some("Calculate $1+2$ and $\\frac{2}{5}+\\frac{3}{5}$ separately, then combine results.")
        );
        assert_eq!(f.teacher_quote.as_deref(), Some("\"Solve the whole numbers first, then the fractions.\""));
        assert_eq!(f.free_text, TABLE3_GOLD);
        assert_eq!(f.render(), TABLE3_GOLD);
    }

    #[test]
    fn freeform_has_no_fields() {
        let f = parse_answer_fields("Try using fraction strips to show how the parts combine.");
        assert_eq!(f.resolution_strategy, None);
        assert_eq!(f.whiteboard_action, None);
        assert_eq!(f.teacher_quote, None);
    }

    #[test]
    fn decorated_markers() {
        let text = "**TEACHER_RESOLUTION_STRATEGY:** Use strips\n\
                    - **Teacher_Whiteboard_Action**: Draw a line\n\
                    ### TEACHER\\_QUOTE: **\"Go slow\"**\n\
                    2. teacher resolution strategy: ignored second";
        let f = parse_answer_fields(text);
        assert_eq!(f.resolution_strategy.as_deref(), Some("Use strips"));
        assert_eq!(f.whiteboard_action.as_deref(), Some("Draw a line"));
        assert_eq!(f.teacher_quote.as_deref(), Some("\"Go slow\""));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in PipelineMode::ALL {
            assert_eq!(m.as_str().parse::<PipelineMode>().unwrap(), m);
        }
        assert_eq!("concept-only".parse::<PipelineMode>().unwrap(), PipelineMode::ConceptOnly);
        assert!("bogus".parse::<PipelineMode>().is_err());
    }

    fn instance_evidence(n: usize) -> InstanceEvidence {
        let mut g = Hypergraph::new(Layer::Instance);
        let mut ev = InstanceEvidence::default();
        for i in 0..n {
            let id = g.add_entity(&format!("TOPIC=t{i}"), EntityKind::FieldValue, "", "c").unwrap();
            let e = g.add_hyperedge(vec![id.clone()], OrderClass::Case, &format!("TOPIC: t{i}"), "c").unwrap();
            ev.edges.push(g.edge(&e).unwrap().clone());
            ev.context_entities.push(g.entity(&id).unwrap().clone());
        }
        ev
    }

    #[test]
    fn stage1_prompt_shape() {
        let t = PromptTemplates::default();
        let p = compose_stage1_prompt(&t.stage1, "my query", &InstanceEvidence::default());
        assert!(p.contains("my query"));
        assert_eq!(p.lines().filter(|l| l.starts_with("CASE ")).count(), 0);
        assert!(p.lines().any(|l| l == "CONTEXT"));

        let p = compose_stage1_prompt(&t.stage1, "my query", &instance_evidence(2));
        let headers: Vec<&str> = p.lines().filter(|l| l.starts_with("CASE ")).collect();
        assert_eq!(headers, vec!["CASE 1", "CASE 2"]);
        assert!(p.find("TOPIC: t0").unwrap() < p.find("TOPIC: t1").unwrap());
        assert!(p.contains("- TOPIC=t1"));
        for field in ["TEACHER_RESOLUTION_STRATEGY", "TEACHER_WHITEBOARD_ACTION", "TEACHER_QUOTE"] {
            assert!(p.contains(field));
        }
    }

    #[test]
    fn stage2_prompt_shape() {
        let t = PromptTemplates::default();
        let p = compose_stage2_prompt(&t.stage2, "q", "the draft", &ConceptEvidence::default());
        assert!(p.contains("DRAFT\nthe draft"));
        assert!(!p.lines().any(|l| l == "PRINCIPLES"));
        assert!(p.contains("Refine the draft"));

        let mut g = Hypergraph::new(Layer::Concept);
        let a = g.add_entity("Alpha concept", EntityKind::Concept, "first", "c").unwrap();
        let b = g.add_entity("Beta concept", EntityKind::Concept, "second", "c").unwrap();
        let c = g.add_entity("Gamma concept", EntityKind::Concept, "third", "c").unwrap();
        let e1 = g.add_hyperedge(vec![a.clone(), b.clone()], OrderClass::Low, "link one", "c").unwrap();
        let e2 = g.add_hyperedge(vec![a.clone(), b.clone(), c.clone()], OrderClass::High, "link two", "c").unwrap();
        let ev = ConceptEvidence {
            hits: vec![],
            seed_entities: [&a, &b, &c].iter().map(|id| g.entity(id).unwrap().clone()).collect(),
            subgraph: crate::hypergraph::ConceptSubgraph {
                entities: [&a, &b, &c].iter().map(|id| g.entity(id).unwrap().clone()).collect(),
                edges: [&e1, &e2].iter().map(|id| g.edge(id).unwrap().clone()).collect(),
            },
        };
        let p = compose_stage2_prompt(&t.stage2, "q", "d", &ev);
        for item in ["Alpha concept", "Beta concept", "Gamma concept", "link one", "link two"] {
            assert_eq!(p.matches(item).count(), 1, "{item}");
        }
        assert_eq!(p.lines().filter(|l| *l == "PRINCIPLES").count(), 1);
    }
}
