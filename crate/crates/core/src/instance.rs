//! Instance-layer construction from structured student-mistake cases.
//!
//! Every case becomes one `case` hyperedge whose members are its
//! `KEY=value` field entities. Field entities are shared graph-wide, so two
//! cases with the same topic meet at one node.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::concept::embed_graph;
use crate::gateway::{Embedder, GatewayError};
use crate::hypergraph::{EntityId, EntityKind, GraphError, Hypergraph, Layer, OrderClass};
use crate::text::collapse_whitespace;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("schema {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("no valid cases to index")]
    NoCases,
    #[error("embedding failure: {0}")]
    Embedding(#[source] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Canonical key form: trimmed, upper-cased, spaces and dashes as `_`.
pub fn canonical_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| if c.is_whitespace() || c == '-' { '_' } else { c })
        .flat_map(char::to_uppercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSchema {
    pub canonical_key_order: Vec<String>,
    pub required_keys: Vec<String>,
    pub gold_answer_keys: Vec<String>,
}

impl FieldSchema {
    pub fn load(path: &Path) -> Result<Self, InstanceError> {
        let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| InstanceError::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Schema used for MisstepMath-style exports.
    pub fn misstep_default() -> Self {
        let order = [
            "grade",
            "topic",
            "subtopic",
            "challenge_type",
            "student_mistake",
            "teacher_resolution_strategy",
            "teacher_whiteboard_action",
            "teacher_quote",
        ];
        FieldSchema {
            canonical_key_order: order.iter().map(|s| s.to_string()).collect(),
            required_keys: vec!["student_mistake".into()],
            gold_answer_keys: vec![
                "teacher_resolution_strategy".into(),
                "teacher_whiteboard_action".into(),
                "teacher_quote".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    /// Canonical keys with raw values, in schema order then alphabetical.
    pub fields: Vec<(String, String)>,
}

impl CaseRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        let key = canonical_key(key);
        self.fields.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    /// Teacher-resolution fields rendered as `KEY: value` lines, used as the
    /// golden answer in evaluation.
    pub fn gold_answer(&self, schema: &FieldSchema) -> Option<String> {
        let lines: Vec<String> = schema
            .gold_answer_keys
            .iter()
            .filter_map(|k| self.get(k).map(|v| format!("{}: {v}", canonical_key(k))))
            .collect();
        (!lines.is_empty()).then(|| lines.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines: usize,
    pub records: usize,
    pub errors: Vec<LineError>,
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn parse_object(
    line_no: usize,
    mut obj: Map<String, Value>,
    schema: &FieldSchema,
) -> Result<CaseRecord, String> {
    let case_id = match obj.remove("id") {
        Some(v) => value_text(&v)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or("id field is empty")?,
        None => format!("case-{line_no}"),
    };
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (k, v) in &obj {
        let key = canonical_key(k);
        if key.is_empty() {
            return Err("empty field key".into());
        }
        if !seen.insert(key.clone()) {
            return Err(format!("duplicate key {key} after canonicalization"));
        }
        if let Some(value) = value_text(v).filter(|s| !s.trim().is_empty()) {
            fields.push((key, value));
        }
    }
    for required in &schema.required_keys {
        let key = canonical_key(required);
        if !fields.iter().any(|(k, _)| *k == key) {
            return Err(format!("missing required key {required:?}"));
        }
    }
    if fields.is_empty() {
        return Err("record has no non-empty fields".into());
    }
    let order: Vec<String> = schema.canonical_key_order.iter().map(|k| canonical_key(k)).collect();
    fields.sort_by(|(a, _), (b, _)| {
        let rank = |k: &String| order.iter().position(|o| o == k).unwrap_or(usize::MAX);
        rank(a).cmp(&rank(b)).then_with(|| a.cmp(b))
    });
    Ok(CaseRecord { case_id, fields })
}

/// Parses JSON Lines case text. Bad lines are reported and skipped.
pub fn parse_cases_str(text: &str, schema: &FieldSchema) -> (Vec<CaseRecord>, ParseReport) {
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let parsed = serde_json::from_str::<Map<String, Value>>(line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|obj| parse_object(line_no, obj, schema))
            .and_then(|rec| {
                if ids.insert(rec.case_id.clone()) {
                    Ok(rec)
                } else {
                    Err(format!("duplicate case id {:?}", rec.case_id))
                }
            });
        match parsed {
            Ok(rec) => records.push(rec),
            Err(message) => report.errors.push(LineError { line: line_no, message }),
        }
    }
    report.records = records.len();
    (records, report)
}

pub fn parse_cases(path: &Path, schema: &FieldSchema) -> Result<(Vec<CaseRecord>, ParseReport), InstanceError> {
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_cases_str(&text, schema))
}

/// `KEY=value` names for each field, value whitespace-collapsed.
pub fn field_value_names(record: &CaseRecord) -> Vec<String> {
    record
        .fields
        .iter()
        .map(|(k, v)| format!("{k}={}", collapse_whitespace(v)))
        .collect()
}

/// Adds the record's field entities to `graph` (reusing shared ones) and
/// returns their ids in field order.
pub fn case_entities(graph: &mut Hypergraph, record: &CaseRecord) -> Result<Vec<EntityId>, GraphError> {
    let mut ids = Vec::with_capacity(record.fields.len());
    let mut seen = BTreeSet::new();
    for name in field_value_names(record) {
        let id = graph.add_entity(&name, EntityKind::FieldValue, "", &record.case_id)?;
        if seen.insert(id.clone()) {
            ids.push(id);
        }
    }
    Ok(ids)
}

/// One `KEY: value` line per field, in record order.
pub fn pack_case(record: &CaseRecord) -> String {
    record
        .fields
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the instance layer with one case edge per record, in input order.
pub fn build_instance_hypergraph(cases: &[CaseRecord], embedder: &dyn Embedder) -> Result<Hypergraph, InstanceError> {
    if cases.is_empty() {
        return Err(InstanceError::NoCases);
    }
    let mut graph = Hypergraph::new(Layer::Instance);
    for record in cases {
        let members = case_entities(&mut graph, record)?;
        graph.add_hyperedge(members, OrderClass::Case, &pack_case(record), &record.case_id)?;
    }
    embed_graph(&mut graph, embedder).map_err(InstanceError::Embedding)?;
    graph.check_invariants()?;
    Ok(graph)
}
