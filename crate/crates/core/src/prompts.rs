//! Prompt templates with `{name}` placeholders.
//!
//! Templates are plain text. [`render`] replaces each `{name}` whose name is
//! bound; unbound placeholders and stray braces are left untouched. Values
//! are never re-scanned, so user text containing braces is safe.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const EXTRACTION_SYSTEM: &str =
    "You extract structured knowledge from mathematics education texts. Follow the output format exactly.";

pub const GENERATION_SYSTEM: &str = "You are an experienced mathematics teaching assistant. \
You help teachers respond to student misconceptions with concrete, classroom-ready guidance.";

pub const JUDGE_SYSTEM: &str =
    "You are an expert mathematics teacher educator grading feedback written for teachers.";

pub const KEYWORD_SYSTEM: &str = "You identify search keywords for a mathematics education knowledge base.";

const ENTITY: &str = "Extract the mathematics-education concepts that appear in the text below.
Write one record per line in the form
ENTITY<TAB>name<TAB>one-sentence description
using a literal tab character between fields. Write nothing else.
If the text contains no concepts, reply with the single line NONE.

TEXT:
{chunk}
";

const LOW: &str = "Identify pairwise relations between concepts in the text below.
Known concepts: {entities}

Write one record per line in the form
REL2<TAB>concept a<TAB>concept b<TAB>sentence stating the relation
using a literal tab character between fields. Write nothing else.
If there are no pairwise relations, reply with the single line NONE.

TEXT:
{chunk}
";

const HIGH: &str = "Identify statements in the text below that relate three or more concepts at once.
Known concepts: {entities}

Write one record per line in the form
RELN<TAB>concept a|concept b|concept c<TAB>sentence stating the relation
listing at least three concepts separated by |, with a literal tab character between fields.
Write nothing else. If there are no such statements, reply with the single line NONE.

TEXT:
{chunk}
";

const ANSWER_FORMAT: &str = "Reply with exactly three lines:
TEACHER_RESOLUTION_STRATEGY: <the teaching strategy>
TEACHER_WHITEBOARD_ACTION: <what to write or draw on the whiteboard>
TEACHER_QUOTE: \"<what to say to the student>\"
";

fn with_format(body: &str) -> String {
    format!("{body}{ANSWER_FORMAT}")
}

const STAGE1: &str = "As a mathematics teaching assistant, help the teacher below address a student misconception.

QUERY
{query}

{cases}CONTEXT
{context}

Draft an answer grounded in the similar cases above.
";

const STAGE2: &str = "As a mathematics teaching assistant, refine a draft answer to a teacher's question.

QUERY
{query}

DRAFT
{draft}

CONCEPTS
{concepts}

{principles}Refine the draft: keep what the cases support, correct anything that conflicts with the concepts, \
and ground every claim in the concepts and principles provided. Keep the three TEACHER_ fields.
";

const CONCEPT_ONLY: &str = "As a mathematics teaching assistant, help the teacher below address a student misconception.

QUERY
{query}

CONCEPTS
{concepts}

{principles}Ground every claim in the concepts and principles provided.
";

const NO_RETRIEVAL: &str = "As a mathematics teaching assistant, help the teacher below address a student misconception.

QUERY
{query}

";

const FLAT_CHUNK: &str = "As a mathematics teaching assistant, help the teacher below address a student misconception.

QUERY
{query}

{passages}Ground your answer in the passages above.
";

const JUDGE: &str = "Grade the RESPONSE using the REFERENCE material. Score each dimension with an integer from 0 to 100:
COMP (comprehensiveness): addresses every important aspect of the student's error.
DIV (diversity): presents more than one way to approach or represent the idea.
EMP (empowerment): helps the student reason independently instead of handing over answers.
LOG (logicality): the steps follow from one another and the mathematics is correct.
READ (readability): concise and easy for a teacher to act on.

REFERENCE
{reference}

RESPONSE
{answer}

Reply with exactly five lines in the form DIM<TAB>score, one for each of COMP, DIV, EMP, LOG, READ.
";

const KEYWORDS: &str = "List the key mathematical and pedagogical keywords of the text below \
as a single comma-separated line. Write nothing else.

TEXT:
{text}
";

/// Appended to a user prompt when the first reply had no usable records.
pub const REPROMPT_SUFFIX: &str =
    "\n\nYour previous reply contained no usable lines. Follow the required line format exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub entity: String,
    pub low: String,
    pub high: String,
    pub stage1: String,
    pub stage2: String,
    pub concept_only: String,
    pub no_retrieval: String,
    pub flat_chunk: String,
    pub judge: String,
    pub keywords: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            entity: ENTITY.into(),
            low: LOW.into(),
            high: HIGH.into(),
            stage1: with_format(STAGE1),
            stage2: with_format(STAGE2),
            concept_only: with_format(CONCEPT_ONLY),
            no_retrieval: with_format(NO_RETRIEVAL),
            flat_chunk: with_format(FLAT_CHUNK),
            judge: JUDGE.into(),
            keywords: KEYWORDS.into(),
        }
    }
}

impl PromptTemplates {
    /// Defaults with the named templates replaced by file contents.
    pub fn with_overrides(overrides: &BTreeMap<String, PathBuf>) -> Result<Self, String> {
        let mut t = PromptTemplates::default();
        for (name, path) in overrides {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("prompt template {name} ({}): {e}", path.display()))?;
            let slot = match name.as_str() {
                "entity" => &mut t.entity,
                "low" => &mut t.low,
                "high" => &mut t.high,
                "stage1" => &mut t.stage1,
                "stage2" => &mut t.stage2,
                "concept_only" => &mut t.concept_only,
                "no_retrieval" => &mut t.no_retrieval,
                "flat_chunk" => &mut t.flat_chunk,
                "judge" => &mut t.judge,
                "keywords" => &mut t.keywords,
                other => return Err(format!("unknown prompt template {other:?}")),
            };
            *slot = text;
        }
        Ok(t)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let bound = close.and_then(|c| {
            let name = &after[..c];
            let valid = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
            if valid {
                vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (c, *v))
            } else {
                None
            }
        });
        match bound {
            Some((c, value)) => {
                out.push_str(value);
                rest = &after[c + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
