//! Synthetic corpus and a rule-based completion provider.
//!
//! Everything here is deterministic and offline. It backs the test suites
//! and gives a way to exercise the full build/query/eval path without
//! provider credentials.

use serde_json::json;

use crate::gateway::{fnv1a64, CompletionRequest, FnProvider, GatewayError};
use crate::prompts::{EXTRACTION_SYSTEM, GENERATION_SYSTEM, JUDGE_SYSTEM, KEYWORD_SYSTEM};

/// Concept terms the rule provider recognizes in reference text.
pub const CONCEPT_TERMS: [&str; 12] = [
    "fraction",
    "mixed number",
    "whole number",
    "numerator",
    "denominator",
    "improper fraction",
    "common denominator",
    "place value",
    "decimal",
    "number line",
    "regrouping",
    "equivalent fractions",
];

pub fn concept_documents() -> Vec<(String, String)> {
    let docs = [
        (
            "fractions/mixed-numbers.md",
            "A mixed number combines a whole number and a fraction. When adding mixed numbers, \
             students can add the whole number parts and the fraction parts separately and then combine them. \
             If the fraction parts share a common denominator, only the numerator values are added. \
             A sum of fraction parts greater than one requires regrouping into the whole number part.",
        ),
        (
            "fractions/improper.md",
            "An improper fraction has a numerator greater than or equal to its denominator. \
             Every mixed number can be rewritten as an improper fraction. \
             Converting to an improper fraction before adding is a valid but longer strategy.",
        ),
        (
            "fractions/equivalence.md",
            "Equivalent fractions name the same point on a number line. \
             Finding a common denominator relies on equivalent fractions, \
             and students often add denominator values by mistake.",
        ),
        (
            "place-value/decimals.txt",
            "Place value explains why a decimal digit is worth ten times the digit to its right. \
             Students who ignore place value line up a decimal incorrectly when adding, \
             and a number line helps show the size of each decimal.",
        ),
    ];
    docs.iter().map(|(id, body)| (id.to_string(), body.to_string())).collect()
}

const PLANTED_WORDS: [&str; 50] = [
    "abacus", "angle", "area", "array", "axis", "base", "bisector", "capacity", "chord", "circumference",
    "coefficient", "cone", "cube", "cylinder", "datum", "diagonal", "diameter", "digit", "dividend", "divisor",
    "exponent", "factor", "formula", "frequency", "gradient", "height", "hexagon", "histogram", "hypotenuse", "integer",
    "interval", "kite", "median", "mode", "multiple", "octagon", "parallelogram", "pentagon", "percentage", "perimeter",
    "polygon", "prism", "quotient", "radius", "ratio", "rhombus", "scalene", "sphere", "tally", "trapezoid",
];

/// The `student_mistake` value of planted case `i` (0-based, `i < 50`).
pub fn planted_mistake(i: usize) -> String {
    let w = |j: usize| PLANTED_WORDS[j % PLANTED_WORDS.len()];
    format!(
        "Student confuses the {} with the {} while measuring the {}",
        w(i),
        w(i * 7 + 3),
        w(i * 13 + 5)
    )
}

/// `n` planted cases as JSON Lines, ids `p001`, `p002`, ...
pub fn planted_cases_jsonl(n: usize) -> String {
    let topics = ["geometry", "measurement", "statistics", "number sense", "algebra"];
    let mut out = String::new();
    for i in 0..n {
        let line = json!({
            "id": format!("p{:03}", i + 1),
            "grade": format!("{}", 3 + i % 6),
            "topic": topics[i % topics.len()],
            "student_mistake": planted_mistake(i),
            "teacher_resolution_strategy": format!("Contrast the two ideas with a worked example, variant {}.", i % 4),
            "teacher_whiteboard_action": "Sketch both objects side by side and label them.",
            "teacher_quote": "\"What makes these two different?\"",
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn section<'a>(prompt: &'a str, header: &str) -> &'a str {
    match prompt.find(header) {
        Some(i) => {
            let rest = &prompt[i + header.len()..];
            let end = rest.find("\n\n").unwrap_or(rest.len());
            rest[..end].trim()
        }
        None => "",
    }
}

fn found_terms(text: &str) -> Vec<&'static str> {
    let lower = text.to_lowercase();
    let mut hits: Vec<(usize, &'static str)> = CONCEPT_TERMS
        .iter()
        .filter_map(|t| lower.find(t).map(|pos| (pos, *t)))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, t)| t).collect()
}

fn extraction_reply(prompt: &str) -> String {
    let chunk = prompt.rsplit("TEXT:\n").next().unwrap_or("");
    let terms = found_terms(chunk);
    let lines: Vec<String> = if prompt.contains("ENTITY<TAB>") {
        terms
            .iter()
            .map(|t| format!("ENTITY\t{t}\tthe idea of a {t} in elementary mathematics"))
            .collect()
    } else if prompt.contains("REL2<TAB>") {
        terms
            .windows(2)
            .map(|p| format!("REL2\t{}\t{}\tUnderstanding {} supports work with {}.", p[0], p[1], p[0], p[1]))
            .collect()
    } else if terms.len() >= 3 {
        vec![format!(
            "RELN\t{}|{}|{}\t{}, {} and {} are used together in one procedure.",
            terms[0], terms[1], terms[2], terms[0], terms[1], terms[2]
        )]
    } else {
        Vec::new()
    };
    if lines.is_empty() {
        "NONE".into()
    } else {
        lines.join("\n")
    }
}

fn generation_reply(prompt: &str) -> String {
    let query = section(prompt, "QUERY\n");
    let tag = fnv1a64(prompt.as_bytes()) % 10_000;
    let basis = if prompt.contains("\nDRAFT\n") {
        "refine the earlier draft using the listed concepts"
    } else if prompt.contains("\nCASE 1\n") {
        "follow the most similar recorded case"
    } else if prompt.contains("\nPASSAGE 1\n") {
        "use the quoted passages"
    } else {
        "work from first principles"
    };
    format!(
        "TEACHER_RESOLUTION_STRATEGY: For \"{query}\", {basis} (note {tag}).\n\
         TEACHER_WHITEBOARD_ACTION: Write the problem and solve it one part at a time.\n\
         TEACHER_QUOTE: \"Let's check each part before we combine them.\""
    )
}

fn judge_reply(prompt: &str) -> String {
    let h = fnv1a64(prompt.as_bytes());
    ["COMP", "DIV", "EMP", "LOG", "READ"]
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{d}\t{}", 40 + (h >> (i * 8)) % 61))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Answers extraction, generation, judge, and keyword prompts by simple
/// deterministic rules.
pub fn rule_reply(request: &CompletionRequest) -> Result<String, GatewayError> {
    let user = request.user_prompt.as_str();
    Ok(match request.system_prompt.as_str() {
        s if s == EXTRACTION_SYSTEM => extraction_reply(user),
        s if s == GENERATION_SYSTEM => generation_reply(user),
        s if s == JUDGE_SYSTEM => judge_reply(user),
        s if s == KEYWORD_SYSTEM => section(user, "TEXT:\n").split_whitespace().take(6).collect::<Vec<_>>().join(", "),
        _ => return Err(GatewayError::InvalidResponse("no rule for this system prompt".into())),
    })
}

pub type RuleProvider = FnProvider<fn(&CompletionRequest) -> Result<String, GatewayError>>;

pub fn rule_provider() -> RuleProvider {
    FnProvider(rule_reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::{parse_entities, parse_high_relations, parse_low_relations};
    use crate::eval::parse_judge_reply;
    use crate::pipeline::parse_answer_fields;
    use crate::prompts::{render, PromptTemplates};

    #[test]
    fn planted_mistakes_are_unique() {
        let all: std::collections::BTreeSet<String> = (0..50).map(planted_mistake).collect();
        assert_eq!(all.len(), 50);
        assert_eq!(planted_cases_jsonl(3).lines().count(), 3);
    }

    #[test]
    fn rule_replies_parse() {
        let t = PromptTemplates::default();
        let chunk = &concept_documents()[0].1;
        let ask = |tpl: &str| {
            rule_reply(&CompletionRequest::new(EXTRACTION_SYSTEM, render(tpl, &[("chunk", chunk), ("entities", "")]))).unwrap()
        };
        assert!(parse_entities(&ask(&t.entity)).records.len() >= 4);
        assert!(!parse_low_relations(&ask(&t.low)).records.is_empty());
        assert_eq!(parse_high_relations(&ask(&t.high)).records.len(), 1);

        let answer = rule_reply(&CompletionRequest::new(GENERATION_SYSTEM, render(&t.no_retrieval, &[("query", "q")]))).unwrap();
        assert!(parse_answer_fields(&answer).teacher_quote.is_some());
        let judged = rule_reply(&CompletionRequest::new(JUDGE_SYSTEM, "x")).unwrap();
        assert!(parse_judge_reply(&judged, &mut Vec::new()).is_some());
    }
}
