//! Answer metrics, judge scoring, and batch evaluation across modes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{cosine, CompletionProvider, CompletionRequest, Embedder, GatewayError};
use crate::pipeline::{Graphs, Pipeline, PipelineMode, PipelineResult};
use crate::prompts::{render, PromptTemplates, JUDGE_SYSTEM, REPROMPT_SUFFIX};
use crate::text::{self, TokenBag};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("queries line {line}: {message}")]
    Queries { line: usize, message: String },
    #[error("judge provider failure: {0}")]
    JudgeProvider(#[source] GatewayError),
    #[error("judge reply unparseable after re-prompt: {0}")]
    JudgeParse(String),
    #[error("embedding failure: {0}")]
    Embedding(#[source] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSet {
    pub query_id: String,
    pub query: String,
    pub golden_answers: Vec<String>,
    pub reference_chunk: String,
}

pub fn parse_queries(input: &str) -> Result<Vec<GoldSet>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: GoldSet = serde_json::from_str(line).map_err(|e| EvalError::Queries {
            line: i + 1,
            message: e.to_string(),
        })?;
        if q.golden_answers.is_empty() {
            return Err(EvalError::Queries {
                line: i + 1,
                message: format!("query {} has no golden answers", q.query_id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_queries(path: &Path) -> Result<Vec<GoldSet>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_queries(&text)
}

pub fn normalize_text(input: &str) -> String {
    text::normalize(input)
}

pub fn tokenize(normalized: &str) -> TokenBag {
    TokenBag::from_normalized(normalized)
}

fn f1_single(candidate: &TokenBag, gold: &TokenBag) -> f64 {
    match (candidate.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 2.0 * candidate.overlap(gold) as f64 / (candidate.len() + gold.len()) as f64,
    }
}

/// Best token F1 of `candidate` against any of `golds`. An empty gold list
/// scores 0.
pub fn token_f1(candidate: &str, golds: &[String]) -> f64 {
    let c = tokenize(&normalize_text(candidate));
    golds
        .iter()
        .map(|g| f1_single(&c, &tokenize(&normalize_text(g))))
        .fold(0.0, f64::max)
}

pub fn cosine_retrieval_score(candidate: &str, golds: &[String], embedder: &dyn Embedder) -> Result<f64, EvalError> {
    let c = embedder.embed(candidate).map_err(EvalError::Embedding)?;
    let mut best: Option<f64> = None;
    for g in golds {
        let e = embedder.embed(g).map_err(EvalError::Embedding)?;
        let s = cosine(&c, &e).map_err(EvalError::Embedding)?;
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    Ok(best.unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub comprehensiveness: f64,
    pub diversity: f64,
    pub empowerment: f64,
    pub logicality: f64,
    pub readability: f64,
    pub overall: f64,
}

impl JudgeScores {
    /// Order: COMP, DIV, EMP, LOG, READ.
    pub fn from_dims(d: [f64; 5]) -> Self {
        JudgeScores {
            comprehensiveness: d[0],
            diversity: d[1],
            empowerment: d[2],
            logicality: d[3],
            readability: d[4],
            overall: d.iter().sum::<f64>() / 5.0,
        }
    }

    pub fn dims(&self) -> [f64; 5] {
        [
            self.comprehensiveness,
            self.diversity,
            self.empowerment,
            self.logicality,
            self.readability,
        ]
    }
}

const DIM_NAMES: [&str; 5] = ["COMP", "DIV", "EMP", "LOG", "READ"];

fn dim_index(label: &str) -> Option<usize> {
    match label.to_ascii_lowercase().as_str() {
        "comp" | "comprehensiveness" => Some(0),
        "div" | "diversity" => Some(1),
        "emp" | "empowerment" => Some(2),
        "log" | "logic" | "logicality" => Some(3),
        "read" | "readability" => Some(4),
        _ => None,
    }
}

fn score_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[\s*_#\-]*([A-Za-z]+)[\s*_]*(?:\([^)]*\))?[\s*_]*[:=\t ][\s*_]*(-?\d+(?:\.\d+)?)")
            .expect("static regex")
    })
}

/// Reads `DIM<TAB>score` lines. Returns `None` unless all five dimensions
/// appear. Scores outside [0, 100] are clamped and reported in `warnings`.
pub fn parse_judge_reply(reply: &str, warnings: &mut Vec<String>) -> Option<JudgeScores> {
    let mut dims: [Option<f64>; 5] = [None; 5];
    for line in reply.lines() {
        let Some(caps) = score_line().captures(line.trim()) else {
            continue;
        };
        let Some(i) = dim_index(&caps[1]) else {
            continue;
        };
        if dims[i].is_some() {
            continue;
        }
        let raw: f64 = caps[2].parse().ok()?;
        let clamped = raw.clamp(0.0, 100.0);
        if clamped != raw {
            let w = format!("judge score {} {} out of range, clamped to {}", DIM_NAMES[i], raw, clamped);
            log::warn!("{w}");
            warnings.push(w);
        }
        dims[i] = Some(clamped);
    }
    let mut out = [0.0; 5];
    for (slot, d) in out.iter_mut().zip(dims) {
        *slot = d?;
    }
    Some(JudgeScores::from_dims(out))
}

pub struct Judge<'a> {
    provider: &'a dyn CompletionProvider,
    template: &'a str,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
}

impl<'a> Judge<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, templates: &'a PromptTemplates) -> Self {
        Judge {
            provider,
            template: &templates.judge,
            temperature: 0.0,
            max_output_tokens: 256,
            model_name: String::new(),
        }
    }

    pub fn prompt(&self, answer: &str, reference_chunk: &str) -> String {
        render(self.template, &[("reference", reference_chunk), ("answer", answer)])
    }

    pub fn judge_answer(
        &self,
        answer: &str,
        reference_chunk: &str,
        warnings: &mut Vec<String>,
    ) -> Result<JudgeScores, EvalError> {
        let prompt = self.prompt(answer, reference_chunk);
        let mut user = prompt.clone();
        for attempt in 0..2 {
            let request = CompletionRequest {
                model_name: self.model_name.clone(),
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
                ..CompletionRequest::new(JUDGE_SYSTEM, user.as_str())
            };
            let reply = self.provider.complete(&request).map_err(EvalError::JudgeProvider)?;
            if let Some(scores) = parse_judge_reply(&reply, warnings) {
                return Ok(scores);
            }
            if attempt == 1 {
                return Err(EvalError::JudgeParse(reply));
            }
            user = format!("{prompt}{REPROMPT_SUFFIX}");
        }
        unreachable!()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// Score the generated final answer.
    #[default]
    FinalAnswer,
    /// Score the concatenated retrieved evidence instead.
    RetrievedContext,
}

pub fn retrieved_context_text(result: &PipelineResult) -> String {
    let mut parts: Vec<&str> = Vec::new();
    if let Some(ev) = &result.instance_evidence {
        parts.extend(ev.edges.iter().map(|e| e.statement.as_str()));
    }
    if let Some(ev) = &result.concept_evidence {
        for e in &ev.subgraph.entities {
            parts.push(&e.name);
            if !e.description.is_empty() {
                parts.push(&e.description);
            }
        }
        parts.extend(ev.subgraph.edges.iter().map(|e| e.statement.as_str()));
    }
    if let Some(hits) = &result.chunk_evidence {
        parts.extend(hits.iter().map(|h| h.chunk.body.as_str()));
    }
    parts.join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query_id: String,
    pub mode: PipelineMode,
    pub cosine: Option<f64>,
    pub f1: Option<f64>,
    pub scores: Option<JudgeScores>,
    pub final_answer: Option<String>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl EvalRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: PipelineMode,
    pub rows: usize,
    pub failed_count: usize,
    pub cosine: Option<f64>,
    pub f1: Option<f64>,
    pub comprehensiveness: Option<f64>,
    pub diversity: Option<f64>,
    pub empowerment: Option<f64>,
    pub logicality: Option<f64>,
    pub readability: Option<f64>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<ModeAggregate>,
    pub failed_count: usize,
    pub config: serde_json::Value,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(mode: PipelineMode, rows: &[EvalRow]) -> ModeAggregate {
    let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.mode == mode).collect();
    let ok: Vec<&EvalRow> = mine.iter().copied().filter(|r| !r.failed()).collect();
    let dim = |i: usize| mean(ok.iter().filter_map(|r| r.scores.map(|s| s.dims()[i])));
    ModeAggregate {
        mode,
        rows: mine.len(),
        failed_count: mine.len() - ok.len(),
        cosine: mean(ok.iter().filter_map(|r| r.cosine)),
        f1: mean(ok.iter().filter_map(|r| r.f1)),
        comprehensiveness: dim(0),
        diversity: dim(1),
        empowerment: dim(2),
        logicality: dim(3),
        readability: dim(4),
        overall: mean(ok.iter().filter_map(|r| r.scores.map(|s| s.overall))),
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub score_target: ScoreTarget,
    pub concurrency: usize,
    pub k: Option<usize>,
    pub config: serde_json::Value,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            score_target: ScoreTarget::FinalAnswer,
            concurrency: 1,
            k: None,
            config: serde_json::Value::Null,
        }
    }
}

fn eval_row(
    gold: &GoldSet,
    mode: PipelineMode,
    pipeline: &Pipeline<'_>,
    graphs: Graphs<'_>,
    judge: &Judge<'_>,
    embedder: &dyn Embedder,
    options: &EvalOptions,
) -> EvalRow {
    let mut row = EvalRow {
        query_id: gold.query_id.clone(),
        mode,
        cosine: None,
        f1: None,
        scores: None,
        final_answer: None,
        error: None,
        warnings: Vec::new(),
    };
    let result = match pipeline.run(&gold.query, mode, graphs, options.k) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let target = match options.score_target {
        ScoreTarget::FinalAnswer => result.final_answer.clone(),
        ScoreTarget::RetrievedContext => retrieved_context_text(&result),
    };
    row.final_answer = Some(result.final_answer.clone());
    row.f1 = Some(token_f1(&target, &gold.golden_answers));
    match cosine_retrieval_score(&target, &gold.golden_answers, embedder) {
        Ok(c) => row.cosine = Some(c),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    match judge.judge_answer(&result.final_answer, &gold.reference_chunk, &mut row.warnings) {
        Ok(s) => row.scores = Some(s),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Evaluates every query under every mode. Rows are ordered query-major,
/// then by the order of `modes`, regardless of completion order.
pub fn run_eval(
    golds: &[GoldSet],
    modes: &[PipelineMode],
    pipeline: &Pipeline<'_>,
    graphs: Graphs<'_>,
    judge: &Judge<'_>,
    embedder: &dyn Embedder,
    options: &EvalOptions,
) -> EvalReport {
    let jobs: Vec<(&GoldSet, PipelineMode)> = golds.iter().flat_map(|g| modes.iter().map(move |m| (g, *m))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency.max(1))
        .build()
        .expect("thread pool");
    let rows: Vec<EvalRow> = pool.install(|| {
        jobs.par_iter()
            .map(|(g, m)| eval_row(g, *m, pipeline, graphs, judge, embedder, options))
            .collect()
    });
    let aggregates = modes.iter().map(|m| aggregate(*m, &rows)).collect();
    EvalReport {
        failed_count: rows.iter().filter(|r| r.failed()).count(),
        rows,
        aggregates,
        config: options.config.clone(),
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "query_id", "mode", "cosine", "f1", "comp", "div", "emp", "log", "read", "overall",
];

pub fn report_csv(report: &EvalReport) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        let dims = r.scores.map(|s| s.dims());
        let mut rec = vec![r.query_id.clone(), r.mode.to_string(), cell(r.cosine), cell(r.f1)];
        rec.extend((0..5).map(|i| cell(dims.map(|d| d[i]))));
        rec.push(cell(r.scores.map(|s| s.overall)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
    let io = |path: &Path, e: &dyn std::fmt::Display| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    let json = serde_json::to_string_pretty(report).map_err(|e| io(&json_path, &e))?;
    fs::write(&json_path, json + "\n").map_err(|e| io(&json_path, &e))?;
    let csv = report_csv(report).map_err(|e| io(&csv_path, &e))?;
    fs::write(&csv_path, csv).map_err(|e| io(&csv_path, &e))?;
    Ok((json_path, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::LocalHashEmbedder;
    use crate::gateway::ScriptedProvider;

    fn golds(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_text("Solve the whole numbers first, then the fractions."),
            "solve the whole numbers first then the fractions"
        );
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("A  B"), "a b");
    }

    #[test]
    fn tokenize_counts() {
        let bag = tokenize("a b a");
        assert_eq!((bag.count("a"), bag.count("b"), bag.len()), (2, 1, 3));
        assert!(tokenize("").is_empty());
        let s = normalize_text("Teach students to handle whole numbers and fractions separately, then combine.");
        assert_eq!(tokenize(&s).len(), 11);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("", &golds(&[""])), 1.0);
        assert_eq!(token_f1("a b", &golds(&["c d"])), 0.0);
        assert_eq!(token_f1("", &golds(&["c d"])), 0.0);
        assert_eq!(token_f1("a", &golds(&[""])), 0.0);
        assert_eq!(token_f1("add whole numbers", &golds(&["add the whole numbers first"])), 0.75);
        assert_eq!(token_f1("x y", &golds(&["q", "x y"])), 1.0);
    }

    #[test]
    fn cosine_score_examples() {
        let emb = LocalHashEmbedder::new(256);
        let s = cosine_retrieval_score("add whole numbers", &golds(&["add whole numbers"]), &emb).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        let multi = golds(&["fractions first", "add whole numbers", "zzz"]);
        let best = cosine_retrieval_score("add numbers", &multi, &emb).unwrap();
        for g in &multi {
            let one = cosine_retrieval_score("add numbers", std::slice::from_ref(g), &emb).unwrap();
            assert!(best >= one);
        }
    }

    #[test]
    fn judge_parses_and_averages() {
        let mut w = Vec::new();
        let s = parse_judge_reply("COMP\t80\nDIV\t60\nEMP\t70\nLOG\t90\nREAD\t100", &mut w).unwrap();
        assert_eq!(s.overall, 80.0);
        assert!(w.is_empty());

        let s = parse_judge_reply("COMP\t120\nDIV\t60\nEMP\t70\nLOG\t90\nREAD\t-5", &mut w).unwrap();
        assert_eq!(s.comprehensiveness, 100.0);
        assert_eq!(s.readability, 0.0);
        assert_eq!(w.len(), 2);

        let s = parse_judge_reply(
            "**Comprehensiveness**: 78\nDiversity (DIV): 70\n- EMP 74.5\nLogicality = 76\nREAD\t72",
            &mut w,
        )
        .unwrap();
        assert!((s.overall - 74.1).abs() < 1e-9);

        assert!(parse_judge_reply("COMP\t80\nDIV\t60", &mut w).is_none());
    }

    #[test]
    fn judge_reprompts_once() {
        let t = PromptTemplates::default();
        let mut p = ScriptedProvider::new();
        let probe = Judge::new(&p, &t).prompt("ans", "ref");
        p.insert(JUDGE_SYSTEM, &probe, "I think it is good.");
        p.insert(JUDGE_SYSTEM, &format!("{probe}{REPROMPT_SUFFIX}"), "COMP\t50\nDIV\t50\nEMP\t50\nLOG\t50\nREAD\t50");
        let judge = Judge::new(&p, &t);
        let s = judge.judge_answer("ans", "ref", &mut Vec::new()).unwrap();
        assert_eq!(s.overall, 50.0);

        let mut bad = ScriptedProvider::new();
        bad.insert(JUDGE_SYSTEM, &probe, "nope");
        bad.insert(JUDGE_SYSTEM, &format!("{probe}{REPROMPT_SUFFIX}"), "still nope");
        let judge = Judge::new(&bad, &t);
        assert!(matches!(judge.judge_answer("ans", "ref", &mut Vec::new()), Err(EvalError::JudgeParse(_))));
    }

    #[test]
    fn aggregate_over_successes() {
        let row = |id: &str, f1: f64, overall: Option<f64>| EvalRow {
            query_id: id.into(),
            mode: PipelineMode::Full,
            cosine: overall.map(|_| 0.5),
            f1: overall.map(|_| f1),
            scores: overall.map(|o| JudgeScores::from_dims([o; 5])),
            final_answer: None,
            error: overall.is_none().then(|| "boom".to_string()),
            warnings: vec![],
        };
        let rows = vec![row("a", 0.2, Some(60.0)), row("b", 0.4, Some(80.0)), row("c", 0.9, None)];
        let agg = aggregate(PipelineMode::Full, &rows);
        assert_eq!((agg.rows, agg.failed_count), (3, 1));
        assert!((agg.f1.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(agg.overall, Some(70.0));
        assert_eq!(aggregate(PipelineMode::CaseOnly, &rows).f1, None);
    }

    #[test]
    fn queries_jsonl() {
        let q = parse_queries(
            r#"{"query_id":"q1","query":"x","golden_answers":["a"],"reference_chunk":"r"}

{"query_id":"q2","query":"y","golden_answers":["b","c"],"reference_chunk":"r"}"#,
        )
        .unwrap();
        assert_eq!(q.len(), 2);
        let err = parse_queries(r#"{"query_id":"q1","query":"x","golden_answers":[],"reference_chunk":"r"}"#);
        assert!(matches!(err, Err(EvalError::Queries { line: 1, .. })));
    }

    #[test]
    fn csv_has_header_and_blank_failures() {
        let report = EvalReport {
            rows: vec![EvalRow {
                query_id: "q1".into(),
                mode: PipelineMode::CaseOnly,
                cosine: None,
                f1: None,
                scores: None,
                final_answer: None,
                error: Some("x".into()),
                warnings: vec![],
            }],
            aggregates: vec![],
            failed_count: 1,
            config: serde_json::Value::Null,
        };
        let csv = report_csv(&report).unwrap();
        assert_eq!(csv, "query_id,mode,cosine,f1,comp,div,emp,log,read,overall\nq1,case_only,,,,,,,,\n");
    }
}
