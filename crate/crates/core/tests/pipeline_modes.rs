mod common;

use std::sync::Arc;

use hyperrag_core::gateway::{CallCounter, CompletionRequest, FnProvider, GatewayError};
use hyperrag_core::hypergraph::Layer;
use hyperrag_core::pipeline::{Graphs, PipelineError, PipelineMode};
use hyperrag_core::synthetic::{planted_mistake, rule_reply};

const QUERY: &str = "As a teacher, how can I help students who add denominators when adding fractions?";

#[test]
fn full_mode_prompts_match_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 12);
    let r = engine.pipeline().run(QUERY, PipelineMode::Full, bundle.graphs(), None).unwrap();
    assert_eq!(r.prompts.len(), 2);
    common::assert_snapshot("prompts/full_stage1.txt", &r.prompts[0].prompt);
    common::assert_snapshot("prompts/full_stage2.txt", &r.prompts[1].prompt);
    for mode in [PipelineMode::ConceptOnly, PipelineMode::NoRetrieval, PipelineMode::FlatChunk] {
        let r = engine.pipeline().run(QUERY, mode, bundle.graphs(), None).unwrap();
        common::assert_snapshot(&format!("prompts/{mode}.txt"), &r.prompts[0].prompt);
    }
}

#[test]
fn call_counts_and_layers_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 12);
    let counter = CallCounter::new(FnProvider(rule_reply));
    let mut pipeline = hyperrag_core::pipeline::Pipeline::new(&counter, &*engine.embedder, &engine.keywords, &engine.templates);
    pipeline.retrieval = engine.config.retrieval.clone();
    for mode in PipelineMode::ALL {
        counter.reset();
        let r = pipeline.run(&planted_mistake(3), mode, bundle.graphs(), None).unwrap();
        assert_eq!(counter.calls(), mode.completion_calls(), "{mode}");
        assert!(!r.final_answer.trim().is_empty());
        let layers: Vec<Option<Layer>> = r.provenance.iter().map(|id| Layer::of_id(id)).collect();
        match mode {
            PipelineMode::Full => {
                assert!(layers.contains(&Some(Layer::Instance)) && layers.contains(&Some(Layer::Concept)));
                assert!(r.provenance.iter().position(|id| id.starts_with("IH")) < r.provenance.iter().position(|id| id.starts_with("CE")));
            }
            PipelineMode::CaseOnly => {
                assert!(!layers.contains(&Some(Layer::Concept)));
                assert_eq!(r.stage1_answer.as_deref(), Some(r.final_answer.as_str()));
            }
            PipelineMode::ConceptOnly => assert!(!layers.contains(&Some(Layer::Instance))),
            PipelineMode::NoRetrieval => assert!(r.provenance.is_empty()),
            PipelineMode::FlatChunk => assert!(layers.iter().all(|l| l.is_none()) && !layers.is_empty()),
        }
    }
}

#[test]
fn stage_two_failure_is_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 6);
    let failing = common::engine_with(Arc::new(FnProvider(|r: &CompletionRequest| {
        if r.user_prompt.contains("\nDRAFT\n") {
            Err(GatewayError::Status { status: 500, body: "down".into() })
        } else {
            rule_reply(r)
        }
    })));
    let err = failing.pipeline().run(QUERY, PipelineMode::Full, bundle.graphs(), None).unwrap_err();
    assert_eq!(err.stage(), Some("stage2"));
    assert!(err.to_string().starts_with("stage2: provider failure"), "{err}");
}

#[test]
fn empty_answer_and_missing_graph() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 6);
    let blank = common::engine_with(Arc::new(FnProvider(|_: &CompletionRequest| Ok("   ".to_string()))));
    let err = blank.pipeline().run(QUERY, PipelineMode::NoRetrieval, bundle.graphs(), None).unwrap_err();
    assert!(matches!(err, PipelineError::EmptyAnswer { stage: "no_retrieval" }));

    let only_instance = Graphs {
        concept: None,
        ..bundle.graphs()
    };
    let err = engine.pipeline().run(QUERY, PipelineMode::Full, only_instance, None).unwrap_err();
    assert!(matches!(err, PipelineError::MissingGraph { layer: Layer::Concept, .. }));
    assert!(engine.pipeline().run(QUERY, PipelineMode::CaseOnly, only_instance, None).is_ok());
}

#[test]
fn batch_keeps_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 10);
    let queries: Vec<String> = (0..10).map(planted_mistake).collect();
    let serial: Vec<_> = queries
        .iter()
        .map(|q| engine.pipeline().run(q, PipelineMode::Full, bundle.graphs(), None).unwrap())
        .collect();
    let batch = engine.pipeline().run_batch(&queries, PipelineMode::Full, bundle.graphs(), None, 4);
    for (a, b) in serial.iter().zip(batch) {
        assert_eq!(a, &b.unwrap());
    }
}
