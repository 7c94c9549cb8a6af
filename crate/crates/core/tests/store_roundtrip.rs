mod common;

use std::fs;

use hyperrag_core::retrieval::Retriever;
use hyperrag_core::store::{load_index, save_index};
use hyperrag_core::synthetic::planted_mistake;

#[test]
fn synthetic_build_digest_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 20);
    let digest = save_index(&bundle, &dir.path().join("index")).unwrap();
    common::assert_snapshot("synthetic_index.sha256", &format!("{digest}\n"));
}

#[test]
fn reload_preserves_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 20);
    let out = dir.path().join("index");
    save_index(&bundle, &out).unwrap();
    let back = load_index(&out).unwrap();
    assert_eq!(back.concept_graph, bundle.concept_graph);
    assert_eq!(back.instance_graph, bundle.instance_graph);
    assert_eq!(back.chunk_store(), bundle.chunk_store());

    let r = Retriever::new(engine.config.retrieval.clone(), &engine.keywords, &*engine.embedder);
    for i in 0..20 {
        let qc = r.query_context(&planted_mistake(i)).unwrap();
        let a = r.retrieve_instances(&bundle.instance_graph, &qc, 5).unwrap();
        let b = r.retrieve_instances(&back.instance_graph, &qc, 5).unwrap();
        assert_eq!(a, b);
        let a = r.retrieve_concepts(&bundle.concept_graph, &planted_mistake(i), 8, 3).unwrap();
        let b = r.retrieve_concepts(&back.concept_graph, &planted_mistake(i), 8, 3).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn save_leaves_no_temporary_directory() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::rule_engine();
    let bundle = common::build_bundle(&engine, dir.path(), 5);
    let out = dir.path().join("index");
    let first = save_index(&bundle, &out).unwrap();
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".tmp-"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
    assert_eq!(save_index(&bundle, &out).unwrap(), first);
}
