#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hyperrag_core::engine::{Engine, EngineConfig};
use hyperrag_core::gateway::{CompletionProvider, Gateway, LocalHashEmbedder};
use hyperrag_core::instance::FieldSchema;
use hyperrag_core::store::IndexBundle;
use hyperrag_core::synthetic::{concept_documents, planted_cases_jsonl, rule_provider};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Writes the synthetic reference texts and `n` planted cases under `root`.
pub fn write_corpus(root: &Path, n: usize) -> (PathBuf, PathBuf) {
    let concepts = root.join("concepts");
    for (id, body) in concept_documents() {
        let p = concepts.join(&id);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }
    let cases = root.join("cases.jsonl");
    fs::write(&cases, planted_cases_jsonl(n)).unwrap();
    (concepts, cases)
}

pub fn engine_with(completion: Arc<dyn CompletionProvider>) -> Engine {
    Engine::with_providers(
        EngineConfig::default(),
        completion,
        Arc::new(LocalHashEmbedder::new(256)),
        Gateway::new(4).unwrap(),
    )
    .unwrap()
}

pub fn rule_engine() -> Engine {
    engine_with(Arc::new(rule_provider()))
}

/// Builds the synthetic index with a fixed build time.
pub fn build_bundle(engine: &Engine, root: &Path, n: usize) -> IndexBundle {
    let (concepts, cases) = write_corpus(root, n);
    let (mut bundle, _) = engine.build(&concepts, &cases, &FieldSchema::misstep_default()).unwrap();
    bundle.manifest.built_at = 0;
    bundle
}

/// Compares `actual` with a committed snapshot. `HYPERRAG_BLESS=1` rewrites it.
pub fn assert_snapshot(name: &str, actual: &str) {
    let path = fixtures_dir().join(name);
    if std::env::var("HYPERRAG_BLESS").as_deref() == Ok("1") {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("snapshot {}: {e} (run with HYPERRAG_BLESS=1 to create)", path.display()));
    assert_eq!(actual, expected, "snapshot {name} differs");
}
