//! Provider-agnostic completion and embedding services.
//!
//! Three provider modes exist:
//!
//! * `remote`: an OpenAI-style HTTP endpoint with bounded retries,
//! * `scripted`: replay of a JSON Lines fixture keyed by prompt digest,
//! * `local-hash`: a deterministic bag-of-tokens embedder (embedding only).

mod local;
mod remote;
mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::{fnv1a64, LocalHashEmbedder};
pub use remote::{HttpResponse, HttpTransport, Limiter, RemoteClient, ReqwestTransport, TransportError};
pub use scripted::{prompt_digest, FixtureEntry, Recorder, ScriptedProvider};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const DEFAULT_EMBEDDING_DIMENSION: usize = 256;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no fixture entry for prompt digest {digest}")]
    MissingFixture { digest: String },
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("malformed provider response: {0}")]
    InvalidResponse(String),
    #[error("{0} provider does not support {1}")]
    Unsupported(ProviderMode, &'static str),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding has non-finite components")]
    NonFinite,
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    /// Empty means "the provider's configured model".
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        CompletionRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            model_name: String::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed(text)
    }
}

/// Wraps a provider and counts completion calls.
pub struct CallCounter<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CallCounter<P> {
    pub fn new(inner: P) -> Self {
        CallCounter {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<P: CompletionProvider> CompletionProvider for CallCounter<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Completion provider backed by a closure. Handy for offline runs and for
/// recording fixtures with [`Recorder`].
pub struct FnProvider<F>(pub F);

impl<F> CompletionProvider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (self.0)(request)
    }
}

/// A dense embedding. Components are stored as `f32`; all arithmetic on
/// them is done in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    components: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(components: Vec<f32>) -> Result<Self, GatewayError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(GatewayError::NonFinite);
        }
        Ok(EmbeddingVector { components })
    }

    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector {
            components: vec![0.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|&c| f64::from(c) * f64::from(c))
            .sum::<f64>()
            .sqrt()
    }
}

/// Formats an `f32` with nine significant digits, enough to round-trip it.
pub fn format_component(x: f32) -> String {
    format!("{x:.8e}")
}

impl Serialize for EmbeddingVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.components.len()))?;
        for &c in &self.components {
            // the 9-digit decimal parses to an f64 whose shortest repr is that decimal
            let v: f64 = format_component(c).parse().map_err(serde::ser::Error::custom)?;
            seq.serialize_element(&v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = EmbeddingVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of finite numbers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(x) = seq.next_element::<f64>()? {
                    out.push(x as f32);
                }
                EmbeddingVector::new(out).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_seq(V)
    }
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, GatewayError> {
    if a.dimension() != b.dimension() {
        return Err(GatewayError::DimensionMismatch {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.components.iter().zip(&b.components) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderMode {
    Remote,
    Scripted,
    LocalHash,
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderMode::Remote => "remote",
            ProviderMode::Scripted => "scripted",
            ProviderMode::LocalHash => "local-hash",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: String,
    pub model_name: String,
    pub embedding_dimension: usize,
    /// Retries after the first attempt.
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
    pub fixture_path: Option<PathBuf>,
    pub completion_path: String,
    pub embedding_path: String,
    /// Header carrying the key; `Authorization` gets a `Bearer ` prefix.
    pub auth_header: String,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Remote,
            endpoint_url: None,
            api_key_env_var: "OPENAI_API_KEY".into(),
            model_name: "gpt-4o-mini".into(),
            embedding_dimension: DEFAULT_EMBEDDING_DIMENSION,
            retry_limit: 3,
            backoff_base_ms: 250,
            fixture_path: None,
            completion_path: "/chat/completions".into(),
            embedding_path: "/embeddings".into(),
            auth_header: "Authorization".into(),
            timeout_secs: 120,
        }
    }
}

impl ProviderConfig {
    pub fn local_hash(dimension: usize) -> Self {
        ProviderConfig {
            mode: ProviderMode::LocalHash,
            embedding_dimension: dimension,
            ..Default::default()
        }
    }

    pub fn scripted(fixture: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            mode: ProviderMode::Scripted,
            fixture_path: Some(fixture.into()),
            ..Default::default()
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            endpoint_url: Some(endpoint.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.mode {
            ProviderMode::Remote if self.endpoint_url.as_deref().unwrap_or("").is_empty() => {
                Err(GatewayError::Config("remote mode requires endpoint_url".into()))
            }
            ProviderMode::Scripted if self.fixture_path.is_none() => {
                Err(GatewayError::Config("scripted mode requires fixture_path".into()))
            }
            _ if self.embedding_dimension == 0 => {
                Err(GatewayError::Config("embedding_dimension must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Builds providers from configs. Every remote client created by one
/// gateway shares the same in-flight limiter and transport.
pub struct Gateway {
    transport: Arc<dyn HttpTransport>,
    limiter: Arc<Limiter>,
}

impl Gateway {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn new(max_in_flight: usize) -> Result<Self, GatewayError> {
        Ok(Self::with_transport(Arc::new(ReqwestTransport::new()?), max_in_flight))
    }

    pub fn with_transport(transport: Arc<dyn HttpTransport>, max_in_flight: usize) -> Self {
        Gateway {
            transport,
            limiter: Arc::new(Limiter::new(max_in_flight)),
        }
    }

    pub fn completion(&self, config: &ProviderConfig) -> Result<Arc<dyn CompletionProvider>, GatewayError> {
        config.validate()?;
        match config.mode {
            ProviderMode::Remote => Ok(Arc::new(self.remote(config))),
            ProviderMode::Scripted => Ok(Arc::new(ScriptedProvider::from_path(
                config.fixture_path.as_ref().expect("validated"),
            )?)),
            ProviderMode::LocalHash => Err(GatewayError::Unsupported(config.mode, "completion")),
        }
    }

    pub fn embedder(&self, config: &ProviderConfig) -> Result<Arc<dyn Embedder>, GatewayError> {
        config.validate()?;
        match config.mode {
            ProviderMode::Remote => Ok(Arc::new(self.remote(config))),
            ProviderMode::LocalHash => Ok(Arc::new(LocalHashEmbedder::new(config.embedding_dimension))),
            ProviderMode::Scripted => Err(GatewayError::Unsupported(config.mode, "embedding")),
        }
    }

    fn remote(&self, config: &ProviderConfig) -> RemoteClient {
        RemoteClient::new(config.clone(), self.transport.clone(), self.limiter.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn v(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(GatewayError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let a: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f32> = a.iter().map(|x| x * 4.0).collect();
            let ab = cosine(&v(&a), &v(&b)).unwrap();
            assert!((ab - cosine(&v(&b), &v(&a)).unwrap()).abs() <= 1e-9);
            assert!((ab - cosine(&v(&scaled), &v(&b)).unwrap()).abs() <= 1e-9);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(EmbeddingVector::new(vec![f32::NAN]), Err(GatewayError::NonFinite)));
    }

    #[test]
    fn serialization_round_trips_f32() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let xs: Vec<f32> = (0..512)
            .map(|_| rng.gen_range(-1.0f32..1.0) * 10f32.powi(rng.gen_range(-8..3)))
            .chain([0.0, -0.0, 1.0, f32::MIN_POSITIVE, f32::MAX])
            .collect();
        let vec = v(&xs);
        let json = serde_json::to_string(&vec).unwrap();
        let back: EmbeddingVector = serde_json::from_str(&json).unwrap();
        for (a, b) in vec.components().iter().zip(back.components()) {
            assert_eq!(a.to_bits() & 0x7fff_ffff, b.to_bits() & 0x7fff_ffff);
        }
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::default().validate().is_err());
        assert!(ProviderConfig::remote("http://x").validate().is_ok());
        let mut c = ProviderConfig::local_hash(256);
        c.fixture_path = None;
        assert!(c.validate().is_ok());
        assert!(ProviderConfig {
            mode: ProviderMode::Scripted,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn default_request_temperature() {
        let r = CompletionRequest::new("s", "u");
        assert_eq!(r.temperature, 0.2);
        assert_eq!(r.max_output_tokens, 1024);
    }
}
