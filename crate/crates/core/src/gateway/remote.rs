use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{CompletionProvider, CompletionRequest, Embedder, EmbeddingVector, GatewayError, ProviderConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Minimal blocking HTTP surface, injectable for tests.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP transport. The client is built on first use so that a
/// transport can be created from inside an async runtime.
#[derive(Default)]
pub struct ReqwestTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, GatewayError> {
        Ok(ReqwestTransport::default())
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, TransportError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError(format!("http client: {e}")))?;
        Ok(self.client.get_or_init(|| built))
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client()?
            .post(url)
            .timeout(timeout)
            .header("content-type", "application/json")
            .body(body.to_string());
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore bounding in-flight remote requests.
pub struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Limiter {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter lock");
        while *n == 0 {
            n = self.cv.wait(n).expect("limiter lock");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-style chat-completion and embedding client.
pub struct RemoteClient {
    config: ProviderConfig,
    transport: Arc<dyn HttpTransport>,
    limiter: Arc<Limiter>,
}

impl RemoteClient {
    pub fn new(config: ProviderConfig, transport: Arc<dyn HttpTransport>, limiter: Arc<Limiter>) -> Self {
        RemoteClient {
            config,
            transport,
            limiter,
        }
    }

    fn url(&self, path: &str) -> String {
        let base = self.config.endpoint_url.as_deref().unwrap_or("").trim_end_matches('/');
        format!("{base}{path}")
    }

    fn headers(&self) -> Vec<(String, String)> {
        match std::env::var(&self.config.api_key_env_var) {
            Ok(key) if !key.is_empty() => {
                let value = if self.config.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {key}")
                } else {
                    key
                };
                vec![(self.config.auth_header.clone(), value)]
            }
            _ => Vec::new(),
        }
    }

    /// POSTs with retries on transport errors, 408, 429 and 5xx.
    /// Other non-2xx statuses are surfaced immediately.
    fn post_with_retry(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.url(path);
        let headers = self.headers();
        let timeout = Duration::from_secs(self.config.timeout_secs.max(1));
        let max_attempts = self.config.retry_limit + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.post_json(&url, &headers, body, timeout)
            };
            let err = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    log::debug!("POST {url} succeeded on attempt {attempt}");
                    return serde_json::from_str(&resp.body)
                        .map_err(|e| GatewayError::InvalidResponse(format!("body is not JSON: {e}")));
                }
                Ok(resp) if is_transient(resp.status) => GatewayError::Status {
                    status: resp.status,
                    body: truncate(&resp.body),
                },
                Ok(resp) => {
                    return Err(GatewayError::Status {
                        status: resp.status,
                        body: truncate(&resp.body),
                    })
                }
                Err(e) => GatewayError::Transport {
                    attempts: attempt,
                    message: e.0,
                },
            };
            log::warn!("POST {url} attempt {attempt}/{max_attempts} failed: {err}");
            if attempt >= max_attempts {
                return Err(match err {
                    GatewayError::Transport { message, .. } => GatewayError::Transport {
                        attempts: attempt,
                        message,
                    },
                    other => other,
                });
            }
            let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
            if delay > 0 {
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
    }
}

fn is_transient(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

fn truncate(body: &str) -> String {
    const MAX: usize = 512;
    if body.len() <= MAX {
        return body.to_string();
    }
    let mut end = MAX;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &body[..end])
}

impl CompletionProvider for RemoteClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let model = if request.model_name.is_empty() {
            &self.config.model_name
        } else {
            &request.model_name
        };
        let body = json!({
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = self.post_with_retry(&self.config.completion_path, &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message.content".into()))
    }
}

impl Embedder for RemoteClient {
    fn dimension(&self) -> usize {
        self.config.embedding_dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let body = json!({"model": self.config.model_name, "input": text});
        let resp = self.post_with_retry(&self.config.embedding_path, &body)?;
        let raw = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::InvalidResponse("missing data[0].embedding".into()))?;
        let components = raw
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| GatewayError::InvalidResponse("embedding has non-numeric entries".into()))?;
        if components.len() != self.config.embedding_dimension {
            return Err(GatewayError::DimensionMismatch {
                expected: self.config.embedding_dimension,
                got: components.len(),
            });
        }
        EmbeddingVector::new(components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replays a queue of outcomes and counts hits.
    struct StubTransport {
        queue: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        hits: AtomicUsize,
        last_body: Mutex<Option<Value>>,
        last_headers: Mutex<Vec<(String, String)>>,
    }

    impl StubTransport {
        fn new(outcomes: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            Arc::new(StubTransport {
                queue: Mutex::new(outcomes.into()),
                hits: AtomicUsize::new(0),
                last_body: Mutex::new(None),
                last_headers: Mutex::new(Vec::new()),
            })
        }
    }

    impl HttpTransport for StubTransport {
        fn post_json(
            &self,
            _url: &str,
            headers: &[(String, String)],
            body: &Value,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            self.hits.fetch_add(1, Ordering::SeqCst);
            *self.last_body.lock().unwrap() = Some(body.clone());
            *self.last_headers.lock().unwrap() = headers.to_vec();
            self.queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(TransportError("queue exhausted".into())))
        }
    }

    fn ok(body: Value) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            body: body.to_string(),
        })
    }

    fn client(stub: Arc<StubTransport>, retry_limit: u32) -> RemoteClient {
        let config = ProviderConfig {
            retry_limit,
            backoff_base_ms: 0,
            api_key_env_var: "HYPERRAG_TEST_UNSET_KEY".into(),
            ..ProviderConfig::remote("http://stub/v1/")
        };
        RemoteClient::new(config, stub, Arc::new(Limiter::new(4)))
    }

    fn chat(text: &str) -> Value {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
    }

    #[test]
    fn two_transient_failures_then_success() {
        let stub = StubTransport::new(vec![
            Err(TransportError("connection reset".into())),
            Ok(HttpResponse { status: 503, body: "busy".into() }),
            ok(chat("hello")),
        ]);
        let c = client(stub.clone(), 3);
        let out = c.complete(&CompletionRequest::new("s", "u")).unwrap();
        assert_eq!(out, "hello");
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
        let body = stub.last_body.lock().unwrap().clone().unwrap();
        assert_eq!(body["temperature"], json!(0.2));
        assert_eq!(body["max_tokens"], json!(1024));
        assert_eq!(body["model"], json!("gpt-4o-mini"));
        assert_eq!(body["messages"][1]["content"], json!("u"));
    }

    #[test]
    fn retries_exhausted() {
        let stub = StubTransport::new(vec![]);
        let c = client(stub.clone(), 2);
        match c.complete(&CompletionRequest::new("s", "u")).unwrap_err() {
            GatewayError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let stub = StubTransport::new(vec![Ok(HttpResponse {
            status: 401,
            body: r#"{"error":{"message":"bad key"}}"#.into(),
        })]);
        let c = client(stub.clone(), 3);
        match c.complete(&CompletionRequest::new("s", "u")).unwrap_err() {
            GatewayError::Status { status, body } => {
                assert_eq!(status, 401);
                assert!(body.contains("bad key"));
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn embedding_extracted_and_checked() {
        let dim = 4;
        let stub = StubTransport::new(vec![
            ok(json!({"data": [{"embedding": [0.5, 0.5, 0.5, 0.5]}]})),
            ok(json!({"data": [{"embedding": [0.5, 0.5]}]})),
            ok(json!({"nothing": true})),
        ]);
        let mut c = client(stub.clone(), 0);
        c.config.embedding_dimension = dim;
        assert_eq!(c.embed("x").unwrap().components(), &[0.5; 4]);
        assert_eq!(stub.last_body.lock().unwrap().clone().unwrap()["input"], json!("x"));
        assert!(matches!(c.embed("x"), Err(GatewayError::DimensionMismatch { expected: 4, got: 2 })));
        assert!(matches!(c.embed("x"), Err(GatewayError::InvalidResponse(_))));
    }

    #[test]
    fn auth_header_from_env() {
        let stub = StubTransport::new(vec![ok(chat("a")), ok(chat("b"))]);
        let mut c = client(stub.clone(), 0);
        c.config.api_key_env_var = "HYPERRAG_TEST_REMOTE_KEY".into();
        std::env::set_var("HYPERRAG_TEST_REMOTE_KEY", "sekrit");
        c.complete(&CompletionRequest::new("s", "u")).unwrap();
        assert_eq!(
            stub.last_headers.lock().unwrap().clone(),
            vec![("Authorization".to_string(), "Bearer sekrit".to_string())]
        );
        c.config.auth_header = "api-key".into();
        c.complete(&CompletionRequest::new("s", "u")).unwrap();
        assert_eq!(
            stub.last_headers.lock().unwrap().clone(),
            vec![("api-key".to_string(), "sekrit".to_string())]
        );
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, active, peak) = (limiter.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
