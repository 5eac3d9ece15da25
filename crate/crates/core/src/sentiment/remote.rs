use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Classifier, ClassifierError, Label, SentimentResult};

/// Endpoint settings for a chat-completions compatible service.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// For example `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Reads `RTSTREAM_LLM_BASE_URL`, `RTSTREAM_LLM_MODEL` and the optional
    /// `RTSTREAM_LLM_API_KEY`. Returns `None` unless both required
    /// variables are set.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var("RTSTREAM_LLM_BASE_URL").ok()?;
        let model = std::env::var("RTSTREAM_LLM_MODEL").ok()?;
        Some(Self {
            base_url,
            model,
            api_key: std::env::var("RTSTREAM_LLM_API_KEY").ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(30),
        })
    }
}

const SENTIMENT_PROMPT: &str = "Classify the sentiment of the customer review. \
Reply with only a JSON object of the form {\"label\": \"positive\" | \"neutral\" | \"negative\", \"confidence\": <number between 0 and 1>}.";

fn category_prompt(categories: &[String]) -> String {
    format!(
        "Assign the customer message to exactly one of these categories: {}. \
Reply with only a JSON object of the form {{\"category\": \"<name>\"}}.",
        categories.join(", ")
    )
}

/// Sends one chat-completion request per question and expects a JSON
/// verdict back. A malformed verdict is retried once; a second malformed
/// reply is an error. Transport and HTTP errors are not retried.
pub struct RemoteClassifier {
    config: RemoteConfig,
    id: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct SentimentVerdict {
    label: String,
    confidence: f64,
}

#[derive(Deserialize)]
struct CategoryVerdict {
    category: String,
}

impl RemoteClassifier {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        Self {
            id: format!("remote:{}", config.model),
            config,
            agent,
        }
    }

    /// The request body sent for `system`/`user` messages.
    pub fn request_body(&self, system: &str, user: &str) -> Value {
        json!({
            "model": self.config.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// One round trip. `Ok(Err(..))` is a malformed reply worth retrying.
    fn complete(&self, body: &Value) -> Result<Result<String, String>, ClassifierError> {
        let mut req = self.agent.post(&self.endpoint()).header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string().as_bytes())
            .map_err(|e| ClassifierError::ClassifierUnavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClassifierError::ClassifierUnavailable(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(ClassifierError::ClassifierUnavailable(format!("HTTP {status}: {snippet}")));
        }
        Ok(serde_json::from_str::<Completion>(&text)
            .map_err(|e| format!("unexpected response envelope: {e}"))
            .and_then(|c| {
                c.choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| "response has no choices".to_owned())
            }))
    }

    fn ask<T>(&self, system: &str, user: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ClassifierError> {
        let body = self.request_body(system, user);
        let mut last = String::new();
        for _attempt in 0..2 {
            match self.complete(&body)?.and_then(|content| parse(strip_fences(&content))) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::warn!(error = %e, "malformed verdict from remote classifier");
                    last = e;
                }
            }
        }
        Err(ClassifierError::MalformedVerdict(last))
    }
}

/// Models sometimes wrap JSON in a Markdown code fence.
fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    match t.strip_prefix("```") {
        Some(rest) => {
            let rest = rest.strip_prefix("json").unwrap_or(rest);
            rest.strip_suffix("```").unwrap_or(rest).trim()
        }
        None => t,
    }
}

impl Classifier for RemoteClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn categorize(&self, query: &str, categories: &[String]) -> Result<String, ClassifierError> {
        if query.trim().is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        self.ask(&category_prompt(categories), query, |content| {
            let v: CategoryVerdict = serde_json::from_str(content).map_err(|e| e.to_string())?;
            if categories.contains(&v.category) {
                Ok(v.category)
            } else {
                Err(format!("category {:?} is not one of the choices", v.category))
            }
        })
    }

    fn analyze(&self, text: &str) -> Result<SentimentResult, ClassifierError> {
        if text.trim().is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        self.ask(SENTIMENT_PROMPT, text, |content| {
            let v: SentimentVerdict = serde_json::from_str(content).map_err(|e| e.to_string())?;
            let label: Label = v.label.parse()?;
            if !(0.0..=1.0).contains(&v.confidence) {
                return Err(format!("confidence {} outside [0, 1]", v.confidence));
            }
            Ok(SentimentResult {
                label,
                confidence: v.confidence,
                classifier_id: self.id.clone(),
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::{Arc, Mutex};

    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::Router;

    const TRANSCRIPT: &str = include_str!("../../fixtures/remote_transcript.json");

    #[derive(Default)]
    struct Script {
        replies: VecDeque<(u16, String)>,
        seen: Vec<(Option<String>, Value)>,
    }

    /// Serves scripted replies on an ephemeral port and records requests.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Script>>) {
        let script = Arc::new(Mutex::new(Script {
            replies: replies.into(),
            seen: Vec::new(),
        }));
        let shared = script.clone();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route(
                        "/v1/chat/completions",
                        post(|State(s): State<Arc<Mutex<Script>>>, headers: HeaderMap, body: String| async move {
                            let mut s = s.lock().unwrap();
                            let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_owned());
                            s.seen.push((auth, serde_json::from_str(&body).unwrap()));
                            let (code, reply) = s.replies.pop_front().unwrap_or((500, "script exhausted".into()));
                            (StatusCode::from_u16(code).unwrap(), reply)
                        }),
                    )
                    .with_state(shared);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        (format!("http://{addr}/v1"), script)
    }

    fn client(base_url: String) -> RemoteClassifier {
        RemoteClassifier::new(RemoteConfig {
            base_url,
            model: "test-model".into(),
            api_key: Some("sk-test".into()),
            timeout: Duration::from_secs(5),
        })
    }

    fn completion(content: &str) -> String {
        json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn transcript_contract() {
        let transcript: Value = serde_json::from_str(TRANSCRIPT).unwrap();
        for exchange in transcript["exchanges"].as_array().unwrap() {
            let replies = exchange["replies"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| (r["status"].as_u64().unwrap() as u16, r["body"].to_string()))
                .collect();
            let (url, script) = mock_server(replies);
            let c = client(url);
            let input = exchange["input"].as_str().unwrap();
            let name = exchange["name"].as_str().unwrap();
            let got = match exchange["call"].as_str().unwrap() {
                "analyze" => c.analyze(input).map(|r| json!({"label": r.label, "confidence": r.confidence})),
                "categorize" => {
                    let cats: Vec<String> = serde_json::from_value(exchange["categories"].clone()).unwrap();
                    c.categorize(input, &cats).map(|cat| json!({"category": cat}))
                }
                other => panic!("unknown call {other}"),
            };
            match &exchange["expect"]["error"] {
                Value::String(kind) => {
                    let err = got.expect_err(name);
                    let actual = match err {
                        ClassifierError::MalformedVerdict(_) => "MalformedVerdict",
                        ClassifierError::ClassifierUnavailable(_) => "ClassifierUnavailable",
                        ClassifierError::EmptyInput => "EmptyInput",
                    };
                    assert_eq!(actual, kind, "{name}");
                }
                _ => assert_eq!(got.expect(name), exchange["expect"]["result"], "{name}"),
            }
            let s = script.lock().unwrap();
            let expected_requests = exchange["requests"].as_array().unwrap();
            assert_eq!(s.seen.len(), expected_requests.len(), "{name}: request count");
            for ((auth, body), want) in s.seen.iter().zip(expected_requests) {
                assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
                assert_eq!(body, want, "{name}: request body");
            }
        }
    }

    #[test]
    fn fenced_json_is_accepted() {
        let (url, _) = mock_server(vec![(200, completion("```json\n{\"label\": \"positive\", \"confidence\": 0.7}\n```"))]);
        let r = client(url).analyze("fine").unwrap();
        assert_eq!((r.label, r.confidence), (Label::Positive, 0.7));
        assert_eq!(r.classifier_id, "remote:test-model");
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = client(format!("http://{addr}/v1")).analyze("hello").unwrap_err();
        assert!(matches!(err, ClassifierError::ClassifierUnavailable(_)));
    }
}
