//! HTTP clients for the model endpoints. The LLM speaks the common JSON
//! chat-completion shape (messages list, single user turn); captioner,
//! classifier, and text-to-image use plain JSON POST contracts:
//!
//! * captioner:  `{"image_ref", "task_prompt"}` -> `{"caption"}`
//! * classifier: `{"image_ref", "top_k"}`       -> `{"labels": [..]}`
//! * t2i:        `{"prompt", "seed", "guidance_scale", "steps"}` ->
//!   `{"image_b64"}`
//!
//! Each endpoint enforces its own in-flight bound and retry policy; callers
//! never coordinate.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use crate::policy::Instruction;
use crate::tags::normalize_tag;

use super::log::{CallLog, CallRecord, Stage};
use super::store::{short_digest, ImageRef, ImageStore};
use super::{
    build_extraction_prompt, parse_extraction_output, BackendConfig, BackendError, BackendResult,
    BackendSuiteConfig, Captioner, DecodingMode, ExtractionOutput, ImageGenerator,
    LabelClassifier, RetryPolicy, TagExtractor, TextGenerator, CAPTION_TASK_PROMPT,
    REPROMPT_SUFFIX,
};

/// Counting semaphore bounding concurrent requests per endpoint.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

/// One HTTP endpoint: agent, auth, retry policy, in-flight bound, call log.
struct Endpoint {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    retry: RetryPolicy,
    limiter: Semaphore,
    stage: Stage,
    log: CallLog,
}

impl Endpoint {
    fn new(cfg: &BackendConfig, stage: Stage, log: CallLog) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build();
        Self {
            agent,
            url: cfg.endpoint.clone(),
            token: cfg.resolved_token(),
            retry: cfg.retry,
            limiter: Semaphore::new(cfg.max_in_flight.max(1)),
            stage,
            log,
        }
    }

    fn post_json(&self, payload: &Value) -> BackendResult<Value> {
        let _permit = self.limiter.acquire();
        let payload_digest = short_digest(payload.to_string().as_bytes());
        let ((result, attempts), latency) = super::timed(|| self.post_with_retries(payload));
        self.log.record(CallRecord {
            stage: self.stage,
            attempts,
            latency,
            payload_digest,
            ok: result.is_ok(),
        });
        result
    }

    fn post_with_retries(&self, payload: &Value) -> (BackendResult<Value>, u32) {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(payload) {
                Ok(value) => return (Ok(value), attempt),
                Err(TryError::Retryable(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return (
                            Err(BackendError::Transport {
                                stage: self.stage,
                                attempts: attempt,
                                message,
                            }),
                            attempt,
                        );
                    }
                    let backoff = self
                        .retry
                        .backoff_base_ms
                        .saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(backoff));
                }
                Err(TryError::Fatal(status, message)) => {
                    return (
                        Err(BackendError::Rejected {
                            stage: self.stage,
                            status,
                            message,
                        }),
                        attempt,
                    );
                }
            }
        }
    }

    fn post_once(&self, payload: &Value) -> Result<Value, TryError> {
        let mut request = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(payload.clone()) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| TryError::Retryable(format!("invalid JSON body: {e}"))),
            Err(ureq::Error::Status(code, response)) => {
                let body = response.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    Err(TryError::Retryable(format!("status {code}: {body}")))
                } else {
                    Err(TryError::Fatal(code, body))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(TryError::Retryable(t.to_string())),
        }
    }
}

enum TryError {
    Retryable(String),
    Fatal(u16, String),
}

/// Chat-completion wrapper used by both LLM roles.
struct ChatEndpoint {
    endpoint: Endpoint,
    model: Option<String>,
    decoding: DecodingMode,
}

impl ChatEndpoint {
    fn new(cfg: &BackendConfig, stage: Stage, log: CallLog) -> Self {
        Self {
            endpoint: Endpoint::new(cfg, stage, log),
            model: cfg.model.clone(),
            decoding: cfg.decoding,
        }
    }

    fn chat(&self, content: &str) -> BackendResult<String> {
        let mut payload = json!({
            "messages": [{"role": "user", "content": content}],
        });
        if let Some(model) = &self.model {
            payload["model"] = json!(model);
        }
        match self.decoding {
            DecodingMode::Greedy => {
                payload["greedy"] = json!(true);
                payload["temperature"] = json!(0.0);
            }
            DecodingMode::Sample { temperature } => {
                payload["temperature"] = json!(temperature);
            }
        }
        let reply = self.endpoint.post_json(&payload)?;
        let content = reply["choices"][0]["message"]["content"]
            .as_str()
            .or_else(|| reply["choices"][0]["text"].as_str())
            .ok_or_else(|| BackendError::MalformedResponse {
                stage: self.endpoint.stage,
                message: "no choices[0].message.content in reply".to_string(),
            })?;
        Ok(content.to_string())
    }
}

pub struct HttpBackendSet {
    pub captioner: Arc<dyn Captioner>,
    pub extractor: Arc<dyn TagExtractor>,
    pub classifier: Arc<dyn LabelClassifier>,
    pub text_generator: Arc<dyn TextGenerator>,
    pub image_generator: Arc<dyn ImageGenerator>,
}

impl HttpBackendSet {
    pub fn new(config: &BackendSuiteConfig, store: Arc<ImageStore>, log: CallLog) -> Self {
        Self {
            captioner: Arc::new(HttpCaptioner {
                endpoint: Endpoint::new(&config.captioner, Stage::Captioner, log.clone()),
            }),
            extractor: Arc::new(HttpTagExtractor {
                chat: ChatEndpoint::new(&config.extractor_llm, Stage::Extractor, log.clone()),
            }),
            classifier: Arc::new(HttpClassifier {
                endpoint: Endpoint::new(&config.classifier, Stage::Classifier, log.clone()),
            }),
            text_generator: Arc::new(HttpTextGenerator {
                chat: ChatEndpoint::new(&config.generator_llm, Stage::TextGenerator, log.clone()),
            }),
            image_generator: Arc::new(HttpImageGenerator {
                endpoint: Endpoint::new(&config.text_to_image, Stage::ImageGenerator, log),
                guidance_scale: config.text_to_image.guidance_scale,
                steps: config.text_to_image.diffusion_steps,
                store,
            }),
        }
    }
}

struct HttpCaptioner {
    endpoint: Endpoint,
}

impl Captioner for HttpCaptioner {
    fn generate_caption(&self, image: &ImageRef) -> BackendResult<String> {
        let payload = json!({
            "image_ref": image.as_str(),
            "task_prompt": CAPTION_TASK_PROMPT,
        });
        let reply = self.endpoint.post_json(&payload)?;
        let caption = reply["caption"]
            .as_str()
            .ok_or_else(|| BackendError::MalformedResponse {
                stage: Stage::Captioner,
                message: "no caption field in reply".to_string(),
            })?;
        Ok(caption.to_string())
    }
}

struct HttpTagExtractor {
    chat: ChatEndpoint,
}

impl TagExtractor for HttpTagExtractor {
    fn extract(&self, caption: &str) -> BackendResult<ExtractionOutput> {
        let prompt = build_extraction_prompt(caption);
        let reply = self.chat.chat(&prompt)?;
        match parse_extraction_output(&reply) {
            Ok(output) => Ok(output),
            Err(_) => {
                // One reprompt before flagging the sample.
                let retry_prompt = format!("{prompt}{REPROMPT_SUFFIX}");
                let reply = self.chat.chat(&retry_prompt)?;
                Ok(parse_extraction_output(&reply)?)
            }
        }
    }
}

struct HttpClassifier {
    endpoint: Endpoint,
}

impl LabelClassifier for HttpClassifier {
    fn classify(&self, image: &ImageRef, top_k: usize) -> BackendResult<Vec<String>> {
        let payload = json!({
            "image_ref": image.as_str(),
            "top_k": top_k,
        });
        let reply = self.endpoint.post_json(&payload)?;
        let raw = reply["labels"]
            .as_array()
            .ok_or_else(|| BackendError::MalformedResponse {
                stage: Stage::Classifier,
                message: "no labels array in reply".to_string(),
            })?;
        let mut labels = Vec::new();
        for value in raw {
            if let Some(label) = value.as_str().and_then(normalize_tag) {
                if !labels.contains(&label) {
                    labels.push(label);
                }
            }
        }
        labels.truncate(top_k);
        Ok(labels)
    }
}

struct HttpTextGenerator {
    chat: ChatEndpoint,
}

impl TextGenerator for HttpTextGenerator {
    fn generate(&self, instruction: &Instruction) -> BackendResult<String> {
        self.chat.chat(&instruction.rendered_text)
    }
}

struct HttpImageGenerator {
    endpoint: Endpoint,
    guidance_scale: f64,
    steps: u32,
    store: Arc<ImageStore>,
}

impl ImageGenerator for HttpImageGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> BackendResult<ImageRef> {
        let payload = json!({
            "prompt": prompt,
            "seed": seed,
            "guidance_scale": self.guidance_scale,
            "steps": self.steps,
        });
        let reply = self.endpoint.post_json(&payload)?;
        let encoded = reply["image_b64"]
            .as_str()
            .ok_or_else(|| BackendError::MalformedResponse {
                stage: Stage::ImageGenerator,
                message: "no image_b64 field in reply".to_string(),
            })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| BackendError::MalformedResponse {
                stage: Stage::ImageGenerator,
                message: format!("image_b64 is not valid base64: {e}"),
            })?;
        if bytes.is_empty() {
            return Err(BackendError::DegenerateImage);
        }
        self.store
            .put(&bytes, Some(prompt), Some(seed), "t2i")
            .map_err(BackendError::Store)
    }
}
