//! Deterministic mock backends. Every mock is a pure function of its inputs,
//! which makes path execution and filtering reproducible end to end:
//!
//! * images generated from a prompt embed the prompt's content words;
//! * captioning such an image surfaces those words again;
//! * the extractor and classifier only ever emit words from the caption or
//!   the embedded list.
//!
//! So re-tagging a mock image recovers exactly the content words of the
//! prompt that produced it, which is what the closed-loop filter checks.

use std::sync::Arc;
use std::time::Duration;

use crate::policy::Instruction;
use crate::tags::content_words;

use super::log::{CallLog, CallRecord, Stage};
use super::store::{short_digest, ImageRef, ImageStore};
use super::{
    parse_extraction_output, BackendResult, Captioner, ExtractionOutput, ImageGenerator,
    LabelClassifier, TagExtractor, TextGenerator,
};

/// First bytes of every mock pseudo-image.
pub const MOCK_IMAGE_MAGIC: &[u8] = b"MOCKIMG1\n";

#[derive(Debug, Clone, Copy, Default)]
pub struct MockOptions {
    /// Artificial per-call latency, for exercising concurrency and
    /// crash-resume behavior at realistic speeds.
    pub latency: Option<Duration>,
}

pub struct MockBackendSet {
    pub captioner: Arc<dyn Captioner>,
    pub extractor: Arc<dyn TagExtractor>,
    pub classifier: Arc<dyn LabelClassifier>,
    pub text_generator: Arc<dyn TextGenerator>,
    pub image_generator: Arc<dyn ImageGenerator>,
}

impl MockBackendSet {
    pub fn new(store: Arc<ImageStore>, log: CallLog, options: MockOptions) -> Self {
        Self {
            captioner: Arc::new(MockCaptioner {
                store: Arc::clone(&store),
                log: log.clone(),
                options,
            }),
            extractor: Arc::new(MockExtractor {
                log: log.clone(),
                options,
            }),
            classifier: Arc::new(MockClassifier {
                store: Arc::clone(&store),
                log: log.clone(),
                options,
            }),
            text_generator: Arc::new(MockTextGenerator {
                log: log.clone(),
                options,
            }),
            image_generator: Arc::new(MockImageGenerator {
                store,
                log,
                options,
            }),
        }
    }
}

fn simulate(options: &MockOptions) {
    if let Some(latency) = options.latency {
        std::thread::sleep(latency);
    }
}

fn record(log: &CallLog, stage: Stage, payload: &[u8], latency: Duration) {
    log.record(CallRecord {
        stage,
        attempts: 1,
        latency,
        payload_digest: short_digest(payload),
        ok: true,
    });
}

/// Digit suffix of a reference ("img_007" -> "007"), if any.
fn trailing_digits(reference: &str) -> Option<&str> {
    let trimmed = reference.trim_end_matches(|c: char| !c.is_ascii_digit());
    let suffix_start = trimmed
        .rfind(|c: char| !c.is_ascii_digit())
        .map_or(0, |i| i + c_len(trimmed, i));
    let digits = &trimmed[suffix_start..];
    (!digits.is_empty()).then_some(digits)
}

fn c_len(s: &str, idx: usize) -> usize {
    s[idx..].chars().next().map_or(1, char::len_utf8)
}

fn stripped_number(digits: &str) -> &str {
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() {
        "0"
    } else {
        stripped
    }
}

/// Embedded token list of a stored mock image, if `image` points at one.
fn embedded_tokens(store: &ImageStore, image: &ImageRef) -> Option<Vec<String>> {
    let bytes = store.get(image).ok()??;
    let rest = bytes.strip_prefix(MOCK_IMAGE_MAGIC)?;
    let text = String::from_utf8_lossy(rest);
    let tokens: Vec<String> = text
        .lines()
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(str::to_string)
        .collect();
    Some(tokens)
}

struct MockCaptioner {
    store: Arc<ImageStore>,
    log: CallLog,
    options: MockOptions,
}

impl Captioner for MockCaptioner {
    fn generate_caption(&self, image: &ImageRef) -> BackendResult<String> {
        let (caption, latency) = super::timed(|| {
            simulate(&self.options);
            match embedded_tokens(&self.store, image) {
                Some(tokens) => format!(
                    "mock caption for synthetic image with objects {}",
                    tokens.join(" ")
                ),
                None => {
                    let n = trailing_digits(image.as_str())
                        .map(|d| stripped_number(d).to_string())
                        .unwrap_or_else(|| short_digest(image.as_str().as_bytes())[..4].to_string());
                    format!(
                        "mock caption for {} with objects obj{n}a obj{n}b",
                        image.as_str()
                    )
                }
            }
        });
        record(&self.log, Stage::Captioner, image.as_str().as_bytes(), latency);
        Ok(caption)
    }
}

struct MockExtractor {
    log: CallLog,
    options: MockOptions,
}

impl TagExtractor for MockExtractor {
    fn extract(&self, caption: &str) -> BackendResult<ExtractionOutput> {
        let (reply, latency) = super::timed(|| {
            simulate(&self.options);
            // Compose the reply an ideal extractor LLM would give for this
            // caption, then run it through the production parser.
            let objects: Vec<String> = match caption.split_once(" with objects ") {
                Some((_, rest)) => rest.split_whitespace().map(str::to_string).collect(),
                None => content_words(caption).into_iter().take(10).collect(),
            };
            format!("attributes: \nobjects: {}\nrelations: ", objects.join(", "))
        });
        record(&self.log, Stage::Extractor, caption.as_bytes(), latency);
        Ok(parse_extraction_output(&reply)?)
    }
}

struct MockClassifier {
    store: Arc<ImageStore>,
    log: CallLog,
    options: MockOptions,
}

impl LabelClassifier for MockClassifier {
    fn classify(&self, image: &ImageRef, top_k: usize) -> BackendResult<Vec<String>> {
        let (labels, latency) = super::timed(|| {
            simulate(&self.options);
            match embedded_tokens(&self.store, image).filter(|t| !t.is_empty()) {
                Some(tokens) => (0..top_k)
                    .map(|i| tokens[i % tokens.len()].clone())
                    .collect(),
                None => {
                    let key = trailing_digits(image.as_str())
                        .map(str::to_string)
                        .unwrap_or_else(|| short_digest(image.as_str().as_bytes())[..6].to_string());
                    (0..top_k).map(|i| format!("label_{key}_{i}")).collect()
                }
            }
        });
        record(&self.log, Stage::Classifier, image.as_str().as_bytes(), latency);
        Ok(labels)
    }
}

struct MockTextGenerator {
    log: CallLog,
    options: MockOptions,
}

impl TextGenerator for MockTextGenerator {
    fn generate(&self, instruction: &Instruction) -> BackendResult<String> {
        let (reply, latency) = super::timed(|| {
            simulate(&self.options);
            let digest = short_digest(instruction.rendered_text.as_bytes());
            // Echo the task content so synthesized mock text contains the
            // tags (and caption) it was asked to integrate.
            format!("SYN[{digest}] {}", instruction.parts.task_content)
        });
        record(
            &self.log,
            Stage::TextGenerator,
            instruction.rendered_text.as_bytes(),
            latency,
        );
        Ok(reply)
    }
}

struct MockImageGenerator {
    store: Arc<ImageStore>,
    log: CallLog,
    options: MockOptions,
}

impl ImageGenerator for MockImageGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> BackendResult<ImageRef> {
        let ((), latency) = super::timed(|| simulate(&self.options));
        let tokens = content_words(prompt);
        let bytes = format!(
            "{}{}\nseed={seed}\n",
            String::from_utf8_lossy(MOCK_IMAGE_MAGIC),
            tokens.join(" ")
        );
        let image = self
            .store
            .put(bytes.as_bytes(), Some(prompt), Some(seed), "t2i-mock")
            .map_err(super::BackendError::Store)?;
        record(&self.log, Stage::ImageGenerator, prompt.as_bytes(), latency);
        Ok(image)
    }
}
