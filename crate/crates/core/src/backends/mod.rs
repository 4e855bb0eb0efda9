//! Pluggable model endpoints for the three model nodes: vision tagging
//! (captioner + tag-extractor LLM + multi-label classifier), text-generation
//! LLM, and text-to-image. Real HTTP clients and deterministic mocks share
//! the same traits, so the whole pipeline runs identically against either.

mod http;
mod log;
mod mock;
mod store;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::Instruction;
use crate::tags::{merge_tag_sets, normalize_tag, VisualTags};

pub use http::HttpBackendSet;
pub use log::{CallLog, CallRecord, Stage};
pub use mock::{MockBackendSet, MockOptions, MOCK_IMAGE_MAGIC};
pub use store::{hex_digest, short_digest, ImageMeta, ImageRef, ImageStore, STORE_REF_PREFIX};

/// Task prompt sent to the captioning model for full-detail captions.
pub const CAPTION_TASK_PROMPT: &str = "<MORE_DETAILED_CAPTION>";

/// Default number of classifier labels merged into the extracted objects.
pub const DEFAULT_CLASSIFIER_TOP_K: usize = 20;

/// Few-shot instruction for extracting attributes, objects, and relations
/// from a caption. `{caption}` is substituted; everything else is frozen.
pub const EXTRACTION_INSTRUCTION: &str = "For a given image caption, identify all the attributes, objects or entities, and visual relationships or actions that are phrases. The phrases should only come from the caption. Separate the phrases by comma without formatting. Output three lines:
attributes: phrases
objects: phrases
relations: phrases

Examples:

caption: The image is a close-up portrait of a middle-aged man wearing a white cowboy hat. He appears to be in his late 60s or early 70s, with gray hair and a serious expression on his face. He is wearing a dark suit jacket and a light blue collared shirt. The background is a clear blue sky with trees visible in the distance. The man is looking off to the side with a slight smile on his lips.
attributes: close-up, middle-aged, white cowboy hat, gray hair, serious expression, light blue
objects: portrait, man, hat, face, dark suit jacket, shirt, blue sky, trees, lips
relations: wearing a, visible in the distance, looking off to the side, slight smile on his lips

caption: The image shows a female singer performing on a stage. She is standing on a set of stairs with her legs spread apart and holding a microphone in her hand. The stage is lit up with red and blue lights and there is a large circular screen in the background. The singer is wearing a black and white patterned outfit with high heels. She appears to be in the middle of a song or performance.
attributes: female singer, stage, set of stairs, red and blue lights, large circular screen, black and white patterned outfit, high heels
objects: female singer, stage, set of stairs, legs, microphone, screen, outfit, high heels, song, performance
relations: performing on a stage, standing on, her legs spread apart, holding, lit up, background, wearing, in the middle of a song

caption: {caption}";

/// Appended when the first extraction reply cannot be parsed and we ask once
/// more before flagging the sample.
pub(crate) const REPROMPT_SUFFIX: &str = "\n\nYour previous reply could not be parsed. Output exactly three lines starting with \"attributes:\", \"objects:\", and \"relations:\".";

pub fn build_extraction_prompt(caption: &str) -> String {
    EXTRACTION_INSTRUCTION.replace("{caption}", caption)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractionParseError {
    #[error("missing {0} line")]
    MissingLabel(&'static str),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{stage}: transport error after {attempts} attempts: {message}")]
    Transport {
        stage: Stage,
        attempts: u32,
        message: String,
    },
    #[error("{stage}: endpoint rejected request ({status}): {message}")]
    Rejected {
        stage: Stage,
        status: u16,
        message: String,
    },
    #[error("degenerate caption")]
    DegenerateCaption,
    #[error("degenerate generation")]
    DegenerateGeneration,
    #[error("degenerate image")]
    DegenerateImage,
    #[error("caption must not be empty")]
    EmptyCaption,
    #[error("unparseable extraction: {0}")]
    UnparseableExtraction(#[from] ExtractionParseError),
    #[error("{stage}: malformed response: {message}")]
    MalformedResponse { stage: Stage, message: String },
    #[error("image store: {0}")]
    Store(#[source] std::io::Error),
}

impl BackendError {
    /// Transport exhaustion is worth a job-level retry; everything else is a
    /// property of the sample or the configuration.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

/// How the LLM decodes. Greedy is the default so runs are reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodingMode {
    #[default]
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first. Must be >= 1.
    pub max_attempts: u32,
    /// Backoff before attempt n+1 is `base * 2^(n-1)`.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 200,
        }
    }
}

/// Per-endpoint connection settings plus the generation parameters that ride
/// along on every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    /// Environment variable to read the token from when `auth_token` is
    /// unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub decoding: DecodingMode,
    #[serde(default = "default_guidance_scale")]
    pub guidance_scale: f64,
    #[serde(default = "default_diffusion_steps")]
    pub diffusion_steps: u32,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_in_flight() -> usize {
    8
}

fn default_guidance_scale() -> f64 {
    7.0
}

fn default_diffusion_steps() -> u32 {
    28
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            auth_token: None,
            auth_token_env: None,
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            retry: RetryPolicy::default(),
            model: None,
            decoding: DecodingMode::default(),
            guidance_scale: default_guidance_scale(),
            diffusion_steps: default_diffusion_steps(),
        }
    }
}

impl BackendConfig {
    pub fn for_endpoint(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint.is_empty() {
            return Err("endpoint must not be empty".to_string());
        }
        if self.max_in_flight < 1 {
            return Err("max_in_flight must be >= 1".to_string());
        }
        if self.timeout_secs <= 0.0 || self.timeout_secs.is_nan() {
            return Err("timeout_secs must be > 0".to_string());
        }
        if self.retry.max_attempts < 1 {
            return Err("retry.max_attempts must be >= 1".to_string());
        }
        Ok(())
    }

    pub fn resolved_token(&self) -> Option<String> {
        if let Some(token) = &self.auth_token {
            return Some(token.clone());
        }
        self.auth_token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
    }
}

/// Endpoint configuration for the whole model suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSuiteConfig {
    pub captioner: BackendConfig,
    pub extractor_llm: BackendConfig,
    pub classifier: BackendConfig,
    pub generator_llm: BackendConfig,
    pub text_to_image: BackendConfig,
    #[serde(default = "default_classifier_top_k")]
    pub classifier_top_k: usize,
}

fn default_classifier_top_k() -> usize {
    DEFAULT_CLASSIFIER_TOP_K
}

impl BackendSuiteConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.captioner.validate().map_err(|e| format!("captioner: {e}"))?;
        self.extractor_llm
            .validate()
            .map_err(|e| format!("extractor_llm: {e}"))?;
        self.classifier
            .validate()
            .map_err(|e| format!("classifier: {e}"))?;
        self.generator_llm
            .validate()
            .map_err(|e| format!("generator_llm: {e}"))?;
        self.text_to_image
            .validate()
            .map_err(|e| format!("text_to_image: {e}"))?;
        if self.classifier_top_k < 1 {
            return Err("classifier_top_k must be >= 1".to_string());
        }
        Ok(())
    }
}

/// The three-line reply of the tag extractor, parsed and normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionOutput {
    pub attributes: Vec<String>,
    pub objects: Vec<String>,
    pub relations: Vec<String>,
    pub raw_text: String,
}

impl ExtractionOutput {
    pub fn to_visual_tags(&self) -> VisualTags {
        VisualTags::new(
            self.objects.clone(),
            self.attributes.clone(),
            self.relations.clone(),
        )
    }
}

/// Parse the extractor's reply. Lines are scanned for the three labels
/// case-insensitively; chatter before (or on) the label lines is tolerated;
/// phrases are split on commas and normalized.
pub fn parse_extraction_output(raw: &str) -> Result<ExtractionOutput, ExtractionParseError> {
    let mut attributes: Option<Vec<String>> = None;
    let mut objects: Option<Vec<String>> = None;
    let mut relations: Option<Vec<String>> = None;
    for line in raw.lines() {
        let lower = line.to_lowercase();
        for (label, slot) in [
            ("attributes:", &mut attributes),
            ("objects:", &mut objects),
            ("relations:", &mut relations),
        ] {
            if slot.is_none() {
                if let Some(pos) = lower.find(label) {
                    let rest = &line[pos + label.len()..];
                    *slot = Some(split_phrases(rest));
                    break;
                }
            }
        }
    }
    let attributes = attributes.ok_or(ExtractionParseError::MissingLabel("attributes"))?;
    let objects = objects.ok_or(ExtractionParseError::MissingLabel("objects"))?;
    let relations = relations.ok_or(ExtractionParseError::MissingLabel("relations"))?;
    Ok(ExtractionOutput {
        attributes,
        objects,
        relations,
        raw_text: raw.to_string(),
    })
}

fn split_phrases(rest: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in rest.split(',') {
        if let Some(tag) = normalize_tag(piece) {
            if !out.contains(&tag) {
                out.push(tag);
            }
        }
    }
    out
}

pub trait Captioner: Send + Sync {
    fn generate_caption(&self, image: &ImageRef) -> BackendResult<String>;
}

pub trait TagExtractor: Send + Sync {
    fn extract(&self, caption: &str) -> BackendResult<ExtractionOutput>;
}

pub trait LabelClassifier: Send + Sync {
    fn classify(&self, image: &ImageRef, top_k: usize) -> BackendResult<Vec<String>>;
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, instruction: &Instruction) -> BackendResult<String>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> BackendResult<ImageRef>;
}

/// Everything `tag_image` learned, with the sub-call outputs kept for
/// provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedImage {
    pub tags: VisualTags,
    pub caption: String,
    pub extraction: ExtractionOutput,
    pub classifier_labels: Vec<String>,
}

/// Shared handle over the full model suite. Clones share backends, image
/// store, and call log; each endpoint enforces its own in-flight bound and
/// retry policy internally.
#[derive(Clone)]
pub struct Backends {
    captioner: Arc<dyn Captioner>,
    extractor: Arc<dyn TagExtractor>,
    classifier: Arc<dyn LabelClassifier>,
    text_generator: Arc<dyn TextGenerator>,
    image_generator: Arc<dyn ImageGenerator>,
    store: Arc<ImageStore>,
    log: CallLog,
    classifier_top_k: usize,
}

impl Backends {
    /// Deterministic mock suite writing generated images into `store`.
    pub fn mock(store: Arc<ImageStore>) -> Self {
        Self::mock_with(store, MockOptions::default())
    }

    pub fn mock_with(store: Arc<ImageStore>, options: MockOptions) -> Self {
        let log = CallLog::new();
        let set = MockBackendSet::new(Arc::clone(&store), log.clone(), options);
        Self {
            captioner: set.captioner,
            extractor: set.extractor,
            classifier: set.classifier,
            text_generator: set.text_generator,
            image_generator: set.image_generator,
            store,
            log,
            classifier_top_k: DEFAULT_CLASSIFIER_TOP_K,
        }
    }

    /// HTTP suite from endpoint configuration.
    pub fn over_http(config: &BackendSuiteConfig, store: Arc<ImageStore>) -> BackendResult<Self> {
        let log = CallLog::new();
        let set = HttpBackendSet::new(config, Arc::clone(&store), log.clone());
        Ok(Self {
            captioner: set.captioner,
            extractor: set.extractor,
            classifier: set.classifier,
            text_generator: set.text_generator,
            image_generator: set.image_generator,
            store,
            log,
            classifier_top_k: config.classifier_top_k,
        })
    }

    pub fn call_log(&self) -> &CallLog {
        &self.log
    }

    pub fn image_store(&self) -> &Arc<ImageStore> {
        &self.store
    }

    pub fn classifier_top_k(&self) -> usize {
        self.classifier_top_k
    }

    /// Full-detail caption for an image. Empty captioner output is an error,
    /// never a silently empty caption.
    pub fn generate_caption(&self, image: &ImageRef) -> BackendResult<String> {
        let caption = self.captioner.generate_caption(image)?;
        let caption = caption.trim().to_string();
        if caption.is_empty() {
            return Err(BackendError::DegenerateCaption);
        }
        Ok(caption)
    }

    /// Attributes/objects/relations from a caption via the extractor LLM.
    pub fn extract_tags_from_caption(&self, caption: &str) -> BackendResult<ExtractionOutput> {
        if caption.trim().is_empty() {
            return Err(BackendError::EmptyCaption);
        }
        self.extractor.extract(caption)
    }

    /// Top-k labels from the multi-label classifier, normalized.
    pub fn classify_labels(&self, image: &ImageRef, top_k: usize) -> BackendResult<Vec<String>> {
        self.classifier.classify(image, top_k)
    }

    /// Synthesize text for a rendered instruction.
    pub fn generate_text(&self, instruction: &Instruction) -> BackendResult<String> {
        let reply = self.text_generator.generate(instruction)?;
        let reply = reply.trim().to_string();
        if reply.is_empty() {
            return Err(BackendError::DegenerateGeneration);
        }
        Ok(reply)
    }

    /// Generate an image for a prompt, store it content-addressed, and
    /// return its reference.
    pub fn generate_image(&self, prompt: &str, seed: u64) -> BackendResult<ImageRef> {
        self.image_generator.generate(prompt, seed)
    }

    /// The hybrid vision tagging model: caption the image, extract tags from
    /// the caption, and merge in the classifier's top-k labels.
    pub fn tag_image(&self, image: &ImageRef) -> BackendResult<TaggedImage> {
        let caption = self.generate_caption(image)?;
        let extraction = self.extract_tags_from_caption(&caption)?;
        let classifier_labels = self.classify_labels(image, self.classifier_top_k)?;
        let tags = merge_tag_sets(&extraction.to_visual_tags(), &classifier_labels);
        Ok(TaggedImage {
            tags,
            caption,
            extraction,
            classifier_labels,
        })
    }
}

pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
