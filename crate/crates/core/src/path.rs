//! The synthesis-path graph: node ids, the legal edge table, path validation,
//! the built-in paths, execution over a backend suite, and pairing of path
//! outputs into sample records.
//!
//! A path is an ordered walk starting and ending at data nodes. Data nodes
//! bind values flowing out of model nodes; controller nodes turn tags and
//! text into model instructions. Feeding a synthetic image back into the
//! tagger (`1c->2a`) closes the loop so synthesis can continue from
//! generated data.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, Backends, ImageRef};
use crate::dataset::{Origin, PolicyIds, Provenance, SampleRecord};
use crate::policy::{
    render_image_instruction, render_text_instruction, ImagePolicy, Instruction, PolicyError,
    TemplateRegistry, TextPolicy,
};
use crate::tags::VisualTags;

/// The ten nodes of the pipeline graph. Config literals use the short codes
/// (`1a`, `2b`, ...); see [`NodeId::code`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    /// 1a — real input image
    RealImage,
    /// 1b — real input text
    RealText,
    /// 1c — synthetic image
    SyntheticImage,
    /// 1d — synthetic text
    SyntheticText,
    /// 1e — visual tags
    TagsData,
    /// 2a — vision tagging model
    Tagger,
    /// 2b — language model
    Llm,
    /// 2c — text-to-image model
    TextToImage,
    /// 3a — text controller
    TextController,
    /// 3b — image controller
    ImageController,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Data,
    Model,
    Controller,
}

impl NodeId {
    pub const ALL: [NodeId; 10] = [
        NodeId::RealImage,
        NodeId::RealText,
        NodeId::SyntheticImage,
        NodeId::SyntheticText,
        NodeId::TagsData,
        NodeId::Tagger,
        NodeId::Llm,
        NodeId::TextToImage,
        NodeId::TextController,
        NodeId::ImageController,
    ];

    pub fn code(self) -> &'static str {
        match self {
            NodeId::RealImage => "1a",
            NodeId::RealText => "1b",
            NodeId::SyntheticImage => "1c",
            NodeId::SyntheticText => "1d",
            NodeId::TagsData => "1e",
            NodeId::Tagger => "2a",
            NodeId::Llm => "2b",
            NodeId::TextToImage => "2c",
            NodeId::TextController => "3a",
            NodeId::ImageController => "3b",
        }
    }

    /// Kind is determined by the code family: 1* data, 2* model,
    /// 3* controller.
    pub fn kind(self) -> NodeKind {
        match self.code().as_bytes()[0] {
            b'1' => NodeKind::Data,
            b'2' => NodeKind::Model,
            _ => NodeKind::Controller,
        }
    }

    pub fn is_data(self) -> bool {
        self.kind() == NodeKind::Data
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for NodeId {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::ALL
            .into_iter()
            .find(|n| n.code() == s)
            .ok_or_else(|| PathError::UnknownNode(s.to_string()))
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The legal transitions of the pipeline graph.
pub const LEGAL_EDGES: [(NodeId, NodeId); 12] = [
    (NodeId::RealImage, NodeId::Tagger),
    (NodeId::SyntheticImage, NodeId::Tagger),
    (NodeId::Tagger, NodeId::TagsData),
    (NodeId::TagsData, NodeId::TextController),
    (NodeId::RealText, NodeId::TextController),
    (NodeId::SyntheticText, NodeId::TextController),
    (NodeId::TextController, NodeId::Llm),
    (NodeId::Llm, NodeId::SyntheticText),
    (NodeId::SyntheticText, NodeId::ImageController),
    (NodeId::RealText, NodeId::ImageController),
    (NodeId::ImageController, NodeId::TextToImage),
    (NodeId::TextToImage, NodeId::SyntheticImage),
];

pub fn is_legal_edge(from: NodeId, to: NodeId) -> bool {
    LEGAL_EDGES.contains(&(from, to))
}

/// A path may re-enter the tagger at most this many times; bounds closed-loop
/// recursion.
pub const MAX_TAGGER_VISITS: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("path must start with a data node, got {0}")]
    StartNotData(NodeId),
    #[error("path must end with a data node, got {0}")]
    EndNotData(NodeId),
    #[error("illegal edge {from}->{to}")]
    IllegalEdge { from: NodeId, to: NodeId },
    #[error("tagger visited {got} times, at most {MAX_TAGGER_VISITS} allowed")]
    TooManyTaggerVisits { got: usize },
    #[error("side caption attaches at 3a but the path never visits 3a")]
    SideInputWithoutController,
    #[error("unknown node \"{0}\"")]
    UnknownNode(String),
    #[error("bad path literal \"{0}\": expected codes joined by \"->\" with optional \"+1b@3a\"")]
    BadLiteral(String),
}

/// A validated ordered walk over the pipeline graph, with the optional
/// side attachment of the original text at the text controller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisPath {
    nodes: Vec<NodeId>,
    side_caption: bool,
}

impl SynthesisPath {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn has_side_caption(&self) -> bool {
        self.side_caption
    }

    /// Arrow literal, e.g. `1a->2a->1e->3a->2b->1d+1b@3a`.
    pub fn literal(&self) -> String {
        let mut out = self
            .nodes
            .iter()
            .map(|n| n.code())
            .collect::<Vec<_>>()
            .join("->");
        if self.side_caption {
            out.push_str("+1b@3a");
        }
        out
    }

    /// Parse an arrow literal and validate it.
    pub fn parse(literal: &str) -> Result<Self, PathError> {
        let (body, side_caption) = match literal.split_once('+') {
            Some((body, "1b@3a")) => (body, true),
            Some(_) => return Err(PathError::BadLiteral(literal.to_string())),
            None => (literal, false),
        };
        let mut nodes = Vec::new();
        for code in body.split("->") {
            let code = code.trim();
            if code.is_empty() {
                return Err(PathError::BadLiteral(literal.to_string()));
            }
            nodes.push(code.parse()?);
        }
        validate_path_with_side(&nodes, side_caption)
    }

    /// Does the path visit this model node? Used by dry-run reporting.
    pub fn visits(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }
}

/// Validate a node sequence without a side input.
pub fn validate_path(nodes: &[NodeId]) -> Result<SynthesisPath, PathError> {
    validate_path_with_side(nodes, false)
}

/// Validate a node sequence, naming the first violated rule on failure.
pub fn validate_path_with_side(
    nodes: &[NodeId],
    side_caption: bool,
) -> Result<SynthesisPath, PathError> {
    let first = *nodes.first().ok_or(PathError::Empty)?;
    let last = *nodes.last().expect("non-empty");
    if !first.is_data() {
        return Err(PathError::StartNotData(first));
    }
    for pair in nodes.windows(2) {
        if !is_legal_edge(pair[0], pair[1]) {
            return Err(PathError::IllegalEdge {
                from: pair[0],
                to: pair[1],
            });
        }
    }
    if !last.is_data() {
        return Err(PathError::EndNotData(last));
    }
    let tagger_visits = nodes.iter().filter(|n| **n == NodeId::Tagger).count();
    if tagger_visits > MAX_TAGGER_VISITS {
        return Err(PathError::TooManyTaggerVisits { got: tagger_visits });
    }
    if side_caption && !nodes.contains(&NodeId::TextController) {
        return Err(PathError::SideInputWithoutController);
    }
    Ok(SynthesisPath {
        nodes: nodes.to_vec(),
        side_caption,
    })
}

/// The named built-in paths.
pub fn builtin_paths() -> BTreeMap<&'static str, SynthesisPath> {
    use NodeId::*;
    let sp1 = vec![RealImage, Tagger, TagsData, TextController, Llm, SyntheticText];
    let sp3 = vec![
        RealImage,
        Tagger,
        TagsData,
        TextController,
        Llm,
        SyntheticText,
        ImageController,
        TextToImage,
        SyntheticImage,
    ];
    let sp4 = vec![RealText, ImageController, TextToImage, SyntheticImage];
    let text_loop = vec![
        RealText,
        TextController,
        Llm,
        SyntheticText,
        ImageController,
        TextToImage,
        SyntheticImage,
    ];
    let mut out = BTreeMap::new();
    out.insert("sp1", validate_path(&sp1).expect("sp1 is legal"));
    out.insert(
        "sp2",
        validate_path_with_side(&sp1, true).expect("sp2 is legal"),
    );
    out.insert("sp3", validate_path(&sp3).expect("sp3 is legal"));
    out.insert("sp4", validate_path(&sp4).expect("sp4 is legal"));
    out.insert(
        "sp_text_loop",
        validate_path(&text_loop).expect("text loop is legal"),
    );
    out
}

/// Resolve a config path spec: a built-in name or an arrow literal.
pub fn resolve_path(spec: &str) -> Result<SynthesisPath, PathError> {
    if let Some(path) = builtin_paths().get(spec) {
        return Ok(path.clone());
    }
    SynthesisPath::parse(spec)
}

/// Data a path execution can draw on for the nodes it starts from or
/// side-loads. `seed_tags` backs paths that start at the tags node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathInput {
    pub image: Option<ImageRef>,
    pub text: Option<String>,
    pub seed_tags: Option<VisualTags>,
}

impl PathInput {
    pub fn from_record(record: &SampleRecord) -> Self {
        Self {
            image: record.image_ref.clone(),
            text: record.text.clone(),
            seed_tags: None,
        }
    }
}

/// A value bound at a data or controller node during execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeValue {
    Image { image: ImageRef },
    Text { text: String },
    Tags { tags: VisualTags },
    Instruction { instruction: Instruction },
    Prompt { prompt: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub node: NodeId,
    pub value: NodeValue,
}

/// Everything one walk produced: outputs in visit order (for data and
/// controller nodes), the seed, policy ids, and per-node timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathExecution {
    pub path: SynthesisPath,
    pub path_name: String,
    pub seed: u64,
    pub outputs: Vec<NodeOutput>,
    pub policy_ids: PolicyIds,
    pub timings: Vec<(NodeId, Duration)>,
}

impl PathExecution {
    fn last_value(&self, node: NodeId) -> Option<&NodeValue> {
        self.outputs
            .iter()
            .rev()
            .find(|o| o.node == node)
            .map(|o| &o.value)
    }

    pub fn real_image(&self) -> Option<&ImageRef> {
        match self.last_value(NodeId::RealImage)? {
            NodeValue::Image { image } => Some(image),
            _ => None,
        }
    }

    pub fn original_text(&self) -> Option<&str> {
        match self.last_value(NodeId::RealText)? {
            NodeValue::Text { text } => Some(text),
            _ => None,
        }
    }

    pub fn synthetic_image(&self) -> Option<&ImageRef> {
        match self.last_value(NodeId::SyntheticImage)? {
            NodeValue::Image { image } => Some(image),
            _ => None,
        }
    }

    pub fn synthetic_text(&self) -> Option<&str> {
        match self.last_value(NodeId::SyntheticText)? {
            NodeValue::Text { text } => Some(text),
            _ => None,
        }
    }

    pub fn tags(&self) -> Option<&VisualTags> {
        match self.last_value(NodeId::TagsData)? {
            NodeValue::Tags { tags } => Some(tags),
            _ => None,
        }
    }

    /// The text the generated image was rendered from: the last text bound
    /// before the last image-controller prompt.
    pub fn image_source_text(&self) -> Option<&str> {
        let prompt_at = self
            .outputs
            .iter()
            .rposition(|o| matches!(o.value, NodeValue::Prompt { .. }))?;
        self.outputs[..prompt_at].iter().rev().find_map(|o| match &o.value {
            NodeValue::Text { text } => Some(text.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("node {node}: {source}")]
    Backend {
        node: NodeId,
        #[source]
        source: BackendError,
    },
    #[error("node {node}: {source}")]
    Policy {
        node: NodeId,
        #[source]
        source: PolicyError,
    },
    #[error("missing required input at node {node}: {what}")]
    MissingInput { node: NodeId, what: &'static str },
    #[error("structural error at node {node}: {what}")]
    Structural { node: NodeId, what: &'static str },
}

impl ExecError {
    /// The node the failure is attributed to.
    pub fn node(&self) -> NodeId {
        match self {
            ExecError::Backend { node, .. }
            | ExecError::Policy { node, .. }
            | ExecError::MissingInput { node, .. }
            | ExecError::Structural { node, .. } => *node,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, ExecError::Backend { source, .. } if source.is_retryable())
    }
}

/// Shared pieces a path walk needs besides its per-record input.
pub struct ExecutionContext<'a> {
    pub backends: &'a Backends,
    pub registry: &'a TemplateRegistry,
    pub text_policy: &'a TextPolicy,
    pub image_policy: &'a ImagePolicy,
}

/// Walk the path nodes in order against the configured backends. With mock
/// backends and a fixed seed this is a pure function of
/// `(path, input, policies, seed)`.
pub fn execute_path(
    ctx: &ExecutionContext<'_>,
    path: &SynthesisPath,
    path_name: &str,
    input: &PathInput,
    seed: u64,
) -> Result<PathExecution, ExecError> {
    let mut exec = PathExecution {
        path: path.clone(),
        path_name: path_name.to_string(),
        seed,
        outputs: Vec::new(),
        policy_ids: PolicyIds {
            text: Some(ctx.text_policy.policy_id()),
            image: Some(ctx.image_policy.policy_id()),
        },
        timings: Vec::new(),
    };

    let mut current_image: Option<ImageRef> = None;
    let mut current_text: Option<String> = None;
    let mut current_tags: Option<VisualTags> = None;
    let mut staged_tags: Option<VisualTags> = None;
    let mut staged_text: Option<String> = None;
    let mut staged_image: Option<ImageRef> = None;
    let mut staged_instruction: Option<Instruction> = None;
    let mut staged_prompt: Option<String> = None;
    let mut t2i_visits: u64 = 0;

    let mut prev: Option<NodeId> = None;
    for &node in path.nodes() {
        let started = std::time::Instant::now();
        match node {
            NodeId::RealImage => {
                let image = input.image.clone().ok_or(ExecError::MissingInput {
                    node,
                    what: "record has no image reference",
                })?;
                current_image = Some(image.clone());
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Image { image },
                });
            }
            NodeId::RealText => {
                let text = input.text.clone().ok_or(ExecError::MissingInput {
                    node,
                    what: "record has no text",
                })?;
                current_text = Some(text.clone());
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Text { text },
                });
            }
            NodeId::SyntheticImage => {
                let image = match staged_image.take() {
                    Some(image) => image,
                    None => input.image.clone().ok_or(ExecError::MissingInput {
                        node,
                        what: "synthetic-image start requires an image reference",
                    })?,
                };
                current_image = Some(image.clone());
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Image { image },
                });
            }
            NodeId::SyntheticText => {
                let text = match staged_text.take() {
                    Some(text) => text,
                    None => input.text.clone().ok_or(ExecError::MissingInput {
                        node,
                        what: "synthetic-text start requires a text",
                    })?,
                };
                current_text = Some(text.clone());
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Text { text },
                });
            }
            NodeId::TagsData => {
                let tags = match staged_tags.take() {
                    Some(tags) => tags,
                    None => input.seed_tags.clone().ok_or(ExecError::MissingInput {
                        node,
                        what: "tags start requires seed tags",
                    })?,
                };
                current_tags = Some(tags.clone());
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Tags { tags },
                });
            }
            NodeId::Tagger => {
                let image = current_image.as_ref().ok_or(ExecError::Structural {
                    node,
                    what: "no image flowed into the tagger",
                })?;
                let tagged = ctx
                    .backends
                    .tag_image(image)
                    .map_err(|source| ExecError::Backend { node, source })?;
                staged_tags = Some(tagged.tags);
            }
            NodeId::TextController => {
                // Values count only when they flow along the incoming edge;
                // the side caption is the one exception.
                let tags_in = match prev {
                    Some(NodeId::TagsData) => current_tags.clone().unwrap_or_default(),
                    _ => VisualTags::default(),
                };
                let text_in: Option<String> = if path.has_side_caption() {
                    Some(input.text.clone().ok_or(ExecError::MissingInput {
                        node,
                        what: "side caption attached but record has no text",
                    })?)
                } else if matches!(prev, Some(NodeId::RealText) | Some(NodeId::SyntheticText)) {
                    current_text.clone()
                } else {
                    None
                };
                let instruction = render_text_instruction(
                    ctx.registry,
                    &tags_in,
                    text_in.as_deref(),
                    ctx.text_policy,
                )
                .map_err(|source| ExecError::Policy { node, source })?;
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Instruction {
                        instruction: instruction.clone(),
                    },
                });
                staged_instruction = Some(instruction);
            }
            NodeId::Llm => {
                let instruction = staged_instruction.take().ok_or(ExecError::Structural {
                    node,
                    what: "no instruction flowed into the language model",
                })?;
                let text = ctx
                    .backends
                    .generate_text(&instruction)
                    .map_err(|source| ExecError::Backend { node, source })?;
                staged_text = Some(text);
            }
            NodeId::ImageController => {
                let text = current_text.clone().ok_or(ExecError::Structural {
                    node,
                    what: "no text flowed into the image controller",
                })?;
                let prompt = render_image_instruction(&text, ctx.image_policy)
                    .map_err(|source| ExecError::Policy { node, source })?;
                exec.outputs.push(NodeOutput {
                    node,
                    value: NodeValue::Prompt {
                        prompt: prompt.clone(),
                    },
                });
                staged_prompt = Some(prompt);
            }
            NodeId::TextToImage => {
                let prompt = staged_prompt.take().ok_or(ExecError::Structural {
                    node,
                    what: "no prompt flowed into the text-to-image model",
                })?;
                // Repeat visits perturb the seed so loops do not regenerate
                // the same image.
                let visit_seed = seed ^ t2i_visits.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                t2i_visits += 1;
                let image = ctx
                    .backends
                    .generate_image(&prompt, visit_seed)
                    .map_err(|source| ExecError::Backend { node, source })?;
                staged_image = Some(image);
            }
        }
        exec.timings.push((node, started.elapsed()));
        prev = Some(node);
    }
    Ok(exec)
}

/// Which image-text pairing of path outputs forms the emitted sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleVariant {
    /// Original image with synthetic text.
    Cap,
    /// Synthetic image with original text.
    Img,
    /// Synthetic image with synthetic text.
    CapImg,
}

impl SampleVariant {
    pub const ALL: [SampleVariant; 3] = [
        SampleVariant::Cap,
        SampleVariant::Img,
        SampleVariant::CapImg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SampleVariant::Cap => "cap",
            SampleVariant::Img => "img",
            SampleVariant::CapImg => "capimg",
        }
    }
}

impl std::fmt::Display for SampleVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SampleVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SampleVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant \"{s}\" (expected cap, img, or capimg)"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("variant {variant} needs node {node} but the execution never bound it")]
    MissingNode { variant: SampleVariant, node: NodeId },
}

/// Assemble the sample a variant asks for out of a finished execution.
pub fn pair_outputs(
    exec: &PathExecution,
    variant: SampleVariant,
    parent: &SampleRecord,
) -> Result<SampleRecord, PairError> {
    let missing = |node| PairError::MissingNode { variant, node };
    let (image, text) = match variant {
        SampleVariant::Cap => (
            exec.real_image().ok_or(missing(NodeId::RealImage))?.clone(),
            exec.synthetic_text()
                .ok_or(missing(NodeId::SyntheticText))?
                .to_string(),
        ),
        SampleVariant::Img => (
            exec.synthetic_image()
                .ok_or(missing(NodeId::SyntheticImage))?
                .clone(),
            exec.original_text()
                .ok_or(missing(NodeId::RealText))?
                .to_string(),
        ),
        SampleVariant::CapImg => (
            exec.synthetic_image()
                .ok_or(missing(NodeId::SyntheticImage))?
                .clone(),
            exec.synthetic_text()
                .ok_or(missing(NodeId::SyntheticText))?
                .to_string(),
        ),
    };
    Ok(SampleRecord {
        id: format!("{}-{}", parent.id, variant),
        image_ref: Some(image),
        text: Some(text),
        class_label: parent.class_label.clone(),
        origin: Origin::Synthetic,
        provenance: Some(Provenance {
            parent_id: parent.id.clone(),
            path_name: exec.path_name.clone(),
            policy_ids: exec.policy_ids.clone(),
            seed: exec.seed,
            filter_ratio: None,
        }),
    })
}

/// Stable per-sample seed: a 64-bit digest of job seed, record id, and path
/// name — reproducible yet uncorrelated across records.
pub fn derive_sample_seed(job_seed: u64, record_id: &str, path_name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(job_seed.to_le_bytes());
    hasher.update([0]);
    hasher.update(record_id.as_bytes());
    hasher.update([0]);
    hasher.update(path_name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}
