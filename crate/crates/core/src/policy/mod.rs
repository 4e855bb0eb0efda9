//! Text and image controllers: declarative control policies, the fixed
//! template registry, tag editing, and instruction rendering.
//!
//! Rendering is pure and deterministic — identical inputs give identical
//! bytes — so synthesized samples can be reproduced from their provenance.

mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tags::{TagCategory, VisualTags};

pub use templates::{ImageStyle, SAFE_OUTPUT_CONSTRAINT, TEMPLATE_REGISTRY_VERSION};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("template requires caption")]
    TemplateRequiresCaption,
    #[error("no tags to render after edits")]
    EmptyTagsAfterEdits,
    #[error("builtin template id {0} out of range 1..=10")]
    BuiltinIdOutOfRange(u8),
    #[error("unknown custom template \"{0}\"")]
    UnknownCustomTemplate(String),
    #[error("custom template \"{0}\" already registered")]
    DuplicateCustomTemplate(String),
    #[error("tag weight {weight} for \"{tag}\" outside (0, 2]")]
    WeightOutOfRange { tag: String, weight: f64 },
}

/// Identifies a template: one of the ten frozen builtins, or a user-supplied
/// custom template registered under its own name so the builtin set stays
/// byte-exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Builtin(u8),
    Custom(String),
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TemplateId::Builtin(n) => write!(f, "{n}"),
            TemplateId::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

impl Serialize for TemplateId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TemplateId::Builtin(n) => serializer.serialize_u8(*n),
            TemplateId::Custom(name) => serializer.serialize_str(&format!("custom:{name}")),
        }
    }
}

impl<'de> Deserialize<'de> for TemplateId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u8),
            Name(String),
        }
        Ok(match Raw::deserialize(deserializer)? {
            Raw::Number(n) => TemplateId::Builtin(n),
            Raw::Name(name) => {
                TemplateId::Custom(name.strip_prefix("custom:").unwrap_or(&name).to_string())
            }
        })
    }
}

#[derive(Debug, Clone)]
struct CustomTemplate {
    text: String,
    requires_original_text: bool,
}

/// Lookup for template text. The ten builtin templates are compiled in; the
/// custom namespace is per-registry.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    custom: BTreeMap<String, CustomTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_custom(
        &mut self,
        name: &str,
        text: &str,
        requires_original_text: bool,
    ) -> Result<(), PolicyError> {
        if self.custom.contains_key(name) {
            return Err(PolicyError::DuplicateCustomTemplate(name.to_string()));
        }
        self.custom.insert(
            name.to_string(),
            CustomTemplate {
                text: text.to_string(),
                requires_original_text,
            },
        );
        Ok(())
    }

    pub fn template_text(&self, id: &TemplateId) -> Result<&str, PolicyError> {
        match id {
            TemplateId::Builtin(n) => builtin_template_text(*n),
            TemplateId::Custom(name) => self
                .custom
                .get(name)
                .map(|t| t.text.as_str())
                .ok_or_else(|| PolicyError::UnknownCustomTemplate(name.clone())),
        }
    }

    pub fn requires_original_text(&self, id: &TemplateId) -> Result<bool, PolicyError> {
        match id {
            TemplateId::Builtin(n) => {
                if !(1..=10).contains(n) {
                    return Err(PolicyError::BuiltinIdOutOfRange(*n));
                }
                Ok(*n >= templates::FIRST_CAPTION_TEMPLATE)
            }
            TemplateId::Custom(name) => self
                .custom
                .get(name)
                .map(|t| t.requires_original_text)
                .ok_or_else(|| PolicyError::UnknownCustomTemplate(name.clone())),
        }
    }
}

/// The frozen text of builtin template `n` (1..=10).
pub fn builtin_template_text(n: u8) -> Result<&'static str, PolicyError> {
    if !(1..=10).contains(&n) {
        return Err(PolicyError::BuiltinIdOutOfRange(n));
    }
    Ok(templates::TEXT_TEMPLATES[(n - 1) as usize])
}

/// One edit over a tag list. `Replace` carries its replacement by
/// construction, so "replacement present iff op = replace" cannot be
/// violated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum TagEdit {
    Remove { target: String, category: TagCategory },
    Add { target: String, category: TagCategory },
    Replace {
        target: String,
        replacement: String,
        category: TagCategory,
    },
}

/// What happened when a list of edits was applied. Unmatched remove/replace
/// targets are no-ops, reported here rather than failing the render.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditReport {
    pub applied: usize,
    pub unmatched: Vec<TagEdit>,
}

/// Apply edits in order. Remove deletes every normalized match in the named
/// category; add appends (deduplicated); replace removes the target and puts
/// the replacement at the target's position.
pub fn apply_tag_edits(tags: &VisualTags, edits: &[TagEdit]) -> (VisualTags, EditReport) {
    let mut out = tags.clone();
    let mut report = EditReport::default();
    for edit in edits {
        let matched = match edit {
            TagEdit::Remove { target, category } => {
                let Some(target) = crate::tags::normalize_tag(target) else {
                    report.unmatched.push(edit.clone());
                    continue;
                };
                let list = out.category_mut(*category);
                let before = list.len();
                list.retain(|t| *t != target);
                list.len() != before
            }
            TagEdit::Add { target, category } => {
                let Some(target) = crate::tags::normalize_tag(target) else {
                    report.unmatched.push(edit.clone());
                    continue;
                };
                let list = out.category_mut(*category);
                if !list.contains(&target) {
                    list.push(target);
                }
                true
            }
            TagEdit::Replace {
                target,
                replacement,
                category,
            } => {
                let (Some(target), Some(replacement)) = (
                    crate::tags::normalize_tag(target),
                    crate::tags::normalize_tag(replacement),
                ) else {
                    report.unmatched.push(edit.clone());
                    continue;
                };
                let list = out.category_mut(*category);
                match list.iter().position(|t| *t == target) {
                    Some(pos) => {
                        list.retain(|t| *t != target);
                        if !list.contains(&replacement) {
                            let pos = pos.min(list.len());
                            list.insert(pos, replacement);
                        }
                        true
                    }
                    None => false,
                }
            }
        };
        if matched {
            report.applied += 1;
        } else {
            report.unmatched.push(edit.clone());
        }
    }
    (out, report)
}

/// Declarative control policy for text synthesis: which template to render,
/// how to edit the tags first, and what output constraints to append.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub template_id: TemplateId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tag_edits: Vec<TagEdit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub style_constraints: Vec<String>,
    /// Attach [`SAFE_OUTPUT_CONSTRAINT`] after any user constraints.
    #[serde(default)]
    pub safe_default_constraints: bool,
}

impl TextPolicy {
    pub fn builtin(template_id: u8) -> Self {
        Self {
            id: None,
            template_id: TemplateId::Builtin(template_id),
            tag_edits: Vec::new(),
            style_constraints: Vec::new(),
            safe_default_constraints: false,
        }
    }

    pub fn policy_id(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| format!("text:{}", self.template_id))
    }
}

/// Declarative control policy for image synthesis: a style template plus
/// per-tag prompt weights. Absent tags implicitly weigh 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub style_id: ImageStyle,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tag_weights: BTreeMap<String, f64>,
}

impl ImagePolicy {
    pub fn style(style_id: ImageStyle) -> Self {
        Self {
            id: None,
            style_id,
            tag_weights: BTreeMap::new(),
        }
    }

    pub fn policy_id(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| format!("image:{}", self.style_id))
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (tag, &weight) in &self.tag_weights {
            if !(weight > 0.0 && weight <= 2.0) {
                return Err(PolicyError::WeightOutOfRange {
                    tag: tag.clone(),
                    weight,
                });
            }
        }
        Ok(())
    }
}

/// The three segments of a rendered instruction. Their in-order concatenation
/// is exactly `Instruction::rendered_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionParts {
    /// Instructional text ahead of the content block.
    pub task_template: String,
    /// The sentences carrying the substituted phrases and optional caption.
    pub task_content: String,
    /// Trailing output guidance from the template plus appended policy
    /// constraints.
    pub task_constraint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyProvenance {
    pub policy_id: String,
    pub template_id: String,
}

/// A fully rendered model instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub rendered_text: String,
    pub parts: InstructionParts,
    pub policy_provenance: PolicyProvenance,
}

/// Render a text-synthesis instruction: apply the policy's tag edits, then
/// instantiate the template with `{phrases}` = comma-joined tags (objects,
/// then attributes, then relations) and `{caption}` = the original text, and
/// append any style constraints.
pub fn render_text_instruction(
    registry: &TemplateRegistry,
    tags: &VisualTags,
    original_text: Option<&str>,
    policy: &TextPolicy,
) -> Result<Instruction, PolicyError> {
    let raw = registry.template_text(&policy.template_id)?.to_string();
    if registry.requires_original_text(&policy.template_id)? && original_text.is_none() {
        return Err(PolicyError::TemplateRequiresCaption);
    }
    let (edited, _report) = apply_tag_edits(tags, &policy.tag_edits);
    if edited.is_empty() && raw.contains("{phrases}") {
        return Err(PolicyError::EmptyTagsAfterEdits);
    }

    let phrases = join_phrases(&edited);
    let caption = original_text.unwrap_or("");
    let substitute =
        |s: &str| s.replace("{phrases}", &phrases).replace("{caption}", caption);

    let (content_start, content_end) = segment_template(&raw);
    let task_template = substitute(&raw[..content_start]);
    let task_content = substitute(&raw[content_start..content_end]);
    let mut task_constraint = substitute(&raw[content_end..]);

    let mut extra: Vec<&str> = policy.style_constraints.iter().map(String::as_str).collect();
    if policy.safe_default_constraints {
        extra.push(SAFE_OUTPUT_CONSTRAINT);
    }
    for constraint in extra {
        if constraint.is_empty() {
            continue;
        }
        let last_char = task_constraint
            .chars()
            .last()
            .or_else(|| task_content.chars().last())
            .or_else(|| task_template.chars().last());
        if last_char.is_some_and(|c| !c.is_whitespace()) {
            task_constraint.push(' ');
        }
        task_constraint.push_str(constraint);
    }

    let rendered_text = format!("{task_template}{task_content}{task_constraint}");
    Ok(Instruction {
        rendered_text,
        parts: InstructionParts {
            task_template,
            task_content,
            task_constraint,
        },
        policy_provenance: PolicyProvenance {
            policy_id: policy.policy_id(),
            template_id: policy.template_id.to_string(),
        },
    })
}

/// Render an image-generation prompt: rewrite weighted tag occurrences as
/// `(tag:weight)` and substitute the result into the style template.
pub fn render_image_instruction(prompt: &str, policy: &ImagePolicy) -> Result<String, PolicyError> {
    policy.validate()?;
    let weighted = apply_tag_weights(prompt, &policy.tag_weights);
    Ok(policy.style_id.template().replace("{prompt}", &weighted))
}

/// Comma-joined tag phrases in fixed order: objects, attributes, relations.
pub fn join_phrases(tags: &VisualTags) -> String {
    tags.iter_all().collect::<Vec<_>>().join(", ")
}

/// Byte range of the content block in a raw template: from the sentence
/// introducing the first placeholder through the period closing the last
/// one. Templates without placeholders have an empty content block at the
/// end.
fn segment_template(raw: &str) -> (usize, usize) {
    const PLACEHOLDERS: [&str; 2] = ["{caption}", "{phrases}"];
    let first = PLACEHOLDERS.iter().filter_map(|p| raw.find(p)).min();
    let Some(first) = first else {
        return (raw.len(), raw.len());
    };
    let last_end = PLACEHOLDERS
        .iter()
        .filter_map(|p| raw.rfind(p).map(|i| i + p.len()))
        .max()
        .expect("first placeholder found, so last exists");
    let content_start = raw[..first].rfind(". ").map_or(0, |i| i + 2);
    let content_end = raw[last_end..]
        .find('.')
        .map_or(raw.len(), |i| last_end + i + 1);
    (content_start, content_end)
}

fn word_boundary(text: &str, start: usize, end: usize) -> bool {
    let before_ok = start == 0
        || text[..start]
            .chars()
            .last()
            .is_some_and(|c| !c.is_alphanumeric());
    let after_ok = end == text.len()
        || text[end..]
            .chars()
            .next()
            .is_some_and(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

/// Rewrite every whole-word occurrence of each weighted tag as
/// `(tag:weight)`, weight formatted to one decimal. Overlaps resolve
/// earliest-first; ties at the same position prefer the longer tag, so a
/// tag nested inside another is never double-wrapped.
fn apply_tag_weights(prompt: &str, weights: &BTreeMap<String, f64>) -> String {
    if weights.is_empty() {
        return prompt.to_string();
    }
    let mut candidates: Vec<(usize, usize, &str, f64)> = Vec::new();
    for (tag, &weight) in weights {
        if tag.is_empty() {
            continue;
        }
        for (pos, m) in prompt.match_indices(tag.as_str()) {
            let end = pos + m.len();
            if word_boundary(prompt, pos, end) {
                candidates.push((pos, end, tag.as_str(), weight));
            }
        }
    }
    // Earliest match first; on ties the longest span wins.
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out = String::with_capacity(prompt.len());
    let mut cursor = 0;
    for (start, end, tag, weight) in candidates {
        if start < cursor {
            continue;
        }
        out.push_str(&prompt[cursor..start]);
        out.push_str(&format!("({tag}:{weight:.1})"));
        cursor = end;
    }
    out.push_str(&prompt[cursor..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_tags() -> VisualTags {
        VisualTags::new(
            vec!["sofa", "rug"],
            vec!["white"],
            vec!["in front of"],
        )
    }

    #[test]
    fn template_seven_renders_with_caption() {
        let registry = TemplateRegistry::new();
        let policy = TextPolicy::builtin(7);
        let tags = VisualTags::from_objects(vec!["sofa", "rug"]);
        let instruction = render_text_instruction(
            &registry,
            &tags,
            Some("view into the living room ."),
            &policy,
        )
        .unwrap();
        assert!(instruction.rendered_text.starts_with(
            "Write a faithful caption by integrating the given phrases with the original sentence."
        ));
        assert!(instruction
            .rendered_text
            .contains("Given sentence: view into the living room .."));
        assert!(instruction.rendered_text.contains("Given phrases: sofa, rug."));
    }

    #[test]
    fn template_one_renders_from_phrases_alone() {
        let registry = TemplateRegistry::new();
        let policy = TextPolicy::builtin(1);
        let tags = VisualTags::from_objects(vec!["light candle", "rug"]);
        let instruction = render_text_instruction(&registry, &tags, None, &policy).unwrap();
        assert!(instruction
            .rendered_text
            .starts_with("Create a detailed and high-quality caption using phrases"));
        assert!(instruction
            .rendered_text
            .ends_with("Phrases: light candle, rug."));
    }

    #[test]
    fn caption_templates_reject_missing_caption() {
        let registry = TemplateRegistry::new();
        for id in 6..=10 {
            let policy = TextPolicy::builtin(id);
            let err = render_text_instruction(&registry, &sample_tags(), None, &policy);
            assert_eq!(err.unwrap_err(), PolicyError::TemplateRequiresCaption);
        }
    }

    #[test]
    fn parts_concatenate_to_rendered_text() {
        let registry = TemplateRegistry::new();
        for id in 1..=10u8 {
            let mut policy = TextPolicy::builtin(id);
            policy.style_constraints = vec!["Keep it short.".to_string()];
            policy.safe_default_constraints = true;
            let caption = (id >= 6).then_some("a red bus on the street");
            let instruction =
                render_text_instruction(&registry, &sample_tags(), caption, &policy).unwrap();
            let glued = format!(
                "{}{}{}",
                instruction.parts.task_template,
                instruction.parts.task_content,
                instruction.parts.task_constraint
            );
            assert_eq!(glued, instruction.rendered_text, "template {id}");
            assert!(!instruction.rendered_text.contains("{phrases}"));
            assert!(!instruction.rendered_text.contains("{caption}"));
            assert!(instruction.rendered_text.ends_with(SAFE_OUTPUT_CONSTRAINT));
        }
    }

    #[test]
    fn constraints_append_in_order() {
        let registry = TemplateRegistry::new();
        let mut policy = TextPolicy::builtin(1);
        policy.style_constraints =
            vec!["Output JSON.".to_string(), "Use one sentence.".to_string()];
        let instruction =
            render_text_instruction(&registry, &sample_tags(), None, &policy).unwrap();
        assert!(instruction
            .rendered_text
            .ends_with("Output JSON. Use one sentence."));
        assert!(instruction
            .parts
            .task_constraint
            .starts_with(" Output JSON."));
    }

    #[test]
    fn custom_template_namespace() {
        let mut registry = TemplateRegistry::new();
        registry
            .register_custom("rewrite", "Rewrite creatively: {caption}", true)
            .unwrap();
        let policy = TextPolicy {
            id: Some("creative".to_string()),
            template_id: TemplateId::Custom("rewrite".to_string()),
            tag_edits: Vec::new(),
            style_constraints: Vec::new(),
            safe_default_constraints: false,
        };
        let instruction = render_text_instruction(
            &registry,
            &VisualTags::default(),
            Some("a cat on a mat"),
            &policy,
        )
        .unwrap();
        assert_eq!(instruction.rendered_text, "Rewrite creatively: a cat on a mat");
        assert_eq!(instruction.policy_provenance.template_id, "custom:rewrite");
        let dup = registry.register_custom("rewrite", "x", false);
        assert_eq!(
            dup.unwrap_err(),
            PolicyError::DuplicateCustomTemplate("rewrite".to_string())
        );
    }

    #[test]
    fn empty_tags_rejected_for_phrase_templates() {
        let registry = TemplateRegistry::new();
        let policy = TextPolicy::builtin(1);
        let err = render_text_instruction(&registry, &VisualTags::default(), None, &policy);
        assert_eq!(err.unwrap_err(), PolicyError::EmptyTagsAfterEdits);
    }

    #[test]
    fn edits_remove_add_replace() {
        let tags = VisualTags::from_objects(vec!["sofa", "rug"]);
        let (out, report) = apply_tag_edits(
            &tags,
            &[TagEdit::Remove {
                target: "rug".to_string(),
                category: TagCategory::Objects,
            }],
        );
        assert_eq!(out.objects(), &["sofa"]);
        assert_eq!(report.applied, 1);

        let tags = VisualTags::from_objects(vec!["sofa"]);
        let (out, _) = apply_tag_edits(
            &tags,
            &[TagEdit::Replace {
                target: "sofa".to_string(),
                replacement: "armchair".to_string(),
                category: TagCategory::Objects,
            }],
        );
        assert_eq!(out.objects(), &["armchair"]);

        let tags = VisualTags::new(Vec::<&str>::new(), vec!["red"], Vec::new());
        let (out, report) = apply_tag_edits(
            &tags,
            &[TagEdit::Remove {
                target: "blue".to_string(),
                category: TagCategory::Attributes,
            }],
        );
        assert_eq!(out.attributes(), &["red"]);
        assert_eq!(report.applied, 0);
        assert_eq!(report.unmatched.len(), 1);
    }

    #[test]
    fn replace_keeps_position() {
        let tags = VisualTags::from_objects(vec!["a", "b", "c"]);
        let (out, _) = apply_tag_edits(
            &tags,
            &[TagEdit::Replace {
                target: "b".to_string(),
                replacement: "z".to_string(),
                category: TagCategory::Objects,
            }],
        );
        assert_eq!(out.objects(), &["a", "z", "c"]);
    }

    #[test]
    fn image_templates_render() {
        let policy = ImagePolicy::style(ImageStyle::Real);
        assert_eq!(
            render_image_instruction("tuscan sun over hills", &policy).unwrap(),
            "a real photo. tuscan sun over hills. 35mm photograph, film, bokeh, professional, 4k, highly detailed"
        );
        let policy = ImagePolicy::style(ImageStyle::Quality);
        assert_eq!(
            render_image_instruction("a cat", &policy).unwrap(),
            "masterpiece, best quality, ultra detailed, a cat. intricate details"
        );
    }

    #[test]
    fn tag_weights_rewrite_occurrences() {
        let mut policy = ImagePolicy::style(ImageStyle::Nocap);
        policy.tag_weights.insert("sofa".to_string(), 1.3);
        assert_eq!(
            render_image_instruction("a sofa in a room", &policy).unwrap(),
            "a real photo showing a (sofa:1.3) in a room. highly detailed"
        );
    }

    #[test]
    fn tag_weights_prefer_longer_overlaps() {
        let mut policy = ImagePolicy::style(ImageStyle::Nocap);
        policy.tag_weights.insert("sofa".to_string(), 1.3);
        policy.tag_weights.insert("sectional sofa".to_string(), 0.8);
        assert_eq!(
            render_image_instruction("a sectional sofa and a sofa", &policy).unwrap(),
            "a real photo showing a (sectional sofa:0.8) and a (sofa:1.3). highly detailed"
        );
        // "sofas" is a different word; no rewrite inside it.
        assert_eq!(
            render_image_instruction("two sofas", &policy).unwrap(),
            "a real photo showing two sofas. highly detailed"
        );
    }

    #[test]
    fn weights_validated() {
        let mut policy = ImagePolicy::style(ImageStyle::Real);
        policy.tag_weights.insert("sofa".to_string(), 2.5);
        assert!(matches!(
            render_image_instruction("a sofa", &policy),
            Err(PolicyError::WeightOutOfRange { .. })
        ));
        policy.tag_weights.insert("sofa".to_string(), 0.0);
        assert!(render_image_instruction("a sofa", &policy).is_err());
    }

    proptest! {
        #[test]
        fn rendering_is_deterministic(
            objects in proptest::collection::vec("[a-z]{1,8}", 1..5),
            caption in "[a-z ]{1,30}",
            id in 1..=10u8,
        ) {
            let registry = TemplateRegistry::new();
            let policy = TextPolicy::builtin(id);
            let tags = VisualTags::from_objects(objects);
            if tags.is_empty() { return Ok(()); }
            let a = render_text_instruction(&registry, &tags, Some(&caption), &policy).unwrap();
            let b = render_text_instruction(&registry, &tags, Some(&caption), &policy).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn empty_edit_list_is_identity(
            objects in proptest::collection::vec("[a-z]{1,8}", 0..5),
            attributes in proptest::collection::vec("[a-z]{1,8}", 0..5),
        ) {
            let tags = VisualTags::new(objects, attributes, Vec::<String>::new());
            let (out, report) = apply_tag_edits(&tags, &[]);
            prop_assert_eq!(out, tags);
            prop_assert_eq!(report, EditReport::default());
        }

        #[test]
        fn remove_then_add_restores_membership(
            objects in proptest::collection::vec("[a-z]{1,8}", 1..5),
            pick in 0usize..5,
        ) {
            let tags = VisualTags::from_objects(objects);
            if tags.is_empty() { return Ok(()); }
            let target = tags.objects()[pick % tags.objects().len()].clone();
            let edits = [
                TagEdit::Remove { target: target.clone(), category: TagCategory::Objects },
                TagEdit::Add { target: target.clone(), category: TagCategory::Objects },
            ];
            let (out, _) = apply_tag_edits(&tags, &edits);
            let before: std::collections::HashSet<_> = tags.objects().iter().collect();
            let after: std::collections::HashSet<_> = out.objects().iter().collect();
            prop_assert_eq!(before, after);
        }
    }
}
