//! Visual tags: the decomposed semantics of an image (objects, attributes,
//! relations), their normalization, merging of hybrid tagger sources, and the
//! tag-presence matching used by self-filtering.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the merged `objects` list. Extracted tags take priority
/// over classifier labels when the cap is hit.
pub const MERGED_OBJECTS_CAP: usize = 48;

/// Function words excluded from "content words" when matching in
/// [`MatchMode::AllContentWords`]. Relation tags like "in front of" are
/// phrases whose function words rarely survive rewriting verbatim.
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "in", "on", "at", "to", "with", "by", "for", "from",
    "into", "onto", "over", "under", "above", "below", "near", "beside", "behind", "between",
    "through", "across", "around", "along", "up", "down", "off", "out", "is", "are", "was",
    "were", "be", "been", "being", "his", "her", "its", "their",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TagError {
    #[error("no tags to match")]
    NoTagsToMatch,
}

/// Normalize a raw tag string: lowercase, trim surrounding whitespace,
/// collapse internal whitespace runs to single spaces, strip trailing
/// punctuation. Returns `None` when nothing remains.
pub fn normalize_tag(raw: &str) -> Option<String> {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let out = collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c == '…' || c.is_whitespace());
    if out.is_empty() {
        None
    } else {
        Some(out.to_string())
    }
}

/// The decomposed visual semantics of an image. Lists hold normalized,
/// deduplicated tags; construction enforces both.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct VisualTags {
    objects: Vec<String>,
    attributes: Vec<String>,
    relations: Vec<String>,
}

impl VisualTags {
    /// Build from raw strings. Tags that normalize to empty are dropped here,
    /// not at match time; duplicates keep their first occurrence.
    pub fn new<I, S>(objects: I, attributes: I, relations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            objects: normalize_list(objects),
            attributes: normalize_list(attributes),
            relations: normalize_list(relations),
        }
    }

    pub fn from_objects<I, S>(objects: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            objects: normalize_list(objects),
            ..Self::default()
        }
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// All tags across the three lists, objects first.
    pub fn iter_all(&self) -> impl Iterator<Item = &str> {
        self.objects
            .iter()
            .chain(self.attributes.iter())
            .chain(self.relations.iter())
            .map(String::as_str)
    }

    pub fn total_len(&self) -> usize {
        self.objects.len() + self.attributes.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub(crate) fn category_mut(&mut self, category: TagCategory) -> &mut Vec<String> {
        match category {
            TagCategory::Objects => &mut self.objects,
            TagCategory::Attributes => &mut self.attributes,
            TagCategory::Relations => &mut self.relations,
        }
    }
}

impl<'de> Deserialize<'de> for VisualTags {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            objects: Vec<String>,
            #[serde(default)]
            attributes: Vec<String>,
            #[serde(default)]
            relations: Vec<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Ok(VisualTags::new(raw.objects, raw.attributes, raw.relations))
    }
}

/// One of the three tag lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagCategory {
    Objects,
    Attributes,
    Relations,
}

impl std::fmt::Display for TagCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TagCategory::Objects => f.write_str("objects"),
            TagCategory::Attributes => f.write_str("attributes"),
            TagCategory::Relations => f.write_str("relations"),
        }
    }
}

/// How a multi-word tag is judged present in a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Every token of the tag must occur in the text.
    ExactToken,
    /// Every content word (stop words excluded) must occur in the text.
    AllContentWords,
}

/// Match semantics for one filtering job. Fixed per job and recorded in
/// provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagMatchConfig {
    pub mode: MatchMode,
    pub plural_folding: bool,
}

impl Default for TagMatchConfig {
    fn default() -> Self {
        Self {
            mode: MatchMode::AllContentWords,
            plural_folding: true,
        }
    }
}

/// Union classifier labels into `objects`, extracted tags first, classifier
/// labels after in input order, deduplicated, capped at
/// [`MERGED_OBJECTS_CAP`]. Attributes and relations pass through unchanged.
pub fn merge_tag_sets(extracted: &VisualTags, classifier_labels: &[String]) -> VisualTags {
    let mut objects = extracted.objects.clone();
    let mut seen: HashSet<String> = objects.iter().cloned().collect();
    for label in classifier_labels {
        if objects.len() >= MERGED_OBJECTS_CAP {
            break;
        }
        if !label.is_empty() && seen.insert(label.clone()) {
            objects.push(label.clone());
        }
    }
    objects.truncate(MERGED_OBJECTS_CAP);
    VisualTags {
        objects,
        attributes: extracted.attributes.clone(),
        relations: extracted.relations.clone(),
    }
}

/// Lowercased alphanumeric tokens of a text.
pub fn text_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unique content words of a text in first-seen order: lowercased
/// alphanumeric tokens with stop words removed.
pub fn content_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for token in text_tokens(text) {
        if !is_stop_word(&token) && seen.insert(token.clone()) {
            out.push(token);
        }
    }
    out
}

/// Candidate forms of a token under plural folding: the token itself, plus
/// the token with a trailing "s" or "es" stripped. Tokens ending in "ss" are
/// left alone so "glass" never folds to "glas".
pub fn plural_candidates(token: &str) -> Vec<String> {
    let mut forms = vec![token.to_string()];
    if token.len() >= 3 && token.ends_with('s') && !token.ends_with("ss") {
        forms.push(token[..token.len() - 1].to_string());
    }
    if token.len() >= 4 && token.ends_with("es") {
        forms.push(token[..token.len() - 2].to_string());
    }
    forms
}

fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.contains(&token)
}

/// The tokens of `tag` that must be found in a text under `cfg`. In
/// content-word mode a tag made entirely of stop words falls back to all of
/// its tokens so it can never match vacuously.
fn required_words(tag: &str, cfg: TagMatchConfig) -> Vec<String> {
    let tokens = text_tokens(tag);
    match cfg.mode {
        MatchMode::ExactToken => tokens,
        MatchMode::AllContentWords => {
            let content: Vec<String> = tokens
                .iter()
                .filter(|t| !is_stop_word(t))
                .cloned()
                .collect();
            if content.is_empty() {
                tokens
            } else {
                content
            }
        }
    }
}

fn token_set(text: &str, plural_folding: bool) -> HashSet<String> {
    let mut set = HashSet::new();
    for token in text_tokens(text) {
        if plural_folding {
            for form in plural_candidates(&token) {
                set.insert(form);
            }
        } else {
            set.insert(token);
        }
    }
    set
}

fn word_present(word: &str, text_set: &HashSet<String>, plural_folding: bool) -> bool {
    if plural_folding {
        plural_candidates(word).iter().any(|f| text_set.contains(f))
    } else {
        text_set.contains(word)
    }
}

/// Is a single tag judged present in `text` under `cfg`?
pub fn tag_present(tag: &str, text: &str, cfg: TagMatchConfig) -> bool {
    let set = token_set(text, cfg.plural_folding);
    tag_present_in_set(tag, &set, cfg)
}

fn tag_present_in_set(tag: &str, text_set: &HashSet<String>, cfg: TagMatchConfig) -> bool {
    let words = required_words(tag, cfg);
    if words.is_empty() {
        return false;
    }
    words
        .iter()
        .all(|w| word_present(w, text_set, cfg.plural_folding))
}

/// Fraction of tags judged present in `text`, counting objects, attributes,
/// and relations uniformly.
pub fn tag_presence_ratio(
    tags: &VisualTags,
    text: &str,
    cfg: TagMatchConfig,
) -> Result<f64, TagError> {
    let total = tags.total_len();
    if total == 0 {
        return Err(TagError::NoTagsToMatch);
    }
    let set = token_set(text, cfg.plural_folding);
    let present = tags
        .iter_all()
        .filter(|tag| tag_present_in_set(tag, &set, cfg))
        .count();
    Ok(present as f64 / total as f64)
}

fn normalize_list<I, S>(raw: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in raw {
        if let Some(tag) = normalize_tag(item.as_ref()) {
            if seen.insert(tag.clone()) {
                out.push(tag);
            }
        }
    }
    out
}
