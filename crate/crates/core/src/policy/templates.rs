//! The fixed instruction template registry.
//!
//! Template text is frozen: synthesis runs are only comparable when the
//! instruction bytes are stable, so user-supplied variants go through the
//! custom-template namespace instead of editing these.

use serde::{Deserialize, Serialize};

/// Bumped whenever the frozen template set changes.
pub const TEMPLATE_REGISTRY_VERSION: &str = "1";

/// Caption synthesis templates. Ids 1..=5 work from phrases alone; ids 6..=10
/// embed the original caption and are used when the output must stay faithful
/// to it.
pub(crate) const TEXT_TEMPLATES: [&str; 10] = [
    // 1
    "Create a detailed and high-quality caption using phrases that represent the entities or objects, their unique attributes, and the visual relationships in the scene depicted. Phrases: {phrases}.",
    // 2
    "Compose a rich and immersive caption by incorporating a set of phrases that illustrate the entities or objects, their defining attributes, and the interconnections presented within the image. Phrases: {phrases}.",
    // 3
    "Formulate an articulate and informative caption by using a series of phrases that outline the entities, their attributes, and their visual relationships depicted in an image. Phrases: {phrases}.",
    // 4
    "Using a set of phrases that highlight the entities, attributes, and their visual associations in an image, craft a detailed and expressive caption. Phrases: {phrases}.",
    // 5
    "Construct a comprehensive and expressive caption by integrating phrases that detail the entities, their features, and the spatial or thematic relationships in an image. Phrases: {phrases}.",
    // 6
    "Create a comprehensive caption that faithfully represents the objects, attributes, and their relationships contained within the provided sentence and phrases. Given sentence: {caption}. Given phrases: {phrases}. If the original caption specifies particular give phrases, maintain their integrity while using the phrases to enhance the description.",
    // 7
    "Write a faithful caption by integrating the given phrases with the original sentence. Given sentence: {caption}. Given phrases: {phrases}. Ensure any objects or specific nouns from the original caption are preserved while elaborating on the visual relationships and attributes provided in the phrases to create a more detailed depiction.",
    // 8
    "Provide a faithful and informative image caption using a given sentence and few phrases. Sentence: {caption}, phrases: {phrases}. Consider the initial sentence as a base for the overall context and ensure that specific objects or nouns such as numbers, car models, animals, etc., are preserved in the new caption. Integrate the given phrases, which describe entities, attributes, or visual relationships, to enrich and elaborate on the original meaning. Maintain fidelity to the original content while enhancing descriptive quality.",
    // 9
    "Make a detailed caption based on the given phrases and a given sentence. Given phrases: {phrases}. Given sentence: {caption}. The sentence serves as a foundation, while the phrases elaborate on elements depicted in the image, like objects, their characteristics, and interactions. Preserve any pivotal information concerning objects, attributes, and their relations present in the sentence.",
    // 10
    "Write a new faithful and high-quality caption based on the given phrases and a given sentence. The given sentence is the original caption and the phrases are entities or objects, attributes, and their visual relationships in an image. Given sentence: {caption}. Given phrases: {phrases}. If the sentence contains objects or nouns (e.g. digits, car models, planes, pets, animals, etc.), the new caption should be faithful and keep this information. Otherwise, use the phrases to create the new caption.",
];

/// Ids 1..=5 do not embed the original caption; 6..=10 do.
pub(crate) const FIRST_CAPTION_TEMPLATE: u8 = 6;

/// Output-hygiene constraint block attached when a policy opts into
/// `safe_default_constraints`.
pub const SAFE_OUTPUT_CONSTRAINT: &str = "The caption should not contain any NSFW words. It should be grammatically correct. It should be concise, but not too short. Directly output the caption and do not add any formatting.";

/// Style templates for image-generation prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStyle {
    Real,
    Nocap,
    Isometric,
    Enhance,
    Quality,
}

impl ImageStyle {
    pub const ALL: [ImageStyle; 5] = [
        ImageStyle::Real,
        ImageStyle::Nocap,
        ImageStyle::Isometric,
        ImageStyle::Enhance,
        ImageStyle::Quality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImageStyle::Real => "real",
            ImageStyle::Nocap => "nocap",
            ImageStyle::Isometric => "isometric",
            ImageStyle::Enhance => "enhance",
            ImageStyle::Quality => "quality",
        }
    }

    pub(crate) fn template(self) -> &'static str {
        match self {
            ImageStyle::Real => {
                "a real photo. {prompt}. 35mm photograph, film, bokeh, professional, 4k, highly detailed"
            }
            ImageStyle::Nocap => "a real photo showing {prompt}. highly detailed",
            ImageStyle::Isometric => {
                "isometric style {prompt} . vibrant, beautiful, crisp, detailed, ultra detailed, intricate"
            }
            ImageStyle::Enhance => "breathtaking {prompt}. award-winning, professional, highly detailed",
            ImageStyle::Quality => "masterpiece, best quality, ultra detailed, {prompt}. intricate details",
        }
    }
}

impl std::fmt::Display for ImageStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ImageStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ImageStyle::ALL
            .into_iter()
            .find(|style| style.name() == s)
            .ok_or_else(|| format!("unknown image style \"{s}\""))
    }
}
