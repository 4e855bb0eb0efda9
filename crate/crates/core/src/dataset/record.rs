//! The unit every pipeline stage reads and writes: one image-text sample
//! with origin and, for synthesized samples, full provenance back to its
//! parent.

use serde::{Deserialize, Serialize};

use crate::backends::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyIds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// How a synthetic record came to be: which parent, along which path, under
/// which policies, with which seed, and the filter ratio it scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub parent_id: String,
    pub path_name: String,
    #[serde(default)]
    pub policy_ids: PolicyIds,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl SampleRecord {
    /// A real record carrying an image and/or a text.
    pub fn real(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_ref: None,
            text: None,
            class_label: None,
            origin: Origin::Real,
            provenance: None,
        }
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.image_ref = Some(ImageRef::new(image));
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_class_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("record id must not be empty".to_string());
        }
        if self.image_ref.is_none() && self.text.is_none() {
            return Err(format!(
                "record \"{}\" has neither image_ref nor text",
                self.id
            ));
        }
        if self.origin == Origin::Synthetic && self.provenance.is_none() {
            return Err(format!(
                "synthetic record \"{}\" is missing provenance",
                self.id
            ));
        }
        Ok(())
    }
}
