//! Long-tail augmentation: synthesize images for classes with too few
//! training samples, prompting from the class name through an image style
//! template.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::backends::Backends;
use crate::path::derive_sample_seed;
use crate::policy::{render_image_instruction, ImagePolicy, PolicyError};

use super::manifest::{Manifest, ManifestHeader};
use super::record::{Origin, PolicyIds, Provenance, SampleRecord};

/// Classes with fewer than this many records are tail classes.
pub const DEFAULT_TAIL_THRESHOLD: usize = 20;
/// Synthetic images generated per tail class.
pub const DEFAULT_PER_CLASS: usize = 7;

pub const TAIL_PATH_NAME: &str = "tail-augment";

#[derive(Debug, Error)]
pub enum TailError {
    #[error("record \"{0}\" has no class_label")]
    MissingClassLabel(String),
    #[error("image policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("class \"{class}\", sample {index}: {source}")]
    Generation {
        class: String,
        index: usize,
        #[source]
        source: crate::backends::BackendError,
    },
}

#[derive(Debug)]
pub struct TailOutcome {
    pub manifest: Manifest,
    /// Classes skipped, with the reason.
    pub warnings: Vec<String>,
    /// Tail classes augmented, in deterministic order.
    pub tail_classes: Vec<String>,
}

/// Generate `per_class` synthetic image records for every class with fewer
/// than `tail_threshold` records. Prompts are the class name rendered
/// through the image policy's style template; records carry the class label
/// and provenance to a donor record of the class.
pub fn augment_tail_classes(
    backends: &Backends,
    manifest: &Manifest,
    tail_threshold: usize,
    per_class: usize,
    image_policy: &ImagePolicy,
    seed: u64,
) -> Result<TailOutcome, TailError> {
    let mut by_class: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for record in &manifest.records {
        let label = record
            .class_label
            .as_deref()
            .ok_or_else(|| TailError::MissingClassLabel(record.id.clone()))?;
        by_class.entry(label).or_default().push(record);
    }

    let mut warnings = Vec::new();
    let mut tail_classes = Vec::new();
    let mut records = Vec::new();
    for (class, members) in &by_class {
        if members.len() >= tail_threshold {
            continue;
        }
        if class.trim().is_empty() {
            warnings.push("skipped class with empty name".to_string());
            continue;
        }
        let Some(donor) = members.first() else {
            warnings.push(format!("skipped class \"{class}\" with zero records"));
            continue;
        };
        tail_classes.push(class.to_string());
        let prompt = render_image_instruction(class, image_policy)?;
        for index in 0..per_class {
            let sample_key = format!("{class}#{index}");
            let sample_seed = derive_sample_seed(seed, &sample_key, TAIL_PATH_NAME);
            let image = backends
                .generate_image(&prompt, sample_seed)
                .map_err(|source| TailError::Generation {
                    class: class.to_string(),
                    index,
                    source,
                })?;
            records.push(SampleRecord {
                id: format!("{}-syn-{index}", slug(class)),
                image_ref: Some(image),
                text: None,
                class_label: Some(class.to_string()),
                origin: Origin::Synthetic,
                provenance: Some(Provenance {
                    parent_id: donor.id.clone(),
                    path_name: TAIL_PATH_NAME.to_string(),
                    policy_ids: PolicyIds {
                        text: None,
                        image: Some(image_policy.policy_id()),
                    },
                    seed: sample_seed,
                    filter_ratio: None,
                }),
            });
        }
    }

    let manifest = Manifest {
        header: ManifestHeader {
            name: format!("{}-tail-aug", manifest.header.name),
            variant: Some("tail".to_string()),
            config_digest: None,
            count: records.len(),
            mix: None,
        },
        records,
    };
    Ok(TailOutcome {
        manifest,
        warnings,
        tail_classes,
    })
}

fn slug(class: &str) -> String {
    let mut out: String = class
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect();
    out.make_ascii_lowercase();
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backends::ImageStore;
    use crate::policy::ImageStyle;

    fn class_manifest(counts: &[(&str, usize)]) -> Manifest {
        let mut records = Vec::new();
        for (class, n) in counts {
            for i in 0..*n {
                records.push(
                    SampleRecord::real(format!("{class}-{i}"))
                        .with_image(format!("img_{class}_{i}"))
                        .with_class_label(*class),
                );
            }
        }
        Manifest::new("longtail", None).with_records(records)
    }

    fn mock_backends(dir: &std::path::Path) -> Backends {
        Backends::mock(Arc::new(ImageStore::open(dir.join("store")).unwrap()))
    }

    #[test]
    fn three_tail_classes_times_seven() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let manifest = class_manifest(&[("ant", 2), ("bee", 5), ("cat", 19), ("dog", 25)]);
        let policy = ImagePolicy::style(ImageStyle::Real);
        let outcome =
            augment_tail_classes(&backends, &manifest, 20, 7, &policy, 5).unwrap();
        assert_eq!(outcome.tail_classes, vec!["ant", "bee", "cat"]);
        assert_eq!(outcome.manifest.len(), 21);
        for record in &outcome.manifest.records {
            assert_eq!(record.origin, Origin::Synthetic);
            assert!(record.class_label.is_some());
            let prov = record.provenance.as_ref().unwrap();
            assert!(manifest.records.iter().any(|r| r.id == prov.parent_id));
            // Generated through the "real" style template.
            let meta = backends
                .image_store()
                .metadata(record.image_ref.as_ref().unwrap())
                .unwrap()
                .unwrap();
            let prompt = meta.prompt.unwrap();
            assert!(prompt.starts_with("a real photo. "));
            assert!(prompt.ends_with("35mm photograph, film, bokeh, professional, 4k, highly detailed"));
        }
    }

    #[test]
    fn head_classes_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let manifest = class_manifest(&[("whale", 30)]);
        let policy = ImagePolicy::style(ImageStyle::Real);
        let outcome = augment_tail_classes(&backends, &manifest, 20, 7, &policy, 5).unwrap();
        assert!(outcome.manifest.is_empty());
        assert!(outcome.tail_classes.is_empty());
    }

    #[test]
    fn unlabeled_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let mut manifest = class_manifest(&[("ant", 2)]);
        manifest.records.push(SampleRecord::real("stray").with_image("img_x"));
        manifest.header.count = manifest.records.len();
        let policy = ImagePolicy::style(ImageStyle::Real);
        let err = augment_tail_classes(&backends, &manifest, 20, 7, &policy, 5).unwrap_err();
        assert!(matches!(err, TailError::MissingClassLabel(id) if id == "stray"));
    }

    #[test]
    fn deterministic_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let manifest = class_manifest(&[("ant", 2), ("bee", 3)]);
        let policy = ImagePolicy::style(ImageStyle::Real);
        let a = augment_tail_classes(&backends, &manifest, 20, 7, &policy, 5).unwrap();
        let b = augment_tail_classes(&backends, &manifest, 20, 7, &policy, 5).unwrap();
        assert_eq!(a.manifest.to_jsonl_bytes(), b.manifest.to_jsonl_bytes());
        // Distinct samples within a class come from distinct seeds.
        let refs: std::collections::HashSet<_> = a
            .manifest
            .records
            .iter()
            .map(|r| r.image_ref.as_ref().unwrap().as_str())
            .collect();
        assert_eq!(refs.len(), a.manifest.len());
    }
}
