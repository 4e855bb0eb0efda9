//! Mixing original and synthetic manifests into a training manifest, and the
//! iteration-matched epoch budget for training on the mix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{Manifest, ManifestHeader, MixInfo};
use super::record::SampleRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("p_r {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("total must be >= 1")]
    BadTotal,
    #[error("manifest \"{0}\" is empty")]
    EmptyManifest(String),
    #[error("paper_mix requires a {0}-variant manifest")]
    MissingVariant(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixRule {
    /// Per draw, emit an original record with probability `p_r`, otherwise a
    /// synthetic one (round-robin across synthetic manifests), sampling with
    /// replacement.
    Ratio,
    /// Emit one record from the cap-variant and one from the capimg-variant
    /// manifest for every parent id they share.
    PaperMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub p_r: f64,
    pub seed: u64,
    pub mix_rule: MixRule,
}

impl MixConfig {
    pub fn ratio(p_r: f64, seed: u64) -> Self {
        Self {
            p_r,
            seed,
            mix_rule: MixRule::Ratio,
        }
    }
}

/// Build a mixed manifest. The header records the rule and seed so the mix
/// is reproducible from its own output.
pub fn mix_manifests(
    original: &Manifest,
    synthetic: &[Manifest],
    cfg: &MixConfig,
    total: usize,
) -> Result<Manifest, MixError> {
    match cfg.mix_rule {
        MixRule::Ratio => ratio_mix(original, synthetic, cfg, total),
        MixRule::PaperMix => paper_mix(synthetic, cfg),
    }
}

fn ratio_mix(
    original: &Manifest,
    synthetic: &[Manifest],
    cfg: &MixConfig,
    total: usize,
) -> Result<Manifest, MixError> {
    if !(cfg.p_r > 0.0 && cfg.p_r <= 1.0) {
        return Err(MixError::BadProbability(cfg.p_r));
    }
    if total < 1 {
        return Err(MixError::BadTotal);
    }
    if original.is_empty() {
        return Err(MixError::EmptyManifest(original.header.name.clone()));
    }
    for manifest in synthetic {
        if manifest.is_empty() {
            return Err(MixError::EmptyManifest(manifest.header.name.clone()));
        }
    }
    // p_r = 1.0 never draws synthetic, so empty synthetic input is fine then.
    if synthetic.is_empty() && cfg.p_r < 1.0 {
        return Err(MixError::EmptyManifest("synthetic".to_string()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(total);
    let mut synthetic_cursor = 0usize;
    for draw in 0..total {
        let take_original = rng.gen_bool(cfg.p_r);
        let source: &SampleRecord = if take_original {
            let idx = rng.gen_range(0..original.records.len());
            &original.records[idx]
        } else {
            let pool = &synthetic[synthetic_cursor % synthetic.len()];
            synthetic_cursor += 1;
            let idx = rng.gen_range(0..pool.records.len());
            &pool.records[idx]
        };
        let mut record = source.clone();
        record.id = format!("{}@{draw}", source.id);
        records.push(record);
    }
    Ok(Manifest {
        header: ManifestHeader {
            name: "mix".to_string(),
            variant: Some("mix".to_string()),
            config_digest: None,
            count: records.len(),
            mix: Some(MixInfo {
                rule: "ratio".to_string(),
                seed: cfg.seed,
                p_r: Some(cfg.p_r),
            }),
        },
        records,
    })
}

fn paper_mix(synthetic: &[Manifest], cfg: &MixConfig) -> Result<Manifest, MixError> {
    let find = |variant: &'static str| {
        synthetic
            .iter()
            .find(|m| m.header.variant.as_deref() == Some(variant))
            .ok_or(MixError::MissingVariant(variant))
    };
    let cap = find("cap")?;
    let capimg = find("capimg")?;

    let parent_of = |r: &SampleRecord| r.provenance.as_ref().map(|p| p.parent_id.clone());
    let mut capimg_by_parent = std::collections::HashMap::new();
    for record in &capimg.records {
        if let Some(parent) = parent_of(record) {
            capimg_by_parent.entry(parent).or_insert(record);
        }
    }

    let mut records = Vec::new();
    for record in &cap.records {
        let Some(parent) = parent_of(record) else {
            continue;
        };
        if let Some(partner) = capimg_by_parent.get(&parent) {
            records.push(record.clone());
            records.push((*partner).clone());
        }
    }
    Ok(Manifest {
        header: ManifestHeader {
            name: "mix".to_string(),
            variant: Some("mix".to_string()),
            config_digest: None,
            count: records.len(),
            mix: Some(MixInfo {
                rule: "paper_mix".to_string(),
                seed: cfg.seed,
                p_r: None,
            }),
        },
        records,
    })
}

/// Fractional epochs so a model trained on the original-plus-synthetic mix
/// sees the same number of samples as `epochs` passes over the original
/// set: `epochs * n / (n + n_synthetic)`.
pub fn epoch_budget(original_count: f64, synthetic_count: f64, epochs: f64) -> f64 {
    epochs * original_count / (original_count + synthetic_count)
}

#[cfg(test)]
mod tests {
    use super::super::record::{Origin, PolicyIds, Provenance};
    use super::*;

    fn real_manifest(n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| SampleRecord::real(format!("orig{i}")).with_text(format!("t{i}")))
            .collect();
        Manifest::new("orig", None).with_records(records)
    }

    fn synthetic_manifest(variant: &str, n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| SampleRecord {
                id: format!("{variant}{i}"),
                image_ref: None,
                text: Some(format!("syn {i}")),
                class_label: None,
                origin: Origin::Synthetic,
                provenance: Some(Provenance {
                    parent_id: format!("orig{i}"),
                    path_name: "sp1".to_string(),
                    policy_ids: PolicyIds::default(),
                    seed: i as u64,
                    filter_ratio: None,
                }),
            })
            .collect();
        Manifest::new(variant, Some(variant)).with_records(records)
    }

    #[test]
    fn p_r_one_emits_only_originals() {
        let mixed = mix_manifests(
            &real_manifest(5),
            &[synthetic_manifest("cap", 5)],
            &MixConfig::ratio(1.0, 3),
            100,
        )
        .unwrap();
        assert_eq!(mixed.len(), 100);
        assert!(mixed.records.iter().all(|r| r.origin == Origin::Real));
    }

    #[test]
    fn seeded_mixing_is_reproducible_and_seed_sensitive() {
        let original = real_manifest(20);
        let synthetic = [synthetic_manifest("cap", 20)];
        let cfg = MixConfig::ratio(0.5, 42);
        let a = mix_manifests(&original, &synthetic, &cfg, 500).unwrap();
        let b = mix_manifests(&original, &synthetic, &cfg, 500).unwrap();
        assert_eq!(a.to_jsonl_bytes(), b.to_jsonl_bytes());
        let other = mix_manifests(&original, &synthetic, &MixConfig::ratio(0.5, 43), 500).unwrap();
        assert_ne!(a.to_jsonl_bytes(), other.to_jsonl_bytes());
    }

    #[test]
    fn realized_fraction_tracks_p_r() {
        let original = real_manifest(50);
        let synthetic = [synthetic_manifest("cap", 50)];
        let mixed =
            mix_manifests(&original, &synthetic, &MixConfig::ratio(0.5, 7), 10_000).unwrap();
        let originals = mixed
            .records
            .iter()
            .filter(|r| r.origin == Origin::Real)
            .count();
        let fraction = originals as f64 / 10_000.0;
        assert!((fraction - 0.5).abs() < 0.02, "fraction {fraction}");
    }

    #[test]
    fn round_robin_across_synthetic_pools() {
        let original = real_manifest(5);
        let pools = [synthetic_manifest("cap", 5), synthetic_manifest("capimg", 5)];
        // p_r near zero: almost every draw is synthetic, alternating pools.
        let mixed = mix_manifests(&original, &pools, &MixConfig::ratio(0.001, 11), 200).unwrap();
        let cap_hits = mixed.records.iter().filter(|r| r.id.starts_with("cap")).count();
        let capimg_hits = mixed
            .records
            .iter()
            .filter(|r| r.id.starts_with("capimg"))
            .count();
        assert!(cap_hits > 80 && capimg_hits > 80);
    }

    #[test]
    fn mixed_ids_stay_unique() {
        let mixed = mix_manifests(
            &real_manifest(2),
            &[synthetic_manifest("cap", 2)],
            &MixConfig::ratio(0.5, 1),
            50,
        )
        .unwrap();
        let unique: std::collections::HashSet<_> =
            mixed.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(unique.len(), 50);
    }

    #[test]
    fn paper_mix_pairs_shared_parents() {
        let cap = synthetic_manifest("cap", 5);
        let mut capimg = synthetic_manifest("capimg", 3);
        // capimg covers parents orig0..orig2 only.
        capimg.header.variant = Some("capimg".to_string());
        let cfg = MixConfig {
            p_r: 0.5,
            seed: 1,
            mix_rule: MixRule::PaperMix,
        };
        let mixed = mix_manifests(&real_manifest(5), &[cap, capimg], &cfg, 1).unwrap();
        assert_eq!(mixed.len(), 6);
        for pair in mixed.records.chunks(2) {
            let p0 = pair[0].provenance.as_ref().unwrap();
            let p1 = pair[1].provenance.as_ref().unwrap();
            assert_eq!(p0.parent_id, p1.parent_id);
            assert!(pair[0].id.starts_with("cap"));
            assert!(pair[1].id.starts_with("capimg"));
        }
    }

    #[test]
    fn paper_mix_names_the_missing_variant() {
        let cfg = MixConfig {
            p_r: 0.5,
            seed: 1,
            mix_rule: MixRule::PaperMix,
        };
        let err = mix_manifests(
            &real_manifest(2),
            &[synthetic_manifest("cap", 2)],
            &cfg,
            1,
        )
        .unwrap_err();
        assert_eq!(err, MixError::MissingVariant("capimg"));
    }

    #[test]
    fn epoch_budget_matches_iteration_formula() {
        assert_eq!(epoch_budget(100.0, 0.0, 10.0), 10.0);
        assert_eq!(epoch_budget(100.0, 100.0, 10.0), 5.0);
        let scaled = epoch_budget(2.8e6, 5.1e6, 1.0);
        assert!((scaled - 2.8 / 7.9).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_error() {
        let original = real_manifest(2);
        let synthetic = [synthetic_manifest("cap", 2)];
        assert_eq!(
            mix_manifests(&original, &synthetic, &MixConfig::ratio(0.0, 1), 10),
            Err(MixError::BadProbability(0.0))
        );
        assert_eq!(
            mix_manifests(&original, &synthetic, &MixConfig::ratio(0.5, 1), 0),
            Err(MixError::BadTotal)
        );
        assert_eq!(
            mix_manifests(&Manifest::new("empty", None), &synthetic, &MixConfig::ratio(0.5, 1), 10),
            Err(MixError::EmptyManifest("empty".to_string()))
        );
    }
}
