//! Self-filtering of synthetic samples. Text samples must contain at least a
//! fraction `p_f` of the visual tags that produced them; image samples are
//! re-tagged through the vision tagging model and checked against the text
//! that produced them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::dataset::SampleRecord;
use crate::tags::{tag_presence_ratio, TagMatchConfig, VisualTags};

/// Default filtering threshold: keep a sample when at least 20% of its tags
/// survive into the checked text.
pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterTarget {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Pass threshold on the tag-presence ratio, inclusive.
    pub p_f: f64,
    #[serde(default)]
    pub match_config: TagMatchConfig,
    pub apply_to: BTreeSet<FilterTarget>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            p_f: DEFAULT_FILTER_THRESHOLD,
            match_config: TagMatchConfig::default(),
            apply_to: BTreeSet::from([FilterTarget::Text]),
        }
    }
}

impl FilterConfig {
    pub fn for_targets(p_f: f64, targets: impl IntoIterator<Item = FilterTarget>) -> Self {
        Self {
            p_f,
            match_config: TagMatchConfig::default(),
            apply_to: targets.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_f) {
            return Err(format!("p_f {} outside [0, 1]", self.p_f));
        }
        if self.apply_to.is_empty() {
            return Err("apply_to must not be empty".to_string());
        }
        Ok(())
    }
}

/// Outcome of checking one sample. Quarantine is reserved for checks that
/// could not run (backend failure, missing inputs); it never silently passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum FilterDecision {
    Pass { ratio: f64 },
    Reject { ratio: f64, reason: String },
    Quarantined { reason: String },
}

impl FilterDecision {
    pub fn is_pass(&self) -> bool {
        matches!(self, FilterDecision::Pass { .. })
    }

    pub fn ratio(&self) -> Option<f64> {
        match self {
            FilterDecision::Pass { ratio } | FilterDecision::Reject { ratio, .. } => Some(*ratio),
            FilterDecision::Quarantined { .. } => None,
        }
    }
}

/// Check a synthetic text against the tags that steered its generation.
pub fn filter_text_sample(
    tags: &VisualTags,
    synthetic_text: &str,
    cfg: &FilterConfig,
) -> FilterDecision {
    match tag_presence_ratio(tags, synthetic_text, cfg.match_config) {
        Ok(ratio) => decide(ratio, cfg.p_f),
        Err(_) => FilterDecision::Reject {
            ratio: 0.0,
            reason: "no tags".to_string(),
        },
    }
}

/// Check a synthetic image by re-tagging it through the vision tagging model
/// and matching the recovered tags against the text that produced the image.
pub fn filter_image_sample(
    backends: &Backends,
    starting_text: &str,
    synthetic_image: &crate::backends::ImageRef,
    cfg: &FilterConfig,
) -> FilterDecision {
    let tagged = match backends.tag_image(synthetic_image) {
        Ok(tagged) => tagged,
        Err(e) => {
            return FilterDecision::Quarantined {
                reason: format!("vtm: {e}"),
            }
        }
    };
    match tag_presence_ratio(&tagged.tags, starting_text, cfg.match_config) {
        Ok(ratio) => decide(ratio, cfg.p_f),
        Err(_) => FilterDecision::Reject {
            ratio: 0.0,
            reason: "no tags".to_string(),
        },
    }
}

fn decide(ratio: f64, p_f: f64) -> FilterDecision {
    if ratio >= p_f {
        FilterDecision::Pass { ratio }
    } else {
        FilterDecision::Reject {
            ratio,
            reason: "below threshold".to_string(),
        }
    }
}

/// A record waiting on its filter decision, carrying whatever its checks
/// need: the tags that produced its text, and the text that produced its
/// image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCandidate {
    pub record: SampleRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<VisualTags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starting_text: Option<String>,
}

/// Per-sample outcome kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub decision: String,
}

pub const HISTOGRAM_BINS: usize = 10;

/// Batch tally: conservation (`passed + rejected + quarantined = evaluated`)
/// holds by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub evaluated: usize,
    pub passed: usize,
    pub rejected: usize,
    pub quarantined: usize,
    /// Counts of ratios in [i/10, (i+1)/10); a ratio of 1.0 lands in the
    /// last bin.
    pub ratio_histogram: [usize; HISTOGRAM_BINS],
    pub rejection_reasons: BTreeMap<String, usize>,
    pub outcomes: Vec<SampleOutcome>,
}

impl FilterReport {
    pub fn pass_rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.passed as f64 / self.evaluated as f64
        }
    }

    pub(crate) fn tally(&mut self, id: &str, decision: &FilterDecision) {
        self.evaluated += 1;
        if let Some(ratio) = decision.ratio() {
            let bin = ((ratio * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            self.ratio_histogram[bin] += 1;
        }
        let label = match decision {
            FilterDecision::Pass { .. } => {
                self.passed += 1;
                "pass".to_string()
            }
            FilterDecision::Reject { reason, .. } => {
                self.rejected += 1;
                *self.rejection_reasons.entry(reason.clone()).or_default() += 1;
                "reject".to_string()
            }
            FilterDecision::Quarantined { reason } => {
                self.quarantined += 1;
                *self.rejection_reasons.entry(reason.clone()).or_default() += 1;
                "quarantined".to_string()
            }
        };
        self.outcomes.push(SampleOutcome {
            id: id.to_string(),
            ratio: decision.ratio(),
            decision: label,
        });
    }

    /// Histogram as CSV (`bin_low,bin_high,count`) for plotting threshold
    /// sweeps.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, count) in self.ratio_histogram.iter().enumerate() {
            let low = i as f64 / HISTOGRAM_BINS as f64;
            let high = (i + 1) as f64 / HISTOGRAM_BINS as f64;
            out.push_str(&format!("{low:.1},{high:.1},{count}\n"));
        }
        out
    }
}

/// Run the configured checks over a batch. Output order equals input order;
/// per-sample failures quarantine that sample and the stream continues.
/// Passed records come back with their provenance stamped with the binding
/// (lowest) ratio.
pub fn filter_batch(
    backends: &Backends,
    candidates: Vec<FilterCandidate>,
    cfg: &FilterConfig,
) -> (Vec<SampleRecord>, FilterReport) {
    let mut passed_records = Vec::new();
    let mut report = FilterReport::default();
    for candidate in candidates {
        let decision = evaluate_candidate(backends, &candidate, cfg);
        report.tally(&candidate.record.id, &decision);
        if let FilterDecision::Pass { ratio } = decision {
            let mut record = candidate.record;
            if let Some(prov) = record.provenance.as_mut() {
                prov.filter_ratio = Some(ratio);
            }
            passed_records.push(record);
        }
    }
    (passed_records, report)
}

/// Combine the applicable checks for one candidate: every configured check
/// must pass; the decision carries the lowest ratio seen.
pub fn evaluate_candidate(
    backends: &Backends,
    candidate: &FilterCandidate,
    cfg: &FilterConfig,
) -> FilterDecision {
    let mut lowest: Option<f64> = None;
    if cfg.apply_to.contains(&FilterTarget::Text) {
        let Some(tags) = candidate.tags.as_ref() else {
            return FilterDecision::Quarantined {
                reason: "missing tags".to_string(),
            };
        };
        let Some(text) = candidate.record.text.as_deref() else {
            return FilterDecision::Quarantined {
                reason: "missing text".to_string(),
            };
        };
        match filter_text_sample(tags, text, cfg) {
            FilterDecision::Pass { ratio } => lowest = Some(lowest.map_or(ratio, |l| ratio.min(l))),
            other => return other,
        }
    }
    if cfg.apply_to.contains(&FilterTarget::Image) {
        let Some(text) = candidate.starting_text.as_deref() else {
            return FilterDecision::Quarantined {
                reason: "missing starting text".to_string(),
            };
        };
        let Some(image) = candidate.record.image_ref.as_ref() else {
            return FilterDecision::Quarantined {
                reason: "missing image".to_string(),
            };
        };
        match filter_image_sample(backends, text, image, cfg) {
            FilterDecision::Pass { ratio } => lowest = Some(lowest.map_or(ratio, |l| ratio.min(l))),
            other => return other,
        }
    }
    match lowest {
        Some(ratio) => FilterDecision::Pass { ratio },
        // No applicable check ran; an empty apply_to never validates, so
        // treat it as quarantine rather than a silent pass.
        None => FilterDecision::Quarantined {
            reason: "no applicable checks".to_string(),
        },
    }
}
