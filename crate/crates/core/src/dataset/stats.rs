//! Corpus statistics: word counts, word-count histograms, and filter-ratio
//! distributions, emitted as JSON and CSV for plotting.

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;

/// Word-count histogram bin width.
pub const WORD_BIN_WIDTH: usize = 5;
/// Word counts at or above this land in the overflow bin.
pub const WORD_BIN_MAX: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: usize,
    /// Exclusive upper bound; `None` marks the overflow bin.
    pub high: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStats {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub records: usize,
    pub texts: usize,
    pub mean_words: f64,
    pub median_words: f64,
    pub word_histogram: Vec<HistogramBin>,
    /// Distribution of provenance filter ratios in tenth-wide bins, present
    /// when any record carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_ratio_histogram: Option<[usize; 10]>,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Statistics for each manifest, in input order.
pub fn compute_stats(manifests: &[&Manifest]) -> Vec<ManifestStats> {
    manifests.iter().map(|m| stats_for(m)).collect()
}

fn stats_for(manifest: &Manifest) -> ManifestStats {
    let mut counts: Vec<usize> = manifest
        .records
        .iter()
        .filter_map(|r| r.text.as_deref())
        .map(word_count)
        .collect();
    counts.sort_unstable();

    let texts = counts.len();
    let mean = if texts == 0 {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / texts as f64
    };
    let median = match texts {
        0 => 0.0,
        n if n % 2 == 1 => counts[n / 2] as f64,
        n => (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0,
    };

    let bins = WORD_BIN_MAX / WORD_BIN_WIDTH;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: i * WORD_BIN_WIDTH,
            high: Some((i + 1) * WORD_BIN_WIDTH),
            count: 0,
        })
        .collect();
    histogram.push(HistogramBin {
        low: WORD_BIN_MAX,
        high: None,
        count: 0,
    });
    for &count in &counts {
        let bin = (count / WORD_BIN_WIDTH).min(bins);
        histogram[bin].count += 1;
    }

    let mut ratio_histogram = [0usize; 10];
    let mut any_ratio = false;
    for record in &manifest.records {
        if let Some(ratio) = record.provenance.as_ref().and_then(|p| p.filter_ratio) {
            any_ratio = true;
            let bin = ((ratio * 10.0) as usize).min(9);
            ratio_histogram[bin] += 1;
        }
    }

    ManifestStats {
        name: manifest.header.name.clone(),
        variant: manifest.header.variant.clone(),
        records: manifest.records.len(),
        texts,
        mean_words: mean,
        median_words: median,
        word_histogram: histogram,
        filter_ratio_histogram: any_ratio.then_some(ratio_histogram),
    }
}

/// One histogram series per manifest:
/// `manifest,bin_low,bin_high,count` rows.
pub fn histogram_csv(stats: &[ManifestStats]) -> String {
    let mut out = String::from("manifest,bin_low,bin_high,count\n");
    for s in stats {
        for bin in &s.word_histogram {
            let high = bin
                .high
                .map(|h| h.to_string())
                .unwrap_or_else(|| "inf".to_string());
            out.push_str(&format!("{},{},{},{}\n", s.name, bin.low, high, bin.count));
        }
    }
    out
}
