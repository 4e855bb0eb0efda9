//! Shared record of every backend call: stage, attempts, latency, payload
//! digest. Per-stage totals are exact for the life of the log; the detailed
//! records are a bounded tail so multi-million-record jobs do not grow
//! memory without limit. Tests use the log to prove which model nodes a
//! path actually touched.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Detailed records kept in memory by default.
pub const DEFAULT_LOG_CAPACITY: usize = 4096;

/// The model endpoint a call went to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Captioner,
    Extractor,
    Classifier,
    TextGenerator,
    ImageGenerator,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Captioner => "captioner",
            Stage::Extractor => "extractor",
            Stage::Classifier => "classifier",
            Stage::TextGenerator => "text-generator",
            Stage::ImageGenerator => "image-generator",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub attempts: u32,
    pub latency: Duration,
    pub payload_digest: String,
    pub ok: bool,
}

/// Exact running totals for one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub calls: usize,
    pub attempts: u64,
    pub failures: usize,
}

#[derive(Debug, Default)]
struct LogInner {
    recent: VecDeque<CallRecord>,
    capacity: usize,
    totals: HashMap<Stage, StageTotals>,
}

/// Cheap cloneable handle; all clones share the same underlying log.
#[derive(Debug, Clone)]
pub struct CallLog {
    inner: Arc<Mutex<LogInner>>,
}

impl Default for CallLog {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_LOG_CAPACITY)
    }
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// A log keeping at most `capacity` detailed records (totals stay
    /// exact regardless).
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(LogInner {
                recent: VecDeque::new(),
                capacity,
                totals: HashMap::new(),
            })),
        }
    }

    pub fn record(&self, record: CallRecord) {
        let mut inner = self.inner.lock().expect("call log poisoned");
        let totals = inner.totals.entry(record.stage).or_default();
        totals.calls += 1;
        totals.attempts += u64::from(record.attempts);
        if !record.ok {
            totals.failures += 1;
        }
        if inner.recent.len() == inner.capacity {
            inner.recent.pop_front();
        }
        if inner.capacity > 0 {
            inner.recent.push_back(record);
        }
    }

    /// The retained tail of detailed records, oldest first.
    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.inner
            .lock()
            .expect("call log poisoned")
            .recent
            .iter()
            .cloned()
            .collect()
    }

    pub fn count_stage(&self, stage: Stage) -> usize {
        self.inner
            .lock()
            .expect("call log poisoned")
            .totals
            .get(&stage)
            .map_or(0, |t| t.calls)
    }

    pub fn stage_totals(&self, stage: Stage) -> StageTotals {
        self.inner
            .lock()
            .expect("call log poisoned")
            .totals
            .get(&stage)
            .copied()
            .unwrap_or_default()
    }

    /// Total calls across all stages.
    pub fn len(&self) -> usize {
        self.inner
            .lock()
            .expect("call log poisoned")
            .totals
            .values()
            .map(|t| t.calls)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock().expect("call log poisoned");
        inner.recent.clear();
        inner.totals.clear();
    }
}
