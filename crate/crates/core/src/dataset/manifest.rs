//! Line-delimited JSON manifests: a header line followed by one record per
//! line. Streamable, shard-friendly, and diff-able; every stage reads and
//! writes this format.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::SampleRecord;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: missing manifest header line")]
    MissingHeader { path: String },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: duplicate id \"{id}\" on lines {first_line} and {second_line}")]
    DuplicateId {
        path: String,
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("{path}: header count {expected} does not match {actual} record lines")]
    CountMismatch {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Extra mixing provenance carried by mixed manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixInfo {
    pub rule: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixInfo>,
}

/// First line of every manifest file, wrapped so header lines cannot be
/// confused with record lines.
#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    manifest: ManifestHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(name: impl Into<String>, variant: Option<&str>) -> Self {
        Self {
            header: ManifestHeader {
                name: name.into(),
                variant: variant.map(str::to_string),
                config_digest: None,
                count: 0,
                mix: None,
            },
            records: Vec::new(),
        }
    }

    pub fn with_records(mut self, records: Vec<SampleRecord>) -> Self {
        self.records = records;
        self.header.count = self.records.len();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialize to the line-delimited wire form, header count synced to the
    /// actual record count.
    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.count = self.records.len();
        let mut out = Vec::new();
        let header_line =
            serde_json::to_vec(&HeaderLine { manifest: header }).expect("header serializes");
        out.extend_from_slice(&header_line);
        out.push(b'\n');
        for record in &self.records {
            let line = serde_json::to_vec(record).expect("record serializes");
            out.extend_from_slice(&line);
            out.push(b'\n');
        }
        out
    }

    /// Write atomically (temp file then rename).
    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&self.to_jsonl_bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)
    }
}

/// Read and validate a manifest file. Problems are reported with their line
/// numbers; duplicate ids report both offending lines.
pub fn ingest_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let display = path.display().to_string();
    let io_err = |source| ManifestError::Io {
        path: display.clone(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);

    let mut header: Option<ManifestHeader> = None;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ManifestError::Io {
            path: display.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if header.is_none() {
            let parsed: HeaderLine =
                serde_json::from_str(trimmed).map_err(|_| ManifestError::MissingHeader {
                    path: display.clone(),
                })?;
            header = Some(parsed.manifest);
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(trimmed).map_err(|e| ManifestError::Malformed {
                path: display.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| ManifestError::Malformed {
            path: display.clone(),
            line: line_no,
            message,
        })?;
        if let Some(first_line) = seen.insert(record.id.clone(), line_no) {
            return Err(ManifestError::DuplicateId {
                path: display,
                id: record.id,
                first_line,
                second_line: line_no,
            });
        }
        records.push(record);
    }
    let header = header.ok_or(ManifestError::MissingHeader {
        path: display.clone(),
    })?;
    if header.count != records.len() {
        return Err(ManifestError::CountMismatch {
            path: display,
            expected: header.count,
            actual: records.len(),
        });
    }
    Ok(Manifest { header, records })
}

#[cfg(test)]
mod tests {
    use super::super::record::Origin;
    use super::*;

    fn sample(id: &str) -> SampleRecord {
        SampleRecord::real(id).with_text(format!("text for {id}"))
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let manifest = Manifest::new("fixture", Some("cap"))
            .with_records(vec![sample("a"), sample("b"), sample("c")]);
        manifest.write_to(&path).unwrap();
        let loaded = ingest_manifest(&path).unwrap();
        assert_eq!(loaded.header.count, 3);
        assert_eq!(loaded.records, manifest.records);
        assert_eq!(loaded.header.variant.as_deref(), Some("cap"));
    }

    #[test]
    fn duplicate_ids_report_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let mut manifest = Manifest::new("fixture", None);
        manifest.records = vec![sample("a"), sample("x"), sample("b"), sample("c"), sample("x")];
        manifest.header.count = 5;
        manifest.write_to(&path).unwrap();
        let err = ingest_manifest(&path).unwrap_err();
        match err {
            ManifestError::DuplicateId {
                id,
                first_line,
                second_line,
                ..
            } => {
                assert_eq!(id, "x");
                // header is line 1, records start at line 2
                assert_eq!(first_line, 3);
                assert_eq!(second_line, 6);
            }
            other => panic!("expected duplicate id error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut bytes = Manifest::new("fixture", None)
            .with_records(vec![sample("a")])
            .to_jsonl_bytes();
        bytes.extend_from_slice(b"{not json}\n");
        fs::write(&path, &bytes).unwrap();
        let err = ingest_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::Malformed { line: 3, .. }));
    }

    #[test]
    fn count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.jsonl");
        let manifest = Manifest::new("fixture", None).with_records(vec![sample("a"), sample("b")]);
        let mut bytes = manifest.to_jsonl_bytes();
        // Drop the last record line.
        let cut = bytes.len() - serde_json::to_vec(&manifest.records[1]).unwrap().len() - 1;
        bytes.truncate(cut);
        fs::write(&path, &bytes).unwrap();
        let err = ingest_manifest(&path).unwrap_err();
        assert!(matches!(
            err,
            ManifestError::CountMismatch {
                expected: 2,
                actual: 1,
                ..
            }
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn write_then_ingest_is_identity(
                texts in proptest::collection::vec("\\PC{0,60}", 1..20),
            ) {
                let records: Vec<SampleRecord> = texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        SampleRecord::real(format!("r{i}"))
                            .with_text(format!("x{t}"))
                            .with_image(format!("img_{i}"))
                    })
                    .collect();
                let manifest = Manifest::new("prop", Some("cap")).with_records(records);
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("m.jsonl");
                manifest.write_to(&path).unwrap();
                let loaded = ingest_manifest(&path).unwrap();
                prop_assert_eq!(loaded.header.count, manifest.len());
                prop_assert_eq!(loaded.records, manifest.records);
            }
        }
    }

    #[test]
    fn record_invariants_checked_on_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.jsonl");
        let naked = SampleRecord {
            id: "naked".to_string(),
            image_ref: None,
            text: None,
            class_label: None,
            origin: Origin::Real,
            provenance: None,
        };
        let mut manifest = Manifest::new("fixture", None);
        manifest.records = vec![naked];
        manifest.header.count = 1;
        fs::write(&path, manifest.to_jsonl_bytes()).unwrap();
        let err = ingest_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::Malformed { line: 2, .. }));
    }
}
