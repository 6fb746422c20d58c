//! Matched-pair datasets and their JSON-lines form.
//!
//! The first line is a header carrying the schema version, the canonical
//! setting pair of every group and any run metadata (including wall-clock
//! time). Every following line is one matched pair. Everything after the
//! header is the payload: it depends only on the run's inputs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{ExperimentSpec, SettingPair};
use crate::model::{MeasurementRecord, Outcome, Station};
use crate::stats::OutcomeTally;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset has no header line")]
    MissingHeader,
    #[error("line {0}: expected a pair record after the header")]
    UnexpectedHeader(usize),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    /// Where the dataset came from, e.g. `in-process` or `collator`.
    pub producer: String,
    /// Canonical `(left; right)` pair of each group, indexed by group.
    pub setting_pairs: Vec<SettingPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ExperimentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

/// One matched pair, tagged with the setting-pair group it was measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub group: u32,
    pub n: u64,
    pub left: Outcome,
    pub right: Outcome,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(DatasetHeader),
    Pair(DatasetRecord),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LineRef<'a> {
    Header(&'a DatasetHeader),
    Pair(&'a DatasetRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunDataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl RunDataset {
    pub fn group_count(&self) -> usize {
        self.header.setting_pairs.len()
    }

    pub fn group(&self, group: u32) -> impl Iterator<Item = &DatasetRecord> + '_ {
        self.records.iter().filter(move |r| r.group == group)
    }

    /// Joint outcome counts per group, indexed by group.
    pub fn tallies(&self) -> Vec<OutcomeTally> {
        let mut out = vec![OutcomeTally::default(); self.group_count()];
        for r in &self.records {
            if let Some(t) = out.get_mut(r.group as usize) {
                t.add(r.left, r.right);
            }
        }
        out
    }

    /// Expand one group back into per-wing measurement records.
    pub fn measurements(&self, group: u32) -> Vec<MeasurementRecord> {
        let Some(pair) = self.header.setting_pairs.get(group as usize) else {
            return Vec::new();
        };
        self.group(group)
            .flat_map(|r| {
                [
                    MeasurementRecord {
                        pair_index: r.n,
                        station: Station::L,
                        setting: pair.left,
                        outcome: r.left,
                    },
                    MeasurementRecord {
                        pair_index: r.n,
                        station: Station::R,
                        setting: pair.right,
                        outcome: r.right,
                    },
                ]
            })
            .collect()
    }

    /// True when records appear group by group in ascending group order.
    pub fn is_grouped(&self) -> bool {
        self.records.windows(2).all(|w| w[0].group <= w[1].group)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut w, &LineRef::Header(&self.header))
            .map_err(|source| DatasetError::Json { line: 1, source })?;
        w.write_all(b"\n")?;
        self.write_records(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_records<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        for (i, r) in self.records.iter().enumerate() {
            serde_json::to_writer(&mut w, &LineRef::Pair(r))
                .map_err(|source| DatasetError::Json { line: i + 2, source })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Setting pairs followed by the record lines: everything that is a pure
    /// function of seed, key and settings.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut buf =
            serde_json::to_vec(&self.header.setting_pairs).expect("settings serialize");
        buf.push(b'\n');
        self.write_records(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, DatasetError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|source| DatasetError::Json { line: i + 1, source })?;
            match parsed {
                Line::Header(h) if header.is_none() && records.is_empty() => {
                    if h.schema_version != SCHEMA_VERSION {
                        return Err(DatasetError::SchemaVersion(h.schema_version));
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(DatasetError::UnexpectedHeader(i + 1)),
                Line::Pair(p) => {
                    if header.is_none() {
                        return Err(DatasetError::MissingHeader);
                    }
                    records.push(p);
                }
            }
        }
        Ok(RunDataset {
            header: header.ok_or(DatasetError::MissingHeader)?,
            records,
        })
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
