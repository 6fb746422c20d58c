//! Joining the two wings' report streams into pairs.
//!
//! Pair-id matching joins on the pair index each station copied from the
//! source. Sequence-order matching zips the streams in arrival order, the way
//! two isolated observers would if they only counted signals: a single lost
//! report shifts every later pairing.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{SessionOpen, StationReport};
use crate::dataset::{unix_now, DatasetHeader, DatasetRecord, RunDataset, SCHEMA_VERSION};
use crate::experiments::SettingPair;
use crate::model::{Outcome, Station};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollateError {
    #[error("expected a log from station {expected}, got {got}")]
    WrongStation { expected: Station, got: Station },
    #[error("session {session} differs between stations (L: {left:?}, R: {right:?})")]
    SessionMismatch {
        session: usize,
        left: Option<(u64, u64)>,
        right: Option<(u64, u64)>,
    },
    #[error("pair {n} reported more than once by station {station}")]
    DuplicatePair { n: u64, station: Station },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchStrategy {
    #[default]
    PairId,
    #[serde(alias = "sequence")]
    SequenceOrder,
}

impl std::str::FromStr for MatchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pair-id" => Ok(MatchStrategy::PairId),
            "sequence" | "sequence-order" => Ok(MatchStrategy::SequenceOrder),
            other => Err(format!("unknown match strategy `{other}`, expected pair-id or sequence")),
        }
    }
}

/// Everything one station sent to the collator, in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct StationLog {
    pub station: Station,
    pub sessions: Vec<SessionOpen>,
    pub reports: Vec<StationReport>,
}

impl StationLog {
    pub fn new(station: Station) -> Self {
        StationLog {
            station,
            sessions: Vec::new(),
            reports: Vec::new(),
        }
    }

    fn session_of(&self, n: u64) -> Option<u32> {
        self.sessions
            .iter()
            .find(|s| n >= s.first_n && n - s.first_n < s.count)
            .map(|s| s.session)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::json!({
            "type": "station-log",
            "schema_version": SCHEMA_VERSION,
            "station": self.station,
        });
        writeln!(w, "{header}")?;
        for s in &self.sessions {
            writeln!(w, "{}", serde_json::to_string(&LogLine::SessionOpen(*s))?)?;
        }
        for r in &self.reports {
            writeln!(w, "{}", serde_json::to_string(&LogLine::Report(*r))?)?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r.lines().enumerate();
        let (_, first) = lines.next().ok_or("empty station log")?;
        let header: serde_json::Value =
            serde_json::from_str(&first.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if header["type"] != "station-log" {
            return Err("first line is not a station-log header".into());
        }
        if header["schema_version"] != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", header["schema_version"]));
        }
        let station: Station =
            serde_json::from_value(header["station"].clone()).map_err(|e| e.to_string())?;
        let mut log = StationLog::new(station);
        for (i, line) in lines {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))? {
                LogLine::SessionOpen(s) => log.sessions.push(s),
                LogLine::Report(r) => log.reports.push(r),
            }
        }
        Ok(log)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum LogLine {
    SessionOpen(SessionOpen),
    Report(StationReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "kebab-case")]
pub enum PairingIssue {
    /// Only one wing reported this pair; it is left out of the dataset.
    Incomplete { n: u64, missing: Station },
    /// A report whose pair index belongs to no announced session.
    UnknownPair { n: u64, station: Station },
    /// Reports left over once the shorter stream ran out.
    Surplus { station: Station, count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collation {
    pub dataset: RunDataset,
    pub issues: Vec<PairingIssue>,
}

pub fn collate(
    left: &StationLog,
    right: &StationLog,
    strategy: MatchStrategy,
) -> Result<Collation, CollateError> {
    for (log, expected) in [(left, Station::L), (right, Station::R)] {
        if log.station != expected {
            return Err(CollateError::WrongStation {
                expected,
                got: log.station,
            });
        }
    }
    let sessions = left.sessions.len().max(right.sessions.len());
    let mut setting_pairs = Vec::with_capacity(sessions);
    for i in 0..sessions {
        let (l, r) = (left.sessions.get(i), right.sessions.get(i));
        let range = |s: Option<&SessionOpen>| s.map(|s| (s.first_n, s.count));
        match (l, r) {
            (Some(l), Some(r)) if l.session == r.session && range(Some(l)) == range(Some(r)) => {
                setting_pairs.push(SettingPair::new(l.setting, r.setting));
            }
            _ => {
                return Err(CollateError::SessionMismatch {
                    session: i,
                    left: range(l),
                    right: range(r),
                })
            }
        }
    }

    let mut issues = Vec::new();
    let records = match strategy {
        MatchStrategy::PairId => by_pair_id(left, right, &mut issues)?,
        MatchStrategy::SequenceOrder => by_sequence(left, right, &mut issues),
    };
    Ok(Collation {
        dataset: RunDataset {
            header: DatasetHeader {
                schema_version: SCHEMA_VERSION,
                producer: "collator".into(),
                setting_pairs,
                spec: None,
                created_unix: Some(unix_now()),
            },
            records,
        },
        issues,
    })
}

fn by_pair_id(
    left: &StationLog,
    right: &StationLog,
    issues: &mut Vec<PairingIssue>,
) -> Result<Vec<DatasetRecord>, CollateError> {
    let mut slots: BTreeMap<u64, (Option<Outcome>, Option<Outcome>)> = BTreeMap::new();
    for (log, is_left) in [(left, true), (right, false)] {
        for r in &log.reports {
            let slot = slots.entry(r.n).or_default();
            let side = if is_left { &mut slot.0 } else { &mut slot.1 };
            if side.replace(r.outcome).is_some() {
                return Err(CollateError::DuplicatePair {
                    n: r.n,
                    station: log.station,
                });
            }
        }
    }
    let mut out = Vec::with_capacity(slots.len());
    for (n, slot) in slots {
        match slot {
            (Some(l), Some(r)) => match left.session_of(n) {
                Some(group) => out.push(DatasetRecord {
                    group,
                    n,
                    left: l,
                    right: r,
                }),
                None => issues.push(PairingIssue::UnknownPair { n, station: Station::L }),
            },
            (Some(_), None) => issues.push(PairingIssue::Incomplete { n, missing: Station::R }),
            (None, _) => issues.push(PairingIssue::Incomplete { n, missing: Station::L }),
        }
    }
    // sessions occupy increasing index ranges, so index order is group order
    out.sort_by_key(|r| (r.group, r.n));
    Ok(out)
}

fn by_sequence(
    left: &StationLog,
    right: &StationLog,
    issues: &mut Vec<PairingIssue>,
) -> Vec<DatasetRecord> {
    let mut out = Vec::with_capacity(left.reports.len().min(right.reports.len()));
    for (l, r) in left.reports.iter().zip(&right.reports) {
        match left.session_of(l.n) {
            Some(group) => out.push(DatasetRecord {
                group,
                n: l.n,
                left: l.outcome,
                right: r.outcome,
            }),
            None => issues.push(PairingIssue::UnknownPair { n: l.n, station: Station::L }),
        }
    }
    let (nl, nr) = (left.reports.len(), right.reports.len());
    if nl != nr {
        let (station, count) = if nl > nr { (Station::L, nl - nr) } else { (Station::R, nr - nl) };
        issues.push(PairingIssue::Surplus { station, count });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setting;
    use crate::stations::fault::{inject_fault, Fault};
    use crate::stations::wire::WIRE_VERSION;

    fn log(station: Station, outcomes: &[(u64, Outcome)]) -> StationLog {
        StationLog {
            station,
            sessions: vec![SessionOpen {
                v: WIRE_VERSION,
                station,
                session: 0,
                first_n: 1,
                count: outcomes.len() as u64,
                setting: Setting::CANONICAL,
            }],
            reports: outcomes
                .iter()
                .map(|&(n, outcome)| StationReport {
                    v: WIRE_VERSION,
                    n,
                    station,
                    setting: Setting::CANONICAL,
                    outcome,
                    clock_ns: n * 10,
                })
                .collect(),
        }
    }

    fn pair_logs(len: u64) -> (StationLog, StationLog) {
        let l: Vec<_> = (1..=len).map(|n| (n, Outcome::from_sign(n % 3 != 0))).collect();
        let r: Vec<_> = l.iter().map(|&(n, o)| (n, -o)).collect();
        (log(Station::L, &l), log(Station::R, &r))
    }

    #[test]
    fn strategies_agree_without_faults() {
        let (l, r) = pair_logs(20);
        let a = collate(&l, &r, MatchStrategy::PairId).unwrap();
        let b = collate(&l, &r, MatchStrategy::SequenceOrder).unwrap();
        assert_eq!(a.dataset.payload_bytes(), b.dataset.payload_bytes());
        assert!(a.issues.is_empty() && b.issues.is_empty());
    }

    #[test]
    fn drop_under_pair_id_flags_one_pair() {
        let (mut l, r) = pair_logs(20);
        l.reports = inject_fault(Fault::drop_at(5), l.reports).unwrap();
        let c = collate(&l, &r, MatchStrategy::PairId).unwrap();
        assert_eq!(c.dataset.records.len(), 19);
        assert_eq!(c.issues, vec![PairingIssue::Incomplete { n: 6, missing: Station::L }]);
        assert!(c.dataset.records.iter().all(|p| p.left != p.right));
    }

    #[test]
    fn drop_under_sequence_shifts_the_tail() {
        let (mut l, r) = pair_logs(20);
        l.reports = inject_fault(Fault::drop_at(5), l.reports).unwrap();
        let c = collate(&l, &r, MatchStrategy::SequenceOrder).unwrap();
        assert_eq!(c.dataset.records.len(), 19);
        assert_eq!(c.issues, vec![PairingIssue::Surplus { station: Station::R, count: 1 }]);
        assert!(c.dataset.records[..5].iter().all(|p| p.left != p.right));
        // after the drop, left report n+1 sits beside right report n
        assert!(c.dataset.records[5..].iter().any(|p| p.left == p.right));
    }

    #[test]
    fn duplicate_under_pair_id_is_an_error() {
        let (mut l, r) = pair_logs(10);
        l.reports = inject_fault(Fault::duplicate_at(3), l.reports).unwrap();
        assert_eq!(
            collate(&l, &r, MatchStrategy::PairId),
            Err(CollateError::DuplicatePair { n: 4, station: Station::L })
        );
    }

    #[test]
    fn reorder_changes_only_sequence_matching() {
        let (l, r) = pair_logs(12);
        let base_id = collate(&l, &r, MatchStrategy::PairId).unwrap();
        let base_seq = collate(&l, &r, MatchStrategy::SequenceOrder).unwrap();
        let mut l2 = l.clone();
        l2.reports = inject_fault(Fault::reorder_at(2, 3), l2.reports).unwrap();
        let id = collate(&l2, &r, MatchStrategy::PairId).unwrap();
        let seq = collate(&l2, &r, MatchStrategy::SequenceOrder).unwrap();
        assert_eq!(id.dataset.payload_bytes(), base_id.dataset.payload_bytes());
        assert_ne!(seq.dataset.payload_bytes(), base_seq.dataset.payload_bytes());
    }

    #[test]
    fn wrong_station_and_session_mismatch() {
        let (l, r) = pair_logs(4);
        assert!(matches!(collate(&r, &l, MatchStrategy::PairId), Err(CollateError::WrongStation { .. })));
        let mut r2 = r.clone();
        r2.sessions[0].count = 3;
        assert!(matches!(collate(&l, &r2, MatchStrategy::PairId), Err(CollateError::SessionMismatch { .. })));
    }

    #[test]
    fn station_log_roundtrip() {
        let (l, _) = pair_logs(5);
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        assert_eq!(StationLog::read_jsonl(&buf[..]).unwrap(), l);
    }
}
