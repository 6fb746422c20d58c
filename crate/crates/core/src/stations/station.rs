//! One measuring station.
//!
//! A station knows its own setting schedule, the shared key file and the
//! emitted `(n, λ, t)` stream, nothing else. It connects out to the collator
//! and to the source only, and never listens.

use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use super::fault::{Fault, FaultFilter};
use super::keyfile::KeyFile;
use super::wire::{
    self, CollatorMessage, KeyDigest, SessionOpen, SourceEmit, SourceMessage, StationHello,
    StationMessage, StationReport, WIRE_VERSION,
};
use super::{connect_within, StationError};
use crate::model::{measure_left, measure_right, GaugeKey, PairEvent, Setting, Station};

#[derive(Clone, Debug)]
pub struct StationConfig {
    pub id: Station,
    /// Setting per session; session `s` uses `settings[s % len]`.
    pub settings: Vec<Setting>,
    pub key_path: PathBuf,
    pub source: String,
    pub collator: String,
    pub inject: Option<Fault>,
    pub log: Option<PathBuf>,
    pub connect_timeout: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeerRole {
    Collator,
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnectionRecord {
    pub peer: PeerRole,
    pub addr: SocketAddr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StationSummary {
    pub station: Station,
    pub reports_sent: u64,
    pub rejected: u64,
    pub connections: Vec<ConnectionRecord>,
}

/// What a station does with one inbound source message.
#[derive(Clone, Debug, PartialEq)]
pub enum StationStep {
    Open(SessionOpen),
    Report(StationReport),
    End,
}

/// The station's protocol state, without any I/O.
#[derive(Clone, Debug)]
pub struct StationCore {
    id: Station,
    settings: Vec<Setting>,
    key: GaugeKey,
    session: Option<SessionOpen>,
    last_n: Option<u64>,
}

impl StationCore {
    pub fn new(id: Station, settings: Vec<Setting>, key: GaugeKey) -> Result<Self, StationError> {
        if settings.is_empty() {
            return Err(StationError::Config("station needs at least one setting".into()));
        }
        Ok(StationCore {
            id,
            settings,
            key,
            session: None,
            last_n: None,
        })
    }

    /// Process one message; `Err` holds the reason a message was rejected.
    pub fn handle(&mut self, msg: &SourceMessage, clock_ns: u64) -> Result<StationStep, String> {
        match *msg {
            SourceMessage::SessionStart { v, session, first_n, count } => {
                check_version(v)?;
                if first_n == 0 {
                    return Err("pair indices start at 1".into());
                }
                if self.last_n.is_some_and(|last| first_n <= last) {
                    return Err(format!("session {session} overlaps earlier pairs"));
                }
                let open = SessionOpen {
                    v: WIRE_VERSION,
                    station: self.id,
                    session,
                    first_n,
                    count,
                    setting: self.settings[session as usize % self.settings.len()],
                };
                self.session = Some(open);
                Ok(StationStep::Open(open))
            }
            SourceMessage::Emit(SourceEmit { v, n, lambda, t }) => {
                check_version(v)?;
                let s = self.session.ok_or("emission outside a session")?;
                if !(n >= s.first_n && n - s.first_n < s.count) {
                    return Err(format!("pair {n} outside session {}", s.session));
                }
                if self.last_n.is_some_and(|last| n <= last) {
                    return Err(format!("pair {n} is not increasing"));
                }
                if !(0.0..1.0).contains(&lambda) || !(0.0..1.0).contains(&t) {
                    return Err(format!("pair {n} has λ={lambda}, t={t} outside [0, 1)"));
                }
                self.last_n = Some(n);
                let e = PairEvent { n, lambda, t };
                let outcome = match self.id {
                    Station::L => measure_left(&s.setting, &e, &self.key),
                    Station::R => measure_right(&s.setting, &e, &self.key),
                };
                Ok(StationStep::Report(StationReport {
                    v: WIRE_VERSION,
                    n,
                    station: self.id,
                    setting: s.setting,
                    outcome,
                    clock_ns,
                }))
            }
            SourceMessage::End { v } => {
                check_version(v)?;
                Ok(StationStep::End)
            }
        }
    }
}

fn check_version(v: u32) -> Result<(), String> {
    if v == WIRE_VERSION {
        Ok(())
    } else {
        Err(format!("unsupported wire version {v}"))
    }
}

/// Run recorded source messages through a station offline (clock fields 0).
pub fn replay(
    messages: &[SourceMessage],
    id: Station,
    settings: Vec<Setting>,
    key: GaugeKey,
) -> Result<super::collate::StationLog, StationError> {
    let mut core = StationCore::new(id, settings, key)?;
    let mut log = super::collate::StationLog::new(id);
    for m in messages {
        match core.handle(m, 0) {
            Ok(StationStep::Open(s)) => log.sessions.push(s),
            Ok(StationStep::Report(r)) => log.reports.push(r),
            Ok(StationStep::End) => break,
            Err(_) => {}
        }
    }
    Ok(log)
}

pub fn run_station(cfg: &StationConfig) -> Result<StationSummary, StationError> {
    let key = KeyFile::load(&cfg.key_path)?;
    let mut core = StationCore::new(cfg.id, cfg.settings.clone(), key.key)?;
    let started = Instant::now();
    let mut connections = Vec::with_capacity(2);

    let collator = connect_within(&cfg.collator, cfg.connect_timeout)?;
    connections.push(ConnectionRecord {
        peer: PeerRole::Collator,
        addr: collator.peer_addr()?,
    });
    let mut to_collator = BufWriter::new(collator.try_clone()?);
    let mut from_collator = BufReader::new(collator);
    wire::write_frame(
        &mut to_collator,
        &StationMessage::KeyDigest(KeyDigest {
            v: WIRE_VERSION,
            station: cfg.id,
            digest_hex: key.digest_hex(),
        }),
    )?;
    to_collator.flush()?;
    match wire::read_frame::<_, CollatorMessage>(&mut from_collator)? {
        Some(CollatorMessage::KeyAccepted { .. }) => {}
        Some(CollatorMessage::KeyRejected { reason, .. }) => {
            return Err(StationError::KeyRejected(reason))
        }
        None => return Err(StationError::Handshake("collator closed during key check".into())),
    }

    let source = connect_within(&cfg.source, cfg.connect_timeout)?;
    connections.push(ConnectionRecord {
        peer: PeerRole::Source,
        addr: source.peer_addr()?,
    });
    let mut to_source = BufWriter::new(source.try_clone()?);
    wire::write_frame(&mut to_source, &StationHello::Hello { v: WIRE_VERSION, station: cfg.id })?;
    to_source.flush()?;
    let mut from_source = BufReader::new(source);

    let mut sent_log = super::collate::StationLog::new(cfg.id);
    let mut filter = cfg.inject.map(FaultFilter::new);
    let mut reports_sent = 0u64;
    let mut rejected = 0u64;
    let mut send = |msg: StationMessage, out: &mut BufWriter<TcpStream>| -> Result<(), StationError> {
        wire::write_frame(out, &msg)?;
        if cfg.log.is_some() {
            match msg {
                StationMessage::SessionOpen(s) => sent_log.sessions.push(s),
                StationMessage::Report(r) => sent_log.reports.push(r),
                _ => {}
            }
        }
        Ok(())
    };

    loop {
        let Some(body) = wire::read_raw_frame(&mut from_source)? else {
            return Err(StationError::SourceClosed);
        };
        let clock_ns = started.elapsed().as_nanos() as u64;
        let step = wire::decode::<SourceMessage>(&body)
            .map_err(|e| e.to_string())
            .and_then(|m| core.handle(&m, clock_ns));
        match step {
            Ok(StationStep::Open(s)) => send(StationMessage::SessionOpen(s), &mut to_collator)?,
            Ok(StationStep::Report(r)) => {
                let out = match filter.as_mut() {
                    Some(f) => f.push(r),
                    None => vec![r],
                };
                for r in out {
                    send(StationMessage::Report(r), &mut to_collator)?;
                    reports_sent += 1;
                }
            }
            Ok(StationStep::End) => break,
            Err(reason) => {
                rejected += 1;
                eprintln!("station {}: rejected source message: {reason}", cfg.id);
            }
        }
    }
    if let Some(f) = filter.as_mut() {
        for r in f.finish() {
            send(StationMessage::Report(r), &mut to_collator)?;
            reports_sent += 1;
        }
    }
    wire::write_frame(
        &mut to_collator,
        &StationMessage::Done {
            v: WIRE_VERSION,
            station: cfg.id,
            reports: reports_sent,
        },
    )?;
    to_collator.flush()?;
    if let Some(path) = &cfg.log {
        sent_log.write_jsonl(BufWriter::new(std::fs::File::create(path)?))?;
    }
    Ok(StationSummary {
        station: cfg.id,
        reports_sent,
        rejected,
        connections,
    })
}
