//! The pair source: broadcasts identical emissions to both stations.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{self, SourceEmit, SourceMessage, StationHello, WIRE_VERSION};
use super::{accept_within, StationError};
use crate::dataset::SCHEMA_VERSION;
use crate::experiments::group_stream;
use crate::model::Station;

#[derive(Clone, Debug)]
pub struct SourceConfig {
    pub seed: u64,
    pub pairs_per_session: u64,
    pub sessions: u32,
    pub log: Option<PathBuf>,
    /// Give up if both stations have not connected within this time.
    pub accept_timeout: Option<Duration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSummary {
    pub sessions: u32,
    pub emitted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum LogMeta {
    EmissionLog {
        schema_version: u32,
        seed: u64,
        pairs_per_session: u64,
        sessions: u32,
    },
    Partial {
        station: Station,
        last_n: Option<u64>,
        reason: String,
    },
}

/// Every message broadcast to the stations, in order, in the same
/// `(session, first_n, count)` / `(n, λ, t)` sequence the stations received.
pub fn emissions(seed: u64, pairs_per_session: u64, sessions: u32) -> impl Iterator<Item = SourceMessage> {
    (0..sessions)
        .flat_map(move |s| {
            let first_n = s as u64 * pairs_per_session + 1;
            let start = SourceMessage::SessionStart {
                v: WIRE_VERSION,
                session: s,
                first_n,
                count: pairs_per_session,
            };
            std::iter::once(start).chain(
                group_stream(seed, s, pairs_per_session)
                    .take(pairs_per_session as usize)
                    .map(|e| {
                        SourceMessage::Emit(SourceEmit {
                            v: WIRE_VERSION,
                            n: e.n,
                            lambda: e.lambda,
                            t: e.t,
                        })
                    }),
            )
        })
        .chain(std::iter::once(SourceMessage::End { v: WIRE_VERSION }))
}

/// A recorded emission log. `partial` is set when the run aborted.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionLog {
    pub seed: u64,
    pub pairs_per_session: u64,
    pub sessions: u32,
    pub messages: Vec<SourceMessage>,
    pub partial: bool,
}

impl EmissionLog {
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r.lines();
        let first = lines.next().ok_or("empty emission log")?.map_err(|e| e.to_string())?;
        let LogMeta::EmissionLog {
            schema_version,
            seed,
            pairs_per_session,
            sessions,
        } = serde_json::from_str(&first).map_err(|e| e.to_string())?
        else {
            return Err("first line is not an emission-log header".into());
        };
        if schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {schema_version}"));
        }
        let mut log = EmissionLog {
            seed,
            pairs_per_session,
            sessions,
            messages: Vec::new(),
            partial: false,
        };
        for line in lines {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(LogMeta::Partial { .. }) = serde_json::from_str(&line) {
                log.partial = true;
                continue;
            }
            log.messages.push(serde_json::from_str(&line).map_err(|e| e.to_string())?);
        }
        Ok(log)
    }
}

struct Peer {
    station: Station,
    out: BufWriter<TcpStream>,
}

fn handshake(listener: &TcpListener, timeout: Option<Duration>) -> Result<[Peer; 2], StationError> {
    let mut left = None;
    let mut right = None;
    while left.is_none() || right.is_none() {
        let mut stream = accept_within(listener, timeout)?;
        let hello: Option<StationHello> = wire::read_frame(&mut stream)?;
        let Some(StationHello::Hello { v, station }) = hello else {
            return Err(StationError::Handshake("connection closed before hello".into()));
        };
        if v != WIRE_VERSION {
            return Err(wire::WireError::Version(v).into());
        }
        let slot = match station {
            Station::L => &mut left,
            Station::R => &mut right,
        };
        if slot.is_some() {
            return Err(StationError::Handshake(format!("station {station} connected twice")));
        }
        *slot = Some(Peer {
            station,
            out: BufWriter::new(stream),
        });
    }
    Ok([left.unwrap(), right.unwrap()])
}

/// Accept both stations, then stream every session to them.
pub fn run_source(listener: &TcpListener, cfg: &SourceConfig) -> Result<SourceSummary, StationError> {
    let mut peers = handshake(listener, cfg.accept_timeout)?;
    let mut log = cfg.log.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    if let Some(log) = log.as_mut() {
        let meta = LogMeta::EmissionLog {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            pairs_per_session: cfg.pairs_per_session,
            sessions: cfg.sessions,
        };
        serde_json::to_writer(&mut *log, &meta).map_err(std::io::Error::from)?;
        log.write_all(b"\n")?;
    }

    let mut emitted = 0u64;
    let mut last_n = None;
    for msg in emissions(cfg.seed, cfg.pairs_per_session, cfg.sessions) {
        let flush = !matches!(msg, SourceMessage::Emit(_));
        for peer in peers.iter_mut() {
            let sent = wire::write_frame(&mut peer.out, &msg).and_then(|()| {
                if flush {
                    peer.out.flush()?;
                }
                Ok(())
            });
            if let Err(e) = sent {
                if let Some(log) = log.as_mut() {
                    let marker = LogMeta::Partial {
                        station: peer.station,
                        last_n,
                        reason: e.to_string(),
                    };
                    let _ = serde_json::to_writer(&mut *log, &marker);
                    let _ = log.write_all(b"\n");
                    let _ = log.flush();
                }
                return Err(StationError::StationDisconnected {
                    station: peer.station,
                    last_n,
                });
            }
        }
        if let Some(log) = log.as_mut() {
            serde_json::to_writer(&mut *log, &msg).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
        }
        if let SourceMessage::Emit(e) = msg {
            emitted += 1;
            last_n = Some(e.n);
        }
    }
    if let Some(mut log) = log {
        log.flush()?;
    }
    Ok(SourceSummary {
        sessions: cfg.sessions,
        emitted,
    })
}
