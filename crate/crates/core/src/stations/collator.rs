//! The collator: checks key agreement, then gathers both report streams and
//! joins them.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::Duration;

use super::collate::{collate, Collation, MatchStrategy, StationLog};
use super::wire::{self, CollatorMessage, StationMessage, WireError, WIRE_VERSION};
use super::{accept_within, StationError};
use crate::model::Station;

pub const DEFAULT_HIGH_WATER_MARK: usize = 4096;

#[derive(Clone, Debug)]
pub struct CollatorConfig {
    pub strategy: MatchStrategy,
    /// Messages buffered between the network readers and the joiner. When
    /// full, readers stop draining their sockets, which throttles the
    /// stations and, through them, the source.
    pub high_water_mark: usize,
    pub accept_timeout: Option<Duration>,
}

impl Default for CollatorConfig {
    fn default() -> Self {
        CollatorConfig {
            strategy: MatchStrategy::PairId,
            high_water_mark: DEFAULT_HIGH_WATER_MARK,
            accept_timeout: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CollatorOutput {
    pub collation: Collation,
    pub left: StationLog,
    pub right: StationLog,
}

struct Inbound {
    station: Station,
    digest: String,
    stream: TcpStream,
}

fn accept_station(listener: &TcpListener, timeout: Option<Duration>) -> Result<Inbound, StationError> {
    let mut stream = accept_within(listener, timeout)?;
    match wire::read_frame::<_, StationMessage>(&mut stream)? {
        Some(StationMessage::KeyDigest(d)) if d.v == WIRE_VERSION => Ok(Inbound {
            station: d.station,
            digest: d.digest_hex,
            stream,
        }),
        Some(StationMessage::KeyDigest(d)) => Err(WireError::Version(d.v).into()),
        _ => Err(StationError::Handshake("expected a key digest first".into())),
    }
}

fn reply(stream: &TcpStream, msg: &CollatorMessage) -> Result<(), StationError> {
    let mut w = BufWriter::new(stream);
    wire::write_frame(&mut w, msg)?;
    w.flush()?;
    Ok(())
}

pub fn run_collator(listener: &TcpListener, cfg: &CollatorConfig) -> Result<CollatorOutput, StationError> {
    let first = accept_station(listener, cfg.accept_timeout)?;
    let second = accept_station(listener, cfg.accept_timeout)?;
    let problem = if first.station == second.station {
        Some(format!("station {} connected twice", first.station))
    } else if first.digest != second.digest {
        Some("key digests differ between stations".to_string())
    } else {
        None
    };
    if let Some(reason) = problem {
        for s in [&first, &second] {
            let _ = reply(
                &s.stream,
                &CollatorMessage::KeyRejected {
                    v: WIRE_VERSION,
                    reason: reason.clone(),
                },
            );
        }
        return Err(StationError::KeyMismatch(reason));
    }
    for s in [&first, &second] {
        reply(&s.stream, &CollatorMessage::KeyAccepted { v: WIRE_VERSION })?;
    }

    let (tx, rx) = mpsc::sync_channel::<(Station, Result<StationMessage, WireError>)>(
        cfg.high_water_mark.max(1),
    );
    let readers: Vec<_> = [first, second]
        .into_iter()
        .map(|inbound| {
            let tx = tx.clone();
            std::thread::spawn(move || {
                let mut r = BufReader::new(inbound.stream);
                loop {
                    match wire::read_frame::<_, StationMessage>(&mut r) {
                        Ok(Some(m)) => {
                            let done = matches!(m, StationMessage::Done { .. });
                            if tx.send((inbound.station, Ok(m))).is_err() || done {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            let _ = tx.send((inbound.station, Err(e)));
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    drop(tx);

    let mut left = StationLog::new(Station::L);
    let mut right = StationLog::new(Station::R);
    let mut failure = None;
    for (station, msg) in rx {
        let log = match station {
            Station::L => &mut left,
            Station::R => &mut right,
        };
        match msg {
            Ok(StationMessage::SessionOpen(s)) if s.station == station => log.sessions.push(s),
            Ok(StationMessage::Report(r)) if r.station == station => log.reports.push(r),
            Ok(StationMessage::Done { .. }) => {}
            Ok(other) => {
                failure.get_or_insert(StationError::Handshake(format!(
                    "unexpected message from station {station}: {other:?}"
                )));
            }
            Err(e) => {
                failure.get_or_insert(e.into());
            }
        }
    }
    for r in readers {
        let _ = r.join();
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let collation = collate(&left, &right, cfg.strategy)?;
    Ok(CollatorOutput {
        collation,
        left,
        right,
    })
}
