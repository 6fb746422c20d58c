//! Versioned wire schema and length-prefixed JSON framing.
//!
//! Every frame is a 4-byte big-endian length followed by one JSON object.
//! Floats are written as the shortest decimal that round-trips their 64-bit
//! value, so values arrive bit-identical.
//!
//! A station can receive only [`SourceMessage`] and [`CollatorMessage`]. Both
//! reject unknown fields, and neither has a field that could carry a setting.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Outcome, Setting, Station};

pub const WIRE_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the {max} byte limit", max = MAX_FRAME_BYTES)]
    Oversized(u32),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported wire version {0}")]
    Version(u32),
}

/// One emitted pair as broadcast to both stations. Carries no setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEmit {
    pub v: u32,
    pub n: u64,
    pub lambda: f64,
    pub t: f64,
}

/// Source to station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceMessage {
    /// Opens a setting session; its pairs are `first_n .. first_n + count`.
    SessionStart {
        v: u32,
        session: u32,
        first_n: u64,
        count: u64,
    },
    Emit(SourceEmit),
    End { v: u32 },
}

/// Station to source, once, right after connecting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StationHello {
    Hello { v: u32, station: Station },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationReport {
    pub v: u32,
    pub n: u64,
    pub station: Station,
    pub setting: Setting,
    pub outcome: Outcome,
    /// Station-local monotonic clock, nanoseconds since station start.
    pub clock_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyDigest {
    pub v: u32,
    pub station: Station,
    pub digest_hex: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOpen {
    pub v: u32,
    pub station: Station,
    pub session: u32,
    pub first_n: u64,
    pub count: u64,
    pub setting: Setting,
}

/// Station to collator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StationMessage {
    KeyDigest(KeyDigest),
    SessionOpen(SessionOpen),
    Report(StationReport),
    Done { v: u32, station: Station, reports: u64 },
}

/// Collator to station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CollatorMessage {
    KeyAccepted { v: u32 },
    KeyRejected { v: u32, reason: String },
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<(), WireError> {
    let body = serde_json::to_vec(msg).map_err(|e| WireError::Malformed(e.to_string()))?;
    let len = u32::try_from(body.len()).unwrap_or(u32::MAX);
    if len > MAX_FRAME_BYTES {
        return Err(WireError::Oversized(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

/// Next raw frame body, or `None` on a clean end of stream.
pub fn read_raw_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(WireError::Oversized(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, WireError> {
    serde_json::from_slice(body).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<Option<T>, WireError> {
    read_raw_frame(r)?.map(|b| decode(&b)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;
    use std::collections::BTreeSet;

    fn keys(v: &Value, out: &mut BTreeSet<String>) {
        match v {
            Value::Object(m) => {
                for (k, inner) in m {
                    out.insert(k.clone());
                    keys(inner, out);
                }
            }
            Value::Array(a) => a.iter().for_each(|x| keys(x, out)),
            _ => {}
        }
    }

    fn receivable_by_station() -> Vec<Value> {
        let msgs = [
            serde_json::to_value(SourceMessage::SessionStart { v: 1, session: 0, first_n: 1, count: 3 }),
            serde_json::to_value(SourceMessage::Emit(SourceEmit { v: 1, n: 1, lambda: 0.5, t: 0.25 })),
            serde_json::to_value(SourceMessage::End { v: 1 }),
            serde_json::to_value(CollatorMessage::KeyAccepted { v: 1 }),
            serde_json::to_value(CollatorMessage::KeyRejected { v: 1, reason: "x".into() }),
        ];
        msgs.into_iter().map(Result::unwrap).collect()
    }

    #[test]
    fn station_inbound_schema_has_no_setting_field() {
        let mut all = BTreeSet::new();
        for m in receivable_by_station() {
            keys(&m, &mut all);
        }
        let allowed: BTreeSet<String> = ["type", "v", "session", "first_n", "count", "n", "lambda", "t", "reason"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(all, allowed);
    }

    #[test]
    fn injected_setting_field_is_rejected() {
        let forged = br#"{"type":"emit","v":1,"n":1,"lambda":0.5,"t":0.1,"setting":[1.0,0.0]}"#;
        assert!(matches!(decode::<SourceMessage>(forged), Err(WireError::Malformed(_))));
        let forged = br#"{"type":"session-start","v":1,"session":0,"first_n":1,"count":2,"right":[0.0,1.0]}"#;
        assert!(decode::<SourceMessage>(forged).is_err());
        let forged = br#"{"type":"key-accepted","v":1,"setting":[0.0,1.0]}"#;
        assert!(decode::<CollatorMessage>(forged).is_err());
    }

    #[test]
    fn emit_json_shape() {
        let m = SourceMessage::Emit(SourceEmit { v: 1, n: 7, lambda: 0.1, t: 0.2 });
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"type":"emit","v":1,"n":7,"lambda":0.1,"t":0.2}"#
        );
        let r = StationMessage::Report(StationReport {
            v: 1,
            n: 7,
            station: Station::R,
            setting: Setting::CANONICAL,
            outcome: Outcome::Minus,
            clock_ns: 5,
        });
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"type":"report","v":1,"n":7,"station":"R","setting":[1.0,0.0],"outcome":-1,"clock_ns":5}"#
        );
    }

    #[test]
    fn frames_roundtrip_floats_bit_exactly() {
        let mut buf = Vec::new();
        let vals = [0.1, 1.0 / 3.0, f64::EPSILON, 0.999_999_999_999_999_9, 5e-324];
        for (i, &x) in vals.iter().enumerate() {
            let m = SourceMessage::Emit(SourceEmit { v: 1, n: i as u64, lambda: x, t: x / 2.0 });
            write_frame(&mut buf, &m).unwrap();
        }
        let mut r = &buf[..];
        for (i, &x) in vals.iter().enumerate() {
            let m: SourceMessage = read_frame(&mut r).unwrap().unwrap();
            let SourceMessage::Emit(e) = m else { panic!() };
            assert_eq!(e.n, i as u64);
            assert_eq!(e.lambda.to_bits(), x.to_bits());
            assert_eq!(e.t.to_bits(), (x / 2.0).to_bits());
        }
        assert!(read_frame::<_, SourceMessage>(&mut r).unwrap().is_none());
    }

    #[test]
    fn oversized_and_truncated_frames() {
        let mut buf = (MAX_FRAME_BYTES + 1).to_be_bytes().to_vec();
        buf.extend_from_slice(b"{}");
        assert!(matches!(read_raw_frame(&mut &buf[..]), Err(WireError::Oversized(_))));
        let buf = [0u8, 0, 0, 10, b'{'];
        assert!(matches!(read_raw_frame(&mut &buf[..]), Err(WireError::Io(_))));
    }
}
