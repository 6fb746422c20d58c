//! Networked stations: a pair source, two measuring stations and a collator,
//! talking length-prefixed JSON over TCP.
//!
//! Topology: both stations connect out to the source (to receive emissions)
//! and to the collator (to deliver reports). The stations never talk to each
//! other.

pub mod collate;
pub mod collator;
pub mod fault;
pub mod keyfile;
pub mod source;
pub mod station;
pub mod wire;

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use collate::{collate, CollateError, Collation, MatchStrategy, PairingIssue, StationLog};
pub use collator::{run_collator, CollatorConfig, CollatorOutput, DEFAULT_HIGH_WATER_MARK};
pub use fault::{inject_fault, Fault, FaultError, FaultFilter, FaultKind};
pub use keyfile::KeyFile;
pub use source::{emissions, run_source, EmissionLog, SourceConfig, SourceSummary};
pub use station::{
    replay, run_station, ConnectionRecord, PeerRole, StationConfig, StationCore, StationStep,
    StationSummary,
};
pub use wire::WireError;

use crate::experiments::{ExperimentError, ExperimentSpec, Switching};
use crate::model::{GaugeKey, Setting, Station};

#[derive(Debug, Error)]
pub enum StationError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("key file {0} not found; refusing to start")]
    MissingKey(PathBuf),
    #[error("key file {path}: {reason}")]
    BadKey { path: PathBuf, reason: String },
    #[error("collator rejected our key: {0}")]
    KeyRejected(String),
    #[error("key check failed: {0}")]
    KeyMismatch(String),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error("station {station} disconnected after pair {last_n:?}")]
    StationDisconnected { station: Station, last_n: Option<u64> },
    #[error("source closed the connection before the end of the run")]
    SourceClosed,
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error(transparent)]
    Collate(#[from] CollateError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("configuration: {0}")]
    Config(String),
}

pub(crate) fn accept_within(
    listener: &TcpListener,
    timeout: Option<Duration>,
) -> Result<TcpStream, StationError> {
    let Some(timeout) = timeout else {
        let (s, _) = listener.accept()?;
        return Ok(s);
    };
    let deadline = Instant::now() + timeout;
    listener.set_nonblocking(true)?;
    let res = loop {
        match listener.accept() {
            Ok((s, _)) => break Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    break Err(StationError::Timeout("a station to connect".into()));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => break Err(e.into()),
        }
    };
    listener.set_nonblocking(false)?;
    let s = res?;
    s.set_nonblocking(false)?;
    Ok(s)
}

/// Connect, retrying while the peer is not yet listening.
pub(crate) fn connect_within(addr: &str, timeout: Duration) -> Result<TcpStream, StationError> {
    let deadline = Instant::now() + timeout;
    loop {
        let attempt = addr
            .to_socket_addrs()
            .and_then(|mut a| a.next().ok_or_else(|| std::io::ErrorKind::AddrNotAvailable.into()))
            .and_then(TcpStream::connect);
        match attempt {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Per-station setting schedules for a fixed-schedule experiment. Every group
/// is rotated to the canonical frame first, so the left wing always uses
/// `[1, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributedPlan {
    pub seed: u64,
    pub pairs_per_session: u64,
    pub sessions: u32,
    pub key: GaugeKey,
    pub left_settings: Vec<Setting>,
    pub right_settings: Vec<Setting>,
}

impl DistributedPlan {
    pub fn from_spec(spec: &ExperimentSpec) -> Result<Self, StationError> {
        spec.validate()?;
        if spec.switching != Switching::Fixed {
            return Err(StationError::Config(
                "distributed runs use a fixed setting schedule".into(),
            ));
        }
        let pairs = spec.canonical_pairs();
        Ok(DistributedPlan {
            seed: spec.seed,
            pairs_per_session: spec.pairs_per_setting,
            sessions: u32::try_from(pairs.len())
                .map_err(|_| StationError::Config("too many setting pairs".into()))?,
            key: spec.key,
            left_settings: pairs.iter().map(|p| p.left).collect(),
            right_settings: pairs.iter().map(|p| p.right).collect(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct LocalRunOptions {
    pub strategy: MatchStrategy,
    pub inject_left: Option<Fault>,
    pub inject_right: Option<Fault>,
    /// Give the right station a different key file than the left.
    pub right_key: Option<GaugeKey>,
    pub high_water_mark: Option<usize>,
    pub source_log: Option<PathBuf>,
}

#[derive(Debug)]
pub struct LocalRun {
    pub collator: CollatorOutput,
    pub source: SourceSummary,
    pub left: StationSummary,
    pub right: StationSummary,
    pub source_addr: std::net::SocketAddr,
    pub collator_addr: std::net::SocketAddr,
}

fn scratch_dir() -> std::io::Result<PathBuf> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = std::env::temp_dir().join(format!(
        "eqrc-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Run source, both stations and the collator on loopback in one process.
pub fn run_local(spec: &ExperimentSpec, opts: &LocalRunOptions) -> Result<LocalRun, StationError> {
    let plan = DistributedPlan::from_spec(spec)?;
    let dir = scratch_dir()?;
    let left_key = dir.join("left.key.json");
    let right_key = dir.join("right.key.json");
    KeyFile::new(plan.key).save(&left_key)?;
    KeyFile::new(opts.right_key.unwrap_or(plan.key)).save(&right_key)?;

    let source_listener = TcpListener::bind("127.0.0.1:0")?;
    let collator_listener = TcpListener::bind("127.0.0.1:0")?;
    let source_addr = source_listener.local_addr()?;
    let collator_addr = collator_listener.local_addr()?;
    let timeout = Some(Duration::from_secs(30));

    let source_cfg = SourceConfig {
        seed: plan.seed,
        pairs_per_session: plan.pairs_per_session,
        sessions: plan.sessions,
        log: opts.source_log.clone(),
        accept_timeout: timeout,
    };
    let collator_cfg = CollatorConfig {
        strategy: opts.strategy,
        high_water_mark: opts.high_water_mark.unwrap_or(DEFAULT_HIGH_WATER_MARK),
        accept_timeout: timeout,
    };
    let station_cfg = |id, settings: &Vec<Setting>, key_path: &PathBuf, inject| StationConfig {
        id,
        settings: settings.clone(),
        key_path: key_path.clone(),
        source: source_addr.to_string(),
        collator: collator_addr.to_string(),
        inject,
        log: None,
        connect_timeout: Duration::from_secs(10),
    };
    let left_cfg = station_cfg(Station::L, &plan.left_settings, &left_key, opts.inject_left);
    let right_cfg = station_cfg(Station::R, &plan.right_settings, &right_key, opts.inject_right);

    let result = std::thread::scope(|s| {
        let collator = s.spawn(|| run_collator(&collator_listener, &collator_cfg));
        let source = s.spawn(|| run_source(&source_listener, &source_cfg));
        let left = s.spawn(|| run_station(&left_cfg));
        let right = s.spawn(|| run_station(&right_cfg));
        let left = left.join().expect("left station panicked");
        let right = right.join().expect("right station panicked");
        if left.is_err() || right.is_err() {
            // Unblock a source still waiting for the stations' hellos.
            let _ = TcpStream::connect(source_addr);
        }
        let collator = collator.join().expect("collator panicked");
        let source = source.join().expect("source panicked");
        Ok::<_, StationError>(LocalRun {
            collator: collator?,
            source: source?,
            left: left?,
            right: right?,
            source_addr,
            collator_addr,
        })
    });
    let _ = std::fs::remove_dir_all(&dir);
    result
}
