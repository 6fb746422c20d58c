//! The local outcome model: settings, emitted pairs, the global gauge and the
//! two wing functions.
//!
//! The left wing answers `+rm(t)` regardless of its setting. The right wing
//! answers `-rm(t)` when `λ ≤ (1 + b₂) / 2` and `+rm(t)` otherwise. Both wings
//! see the same emitted `(λ, t)` and evaluate the same gauge key locally, so no
//! information about the remote setting is ever needed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inputs within this distance of unit norm (squared) are accepted unchanged.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Largest accepted Rademacher order. Past this, `2^j · t` has no fractional
/// part for any `f64` in `[0, 1)` of ordinary magnitude and the gauge is
/// constant.
pub const MAX_RADEMACHER_ORDER: u32 = 62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("setting vector must be finite and non-zero, got [{0}, {1}]")]
    DegenerateSetting(f64, f64),
    #[error("Rademacher order must be in 1..={max}, got {0}", max = MAX_RADEMACHER_ORDER)]
    InvalidOrder(u32),
    #[error("time parameter must lie in [0, 1), got {0}")]
    TimeOutOfRange(f64),
    #[error("pair count must be at least 1")]
    EmptyStream,
    #[error("invalid gauge specification `{0}`: expected one, rademacher:j=K or rademacher-rarb:j=K,seed=S")]
    GaugeSyntax(String),
    #[error("invalid setting `{0}`: expected two comma-separated numbers")]
    SettingSyntax(String),
    #[error("outcome must be +1 or -1, got {0}")]
    InvalidOutcome(i64),
}

/// A magnet (polarizer) direction in the x2-x3 plane, stored with unit norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Setting {
    b2: f64,
    b3: f64,
}

impl Setting {
    /// The left-wing direction `[1, 0]` every idealized experiment is rotated to.
    pub const CANONICAL: Setting = Setting { b2: 1.0, b3: 0.0 };

    pub fn new(b2: f64, b3: f64) -> Result<Self, ModelError> {
        if !b2.is_finite() || !b3.is_finite() {
            return Err(ModelError::DegenerateSetting(b2, b3));
        }
        let norm_sq = b2 * b2 + b3 * b3;
        if norm_sq == 0.0 {
            return Err(ModelError::DegenerateSetting(b2, b3));
        }
        if (norm_sq - 1.0).abs() <= NORM_TOLERANCE {
            return Ok(Setting { b2, b3 });
        }
        let norm = b2.hypot(b3);
        Ok(Setting {
            b2: b2 / norm,
            b3: b3 / norm,
        })
    }

    /// `[cos θ, sin θ]`.
    pub fn from_angle(theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        // cos² + sin² is within a few ulps of 1, so no renormalization occurs.
        Setting::new(cos, sin).expect("unit circle point is never degenerate")
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn b3(&self) -> f64 {
        self.b3
    }

    /// Planar angle measured from `[1, 0]`, in `(-π, π]`.
    pub fn angle(&self) -> f64 {
        self.b3.atan2(self.b2)
    }

    pub fn dot(&self, other: &Setting) -> f64 {
        self.b2 * other.b2 + self.b3 * other.b3
    }

    /// Rotation about the emission (x1) axis by `phi`.
    pub fn rotated(&self, phi: f64) -> Setting {
        let (s, c) = phi.sin_cos();
        Setting::new(c * self.b2 - s * self.b3, s * self.b2 + c * self.b3)
            .expect("rotation preserves non-zero norm")
    }

    /// Bitwise equality, used where settings act as exact tags.
    pub fn bit_eq(&self, other: &Setting) -> bool {
        self.b2.to_bits() == other.b2.to_bits() && self.b3.to_bits() == other.b3.to_bits()
    }
}

impl TryFrom<[f64; 2]> for Setting {
    type Error = ModelError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Setting::new(v[0], v[1])
    }
}

impl From<Setting> for [f64; 2] {
    fn from(s: Setting) -> Self {
        [s.b2, s.b3]
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.b2, self.b3)
    }
}

impl FromStr for Setting {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::SettingSyntax(s.to_string());
        let (x, y) = s.split_once(',').ok_or_else(bad)?;
        let x: f64 = x.trim().parse().map_err(|_| bad())?;
        let y: f64 = y.trim().parse().map_err(|_| bad())?;
        Setting::new(x, y)
    }
}

/// Detector outcome: `Plus` is detector 1, `Minus` is detector 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    pub fn times(self, other: Outcome) -> Outcome {
        Outcome::from_sign(self == other)
    }
}

impl std::ops::Neg for Outcome {
    type Output = Outcome;

    fn neg(self) -> Outcome {
        self.flipped()
    }
}

impl std::ops::Mul for Outcome {
    type Output = Outcome;

    fn mul(self, rhs: Outcome) -> Outcome {
        self.times(rhs)
    }
}

impl TryFrom<i8> for Outcome {
    type Error = ModelError;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Outcome::Plus),
            -1 => Ok(Outcome::Minus),
            other => Err(ModelError::InvalidOutcome(other as i64)),
        }
    }
}

impl From<Outcome> for i8 {
    fn from(o: Outcome) -> i8 {
        o.value()
    }
}

/// One emitted correlated pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub n: u64,
    pub lambda: f64,
    pub t: f64,
}

/// The global ±1 gauge shared by both wings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GaugeKey {
    ConstantPlusOne,
    Rademacher { j: u32 },
    RademacherTimesRarb { j: u32, rarb_seed: u64 },
}

impl GaugeKey {
    pub fn rademacher(j: u32) -> Result<Self, ModelError> {
        check_order(j)?;
        Ok(GaugeKey::Rademacher { j })
    }

    pub fn rademacher_times_rarb(j: u32, rarb_seed: u64) -> Result<Self, ModelError> {
        check_order(j)?;
        Ok(GaugeKey::RademacherTimesRarb { j, rarb_seed })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            GaugeKey::ConstantPlusOne => Ok(()),
            GaugeKey::Rademacher { j } | GaugeKey::RademacherTimesRarb { j, .. } => check_order(j),
        }
    }
}

impl fmt::Display for GaugeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaugeKey::ConstantPlusOne => write!(f, "one"),
            GaugeKey::Rademacher { j } => write!(f, "rademacher:j={j}"),
            GaugeKey::RademacherTimesRarb { j, rarb_seed } => {
                write!(f, "rademacher-rarb:j={j},seed={rarb_seed}")
            }
        }
    }
}

impl FromStr for GaugeKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::GaugeSyntax(s.to_string());
        let (mode, params) = match s.split_once(':') {
            Some((m, p)) => (m.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let mut j = None;
        let mut seed = None;
        for kv in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k.trim() {
                "j" => j = Some(v.trim().parse::<u32>().map_err(|_| bad())?),
                "seed" => seed = Some(v.trim().parse::<u64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        match (mode, j, seed) {
            ("one", None, None) => Ok(GaugeKey::ConstantPlusOne),
            ("rademacher", Some(j), None) => GaugeKey::rademacher(j),
            ("rademacher-rarb", Some(j), Some(seed)) => GaugeKey::rademacher_times_rarb(j, seed),
            _ => Err(bad()),
        }
    }
}

fn check_order(j: u32) -> Result<(), ModelError> {
    if (1..=MAX_RADEMACHER_ORDER).contains(&j) {
        Ok(())
    } else {
        Err(ModelError::InvalidOrder(j))
    }
}

/// `sign(sin(2^{j+1} π t))`, with the zeros of the sine mapped to `+1`.
pub fn rademacher(j: u32, t: f64) -> Result<Outcome, ModelError> {
    check_order(j)?;
    if !(0.0..1.0).contains(&t) {
        return Err(ModelError::TimeOutOfRange(t));
    }
    Ok(rademacher_sign(j, t))
}

// sin(2π·2^j·t) has the sign of the fractional part of 2^j·t: positive on
// (0, 1/2), negative on (1/2, 1), zero at 0 and 1/2. Scaling by a power of two
// and taking the fractional part are exact in binary floating point, so the
// sign is evaluated without any rounding from the sine itself.
fn rademacher_sign(j: u32, t: f64) -> Outcome {
    let scaled = t * f64::powi(2.0, j as i32);
    let frac = scaled - scaled.floor();
    Outcome::from_sign(frac <= 0.5)
}

/// Keyed ±1 function of `t`; the arbitrary extra factor composed with the
/// Rademacher gauge.
fn rarb(seed: u64, t: f64) -> Outcome {
    Outcome::from_sign(mix64(seed ^ mix64(t.to_bits())) >> 63 == 0)
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gauge_eval(key: &GaugeKey, t: f64) -> Outcome {
    match *key {
        GaugeKey::ConstantPlusOne => Outcome::Plus,
        GaugeKey::Rademacher { j } => rademacher_sign(j, t),
        GaugeKey::RademacherTimesRarb { j, rarb_seed } => {
            rademacher_sign(j, t) * rarb(rarb_seed, t)
        }
    }
}

/// Left wing outcome. The setting is part of the signature only; the result
/// is `+rm(t)` for every `λ` and every setting.
pub fn measure_left(_a: &Setting, e: &PairEvent, key: &GaugeKey) -> Outcome {
    gauge_eval(key, e.t)
}

/// Right wing outcome: `-rm(t)` if `λ ≤ (1 + b₂)/2`, else `+rm(t)`.
pub fn measure_right(b: &Setting, e: &PairEvent, key: &GaugeKey) -> Outcome {
    let threshold = 0.5 * (1.0 + b.b2);
    let rm = gauge_eval(key, e.t);
    if e.lambda <= threshold {
        -rm
    } else {
        rm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairClass {
    Equal,
    Different,
}

pub fn classify_pair(left: Outcome, right: Outcome) -> PairClass {
    if left == right {
        PairClass::Equal
    } else {
        PairClass::Different
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Station {
    L,
    R,
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Station::L => f.write_str("L"),
            Station::R => f.write_str("R"),
        }
    }
}

impl FromStr for Station {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "l" | "left" => Ok(Station::L),
            "R" | "r" | "right" => Ok(Station::R),
            other => Err(format!("unknown station `{other}`, expected L or R")),
        }
    }
}

/// One wing's record of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub pair_index: u64,
    pub station: Station,
    pub setting: Setting,
    pub outcome: Outcome,
}

/// Seekable, deterministic generator of [`PairEvent`]s.
///
/// Each event consumes exactly two `f64` draws (`λ` then `t`), i.e. four
/// 32-bit ChaCha words, so the stream can be positioned at any pair offset and
/// partitioned by index range without changing its contents.
#[derive(Clone, Debug)]
pub struct PairStream {
    rng: ChaCha8Rng,
    next_n: u64,
}

const WORDS_PER_EVENT: u128 = 4;

impl PairStream {
    /// Base stream of a seed, numbering pairs from 1.
    pub fn new(seed: u64) -> Self {
        Self::on_stream(seed, 0, 1)
    }

    /// Independent sub-stream `stream` of the seed, numbering pairs from
    /// `first_n`. Distinct stream ids never share ChaCha key-stream blocks.
    pub fn on_stream(seed: u64, stream: u64, first_n: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PairStream { rng, next_n: first_n }
    }

    /// Skip the next `count` events without producing them.
    pub fn advance(&mut self, count: u64) {
        let pos = self.rng.get_word_pos() + WORDS_PER_EVENT * count as u128;
        self.rng.set_word_pos(pos);
        self.next_n += count;
    }

    pub fn next_event(&mut self) -> PairEvent {
        let lambda: f64 = self.rng.gen();
        let t: f64 = self.rng.gen();
        let n = self.next_n;
        self.next_n += 1;
        PairEvent { n, lambda, t }
    }
}

impl Iterator for PairStream {
    type Item = PairEvent;

    fn next(&mut self) -> Option<PairEvent> {
        Some(self.next_event())
    }
}

pub fn sample_pair_stream(seed: u64, count: u64) -> Result<Vec<PairEvent>, ModelError> {
    if count == 0 {
        return Err(ModelError::EmptyStream);
    }
    Ok(PairStream::new(seed).take(count as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(lambda: f64, t: f64) -> PairEvent {
        PairEvent { n: 1, lambda, t }
    }

    #[test]
    fn rademacher_examples() {
        // sin(0.4π) > 0, sin(1.2π) < 0, sin(0) = 0 -> +1
        assert_eq!(rademacher(1, 0.1).unwrap(), Outcome::Plus);
        assert_eq!(rademacher(1, 0.3).unwrap(), Outcome::Minus);
        assert_eq!(rademacher(3, 0.0).unwrap(), Outcome::Plus);
    }

    #[test]
    fn rademacher_matches_sine_away_from_zeros() {
        for j in 1..=6u32 {
            for k in 0..10_000 {
                let t = (k as f64 + 0.37) / 10_000.0;
                let s = (f64::powi(2.0, j as i32 + 1) * std::f64::consts::PI * t).sin();
                if s.abs() < 1e-9 {
                    continue;
                }
                assert_eq!(rademacher(j, t).unwrap(), Outcome::from_sign(s > 0.0), "j={j} t={t}");
            }
        }
    }

    #[test]
    fn rademacher_zero_crossings_are_plus() {
        // t = 1/2 puts sin(4π·t) exactly at 2π
        assert_eq!(rademacher(1, 0.5).unwrap(), Outcome::Plus);
        assert_eq!(rademacher(2, 0.25).unwrap(), Outcome::Plus);
    }

    #[test]
    fn rademacher_rejects_bad_inputs() {
        assert_eq!(rademacher(0, 0.2), Err(ModelError::InvalidOrder(0)));
        assert_eq!(rademacher(1, 1.0), Err(ModelError::TimeOutOfRange(1.0)));
        assert_eq!(rademacher(1, -0.1), Err(ModelError::TimeOutOfRange(-0.1)));
        assert!(rademacher(1, f64::NAN).is_err());
    }

    #[test]
    fn rademacher_sign_change_count() {
        let grid = 1 << 14;
        for j in 1..=6u32 {
            let mut changes = 0;
            let mut prev = rademacher(j, 0.0).unwrap();
            for k in 1..grid {
                let cur = rademacher(j, k as f64 / grid as f64).unwrap();
                if cur != prev {
                    changes += 1;
                }
                prev = cur;
            }
            assert_eq!(changes, (1 << (j + 1)) - 1, "j={j}");
        }
    }

    #[test]
    fn gauge_modes() {
        assert_eq!(gauge_eval(&GaugeKey::ConstantPlusOne, 0.3), Outcome::Plus);
        let r = GaugeKey::rademacher(1).unwrap();
        assert_eq!(gauge_eval(&r, 0.3), Outcome::Minus);
        let rr = GaugeKey::rademacher_times_rarb(3, 99).unwrap();
        for k in 0..1000 {
            let t = k as f64 / 1000.0;
            assert_eq!(gauge_eval(&rr, t), rademacher(3, t).unwrap() * rarb(99, t));
        }
    }

    #[test]
    fn rarb_is_balanced_and_seed_dependent() {
        let stream = sample_pair_stream(5, 100_000).unwrap();
        let plus = stream.iter().filter(|e| rarb(11, e.t) == Outcome::Plus).count();
        assert!((plus as f64 / 1e5 - 0.5).abs() < 0.01);
        let differ = stream.iter().filter(|e| rarb(11, e.t) != rarb(12, e.t)).count();
        assert!(differ > 40_000);
    }

    #[test]
    fn gauge_key_text_roundtrip() {
        for s in ["one", "rademacher:j=3", "rademacher-rarb:j=2,seed=77"] {
            let k: GaugeKey = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("rademacher".parse::<GaugeKey>().is_err());
        assert!("rademacher:j=0".parse::<GaugeKey>().is_err());
        assert!("one:j=2".parse::<GaugeKey>().is_err());
        assert!("cosine:j=2".parse::<GaugeKey>().is_err());
    }

    #[test]
    fn gauge_key_json_shape() {
        let k = GaugeKey::rademacher_times_rarb(3, 5).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, r#"{"mode":"rademacher-times-rarb","j":3,"rarb_seed":5}"#);
        assert_eq!(serde_json::from_str::<GaugeKey>(&json).unwrap(), k);
        assert_eq!(
            serde_json::to_string(&GaugeKey::ConstantPlusOne).unwrap(),
            r#"{"mode":"constant-plus-one"}"#
        );
    }

    #[test]
    fn setting_normalizes_and_rejects_zero() {
        let s = Setting::new(3.0, 4.0).unwrap();
        assert!((s.b2() - 0.6).abs() < 1e-15 && (s.b3() - 0.8).abs() < 1e-15);
        assert!(Setting::new(0.0, 0.0).is_err());
        assert!(Setting::new(f64::NAN, 1.0).is_err());
        let exact = Setting::new(0.5, 3f64.sqrt() / 2.0).unwrap();
        assert_eq!(exact.b2(), 0.5);
        let parsed: Setting = "0.5,0.8660254".parse().unwrap();
        assert!((parsed.b2() * parsed.b2() + parsed.b3() * parsed.b3() - 1.0).abs() <= 1e-12);
        assert!("0.5".parse::<Setting>().is_err());
        assert!(serde_json::from_str::<Setting>("[0.0,0.0]").is_err());
    }

    #[test]
    fn measure_left_examples() {
        let a = Setting::CANONICAL;
        let one = GaugeKey::ConstantPlusOne;
        assert_eq!(measure_left(&a, &ev(0.99, 0.3), &one), Outcome::Plus);
        let r = GaugeKey::rademacher(1).unwrap();
        assert_eq!(measure_left(&a, &ev(0.2, 0.3), &r), Outcome::Minus);
        let up = Setting::new(0.0, 1.0).unwrap();
        assert_eq!(measure_left(&up, &ev(0.2, 0.3), &r), measure_left(&a, &ev(0.2, 0.3), &r));
    }

    #[test]
    fn measure_right_examples() {
        let one = GaugeKey::ConstantPlusOne;
        let b = Setting::new(0.5, 3f64.sqrt() / 2.0).unwrap();
        assert_eq!(measure_right(&b, &ev(0.5, 0.1), &one), Outcome::Minus);
        let minus_a = Setting::new(-1.0, 0.0).unwrap();
        assert_eq!(measure_right(&minus_a, &ev(0.5, 0.1), &one), Outcome::Plus);
        for e in sample_pair_stream(3, 1000).unwrap() {
            assert_eq!(measure_right(&Setting::CANONICAL, &e, &one), Outcome::Minus);
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let one = GaugeKey::ConstantPlusOne;
        let b = Setting::new(0.5, 3f64.sqrt() / 2.0).unwrap();
        assert_eq!(measure_right(&b, &ev(0.75, 0.1), &one), Outcome::Minus);
        assert_eq!(measure_right(&b, &ev(0.750_000_000_1, 0.1), &one), Outcome::Plus);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_pair(Outcome::Plus, Outcome::Plus), PairClass::Equal);
        assert_eq!(classify_pair(Outcome::Plus, Outcome::Minus), PairClass::Different);
        assert_eq!(classify_pair(Outcome::Minus, Outcome::Minus), PairClass::Equal);
    }

    #[test]
    fn outcome_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Outcome::Minus).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Outcome>("1").unwrap(), Outcome::Plus);
        assert!(serde_json::from_str::<Outcome>("0").is_err());
    }

    #[test]
    fn stream_determinism_and_seed_sensitivity() {
        assert_eq!(sample_pair_stream(9, 3).unwrap(), sample_pair_stream(9, 3).unwrap());
        assert_ne!(sample_pair_stream(9, 3).unwrap(), sample_pair_stream(10, 3).unwrap());
        assert_eq!(sample_pair_stream(9, 0), Err(ModelError::EmptyStream));
        let ns: Vec<u64> = sample_pair_stream(1, 5).unwrap().iter().map(|e| e.n).collect();
        assert_eq!(ns, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn stream_lambda_mean() {
        // σ of the mean is 1/(√12·10³); 0.002 is about 7σ
        let events = sample_pair_stream(2024, 1_000_000).unwrap();
        let mean = events.iter().map(|e| e.lambda).sum::<f64>() / events.len() as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        assert!(events.iter().all(|e| (0.0..1.0).contains(&e.lambda) && (0.0..1.0).contains(&e.t)));
    }

    #[test]
    fn stream_partition_by_index() {
        let whole: Vec<_> = PairStream::on_stream(4, 2, 1).take(100).collect();
        let mut tail = PairStream::on_stream(4, 2, 1);
        tail.advance(60);
        let tail: Vec<_> = tail.take(40).collect();
        assert_eq!(&whole[60..], &tail[..]);
        let other: Vec<_> = PairStream::on_stream(4, 3, 1).take(100).collect();
        assert_ne!(whole, other);
    }

    fn any_key() -> impl Strategy<Value = GaugeKey> {
        prop_oneof![
            Just(GaugeKey::ConstantPlusOne),
            (1u32..=8).prop_map(|j| GaugeKey::Rademacher { j }),
            (1u32..=8, any::<u64>())
                .prop_map(|(j, rarb_seed)| GaugeKey::RademacherTimesRarb { j, rarb_seed }),
        ]
    }

    fn any_setting() -> impl Strategy<Value = Setting> {
        (0.0..std::f64::consts::TAU).prop_map(Setting::from_angle)
    }

    proptest! {
        #[test]
        fn products_are_gauge_invariant(
            lambda in 0.0..1.0f64, t in 0.0..1.0f64,
            a in any_setting(), b in any_setting(),
            k1 in any_key(), k2 in any_key(),
        ) {
            let e = PairEvent { n: 1, lambda, t };
            let p1 = measure_left(&a, &e, &k1) * measure_right(&b, &e, &k1);
            let p2 = measure_left(&a, &e, &k2) * measure_right(&b, &e, &k2);
            prop_assert_eq!(p1, p2);
        }

        #[test]
        fn left_ignores_setting(
            lambda in 0.0..1.0f64, t in 0.0..1.0f64,
            a1 in any_setting(), a2 in any_setting(), k in any_key(),
        ) {
            let e = PairEvent { n: 1, lambda, t };
            prop_assert_eq!(measure_left(&a1, &e, &k), measure_left(&a2, &e, &k));
        }

        #[test]
        fn right_ignores_pair_index(
            lambda in 0.0..1.0f64, t in 0.0..1.0f64, n1 in 1u64.., n2 in 1u64..,
            b in any_setting(), k in any_key(),
        ) {
            let e1 = PairEvent { n: n1, lambda, t };
            let e2 = PairEvent { n: n2, lambda, t };
            prop_assert_eq!(measure_right(&b, &e1, &k), measure_right(&b, &e2, &k));
        }

        #[test]
        fn equal_and_opposite_settings(lambda in 0.0..1.0f64, t in 0.0..1.0f64, k in any_key()) {
            let e = PairEvent { n: 1, lambda, t };
            let a = Setting::CANONICAL;
            prop_assert_eq!(measure_left(&a, &e, &k) * measure_right(&a, &e, &k), Outcome::Minus);
            let minus_a = Setting::new(-1.0, 0.0).unwrap();
            if lambda > 0.0 {
                prop_assert_eq!(
                    measure_left(&a, &e, &k) * measure_right(&minus_a, &e, &k),
                    Outcome::Plus
                );
            }
        }

        #[test]
        fn setting_norm_invariant(x in -1e6..1e6f64, y in -1e6..1e6f64) {
            prop_assume!(x != 0.0 || y != 0.0);
            let s = Setting::new(x, y).unwrap();
            prop_assert!((s.b2() * s.b2() + s.b3() * s.b3() - 1.0).abs() <= NORM_TOLERANCE);
        }
    }
}
