//! Estimators over runs of measurement records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    measure_left, measure_right, GaugeKey, MeasurementRecord, Outcome, PairEvent, Setting,
    Station,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("pair {pair_index} has a {present} record but no {missing} record")]
    Unmatched {
        pair_index: u64,
        present: Station,
        missing: Station,
    },
    #[error("pair {pair_index} has more than one {station} record")]
    Duplicate { pair_index: u64, station: Station },
    #[error("no samples to estimate from")]
    Empty,
    #[error("triple table settings must be distinct")]
    DuplicateSettings,
}

/// Sample mean of ±1 data with its normal-approximation standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEstimate {
    pub value: f64,
    pub n_samples: u64,
    pub std_error: f64,
}

impl ExpectationEstimate {
    /// Estimate from the integer sum of `n` values in `{+1, -1}`.
    pub fn from_sum(sum: i64, n: u64) -> Result<Self, StatsError> {
        if n == 0 {
            return Err(StatsError::Empty);
        }
        let value = sum as f64 / n as f64;
        let std_error = ((1.0 - value * value).max(0.0) / n as f64).sqrt();
        Ok(ExpectationEstimate {
            value,
            n_samples: n,
            std_error,
        })
    }
}

/// Joint outcome counts for one setting pair.
///
/// Counts are integers, so tallies merge associatively and in any order with
/// identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub pp: u64,
    pub pm: u64,
    pub mp: u64,
    pub mm: u64,
}

impl OutcomeTally {
    pub fn add(&mut self, left: Outcome, right: Outcome) {
        match (left, right) {
            (Outcome::Plus, Outcome::Plus) => self.pp += 1,
            (Outcome::Plus, Outcome::Minus) => self.pm += 1,
            (Outcome::Minus, Outcome::Plus) => self.mp += 1,
            (Outcome::Minus, Outcome::Minus) => self.mm += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeTally) {
        self.pp += other.pp;
        self.pm += other.pm;
        self.mp += other.mp;
        self.mm += other.mm;
    }

    pub fn total(&self) -> u64 {
        self.pp + self.pm + self.mp + self.mm
    }

    pub fn equal(&self) -> u64 {
        self.pp + self.mm
    }

    pub fn different(&self) -> u64 {
        self.pm + self.mp
    }

    pub fn product_sum(&self) -> i64 {
        self.equal() as i64 - self.different() as i64
    }

    pub fn expectation(&self) -> Result<ExpectationEstimate, StatsError> {
        ExpectationEstimate::from_sum(self.product_sum(), self.total())
    }

    pub fn marginals(&self) -> Result<(ExpectationEstimate, ExpectationEstimate), StatsError> {
        let n = self.total();
        let left = (self.pp + self.pm) as i64 - (self.mp + self.mm) as i64;
        let right = (self.pp + self.mp) as i64 - (self.pm + self.mm) as i64;
        Ok((
            ExpectationEstimate::from_sum(left, n)?,
            ExpectationEstimate::from_sum(right, n)?,
        ))
    }
}

impl<'a> FromIterator<(Outcome, Outcome)> for OutcomeTally {
    fn from_iter<I: IntoIterator<Item = (Outcome, Outcome)>>(iter: I) -> Self {
        let mut t = OutcomeTally::default();
        for (l, r) in iter {
            t.add(l, r);
        }
        t
    }
}

/// Left and right outcome for one pair index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchedPair {
    pub pair_index: u64,
    pub left: Outcome,
    pub right: Outcome,
}

/// Join left and right records on pair index, ordered by index.
///
/// Every index must carry exactly one record from each station.
pub fn match_records(records: &[MeasurementRecord]) -> Result<Vec<MatchedPair>, StatsError> {
    let mut slots: BTreeMap<u64, (Option<Outcome>, Option<Outcome>)> = BTreeMap::new();
    for r in records {
        let slot = slots.entry(r.pair_index).or_default();
        let side = match r.station {
            Station::L => &mut slot.0,
            Station::R => &mut slot.1,
        };
        if side.replace(r.outcome).is_some() {
            return Err(StatsError::Duplicate {
                pair_index: r.pair_index,
                station: r.station,
            });
        }
    }
    slots
        .into_iter()
        .map(|(pair_index, slot)| match slot {
            (Some(left), Some(right)) => Ok(MatchedPair {
                pair_index,
                left,
                right,
            }),
            (Some(_), None) => Err(StatsError::Unmatched {
                pair_index,
                present: Station::L,
                missing: Station::R,
            }),
            (None, _) => Err(StatsError::Unmatched {
                pair_index,
                present: Station::R,
                missing: Station::L,
            }),
        })
        .collect()
}

pub fn tally_records(records: &[MeasurementRecord]) -> Result<OutcomeTally, StatsError> {
    Ok(match_records(records)?
        .into_iter()
        .map(|p| (p.left, p.right))
        .collect())
}

/// Mean of left × right products over matched pairs.
pub fn estimate_expectation(
    records: &[MeasurementRecord],
) -> Result<ExpectationEstimate, StatsError> {
    tally_records(records)?.expectation()
}

/// Separate means of the left and right outcomes.
pub fn estimate_marginals(
    records: &[MeasurementRecord],
) -> Result<(ExpectationEstimate, ExpectationEstimate), StatsError> {
    tally_records(records)?.marginals()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripleKind {
    /// Columns `A(a)`, `A(b)`, appended `A'(c) = +1`.
    #[serde(rename = "abc'")]
    AbcPrime,
    /// Columns `A(a)`, `A(c)`, appended `A'(b) = +1`.
    #[serde(rename = "ab'c")]
    AbPrimeC,
}

impl std::fmt::Display for TripleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TripleKind::AbcPrime => "abc'",
            TripleKind::AbPrimeC => "ab'c",
        })
    }
}

/// Counts over `{+1, -1}³`, one cell per sign pattern.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleTable {
    pub kind: TripleKind,
    counts: [u64; 8],
    pub total: u64,
}

fn cell(s: [Outcome; 3]) -> usize {
    s.iter()
        .enumerate()
        .map(|(i, o)| usize::from(*o == Outcome::Minus) << (2 - i))
        .sum()
}

impl TripleTable {
    /// Sign patterns in table order, `(+,+,+)` first.
    pub fn patterns() -> impl Iterator<Item = [Outcome; 3]> {
        (0..8usize).map(|i| {
            [2, 1, 0].map(|bit| Outcome::from_sign(i >> bit & 1 == 0))
        })
    }

    pub fn count(&self, s: [Outcome; 3]) -> u64 {
        self.counts[cell(s)]
    }

    pub fn fraction(&self, s: [Outcome; 3]) -> f64 {
        self.count(s) as f64 / self.total as f64
    }

    /// Binomial standard error of [`fraction`](Self::fraction).
    pub fn fraction_std_error(&self, s: [Outcome; 3]) -> f64 {
        let p = self.fraction(s);
        (p * (1.0 - p) / self.total as f64).sqrt()
    }

    pub fn cells(&self) -> impl Iterator<Item = ([Outcome; 3], u64)> + '_ {
        Self::patterns().map(|s| (s, self.count(s)))
    }
}

/// Tally the two-measured-columns-plus-appended-constant triples for one
/// event stream. The measured columns carry the pair's gauge; the appended
/// hypothetical column is the constant `+1`.
pub fn build_triple_table(
    kind: TripleKind,
    events: &[PairEvent],
    key: &GaugeKey,
    settings: (Setting, Setting, Setting),
) -> Result<TripleTable, StatsError> {
    let (a, b, c) = settings;
    if a.bit_eq(&b) || a.bit_eq(&c) || b.bit_eq(&c) {
        return Err(StatsError::DuplicateSettings);
    }
    if events.is_empty() {
        return Err(StatsError::Empty);
    }
    let partner = match kind {
        TripleKind::AbcPrime => b,
        TripleKind::AbPrimeC => c,
    };
    let mut counts = [0u64; 8];
    for e in events {
        let first = measure_left(&a, e, key);
        let second = -measure_right(&partner, e, key);
        counts[cell([first, second, Outcome::Plus])] += 1;
    }
    Ok(TripleTable {
        kind,
        counts,
        total: events.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_pair_stream;
    use Outcome::{Minus as M, Plus as P};

    fn rec(n: u64, station: Station, o: Outcome) -> MeasurementRecord {
        MeasurementRecord {
            pair_index: n,
            station,
            setting: Setting::CANONICAL,
            outcome: o,
        }
    }

    fn bell_vectors() -> (Setting, Setting, Setting) {
        let h = 3f64.sqrt() / 2.0;
        (
            Setting::CANONICAL,
            Setting::new(0.5, h).unwrap(),
            Setting::new(-0.5, h).unwrap(),
        )
    }

    fn run_records(b: Setting, key: &GaugeKey, seed: u64, n: u64) -> Vec<MeasurementRecord> {
        let a = Setting::CANONICAL;
        sample_pair_stream(seed, n)
            .unwrap()
            .iter()
            .flat_map(|e| {
                [
                    MeasurementRecord {
                        pair_index: e.n,
                        station: Station::L,
                        setting: a,
                        outcome: measure_left(&a, e, key),
                    },
                    MeasurementRecord {
                        pair_index: e.n,
                        station: Station::R,
                        setting: b,
                        outcome: measure_right(&b, e, key),
                    },
                ]
            })
            .collect()
    }

    #[test]
    fn unmatched_and_duplicate_records_are_errors() {
        let recs = vec![rec(1, Station::L, P), rec(1, Station::R, M), rec(2, Station::L, P)];
        assert_eq!(
            estimate_expectation(&recs),
            Err(StatsError::Unmatched {
                pair_index: 2,
                present: Station::L,
                missing: Station::R
            })
        );
        let recs = vec![rec(3, Station::R, P)];
        assert!(matches!(
            estimate_expectation(&recs),
            Err(StatsError::Unmatched { pair_index: 3, .. })
        ));
        let recs = vec![rec(1, Station::L, P), rec(1, Station::L, P)];
        assert!(matches!(estimate_expectation(&recs), Err(StatsError::Duplicate { .. })));
        assert_eq!(estimate_expectation(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn std_error_formula() {
        let e = ExpectationEstimate::from_sum(-50, 100).unwrap();
        assert_eq!(e.value, -0.5);
        assert!((e.std_error - (0.75f64 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn equal_settings_exact() {
        let key = GaugeKey::rademacher(2).unwrap();
        let recs = run_records(Setting::CANONICAL, &key, 17, 10_000);
        let e = estimate_expectation(&recs).unwrap();
        assert_eq!(e.value, -1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn expectation_at_sixty_degrees() {
        let (_, b, c) = bell_vectors();
        let key = GaugeKey::rademacher(3).unwrap();
        let e = estimate_expectation(&run_records(b, &key, 1, 1_000_000)).unwrap();
        assert!((e.value + 0.5).abs() <= 0.0045, "{e:?}");
        let e = estimate_expectation(&run_records(c, &key, 2, 1_000_000)).unwrap();
        assert!((e.value - 0.5).abs() <= 0.0045, "{e:?}");
    }

    #[test]
    fn marginals() {
        let (_, b, _) = bell_vectors();
        let recs = run_records(b, &GaugeKey::ConstantPlusOne, 3, 1000);
        let (l, _) = estimate_marginals(&recs).unwrap();
        assert_eq!(l.value, 1.0);

        let key = GaugeKey::rademacher(3).unwrap();
        let recs = run_records(b, &key, 4, 1_000_000);
        let (l, r) = estimate_marginals(&recs).unwrap();
        assert!(l.value.abs() <= 0.0045 && r.value.abs() <= 0.0045, "{l:?} {r:?}");

        // left marginal is exactly the mean gauge value over the run
        let events = sample_pair_stream(4, 1_000_000).unwrap();
        let gauge_sum: i64 = events
            .iter()
            .map(|e| crate::model::gauge_eval(&key, e.t).value() as i64)
            .sum();
        assert_eq!(l.value, gauge_sum as f64 / 1e6);
    }

    #[test]
    fn estimate_is_permutation_invariant() {
        let key = GaugeKey::rademacher(1).unwrap();
        let (_, b, _) = bell_vectors();
        let mut recs = run_records(b, &key, 5, 5000);
        let before = estimate_expectation(&recs).unwrap();
        recs.reverse();
        recs.swap(10, 4000);
        assert_eq!(estimate_expectation(&recs).unwrap(), before);
    }

    #[test]
    fn tally_merge_is_order_free() {
        let pairs = [(P, P), (P, M), (M, M), (M, P), (P, P)];
        let whole: OutcomeTally = pairs.iter().copied().collect();
        let mut a: OutcomeTally = pairs[..2].iter().copied().collect();
        let b: OutcomeTally = pairs[2..].iter().copied().collect();
        let mut b2 = b;
        b2.merge(&a);
        a.merge(&b);
        assert_eq!(a, whole);
        assert_eq!(b2, whole);
        assert_eq!(whole.product_sum(), 1);
    }

    #[test]
    fn triple_table_patterns_are_in_order() {
        let p: Vec<_> = TripleTable::patterns().collect();
        assert_eq!(p[0], [P, P, P]);
        assert_eq!(p[1], [P, P, M]);
        assert_eq!(p[7], [M, M, M]);
        for (i, s) in p.iter().enumerate() {
            assert_eq!(cell(*s), i);
        }
    }

    #[test]
    fn triple_fractions_at_bell_vectors() {
        let events = sample_pair_stream(7, 1_000_000).unwrap();
        let key = GaugeKey::rademacher(3).unwrap();
        let abc = build_triple_table(TripleKind::AbcPrime, &events, &key, bell_vectors()).unwrap();
        let abpc = build_triple_table(TripleKind::AbPrimeC, &events, &key, bell_vectors()).unwrap();
        let f1 = abc.fraction([P, P, P]);
        let f2 = abpc.fraction([P, P, P]);
        assert!((f1 - 0.375).abs() <= 0.005, "{f1}");
        assert!((f2 - 0.125).abs() <= 0.005, "{f2}");
        let sigma = (abc.fraction_std_error([P, P, P]).powi(2)
            + abpc.fraction_std_error([P, P, P]).powi(2))
        .sqrt();
        assert!(f1 - f2 > 4.0 * sigma);
        for t in [&abc, &abpc] {
            assert_eq!(t.cells().map(|(_, c)| c).sum::<u64>(), t.total);
            // appended column is constant +1
            assert!(t.cells().filter(|(s, _)| s[2] == M).all(|(_, c)| c == 0));
        }
    }

    #[test]
    fn triple_fraction_without_gauge() {
        let events = sample_pair_stream(8, 1_000_000).unwrap();
        let t = build_triple_table(
            TripleKind::AbcPrime,
            &events,
            &GaugeKey::ConstantPlusOne,
            bell_vectors(),
        )
        .unwrap();
        assert!((t.fraction([P, P, P]) - 0.75).abs() <= 0.005);
    }

    #[test]
    fn triple_table_rejects_duplicate_settings() {
        let events = sample_pair_stream(8, 10).unwrap();
        let a = Setting::CANONICAL;
        let (_, b, _) = bell_vectors();
        assert_eq!(
            build_triple_table(TripleKind::AbcPrime, &events, &GaugeKey::ConstantPlusOne, (a, b, b)),
            Err(StatsError::DuplicateSettings)
        );
    }
}
