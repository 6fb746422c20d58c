//! Orchestration of whole experiment suites.
//!
//! Every setting pair of an [`ExperimentSpec`] is its own experiment: it gets
//! its own ChaCha sub-stream of the master seed and its own disjoint block of
//! pair indices (`g·N + 1 ..= (g+1)·N` for group `g`). Left settings are
//! rotated to `[1, 0]` before measurement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{unix_now, DatasetHeader, DatasetRecord, RunDataset, SCHEMA_VERSION};
use crate::inequalities::{
    bell_check, bell_check_cyclic, chsh_check, cyclic_concatenate, wigner_check, InequalityError,
    InequalityReport, WignerInput,
};
use crate::model::{measure_left, measure_right, GaugeKey, ModelError, Outcome, PairEvent, PairStream, Setting};
use crate::stats::{ExpectationEstimate, OutcomeTally, StatsError};

/// Stream id of the random-switching schedule; pair streams use `1 + group`.
const SCHEDULE_STREAM: u64 = u64::MAX;

pub const DEFAULT_SWEEP_STEPS: usize = 72;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("experiment needs at least one setting pair")]
    NoSettingPairs,
    #[error("pairs per setting must be at least 1")]
    ZeroPairs,
    #[error("angle sweep needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("pair indices overflow for {groups} groups of {per_group} pairs")]
    IndexOverflow { groups: usize, per_group: u64 },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record for pair {n} carries group {group}, but only {groups} setting pairs exist")]
    UntaggedRecord { n: u64, group: u32, groups: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Inequality(#[from] InequalityError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingPair {
    pub left: Setting,
    pub right: Setting,
}

impl SettingPair {
    pub fn new(left: Setting, right: Setting) -> Self {
        SettingPair { left, right }
    }

    pub fn as_array(&self) -> [Setting; 2] {
        [self.left, self.right]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Switching {
    #[default]
    Fixed,
    RandomSwitched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub setting_pairs: Vec<SettingPair>,
    pub pairs_per_setting: u64,
    pub seed: u64,
    pub key: GaugeKey,
    #[serde(default)]
    pub switching: Switching,
}

impl ExperimentSpec {
    pub fn new(setting_pairs: Vec<SettingPair>, pairs_per_setting: u64, seed: u64, key: GaugeKey) -> Self {
        ExperimentSpec {
            setting_pairs,
            pairs_per_setting,
            seed,
            key,
            switching: Switching::Fixed,
        }
    }

    pub fn switched(mut self, switching: Switching) -> Self {
        self.switching = switching;
        self
    }

    /// `(a; b)`, `(a; c)`, `(b; c)` at the Bell vectors.
    pub fn bell(seed: u64, pairs_per_setting: u64, key: GaugeKey) -> Self {
        let [a, b, c] = bell_vectors();
        Self::new(
            vec![SettingPair::new(a, b), SettingPair::new(a, c), SettingPair::new(b, c)],
            pairs_per_setting,
            seed,
            key,
        )
    }

    /// The four idealized CHSH pairs, all with left `[1, 0]`.
    pub fn chsh(seed: u64, pairs_per_setting: u64, key: GaugeKey) -> Self {
        Self::new(chsh_pairs().to_vec(), pairs_per_setting, seed, key)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.setting_pairs.is_empty() {
            return Err(ExperimentError::NoSettingPairs);
        }
        if self.pairs_per_setting == 0 {
            return Err(ExperimentError::ZeroPairs);
        }
        self.key.validate()?;
        first_index(self.setting_pairs.len() as u64, self.pairs_per_setting)
            .filter(|_| u32::try_from(self.setting_pairs.len()).is_ok())
            .ok_or(ExperimentError::IndexOverflow {
                groups: self.setting_pairs.len(),
                per_group: self.pairs_per_setting,
            })?;
        Ok(())
    }

    pub fn canonical_pairs(&self) -> Vec<SettingPair> {
        self.setting_pairs.iter().map(|p| rotate_to_canonical(*p)).collect()
    }
}

/// `a = [1, 0]`, `b = [1/2, √3/2]`, `c = [-1/2, √3/2]`.
pub fn bell_vectors() -> [Setting; 3] {
    let h = 3f64.sqrt() / 2.0;
    [
        Setting::CANONICAL,
        Setting::new(0.5, h).expect("unit vector"),
        Setting::new(-0.5, h).expect("unit vector"),
    ]
}

pub fn chsh_pairs() -> [SettingPair; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = |x, y| Setting::new(x, y).expect("unit vector");
    let a = Setting::CANONICAL;
    [
        SettingPair::new(a, s(h, h)),
        SettingPair::new(a, s(h, -h)),
        SettingPair::new(a, s(h, -h)),
        SettingPair::new(a, s(-h, -h)),
    ]
}

fn first_index(group: u64, per_group: u64) -> Option<u64> {
    group.checked_mul(per_group)?.checked_add(1)
}

/// Pair stream of one group: its own ChaCha stream, indices starting after
/// all earlier groups.
pub fn group_stream(seed: u64, group: u32, per_group: u64) -> PairStream {
    let first = first_index(group as u64, per_group).expect("validated spec");
    PairStream::on_stream(seed, 1 + group as u64, first)
}

/// Rotate a pair about the emission axis so the left setting becomes
/// `[1, 0]`, keeping the signed angle from left to right.
pub fn rotate_to_canonical(pair: SettingPair) -> SettingPair {
    let SettingPair { left, right } = pair;
    if left.bit_eq(&Setting::CANONICAL) {
        return pair;
    }
    // rotation by -φ where left = [cos φ, sin φ]
    let cos = right.b2() * left.b2() + right.b3() * left.b3();
    let sin = right.b3() * left.b2() - right.b2() * left.b3();
    SettingPair {
        left: Setting::CANONICAL,
        right: Setting::new(cos, sin).expect("rotation of a unit vector"),
    }
}

fn measure_pair(pair: &SettingPair, e: &PairEvent, key: &GaugeKey) -> (Outcome, Outcome) {
    (measure_left(&pair.left, e, key), measure_right(&pair.right, e, key))
}

/// Emission order as `(group, event)`: group after group when fixed, a
/// seeded uniform choice among unfinished groups per emission when switched.
fn emissions(spec: &ExperimentSpec) -> Box<dyn Iterator<Item = (u32, PairEvent)> + '_> {
    let n = spec.pairs_per_setting;
    let groups = spec.setting_pairs.len() as u32;
    match spec.switching {
        Switching::Fixed => Box::new((0..groups).flat_map(move |g| {
            group_stream(spec.seed, g, n).take(n as usize).map(move |e| (g, e))
        })),
        Switching::RandomSwitched => {
            let mut streams: Vec<_> = (0..groups).map(|g| group_stream(spec.seed, g, n)).collect();
            let mut remaining: Vec<u64> = vec![n; groups as usize];
            let mut open: Vec<u32> = (0..groups).collect();
            let mut schedule = ChaCha8Rng::seed_from_u64(spec.seed);
            schedule.set_stream(SCHEDULE_STREAM);
            Box::new(std::iter::from_fn(move || {
                if open.is_empty() {
                    return None;
                }
                let slot = schedule.gen_range(0..open.len());
                let g = open[slot];
                remaining[g as usize] -= 1;
                if remaining[g as usize] == 0 {
                    open.remove(slot);
                }
                Some((g, streams[g as usize].next_event()))
            }))
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunDataset, ExperimentError> {
    spec.validate()?;
    let canonical = spec.canonical_pairs();
    let total = spec.pairs_per_setting as usize * canonical.len();
    let mut records = Vec::with_capacity(total);
    for (g, e) in emissions(spec) {
        let (left, right) = measure_pair(&canonical[g as usize], &e, &spec.key);
        records.push(DatasetRecord {
            group: g,
            n: e.n,
            left,
            right,
        });
    }
    Ok(RunDataset {
        header: DatasetHeader {
            schema_version: SCHEMA_VERSION,
            producer: "in-process".into(),
            setting_pairs: canonical,
            spec: Some(spec.clone()),
            created_unix: Some(unix_now()),
        },
        records,
    })
}

/// Same outcomes as [`run_experiment`], accumulated per group without
/// materializing records.
pub fn tally_experiment(spec: &ExperimentSpec) -> Result<Vec<OutcomeTally>, ExperimentError> {
    spec.validate()?;
    let canonical = spec.canonical_pairs();
    let mut tallies = vec![OutcomeTally::default(); canonical.len()];
    for (g, e) in emissions(spec) {
        let (l, r) = measure_pair(&canonical[g as usize], &e, &spec.key);
        tallies[g as usize].add(l, r);
    }
    Ok(tallies)
}

/// Regroup an interleaved run into its per-setting-pair sets, each in
/// emission order.
pub fn sort_wigner_sets(interleaved: &RunDataset) -> Result<RunDataset, ExperimentError> {
    if interleaved.records.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let groups = interleaved.group_count();
    if let Some(r) = interleaved.records.iter().find(|r| r.group as usize >= groups) {
        return Err(ExperimentError::UntaggedRecord {
            n: r.n,
            group: r.group,
            groups,
        });
    }
    let mut records = interleaved.records.clone();
    records.sort_by_key(|r| r.group);
    Ok(RunDataset {
        header: interleaved.header.clone(),
        records,
    })
}

fn estimates(tallies: &[OutcomeTally]) -> Result<Vec<ExpectationEstimate>, ExperimentError> {
    Ok(tallies.iter().map(|t| t.expectation()).collect::<Result<_, _>>()?)
}

pub fn run_bell_suite(seed: u64, n: u64, key: GaugeKey) -> Result<InequalityReport, ExperimentError> {
    let spec = ExperimentSpec::bell(seed, n, key);
    let e = estimates(&tally_experiment(&spec)?)?;
    let pairs: Vec<_> = spec.canonical_pairs().iter().map(SettingPair::as_array).collect();
    Ok(bell_check(e[0], e[1], e[2])?.with_settings(&pairs))
}

pub fn run_chsh_suite(seed: u64, n: u64, key: GaugeKey) -> Result<InequalityReport, ExperimentError> {
    chsh_suite_with(seed, n, key, chsh_pairs())
}

/// CHSH over arbitrary `(a;b)`, `(a;c)`, `(d;b)`, `(d;c)` pairs.
pub fn chsh_suite_with(
    seed: u64,
    n: u64,
    key: GaugeKey,
    pairs: [SettingPair; 4],
) -> Result<InequalityReport, ExperimentError> {
    let spec = ExperimentSpec::new(pairs.to_vec(), n, seed, key);
    let e = estimates(&tally_experiment(&spec)?)?;
    let canon: Vec<_> = spec.canonical_pairs().iter().map(SettingPair::as_array).collect();
    Ok(chsh_check(e[0], e[1], e[2], e[3])?.with_settings(&canon))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WignerMode {
    Analytic,
    PerSpace,
    SingleSpace,
}

/// Wigner-d'Espagnat count form at the Bell vectors.
pub fn run_wigner_suite(
    seed: u64,
    n: u64,
    key: GaugeKey,
    mode: WignerMode,
) -> Result<InequalityReport, ExperimentError> {
    let [a, b, c] = bell_vectors();
    let input = match mode {
        WignerMode::Analytic => WignerInput::analytic(&a, &b, &c),
        WignerMode::PerSpace => {
            let t = tally_experiment(&ExperimentSpec::bell(seed, n, key))?;
            WignerInput::PerSpace { ab: t[0], ac: t[1], bc: t[2] }
        }
        WignerMode::SingleSpace => {
            let events = crate::model::sample_pair_stream(seed, n)?;
            WignerInput::from_cyclic_rows(&cyclic_concatenate(&events, &key, (a, b, c)))
        }
    };
    Ok(wigner_check(&input)?)
}

/// Bell check on one common table built from a single pair stream.
pub fn run_cyclic_bell(seed: u64, n: u64, key: GaugeKey) -> Result<InequalityReport, ExperimentError> {
    let [a, b, c] = bell_vectors();
    let events = crate::model::sample_pair_stream(seed, n)?;
    Ok(bell_check_cyclic(&cyclic_concatenate(&events, &key, (a, b, c)))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta_radians: f64,
    pub estimate: ExpectationEstimate,
}

/// Left fixed at `[1, 0]`; right at `[cos θ, sin θ]` for `θ = 2πk/steps`.
pub fn sweep_angle(
    seed: u64,
    n_per_step: u64,
    steps: usize,
    key: GaugeKey,
) -> Result<Vec<SweepPoint>, ExperimentError> {
    if steps < 2 {
        return Err(ExperimentError::TooFewSteps(steps));
    }
    let thetas: Vec<f64> = (0..steps)
        .map(|k| std::f64::consts::TAU * k as f64 / steps as f64)
        .collect();
    let pairs = thetas
        .iter()
        .map(|&th| SettingPair::new(Setting::CANONICAL, Setting::from_angle(th)))
        .collect();
    let tallies = tally_experiment(&ExperimentSpec::new(pairs, n_per_step, seed, key))?;
    thetas
        .into_iter()
        .zip(tallies)
        .map(|(theta_radians, t)| {
            Ok(SweepPoint {
                theta_radians,
                estimate: t.expectation()?,
            })
        })
        .collect()
}
