//! Analytic singlet correlation and the Bell, CHSH and Wigner-d'Espagnat
//! evaluators, plus the single-space (cyclic) construction and its exhaustive
//! satisfiability table.
//!
//! "Violated" always means `lhs > rhs` strictly; ties satisfy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{measure_left, measure_right, GaugeKey, Outcome, PairEvent, Setting};
use crate::stats::{ExpectationEstimate, OutcomeTally};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InequalityError {
    #[error("{label} = {value} lies outside [-1, 1]")]
    OutOfRange { label: String, value: f64 },
    #[error("single-space tallies must share one total, got {0:?}")]
    MismatchedTotals([u64; 3]),
    #[error("no cyclic rows to evaluate")]
    Empty,
}

/// Quantum singlet expectation `-a·b`.
pub fn analytic_expectation(a: &Setting, b: &Setting) -> f64 {
    -a.dot(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InequalityKind {
    Bell,
    Chsh,
    Wigner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluationMode {
    Analytic,
    SimulatedPerSpace,
    SimulatedSingleSpace,
}

/// A correlation (or frequency) fed into an inequality: either an exact value
/// or a sample estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Correlation {
    Exact(f64),
    Estimated(ExpectationEstimate),
}

impl Correlation {
    pub fn value(&self) -> f64 {
        match self {
            Correlation::Exact(v) => *v,
            Correlation::Estimated(e) => e.value,
        }
    }

    pub fn std_error(&self) -> f64 {
        match self {
            Correlation::Exact(_) => 0.0,
            Correlation::Estimated(e) => e.std_error,
        }
    }

    fn n_samples(&self) -> u64 {
        match self {
            Correlation::Exact(_) => 0,
            Correlation::Estimated(e) => e.n_samples,
        }
    }
}

impl From<f64> for Correlation {
    fn from(v: f64) -> Self {
        Correlation::Exact(v)
    }
}

impl From<ExpectationEstimate> for Correlation {
    fn from(e: ExpectationEstimate) -> Self {
        Correlation::Estimated(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub settings: Option<[Setting; 2]>,
    pub value: f64,
    /// Zero for exact inputs.
    pub n_samples: u64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: InequalityKind,
    pub mode: EvaluationMode,
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
    pub lhs_std_error: f64,
    pub rhs_std_error: f64,
    /// `(lhs - rhs) / σ(lhs - rhs)`; absent when the inputs are exact.
    pub margin_sigma: Option<f64>,
    pub inputs: Vec<ReportInput>,
}

impl InequalityReport {
    fn new(
        name: InequalityKind,
        mode: EvaluationMode,
        lhs: f64,
        rhs: f64,
        lhs_std_error: f64,
        rhs_std_error: f64,
        inputs: Vec<ReportInput>,
    ) -> Self {
        let gap_sigma = lhs_std_error.hypot(rhs_std_error);
        InequalityReport {
            name,
            mode,
            lhs,
            rhs,
            violated: lhs > rhs,
            lhs_std_error,
            rhs_std_error,
            margin_sigma: (gap_sigma > 0.0).then(|| (lhs - rhs) / gap_sigma),
            inputs,
        }
    }

    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }

    /// Attach the setting pair behind each input, in input order.
    pub fn with_settings(mut self, pairs: &[[Setting; 2]]) -> Self {
        for (input, pair) in self.inputs.iter_mut().zip(pairs) {
            input.settings = Some(*pair);
        }
        self
    }
}

fn checked_inputs(
    named: &[(&str, Correlation)],
) -> Result<(Vec<ReportInput>, EvaluationMode), InequalityError> {
    let mut inputs = Vec::with_capacity(named.len());
    for (label, c) in named {
        let value = c.value();
        if !(-1.0..=1.0).contains(&value) {
            return Err(InequalityError::OutOfRange {
                label: label.to_string(),
                value,
            });
        }
        inputs.push(ReportInput {
            label: label.to_string(),
            settings: None,
            value,
            n_samples: c.n_samples(),
            std_error: c.std_error(),
        });
    }
    let mode = if named.iter().all(|(_, c)| matches!(c, Correlation::Exact(_))) {
        EvaluationMode::Analytic
    } else {
        EvaluationMode::SimulatedPerSpace
    };
    Ok((inputs, mode))
}

fn quad(errs: &[f64]) -> f64 {
    errs.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// `|E(a,b) - E(a,c)| ≤ 1 + E(b,c)`.
pub fn bell_check(
    e_ab: impl Into<Correlation>,
    e_ac: impl Into<Correlation>,
    e_bc: impl Into<Correlation>,
) -> Result<InequalityReport, InequalityError> {
    let (e_ab, e_ac, e_bc) = (e_ab.into(), e_ac.into(), e_bc.into());
    let (inputs, mode) =
        checked_inputs(&[("E(a,b)", e_ab), ("E(a,c)", e_ac), ("E(b,c)", e_bc)])?;
    Ok(InequalityReport::new(
        InequalityKind::Bell,
        mode,
        (e_ab.value() - e_ac.value()).abs(),
        1.0 + e_bc.value(),
        quad(&[e_ab.std_error(), e_ac.std_error()]),
        e_bc.std_error(),
        inputs,
    ))
}

/// `|E(a,b) + E(a,c) + E(d,b) - E(d,c)| ≤ 2`.
pub fn chsh_check(
    e_ab: impl Into<Correlation>,
    e_ac: impl Into<Correlation>,
    e_db: impl Into<Correlation>,
    e_dc: impl Into<Correlation>,
) -> Result<InequalityReport, InequalityError> {
    let (e_ab, e_ac, e_db, e_dc) = (e_ab.into(), e_ac.into(), e_db.into(), e_dc.into());
    let (inputs, mode) = checked_inputs(&[
        ("E(a,b)", e_ab),
        ("E(a,c)", e_ac),
        ("E(d,b)", e_db),
        ("E(d,c)", e_dc),
    ])?;
    let lhs = (e_ab.value() + e_ac.value() + e_db.value() - e_dc.value()).abs();
    let se = quad(&[e_ab.std_error(), e_ac.std_error(), e_db.std_error(), e_dc.std_error()]);
    Ok(InequalityReport::new(
        InequalityKind::Chsh,
        mode,
        lhs,
        2.0,
        se,
        0.0,
        inputs,
    ))
}

/// Probability that the left wing reads `+1` at `x` and the right wing reads
/// `+1` at `y` under the singlet state: `(1 + E)/4 = (1 - x·y)/4`.
pub fn analytic_plus_plus(x: &Setting, y: &Setting) -> f64 {
    (1.0 + analytic_expectation(x, y)) / 4.0
}

/// Inputs to the Wigner-d'Espagnat count form
/// `n_ac[+,+] ≤ n_ab[+,+] + n_bc[+,+]`, where `n_xy[+,+]` counts pairs of the
/// `(x; y)` experiment with `+1` in both wings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WignerInput {
    /// Exact `P[+,+]` for `(a;b)`, `(a;c)`, `(b;c)`.
    Analytic { ab: f64, ac: f64, bc: f64 },
    /// Three independent experiments; compared as frequencies.
    PerSpace {
        ab: OutcomeTally,
        ac: OutcomeTally,
        bc: OutcomeTally,
    },
    /// Three pairings read off one common table; compared as raw counts.
    SingleSpace {
        ab: OutcomeTally,
        ac: OutcomeTally,
        bc: OutcomeTally,
    },
}

impl WignerInput {
    pub fn analytic(a: &Setting, b: &Setting, c: &Setting) -> Self {
        WignerInput::Analytic {
            ab: analytic_plus_plus(a, b),
            ac: analytic_plus_plus(a, c),
            bc: analytic_plus_plus(b, c),
        }
    }

    /// Single-space tallies of cyclic rows: the `(x; y)` pairing reads
    /// `A(x)` on the left and `-A(y)` on the right of the same row.
    pub fn from_cyclic_rows(rows: &[CyclicRow]) -> Self {
        let mut ab = OutcomeTally::default();
        let mut ac = OutcomeTally::default();
        let mut bc = OutcomeTally::default();
        for r in rows {
            ab.add(r.a, -r.b);
            ac.add(r.a, -r.c);
            bc.add(r.b, -r.c);
        }
        WignerInput::SingleSpace { ab, ac, bc }
    }
}

fn freq(count: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 0.0);
    }
    let p = count as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

fn wigner_input(label: &str, value: f64, n: u64, se: f64) -> ReportInput {
    ReportInput {
        label: label.to_string(),
        settings: None,
        value,
        n_samples: n,
        std_error: se,
    }
}

pub fn wigner_check(input: &WignerInput) -> Result<InequalityReport, InequalityError> {
    let labels = ["P(a+,b+)", "P(a+,c+)", "P(b+,c+)"];
    match *input {
        WignerInput::Analytic { ab, ac, bc } => {
            for (label, v) in labels.iter().zip([ab, ac, bc]) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(InequalityError::OutOfRange {
                        label: label.to_string(),
                        value: v,
                    });
                }
            }
            let inputs = labels
                .iter()
                .zip([ab, ac, bc])
                .map(|(l, v)| wigner_input(l, v, 0, 0.0))
                .collect();
            Ok(InequalityReport::new(
                InequalityKind::Wigner,
                EvaluationMode::Analytic,
                ac,
                ab + bc,
                0.0,
                0.0,
                inputs,
            ))
        }
        WignerInput::PerSpace { ab, ac, bc } => {
            let f = [ab, ac, bc].map(|t| (freq(t.pp, t.total()), t.total()));
            let inputs = labels
                .iter()
                .zip(f)
                .map(|(l, ((p, se), n))| wigner_input(l, p, n, se))
                .collect();
            let [(ab_f, _), (ac_f, _), (bc_f, _)] = f;
            Ok(InequalityReport::new(
                InequalityKind::Wigner,
                EvaluationMode::SimulatedPerSpace,
                ac_f.0,
                ab_f.0 + bc_f.0,
                ac_f.1,
                ab_f.1.hypot(bc_f.1),
                inputs,
            ))
        }
        WignerInput::SingleSpace { ab, ac, bc } => {
            let totals = [ab.total(), ac.total(), bc.total()];
            if totals[0] != totals[1] || totals[1] != totals[2] {
                return Err(InequalityError::MismatchedTotals(totals));
            }
            let n = totals[0];
            let scale = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            let inputs = labels
                .iter()
                .zip([ab, ac, bc])
                .map(|(l, t)| wigner_input(l, scale(t.pp), n, 0.0))
                .collect();
            // integer sides, one common divisor: the comparison is exact
            Ok(InequalityReport::new(
                InequalityKind::Wigner,
                EvaluationMode::SimulatedSingleSpace,
                scale(ac.pp),
                scale(ab.pp + bc.pp),
                0.0,
                0.0,
                inputs,
            ))
        }
    }
}

/// One concatenated row: all three functions evaluated at one `(λ, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicRow {
    pub h: u64,
    pub a: Outcome,
    pub b: Outcome,
    pub c: Outcome,
}

impl CyclicRow {
    /// Per-row products `(-A_a·A_b, -A_a·A_c, -A_b·A_c)`.
    pub fn products(&self) -> [i8; 3] {
        [
            -(self.a * self.b).value(),
            -(self.a * self.c).value(),
            -(self.b * self.c).value(),
        ]
    }
}

/// Evaluate `A(a)`, `A(b)`, `A(c)` at the same event for every event.
/// `A(a)` is the left function; `A(x) = -B(x)` for the other two.
pub fn cyclic_concatenate(
    events: &[PairEvent],
    key: &GaugeKey,
    settings: (Setting, Setting, Setting),
) -> Vec<CyclicRow> {
    let (a, b, c) = settings;
    events
        .iter()
        .map(|e| CyclicRow {
            h: e.n,
            a: measure_left(&a, e, key),
            b: -measure_right(&b, e, key),
            c: -measure_right(&c, e, key),
        })
        .collect()
}

/// Bell check over row-averaged correlations of a single common table.
///
/// Sides are formed from integer sums over one divisor, so the comparison is
/// free of rounding.
pub fn bell_check_cyclic(rows: &[CyclicRow]) -> Result<InequalityReport, InequalityError> {
    if rows.is_empty() {
        return Err(InequalityError::Empty);
    }
    let n = rows.len() as i64;
    let mut sums = [0i64; 3];
    for r in rows {
        for (s, p) in sums.iter_mut().zip(r.products()) {
            *s += p as i64;
        }
    }
    let inputs = ["E(a,b)", "E(a,c)", "E(b,c)"]
        .iter()
        .zip(sums)
        .map(|(l, s)| wigner_input(l, s as f64 / n as f64, n as u64, 0.0))
        .collect();
    Ok(InequalityReport::new(
        InequalityKind::Bell,
        EvaluationMode::SimulatedSingleSpace,
        (sums[0] - sums[1]).abs() as f64 / n as f64,
        (n + sums[2]) as f64 / n as f64,
        0.0,
        0.0,
        inputs,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub assignment: [Outcome; 3],
    pub e_ab: i8,
    pub e_ac: i8,
    pub e_bc: i8,
    pub lhs: i8,
    pub rhs: i8,
    pub satisfied: bool,
}

/// All eight `(A_a, A_b, A_c)` assignments with the Bell sides of their
/// per-row correlations.
pub fn cyclic_oracle() -> Vec<OracleRow> {
    crate::stats::TripleTable::patterns()
        .map(|s| {
            let row = CyclicRow {
                h: 0,
                a: s[0],
                b: s[1],
                c: s[2],
            };
            let [e_ab, e_ac, e_bc] = row.products();
            let lhs = (e_ab - e_ac).abs();
            let rhs = 1 + e_bc;
            OracleRow {
                assignment: s,
                e_ab,
                e_ac,
                e_bc,
                lhs,
                rhs,
                satisfied: lhs <= rhs,
            }
        })
        .collect()
}
