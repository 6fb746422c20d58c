//! Python bindings for the simulation core.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eqrc_core::experiments::{
    bell_vectors, run_cyclic_bell, run_wigner_suite, tally_experiment, WignerMode,
};
use eqrc_core::inequalities::cyclic_oracle as core_cyclic_oracle;
use eqrc_core::{
    build_triple_table, run_bell_suite, run_chsh_suite, sample_pair_stream, sweep_angle,
    ExperimentSpec, InequalityReport, Outcome, PairEvent, SettingPair, TripleKind,
};

fn value_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A unit measurement direction in the plane.
#[pyclass(frozen, module = "eqrc")]
#[derive(Clone, Copy)]
struct Setting(eqrc_core::Setting);

#[pymethods]
impl Setting {
    #[new]
    fn new(b2: f64, b3: f64) -> PyResult<Self> {
        eqrc_core::Setting::new(b2, b3).map(Setting).map_err(value_error)
    }

    #[staticmethod]
    fn from_angle(theta: f64) -> Self {
        Setting(eqrc_core::Setting::from_angle(theta))
    }

    #[getter]
    fn b2(&self) -> f64 {
        self.0.b2()
    }

    #[getter]
    fn b3(&self) -> f64 {
        self.0.b3()
    }

    fn angle(&self) -> f64 {
        self.0.angle()
    }

    fn dot(&self, other: &Setting) -> f64 {
        self.0.dot(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("Setting({}, {})", self.0.b2(), self.0.b3())
    }

    fn __eq__(&self, other: &Setting) -> bool {
        self.0.bit_eq(&other.0)
    }
}

/// The shared ±1 gauge function of the emission time.
#[pyclass(frozen, module = "eqrc")]
#[derive(Clone, Copy)]
struct GaugeKey(eqrc_core::GaugeKey);

#[pymethods]
impl GaugeKey {
    /// Parse `one`, `rademacher:j=K` or `rademacher-rarb:j=K,seed=S`.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(GaugeKey).map_err(value_error)
    }

    #[staticmethod]
    fn one() -> Self {
        GaugeKey(eqrc_core::GaugeKey::ConstantPlusOne)
    }

    #[staticmethod]
    fn rademacher(j: u32) -> PyResult<Self> {
        eqrc_core::GaugeKey::rademacher(j).map(GaugeKey).map_err(value_error)
    }

    #[staticmethod]
    fn rademacher_rarb(j: u32, seed: u64) -> PyResult<Self> {
        eqrc_core::GaugeKey::rademacher_times_rarb(j, seed)
            .map(GaugeKey)
            .map_err(value_error)
    }

    fn __call__(&self, t: f64) -> PyResult<i8> {
        if !(0.0..1.0).contains(&t) {
            return Err(PyValueError::new_err(format!("t = {t} outside [0, 1)")));
        }
        Ok(eqrc_core::gauge_eval(&self.0, t).value())
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("GaugeKey('{}')", self.0)
    }
}

fn key_or_default(key: Option<GaugeKey>) -> eqrc_core::GaugeKey {
    key.map(|k| k.0).unwrap_or(eqrc_core::GaugeKey::Rademacher { j: 3 })
}

fn event(n: u64, lam: f64, t: f64) -> PyResult<PairEvent> {
    if !(0.0..1.0).contains(&lam) || !(0.0..1.0).contains(&t) {
        return Err(PyValueError::new_err("lambda and t must lie in [0, 1)"));
    }
    Ok(PairEvent { n, lambda: lam, t })
}

/// Singlet correlation `-a·b`.
#[pyfunction]
fn analytic_expectation(a: &Setting, b: &Setting) -> f64 {
    eqrc_core::analytic_expectation(&a.0, &b.0)
}

#[pyfunction]
#[pyo3(signature = (setting, n, lam, t, key))]
fn measure_left(setting: &Setting, n: u64, lam: f64, t: f64, key: &GaugeKey) -> PyResult<i8> {
    Ok(eqrc_core::measure_left(&setting.0, &event(n, lam, t)?, &key.0).value())
}

#[pyfunction]
#[pyo3(signature = (setting, n, lam, t, key))]
fn measure_right(setting: &Setting, n: u64, lam: f64, t: f64, key: &GaugeKey) -> PyResult<i8> {
    Ok(eqrc_core::measure_right(&setting.0, &event(n, lam, t)?, &key.0).value())
}

/// `(n, lambda, t)` for the first `count` pairs of a seeded stream.
#[pyfunction]
fn sample_pairs(seed: u64, count: u64) -> PyResult<Vec<(u64, f64, f64)>> {
    let events = sample_pair_stream(seed, count).map_err(value_error)?;
    Ok(events.into_iter().map(|e| (e.n, e.lambda, e.t)).collect())
}

/// Estimate E for each right setting with the left wing at `[1, 0]`.
/// Returns `(value, std_error, n)` per setting.
#[pyfunction]
#[pyo3(signature = (rights, pairs, seed=1, key=None))]
fn estimate(
    py: Python<'_>,
    rights: Vec<Setting>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Vec<(f64, f64, u64)>> {
    let setting_pairs = rights
        .iter()
        .map(|r| SettingPair::new(eqrc_core::Setting::CANONICAL, r.0))
        .collect();
    let spec = ExperimentSpec::new(setting_pairs, pairs, seed, key_or_default(key));
    let tallies = py.allow_threads(|| tally_experiment(&spec)).map_err(value_error)?;
    tallies
        .iter()
        .map(|t| {
            let e = t.expectation().map_err(value_error)?;
            Ok((e.value, e.std_error, e.n_samples))
        })
        .collect()
}

fn report_dict<'py>(py: Python<'py>, r: &InequalityReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    let tag = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    d.set_item("name", tag(serde_json::to_value(r.name).map_err(value_error)?))?;
    d.set_item("mode", tag(serde_json::to_value(r.mode).map_err(value_error)?))?;
    d.set_item("lhs", r.lhs)?;
    d.set_item("rhs", r.rhs)?;
    d.set_item("violated", r.violated)?;
    d.set_item("lhs_std_error", r.lhs_std_error)?;
    d.set_item("rhs_std_error", r.rhs_std_error)?;
    d.set_item("margin_sigma", r.margin_sigma)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pairs, seed=1, key=None))]
fn bell<'py>(
    py: Python<'py>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Bound<'py, PyDict>> {
    let key = key_or_default(key);
    let r = py.allow_threads(|| run_bell_suite(seed, pairs, key)).map_err(value_error)?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (pairs, seed=1, key=None))]
fn chsh<'py>(
    py: Python<'py>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Bound<'py, PyDict>> {
    let key = key_or_default(key);
    let r = py.allow_threads(|| run_chsh_suite(seed, pairs, key)).map_err(value_error)?;
    report_dict(py, &r)
}

/// `mode` is one of `analytic`, `per-space`, `single-space`.
#[pyfunction]
#[pyo3(signature = (pairs, seed=1, key=None, mode="per-space"))]
fn wigner<'py>(
    py: Python<'py>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "analytic" => WignerMode::Analytic,
        "per-space" => WignerMode::PerSpace,
        "single-space" => WignerMode::SingleSpace,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let key = key_or_default(key);
    let r = py
        .allow_threads(|| run_wigner_suite(seed, pairs, key, mode))
        .map_err(value_error)?;
    report_dict(py, &r)
}

/// Single-space Bell check on the concatenated `(a, b, c)` table.
#[pyfunction]
#[pyo3(signature = (pairs, seed=1, key=None))]
fn cyclic_bell<'py>(
    py: Python<'py>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Bound<'py, PyDict>> {
    let key = key_or_default(key);
    let r = py.allow_threads(|| run_cyclic_bell(seed, pairs, key)).map_err(value_error)?;
    report_dict(py, &r)
}

/// `{"abc'": {pattern: fraction}, "ab'c": {...}}` with patterns like `"+++"`.
#[pyfunction]
#[pyo3(signature = (pairs, seed=1, key=None))]
fn triples<'py>(
    py: Python<'py>,
    pairs: u64,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Bound<'py, PyDict>> {
    let key = key_or_default(key);
    let events = py
        .allow_threads(|| sample_pair_stream(seed, pairs))
        .map_err(value_error)?;
    let [a, b, c] = bell_vectors();
    let out = PyDict::new_bound(py);
    for kind in [TripleKind::AbcPrime, TripleKind::AbPrimeC] {
        let t = build_triple_table(kind, &events, &key, (a, b, c)).map_err(value_error)?;
        let cells = PyDict::new_bound(py);
        for (s, _) in t.cells() {
            let label: String = s
                .iter()
                .map(|o| if *o == Outcome::Plus { '+' } else { '-' })
                .collect();
            cells.set_item(label, t.fraction(s))?;
        }
        out.set_item(kind.to_string(), cells)?;
    }
    Ok(out)
}

/// `(theta, value, std_error)` for `steps` right angles, left at `[1, 0]`.
#[pyfunction]
#[pyo3(signature = (pairs, steps=72, seed=1, key=None))]
fn sweep(
    py: Python<'_>,
    pairs: u64,
    steps: usize,
    seed: u64,
    key: Option<GaugeKey>,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let key = key_or_default(key);
    let points = py
        .allow_threads(|| sweep_angle(seed, pairs, steps, key))
        .map_err(value_error)?;
    Ok(points
        .into_iter()
        .map(|p| (p.theta_radians, p.estimate.value, p.estimate.std_error))
        .collect())
}

/// Rows `((A_a, A_b, A_c), lhs, rhs, satisfied)` of the 8-assignment oracle.
#[pyfunction]
fn cyclic_oracle() -> Vec<((i8, i8, i8), i8, i8, bool)> {
    core_cyclic_oracle()
        .into_iter()
        .map(|r| {
            let [x, y, z] = r.assignment.map(Outcome::value);
            ((x, y, z), r.lhs, r.rhs, r.satisfied)
        })
        .collect()
}

#[pymodule]
fn eqrc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Setting>()?;
    m.add_class::<GaugeKey>()?;
    m.add_function(wrap_pyfunction!(analytic_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(measure_left, m)?)?;
    m.add_function(wrap_pyfunction!(measure_right, m)?)?;
    m.add_function(wrap_pyfunction!(sample_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(bell, m)?)?;
    m.add_function(wrap_pyfunction!(chsh, m)?)?;
    m.add_function(wrap_pyfunction!(wigner, m)?)?;
    m.add_function(wrap_pyfunction!(cyclic_bell, m)?)?;
    m.add_function(wrap_pyfunction!(triples, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(cyclic_oracle, m)?)?;
    Ok(())
}
