//! Simulation laboratory for EPRB spin-correlation experiments.
//!
//! The crate implements a strictly local outcome model whose two wings share
//! only the emitted pair `(λ, t)` and a global ±1 gauge key, and which still
//! reproduces the singlet correlation `E(a, b) = -a·b`. Around that model sit
//! estimators, Bell / CHSH / Wigner-d'Espagnat evaluators for both
//! per-experiment and single-space datasets, experiment orchestration, and a
//! distributed source / station / collator harness over TCP.

pub mod dataset;
pub mod experiments;
pub mod inequalities;
pub mod model;
pub mod output;
pub mod stations;
pub mod stats;

pub use dataset::{DatasetHeader, DatasetRecord, RunDataset, SCHEMA_VERSION};
pub use experiments::{
    rotate_to_canonical, run_bell_suite, run_chsh_suite, run_experiment, sort_wigner_sets,
    sweep_angle, ExperimentError, ExperimentSpec, SettingPair, Switching,
};
pub use inequalities::{
    analytic_expectation, bell_check, chsh_check, cyclic_concatenate, cyclic_oracle,
    wigner_check, InequalityError, InequalityReport,
};
pub use model::{
    classify_pair, gauge_eval, measure_left, measure_right, rademacher, sample_pair_stream,
    GaugeKey, MeasurementRecord, ModelError, Outcome, PairClass, PairEvent, PairStream, Setting,
    Station,
};
pub use stats::{
    build_triple_table, estimate_expectation, estimate_marginals, ExpectationEstimate,
    OutcomeTally, StatsError, TripleKind, TripleTable,
};
