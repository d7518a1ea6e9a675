//! Data-mixture optimization over a multi-fidelity, multi-scale search
//! space.
//!
//! The decision variable is a point on the probability simplex: the
//! proportions by which a fixed token budget is split across training
//! datasets. Evaluating a mixture means training a model of some scale
//! `m` for some number of steps `z`, at cost proportional to `m * z`.
//! The optimizer (`optimizer` module) maintains a Gaussian-process
//! surrogate over (mixture, scale, step) and proposes evaluations by
//! cost-normalized expected improvement, so cheap small-scale runs guide
//! expensive full-scale decisions. Hyperband and random-search baselines
//! (`baselines`), a seeded synthetic pre-training surface plus an MLP
//! performance predictor (`simulator`), and a study/report harness
//! (`study`, `transfer`) round out the crate.
//!
//! The `parallel` feature (default) runs the data-parallel inner loops on
//! rayon; disabling it yields a sequential build with identical outputs.

pub mod acquisition;
pub mod baselines;
pub mod error;
pub mod gp;
pub mod history;
pub mod metrics;
pub mod mixture;
pub mod optimizer;
pub(crate) mod parallel;
pub mod simulator;
pub mod space;
pub mod study;
pub mod transfer;

pub use error::{Error, Result};
pub use history::{BestSoFarCurve, BudgetLedger, EvaluationRecord, History};
pub use metrics::{MetricDirection, Metrics, METRIC_NAMES};
pub use mixture::{project_to_simplex, simplex_distance, MixtureWeights, SimplexDistanceKind};
pub use space::{Configuration, CostModel, SearchSpace};
