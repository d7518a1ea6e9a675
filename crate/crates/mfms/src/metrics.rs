//! The fixed metric registry: one training loss, seven per-category
//! validation losses, and three downstream task accuracies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical metric order used everywhere (records, run logs, predictors).
pub const METRIC_NAMES: [&str; 11] = [
    "train_loss",
    "val_wikipedia",
    "val_stackexchange",
    "val_github",
    "val_arxiv",
    "val_book",
    "val_commoncrawl",
    "val_c4",
    "acc_arceasy",
    "acc_hellaswag",
    "acc_piqa",
];

pub const METRIC_COUNT: usize = METRIC_NAMES.len();

/// Indices `0..LOSS_METRIC_COUNT` are losses; the rest are accuracies.
pub const LOSS_METRIC_COUNT: usize = 8;

pub fn metric_index(name: &str) -> Result<usize> {
    METRIC_NAMES
        .iter()
        .position(|&m| m == name)
        .ok_or_else(|| Error::invalid(format!("unknown metric name: {name}")))
}

/// Whether a metric is minimized (losses) or maximized (accuracies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricDirection {
    Minimize,
    Maximize,
}

impl MetricDirection {
    pub fn of_index(index: usize) -> MetricDirection {
        if index < LOSS_METRIC_COUNT {
            MetricDirection::Minimize
        } else {
            MetricDirection::Maximize
        }
    }

    pub fn of_name(name: &str) -> Result<MetricDirection> {
        metric_index(name).map(MetricDirection::of_index)
    }

    /// Maps a metric value into minimization framing (accuracies negate).
    pub fn framed(self, value: f64) -> f64 {
        match self {
            MetricDirection::Minimize => value,
            MetricDirection::Maximize => -value,
        }
    }

    /// Inverse of [`MetricDirection::framed`].
    pub fn unframed(self, value: f64) -> f64 {
        self.framed(value)
    }

    pub fn is_improvement(self, candidate: f64, current: f64) -> bool {
        match self {
            MetricDirection::Minimize => candidate < current,
            MetricDirection::Maximize => candidate > current,
        }
    }
}

/// One value per metric, in [`METRIC_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics(pub [f64; METRIC_COUNT]);

impl Metrics {
    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.0[metric_index(name)?])
    }

    pub fn values(&self) -> &[f64; METRIC_COUNT] {
        &self.0
    }

    /// (name, value) pairs in canonical order.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        METRIC_NAMES.iter().copied().zip(self.0.iter().copied())
    }
}
