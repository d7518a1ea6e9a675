//! Configurations, the discrete scale/step search space, the cost model,
//! and the log-coordinate transform used by the surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureWeights;

/// One evaluable point: a mixture trained at a model scale for some steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub mixture: MixtureWeights,
    /// Parameter count of the model.
    pub model_scale: u64,
    /// Training step the run is taken to.
    pub train_step: u64,
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(w={}, m={}, z={})",
            self.mixture, self.model_scale, self.train_step
        )
    }
}

/// The paper-scale default model sizes, 20M through 1B parameters.
pub const DEFAULT_SCALES: [u64; 7] = [
    20_000_000,
    60_000_000,
    150_000_000,
    300_000_000,
    500_000_000,
    700_000_000,
    1_000_000_000,
];

/// Default training-step grid.
pub const DEFAULT_STEPS: [u64; 3] = [6_000, 12_000, 19_700];

/// Discrete search space: scale set M, step grid Z, and the target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub mixture_dimension: usize,
    pub scales: Vec<u64>,
    pub steps: Vec<u64>,
    pub target_scale: u64,
    pub target_step: u64,
}

impl SearchSpace {
    pub fn new(
        mixture_dimension: usize,
        mut scales: Vec<u64>,
        mut steps: Vec<u64>,
        target_scale: u64,
        target_step: u64,
    ) -> Result<Self> {
        if mixture_dimension < 2 {
            return Err(Error::invalid("mixture dimension must be >= 2"));
        }
        scales.sort_unstable();
        scales.dedup();
        steps.sort_unstable();
        steps.dedup();
        if scales.is_empty() || steps.is_empty() {
            return Err(Error::invalid("scale set and step grid must be non-empty"));
        }
        if scales.iter().any(|&m| m == 0) || steps.iter().any(|&z| z == 0) {
            return Err(Error::invalid("scales and steps must be positive"));
        }
        if !scales.contains(&target_scale) {
            return Err(Error::invalid(format!(
                "target scale {target_scale} is not in the scale set"
            )));
        }
        if target_step != *steps.last().expect("non-empty") {
            return Err(Error::invalid(format!(
                "target step {target_step} must be the maximum of the step grid"
            )));
        }
        Ok(SearchSpace {
            mixture_dimension,
            scales,
            steps,
            target_scale,
            target_step,
        })
    }

    /// Default paper-scale space for `n`-dataset mixtures.
    pub fn paper_default(mixture_dimension: usize) -> Result<Self> {
        SearchSpace::new(
            mixture_dimension,
            DEFAULT_SCALES.to_vec(),
            DEFAULT_STEPS.to_vec(),
            1_000_000_000,
            19_700,
        )
    }

    pub fn contains(&self, scale: u64, step: u64) -> bool {
        self.scales.contains(&scale) && self.steps.contains(&step)
    }

    pub fn lowest_step(&self) -> u64 {
        self.steps[0]
    }

    /// All (scale, step) pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::with_capacity(self.scales.len() * self.steps.len());
        for &m in &self.scales {
            for &z in &self.steps {
                out.push((m, z));
            }
        }
        out
    }

    /// Grid steps at or below `step`, ascending.
    pub fn steps_through(&self, step: u64) -> Vec<u64> {
        self.steps.iter().copied().filter(|&z| z <= step).collect()
    }
}

/// Evaluation cost `c(m, z) = (m / unit_scale) * z`, normalized so one
/// training step of a `unit_scale`-parameter model costs one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub unit_scale: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { unit_scale: 1e9 }
    }
}

impl CostModel {
    pub fn cost(&self, scale: u64, step: u64) -> f64 {
        (scale as f64 / self.unit_scale) * step as f64
    }

    /// Incremental cost of extending a run from `from_step` to `to_step`.
    pub fn incremental_cost(&self, scale: u64, from_step: u64, to_step: u64) -> f64 {
        debug_assert!(to_step >= from_step);
        self.cost(scale, to_step) - self.cost(scale, from_step)
    }

    pub fn cheapest_pair_cost(&self, space: &SearchSpace) -> f64 {
        self.cost(space.scales[0], space.steps[0])
    }
}

/// Log coordinates for scale and step, normalized by the target values so
/// the target maps to zero and length scales stay O(1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub scale_ref: f64,
    pub step_ref: f64,
}

impl InputTransform {
    pub fn for_space(space: &SearchSpace) -> Self {
        InputTransform {
            scale_ref: space.target_scale as f64,
            step_ref: space.target_step as f64,
        }
    }

    pub fn scale_coord(&self, scale: u64) -> f64 {
        (scale as f64 / self.scale_ref).ln()
    }

    pub fn step_coord(&self, step: u64) -> f64 {
        (step as f64 / self.step_ref).ln()
    }
}
