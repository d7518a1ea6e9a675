//! Observed evaluations, the budget ledger, and best-so-far curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricDirection, Metrics};
use crate::space::Configuration;

/// One observed evaluation. Runs trained to step `z` also yield records at
/// every grid step below `z`; only the terminal record of such a batch
/// carries the charged cost, intermediates carry zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// Outer-loop iteration the record belongs to (0 for initialization).
    pub iteration: usize,
    /// Global append order across the whole run.
    pub wall_order: usize,
    pub config: Configuration,
    pub metrics: Metrics,
    pub cost_charged: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EvaluationRecord>,
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, mut record: EvaluationRecord) {
        record.wall_order = self.records.len();
        self.records.push(record);
    }

    /// Sum of charged costs, accumulated in record order.
    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost_charged).sum()
    }

    /// Best record for `metric` (direction-aware), with its value.
    pub fn best_for(&self, metric: &str) -> Result<Option<(&EvaluationRecord, f64)>> {
        let direction = MetricDirection::of_name(metric)?;
        let mut best: Option<(&EvaluationRecord, f64)> = None;
        for record in &self.records {
            let value = record.metrics.get(metric)?;
            match &best {
                Some((_, current)) if !direction.is_improvement(value, *current) => {}
                _ => best = Some((record, value)),
            }
        }
        Ok(best)
    }

    /// Observations as (configuration, minimization-framed value) pairs.
    pub fn framed_observations(&self, metric: &str) -> Result<Vec<(Configuration, f64)>> {
        let direction = MetricDirection::of_name(metric)?;
        self.records
            .iter()
            .map(|r| Ok((r.config.clone(), direction.framed(r.metrics.get(metric)?))))
            .collect()
    }
}

/// Tracks spending against a fixed budget. Charges are refused rather than
/// overdrawn, so `spent <= total` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    total: f64,
    spent: f64,
    charges: Vec<f64>,
}

impl BudgetLedger {
    pub fn new(total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!("budget must be positive, got {total}")));
        }
        Ok(BudgetLedger {
            total,
            spent: 0.0,
            charges: Vec::new(),
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.spent
    }

    pub fn can_afford(&self, cost: f64) -> bool {
        cost <= self.remaining()
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn try_charge(&mut self, cost: f64) -> Result<()> {
        if !(cost >= 0.0) || !cost.is_finite() {
            return Err(Error::invalid(format!("charge must be nonnegative, got {cost}")));
        }
        if !self.can_afford(cost) {
            return Err(Error::BudgetExhausted {
                needed: cost,
                remaining: self.remaining(),
            });
        }
        self.spent += cost;
        self.charges.push(cost);
        Ok(())
    }
}

/// Best observed value for one metric as a function of cumulative cost.
/// Monotone by construction: nonincreasing for losses, nondecreasing for
/// accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFarCurve {
    pub direction: MetricDirection,
    /// (cumulative cost, best value so far), one point per observation.
    pub points: Vec<(f64, f64)>,
}

impl BestSoFarCurve {
    pub fn new(direction: MetricDirection) -> Self {
        BestSoFarCurve {
            direction,
            points: Vec::new(),
        }
    }

    /// Builds the curve from a history in wall order.
    pub fn from_history(history: &History, metric: &str) -> Result<Self> {
        let direction = MetricDirection::of_name(metric)?;
        let mut curve = BestSoFarCurve::new(direction);
        let mut cumulative = 0.0;
        for record in &history.records {
            cumulative += record.cost_charged;
            curve.push_observation(cumulative, record.metrics.get(metric)?);
        }
        Ok(curve)
    }

    /// Appends an observation, clamping to the running best.
    pub fn push_observation(&mut self, cumulative_cost: f64, value: f64) {
        let best = match self.points.last() {
            Some(&(_, current)) if !self.direction.is_improvement(value, current) => current,
            _ => value,
        };
        self.points.push((cumulative_cost, best));
    }

    pub fn terminal_best(&self) -> Option<f64> {
        self.points.last().map(|&(_, v)| v)
    }

    /// First cumulative cost at which the curve reaches `value` or better.
    pub fn first_crossing(&self, value: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|&&(_, v)| v == value || self.direction.is_improvement(v, value))
            .map(|&(c, _)| c)
    }

    /// Best value at cumulative cost `cost` under step interpolation, i.e.
    /// the value of the last point at or before `cost`.
    pub fn value_at(&self, cost: f64) -> Option<f64> {
        let mut current = None;
        for &(c, v) in &self.points {
            if c <= cost {
                current = Some(v);
            } else {
                break;
            }
        }
        current
    }
}
