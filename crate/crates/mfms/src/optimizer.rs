//! The outer multi-fidelity multi-scale optimization loop: seeded
//! initialization, budget-checked evaluation with training-curve
//! expansion, posterior refits, cost-exponent decay, and termination when
//! no affordable proposal remains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{select_next, AcquisitionState};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, GpHyperparams, GpModel};
use crate::history::{BestSoFarCurve, BudgetLedger, EvaluationRecord, History};
use crate::metrics::MetricDirection;
use crate::mixture::{MixtureWeights, SimplexDistanceKind};
use crate::simulator::Simulator;
use crate::space::{Configuration, CostModel, InputTransform, SearchSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct MfmsOptions {
    /// Number of random configurations evaluated before the loop starts.
    pub n_init: usize,
    /// Highest step allowed during initialization; defaults to the lowest
    /// rung of the step grid.
    pub init_step_cap: Option<u64>,
    /// Refit hyperparameters every this many iterations (stretched as the
    /// history grows; see `refit_due`).
    pub refit_interval: usize,
    /// Refit immediately once this many shrink triggers fire between
    /// refits.
    pub shrink_refit_threshold: usize,
    /// Dirichlet restarts per (scale, step) EI maximization.
    pub restarts: usize,
    /// Optional hard cap on loop iterations; budget exhaustion is the
    /// normal exit.
    pub max_iterations: Option<usize>,
    pub hyperparam_learning_rate: f64,
    pub hyperparam_iterations: usize,
    pub distance_kind: SimplexDistanceKind,
}

impl Default for MfmsOptions {
    fn default() -> Self {
        MfmsOptions {
            n_init: 20,
            init_step_cap: None,
            refit_interval: 5,
            shrink_refit_threshold: 3,
            restarts: 5,
            max_iterations: None,
            hyperparam_learning_rate: 0.1,
            hyperparam_iterations: 50,
            distance_kind: SimplexDistanceKind::SquaredL2,
        }
    }
}

/// Result of one optimization run, shared across methods.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: &'static str,
    pub best_mixture: MixtureWeights,
    pub best_config: Configuration,
    /// Best observed value of the optimized metric, in natural units.
    pub best_value: f64,
    pub history: History,
    pub curve: BestSoFarCurve,
    /// The completion variant: best-observed mixture re-evaluated at the
    /// target (scale, step) as the search progresses, with the extra
    /// full-scale cost on the cost axis. Only produced by the surrogate
    /// optimizer.
    pub fullscale_curve: Option<BestSoFarCurve>,
    pub spent: f64,
    pub budget: f64,
    pub gp_hyperparams: Option<GpHyperparams>,
}

/// Evaluates `config`, charging its full cost up front and recording the
/// whole training curve: one record per grid step up to the configured
/// step, with the cost carried by the terminal record.
pub fn observe(
    history: &mut History,
    ledger: &mut BudgetLedger,
    simulator: &dyn Simulator,
    cost_model: &CostModel,
    space: &SearchSpace,
    config: &Configuration,
    iteration: usize,
) -> Result<()> {
    if !space.contains(config.model_scale, config.train_step) {
        return Err(Error::invalid(format!(
            "configuration {config} is outside the search space"
        )));
    }
    let cost = cost_model.cost(config.model_scale, config.train_step);
    ledger.try_charge(cost)?;
    let curve = simulator
        .curve(&config.mixture, config.model_scale, config.train_step)
        .map_err(|e| Error::Simulator {
            config: config.to_string(),
            message: e.to_string(),
        })?;
    for (step, metrics) in curve {
        let terminal = step == config.train_step;
        history.push(EvaluationRecord {
            iteration,
            wall_order: 0, // assigned by History::push
            config: Configuration {
                mixture: config.mixture.clone(),
                model_scale: config.model_scale,
                train_step: step,
            },
            metrics,
            cost_charged: if terminal { cost } else { 0.0 },
        });
    }
    Ok(())
}

/// Draws and evaluates the initial design: Dirichlet(1) mixtures, scales
/// uniform over the scale set, steps at or below the cap (lowest rung by
/// default). The total cost is checked against the ledger before any
/// evaluation runs. Returns the history and hyperparameters fitted on it.
pub fn initialize(
    space: &SearchSpace,
    cost_model: &CostModel,
    ledger: &mut BudgetLedger,
    simulator: &dyn Simulator,
    metric: &str,
    options: &MfmsOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(History, GpHyperparams)> {
    if options.n_init < 2 {
        return Err(Error::invalid(format!(
            "initialization needs at least 2 configurations to fit hyperparameters, got {}",
            options.n_init
        )));
    }
    let cap = options.init_step_cap.unwrap_or_else(|| space.lowest_step());
    let allowed_steps = space.steps_through(cap);
    if allowed_steps.is_empty() {
        return Err(Error::invalid(format!(
            "init step cap {cap} is below the lowest step-grid rung"
        )));
    }

    let configs: Vec<Configuration> = (0..options.n_init)
        .map(|_| {
            Ok(Configuration {
                mixture: MixtureWeights::sample_dirichlet(space.mixture_dimension, 1.0, rng)?,
                model_scale: space.scales[rng.random_range(0..space.scales.len())],
                train_step: allowed_steps[rng.random_range(0..allowed_steps.len())],
            })
        })
        .collect::<Result<_>>()?;
    let total_cost: f64 = configs
        .iter()
        .map(|c| cost_model.cost(c.model_scale, c.train_step))
        .sum();
    if !ledger.can_afford(total_cost) {
        return Err(Error::BudgetExhausted {
            needed: total_cost,
            remaining: ledger.remaining(),
        });
    }

    let mut history = History::new();
    for config in &configs {
        observe(&mut history, ledger, simulator, cost_model, space, config, 0)?;
    }

    let transform = InputTransform::for_space(space);
    let observations = history.framed_observations(metric)?;
    let init_hp = GpHyperparams::default_init(options.distance_kind);
    let fitted = fit_hyperparams(
        &observations,
        &init_hp,
        &transform,
        options.hyperparam_learning_rate,
        options.hyperparam_iterations,
    )?;
    Ok((history, fitted))
}

/// Hyperparameter refits are due every `base` iterations on small
/// histories, stretching as the history (and with it the cubic refit
/// cost) grows.
fn refit_due(base: usize, iterations_since: usize, history_len: usize) -> bool {
    let interval = base * (1 + history_len / 300);
    iterations_since >= interval
}

/// Runs the full surrogate-guided loop against `simulator` under a budget,
/// optimizing `metric` toward the target (scale, step) of `space`.
pub fn run_mfms(
    space: &SearchSpace,
    cost_model: &CostModel,
    budget: f64,
    metric: &str,
    simulator: &dyn Simulator,
    options: &MfmsOptions,
    seed: u64,
) -> Result<RunOutcome> {
    let direction = MetricDirection::of_name(metric)?;
    if simulator.mixture_dimension() != space.mixture_dimension {
        return Err(Error::invalid(format!(
            "search space has {} datasets but the simulator expects {}",
            space.mixture_dimension,
            simulator.mixture_dimension()
        )));
    }
    let mut ledger = BudgetLedger::new(budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = InputTransform::for_space(space);

    let (mut history, mut live_hp) = initialize(
        space,
        cost_model,
        &mut ledger,
        simulator,
        metric,
        options,
        &mut rng,
    )?;

    let mut fullscale = FullScaleTracker::new(direction, space);
    fullscale.update(&history, metric, &ledger, simulator, cost_model)?;

    let incumbent = history
        .best_for(metric)?
        .map(|(_, v)| direction.framed(v))
        .expect("initialization produced observations");
    let mut state = AcquisitionState::new(incumbent);
    let mut iterations_since_refit = 0usize;

    let mut iteration = 0usize;
    loop {
        iteration += 1;
        if let Some(cap) = options.max_iterations {
            if iteration > cap {
                break;
            }
        }
        let observations = history.framed_observations(metric)?;
        let model = GpModel::new(live_hp.clone(), transform.clone())?;
        let posterior = model.fit(&observations)?;
        state.incumbent = observations
            .iter()
            .map(|&(_, y)| y)
            .fold(f64::INFINITY, f64::min);

        let selection = select_next(
            &posterior,
            &mut state,
            space,
            cost_model,
            &mut live_hp,
            ledger.remaining(),
            options.restarts,
            &mut rng,
        )?;
        let selection = match selection {
            Some(s) => s,
            None => break, // nothing affordable: graceful termination
        };
        observe(
            &mut history,
            &mut ledger,
            simulator,
            cost_model,
            space,
            &selection.config,
            iteration,
        )?;
        state.decay_alpha();
        fullscale.update(&history, metric, &ledger, simulator, cost_model)?;

        iterations_since_refit += 1;
        if refit_due(options.refit_interval, iterations_since_refit, history.len())
            || state.shrinks_since_refit >= options.shrink_refit_threshold
        {
            let observations = history.framed_observations(metric)?;
            live_hp = fit_hyperparams(
                &observations,
                &live_hp,
                &transform,
                options.hyperparam_learning_rate,
                options.hyperparam_iterations,
            )?;
            iterations_since_refit = 0;
            state.shrinks_since_refit = 0;
        }
    }

    let (best_record, best_value) = history
        .best_for(metric)?
        .expect("non-empty history");
    let best_config = best_record.config.clone();
    let curve = BestSoFarCurve::from_history(&history, metric)?;
    debug_assert!((history.total_cost() - ledger.spent()).abs() < 1e-9);
    Ok(RunOutcome {
        method: "mfms-gp",
        best_mixture: best_config.mixture.clone(),
        best_config,
        best_value,
        history,
        curve,
        fullscale_curve: Some(fullscale.curve),
        spent: ledger.spent(),
        budget: ledger.total(),
        gp_hyperparams: Some(live_hp),
    })
}

/// Tracks the "train the current best mixture at full scale" completion
/// series alongside the main loop.
struct FullScaleTracker {
    curve: BestSoFarCurve,
    target_scale: u64,
    target_step: u64,
    last_best_order: Option<usize>,
}

impl FullScaleTracker {
    fn new(direction: MetricDirection, space: &SearchSpace) -> Self {
        FullScaleTracker {
            curve: BestSoFarCurve::new(direction),
            target_scale: space.target_scale,
            target_step: space.target_step,
            last_best_order: None,
        }
    }

    fn update(
        &mut self,
        history: &History,
        metric: &str,
        ledger: &BudgetLedger,
        simulator: &dyn Simulator,
        cost_model: &CostModel,
    ) -> Result<()> {
        let (best, _) = match history.best_for(metric)? {
            Some(b) => b,
            None => return Ok(()),
        };
        if self.last_best_order == Some(best.wall_order) {
            return Ok(());
        }
        self.last_best_order = Some(best.wall_order);
        let config = Configuration {
            mixture: best.config.mixture.clone(),
            model_scale: self.target_scale,
            train_step: self.target_step,
        };
        let metrics = simulator.evaluate(&config)?;
        let full_cost = cost_model.cost(self.target_scale, self.target_step);
        self.curve
            .push_observation(ledger.spent() + full_cost, metrics.get(metric)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{acceptance_surface, SurfaceSpec};

    fn small_space() -> SearchSpace {
        SearchSpace::new(
            5,
            vec![20_000_000, 60_000_000],
            vec![6_000, 12_000],
            60_000_000,
            12_000,
        )
        .unwrap()
    }

    fn surface() -> SurfaceSpec {
        acceptance_surface(42).unwrap()
    }

    #[test]
    fn observe_expands_training_curves_and_charges_once() {
        let spec = surface();
        let space = SearchSpace::paper_default(5).unwrap();
        let cost_model = CostModel::default();
        let mut ledger = BudgetLedger::new(1e9).unwrap();
        let mut history = History::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = MixtureWeights::sample_dirichlet(5, 1.0, &mut rng).unwrap();

        let config = Configuration {
            mixture: w.clone(),
            model_scale: 1_000_000_000,
            train_step: 19_700,
        };
        observe(&mut history, &mut ledger, &spec, &cost_model, &space, &config, 1).unwrap();
        assert_eq!(history.len(), 3);
        assert_eq!(history.records[0].cost_charged, 0.0);
        assert_eq!(history.records[1].cost_charged, 0.0);
        assert_eq!(history.records[2].cost_charged, 19_700.0);
        assert_eq!(ledger.spent(), 19_700.0);

        let config = Configuration {
            mixture: w.clone(),
            model_scale: 1_000_000_000,
            train_step: 6_000,
        };
        observe(&mut history, &mut ledger, &spec, &cost_model, &space, &config, 2).unwrap();
        assert_eq!(history.len(), 4);

        let config = Configuration {
            mixture: w,
            model_scale: 500_000_000,
            train_step: 12_000,
        };
        observe(&mut history, &mut ledger, &spec, &cost_model, &space, &config, 3).unwrap();
        assert_eq!(history.len(), 6);
        assert_eq!(history.records[5].cost_charged, 0.5 * 12_000.0);
        assert_eq!(history.total_cost(), ledger.spent());
    }

    #[test]
    fn initialization_cost_arithmetic_matches_the_cost_model() {
        // single scale so every draw costs the same
        let spec = surface();
        let space =
            SearchSpace::new(5, vec![1_000_000_000], vec![6_000, 12_000], 1_000_000_000, 12_000)
                .unwrap();
        let cost_model = CostModel::default();
        let mut ledger = BudgetLedger::new(1e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let options = MfmsOptions {
            hyperparam_iterations: 5,
            ..Default::default()
        };
        let (history, _) = initialize(
            &space,
            &cost_model,
            &mut ledger,
            &spec,
            "val_arxiv",
            &options,
            &mut rng,
        )
        .unwrap();
        assert_eq!(history.len(), 20);
        assert_eq!(ledger.spent(), 20.0 * 6_000.0);
        assert!(history.records.iter().all(|r| r.config.train_step == 6_000));
    }

    #[test]
    fn initialization_rejects_degenerate_sizes_and_budgets() {
        let spec = surface();
        let space = small_space();
        let cost_model = CostModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let options = MfmsOptions {
            n_init: 0,
            ..Default::default()
        };
        let mut ledger = BudgetLedger::new(1e9).unwrap();
        assert!(initialize(&space, &cost_model, &mut ledger, &spec, "val_arxiv", &options, &mut rng)
            .is_err());

        // too small a budget fails before any evaluation
        let options = MfmsOptions::default();
        let mut ledger = BudgetLedger::new(100.0).unwrap();
        let err = initialize(&space, &cost_model, &mut ledger, &spec, "val_arxiv", &options, &mut rng);
        assert!(matches!(err, Err(Error::BudgetExhausted { .. })));
        assert_eq!(ledger.spent(), 0.0);
    }

    #[test]
    fn initialization_is_deterministic_given_seed() {
        let spec = surface();
        let space = small_space();
        let cost_model = CostModel::default();
        let options = MfmsOptions {
            hyperparam_iterations: 3,
            ..Default::default()
        };
        let run = || {
            let mut ledger = BudgetLedger::new(1e9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            initialize(&space, &cost_model, &mut ledger, &spec, "val_arxiv", &options, &mut rng)
                .unwrap()
        };
        let (h1, hp1) = run();
        let (h2, hp2) = run();
        assert_eq!(h1, h2);
        assert_eq!(hp1, hp2);
    }

    #[test]
    fn budget_equal_to_initialization_means_zero_loop_iterations() {
        let spec = surface();
        let space = small_space();
        let cost_model = CostModel::default();
        // pre-compute the exact initialization cost with the same seed
        let mut probe_ledger = BudgetLedger::new(1e12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let options = MfmsOptions {
            hyperparam_iterations: 3,
            ..Default::default()
        };
        initialize(&space, &cost_model, &mut probe_ledger, &spec, "val_arxiv", &options, &mut rng)
            .unwrap();
        let init_cost = probe_ledger.spent();

        let outcome = run_mfms(&space, &cost_model, init_cost, "val_arxiv", &spec, &options, 5)
            .unwrap();
        assert_eq!(outcome.history.len(), 20);
        assert!(outcome.history.records.iter().all(|r| r.iteration == 0));
        assert_eq!(outcome.spent, init_cost);
    }

    #[test]
    fn runs_are_deterministic_and_respect_invariants() {
        let spec = surface();
        let space = small_space();
        let cost_model = CostModel::default();
        let options = MfmsOptions {
            hyperparam_iterations: 10,
            restarts: 2,
            ..Default::default()
        };
        let budget = 6_000.0;
        let a = run_mfms(&space, &cost_model, budget, "val_arxiv", &spec, &options, 11).unwrap();
        let b = run_mfms(&space, &cost_model, budget, "val_arxiv", &spec, &options, 11).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_mixture, b.best_mixture);

        // accounting and domain invariants
        assert!(a.spent <= budget);
        assert_eq!(a.history.total_cost(), a.spent);
        assert!(a.history.len() > 20, "loop never ran");
        for r in &a.history.records {
            assert!(space.contains(r.config.model_scale, r.config.train_step));
        }
        // monotone best-so-far
        for w in a.curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        let fullscale = a.fullscale_curve.as_ref().unwrap();
        assert!(!fullscale.points.is_empty());
        for w in fullscale.points.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn accuracy_metrics_maximize(){
        let spec = surface();
        let space = small_space();
        let cost_model = CostModel::default();
        let options = MfmsOptions {
            hyperparam_iterations: 5,
            restarts: 2,
            max_iterations: Some(3),
            ..Default::default()
        };
        let outcome =
            run_mfms(&space, &cost_model, 5_000.0, "acc_piqa", &spec, &options, 13).unwrap();
        for w in outcome.curve.points.windows(2) {
            assert!(w[1].1 >= w[0].1, "accuracy best-so-far must be nondecreasing");
        }
    }
}
