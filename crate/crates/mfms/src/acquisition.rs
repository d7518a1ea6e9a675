//! Expected improvement, cost-normalized EIpu with alpha decay, projected
//! gradient EI maximization over the simplex, and the per-iteration
//! configuration selection with its low-EI exploration trigger.
//!
//! All metric values here are minimization-framed: losses as-is,
//! accuracies negated upstream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpPosterior, PosteriorSlice};
use crate::mixture::{project_to_simplex, MixtureWeights};
use crate::parallel;
use crate::space::{Configuration, CostModel, SearchSpace};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310002;

/// Gradient-ascent controls for [`maximize_ei_over_simplex`].
const ASCENT_MAX_ITERS: usize = 100;
const ASCENT_INITIAL_STEP: f64 = 0.1;
const ASCENT_MAX_HALVINGS: usize = 20;
const ASCENT_TOLERANCE: f64 = 1e-10;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Closed-form expected improvement under a Gaussian posterior, for
/// minimization: `E[max(incumbent - f, 0)]`.
pub fn expected_improvement(mean: f64, variance: f64, incumbent: f64) -> Result<f64> {
    if variance < -1e-12 || !variance.is_finite() {
        return Err(Error::invalid(format!("variance must be nonnegative, got {variance}")));
    }
    let variance = variance.max(0.0);
    let gap = incumbent - mean;
    if variance == 0.0 {
        return Ok(gap.max(0.0));
    }
    let sigma = variance.sqrt();
    let u = gap / sigma;
    Ok((gap * std_normal_cdf(u) + sigma * std_normal_pdf(u)).max(0.0))
}

/// Expected improvement per unit cost with decaying cost exponent:
/// `ei / cost^alpha`.
pub fn eipu(ei: f64, cost: f64, alpha: f64) -> Result<f64> {
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::invalid(format!("cost must be positive, got {cost}")));
    }
    Ok(ei / cost.powf(alpha))
}

/// Mutable acquisition state carried across optimizer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionState {
    /// Cost exponent; starts at 1 and decays by 1% per optimization step.
    pub alpha: f64,
    pub alpha_decay: f64,
    /// Exploration trigger: if the best raw EI over the whole grid falls
    /// below this, kernel length scales shrink.
    pub ei_threshold: f64,
    pub lengthscale_shrink: f64,
    /// Best minimization-framed value observed at any fidelity.
    pub incumbent: f64,
    /// Shrink firings since the last hyperparameter refit.
    pub shrinks_since_refit: usize,
}

impl AcquisitionState {
    pub fn new(incumbent: f64) -> Self {
        AcquisitionState {
            alpha: 1.0,
            alpha_decay: 0.99,
            ei_threshold: 1e-4,
            lengthscale_shrink: 0.95,
            incumbent,
            shrinks_since_refit: 0,
        }
    }

    /// One optimization step of cost-exponent decay.
    pub fn decay_alpha(&mut self) {
        self.alpha *= self.alpha_decay;
    }
}

fn ei_at(slice: &PosteriorSlice<'_>, w: &MixtureWeights, incumbent: f64) -> Result<f64> {
    let (mean, variance) = slice.predict(w)?;
    expected_improvement(mean, variance, incumbent)
}

/// Analytic EI gradient through the posterior moments (chain rule).
fn ei_gradient(slice: &PosteriorSlice<'_>, w: &MixtureWeights, incumbent: f64) -> Result<Vec<f64>> {
    let p = slice.predict_with_gradient(w)?;
    let gap = incumbent - p.mean;
    let sigma = p.variance.max(0.0).sqrt();
    let dim = w.dimension();
    if sigma < 1e-12 {
        // degenerate Gaussian: EI reduces to max(gap, 0)
        if gap > 0.0 {
            return Ok(p.dmean_dw.iter().map(|d| -d).collect());
        }
        return Ok(vec![0.0; dim]);
    }
    let u = gap / sigma;
    let cdf = std_normal_cdf(u);
    let pdf = std_normal_pdf(u);
    let mut grad = vec![0.0; dim];
    for j in 0..dim {
        let dsigma = p.dvariance_dw[j] / (2.0 * sigma);
        grad[j] = -cdf * p.dmean_dw[j] + pdf * dsigma;
    }
    Ok(grad)
}

/// Maximizes EI over the simplex at fixed (scale, step) by projected
/// gradient ascent from `restarts` Dirichlet(1) starting points. Returns
/// the best terminal mixture and its EI; the result is never below the EI
/// of any start point.
pub fn maximize_ei_over_simplex<R: Rng + ?Sized>(
    posterior: &GpPosterior,
    scale: u64,
    step: u64,
    incumbent: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<(MixtureWeights, f64)> {
    if restarts == 0 {
        return Err(Error::invalid("EI maximization needs at least one restart"));
    }
    let dim = posterior.inputs()[0].mixture.dimension();
    let slice = posterior.at_fidelity(scale, step);
    let mut best: Option<(MixtureWeights, f64)> = None;

    for _ in 0..restarts {
        let start = MixtureWeights::sample_dirichlet(dim, 1.0, rng)?;
        let mut w = start;
        let mut ei = ei_at(&slice, &w, incumbent).unwrap_or(0.0);
        let mut restart_best = (w.clone(), ei);

        for _ in 0..ASCENT_MAX_ITERS {
            let grad = match ei_gradient(&slice, &w, incumbent) {
                Ok(g) if g.iter().all(|x| x.is_finite()) => g,
                _ => break, // fall back to this restart's best iterate
            };
            let mut step_size = ASCENT_INITIAL_STEP;
            let mut accepted: Option<(MixtureWeights, f64)> = None;
            for _ in 0..=ASCENT_MAX_HALVINGS {
                let raw: Vec<f64> = w
                    .as_slice()
                    .iter()
                    .zip(&grad)
                    .map(|(x, g)| x + step_size * g)
                    .collect();
                if let Ok(cand) = project_to_simplex(&raw) {
                    if let Ok(cand_ei) = ei_at(&slice, &cand, incumbent) {
                        if cand_ei > ei {
                            accepted = Some((cand, cand_ei));
                            break;
                        }
                    }
                }
                step_size *= 0.5;
            }
            match accepted {
                None => break,
                Some((cand, cand_ei)) => {
                    let improvement = cand_ei - ei;
                    w = cand;
                    ei = cand_ei;
                    if ei > restart_best.1 {
                        restart_best = (w.clone(), ei);
                    }
                    if improvement < ASCENT_TOLERANCE {
                        break;
                    }
                }
            }
        }

        match &best {
            Some((_, current)) if restart_best.1 <= *current => {}
            _ => best = Some(restart_best),
        }
    }
    Ok(best.expect("at least one restart ran"))
}

/// The outcome of one selection sweep over the (scale, step) grid.
#[derive(Debug, Clone)]
pub struct Selection {
    pub config: Configuration,
    pub ei: f64,
    pub eipu: f64,
    pub cost: f64,
    /// Whether the low-EI exploration trigger fired on this sweep.
    pub shrink_fired: bool,
}

#[derive(Debug, Clone)]
struct ScoredPair {
    scale: u64,
    step: u64,
    mixture: MixtureWeights,
    ei: f64,
    eipu: f64,
    cost: f64,
}

/// Argmax over scored pairs: highest EIpu, ties broken by lower cost,
/// then lexicographic (scale, step).
fn pick_best(scored: &[ScoredPair]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scored.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let b = &scored[b];
                s.eipu > b.eipu
                    || (s.eipu == b.eipu && s.cost < b.cost)
                    || (s.eipu == b.eipu
                        && s.cost == b.cost
                        && (s.scale, s.step) < (b.scale, b.step))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Runs the per-(scale, step) EI maximization across the whole grid,
/// scores each pair by EIpu under the current alpha, and returns the best
/// pair affordable within `remaining_budget` (`None` if nothing is).
///
/// If the best raw EI over the full grid falls below the threshold, all
/// three length scales of `live_hyperparams` are multiplied by the shrink
/// factor; the shrink takes effect at the next posterior fit.
pub fn select_next(
    posterior: &GpPosterior,
    state: &mut AcquisitionState,
    space: &SearchSpace,
    cost_model: &CostModel,
    live_hyperparams: &mut GpHyperparams,
    remaining_budget: f64,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Selection>> {
    let pairs = space.pairs();
    if pairs.is_empty() {
        return Err(Error::invalid("empty (scale, step) grid"));
    }
    // derive one seed per pair up front so parallel sweeps stay deterministic
    let seeds: Vec<u64> = pairs.iter().map(|_| rng.random()).collect();
    let incumbent = state.incumbent;
    let alpha = state.alpha;

    let scored: Vec<Result<ScoredPair>> =
        parallel::map_slice(&pairs.iter().copied().zip(seeds).collect::<Vec<_>>(), |&((m, z), seed)| {
            let mut pair_rng = ChaCha8Rng::seed_from_u64(seed);
            let (mixture, ei) =
                maximize_ei_over_simplex(posterior, m, z, incumbent, restarts, &mut pair_rng)?;
            let ei = if ei.is_finite() { ei } else { 0.0 };
            let cost = cost_model.cost(m, z);
            Ok(ScoredPair {
                scale: m,
                step: z,
                mixture,
                ei,
                eipu: eipu(ei, cost, alpha)?,
                cost,
            })
        });
    let scored: Vec<ScoredPair> = scored.into_iter().collect::<Result<_>>()?;

    let max_raw_ei = scored.iter().map(|s| s.ei).fold(f64::NEG_INFINITY, f64::max);
    let shrink_fired = max_raw_ei < state.ei_threshold;
    if shrink_fired {
        live_hyperparams.length_scale_w *= state.lengthscale_shrink;
        live_hyperparams.length_scale_m *= state.lengthscale_shrink;
        live_hyperparams.length_scale_z *= state.lengthscale_shrink;
        state.shrinks_since_refit += 1;
    }

    let affordable: Vec<ScoredPair> = scored
        .into_iter()
        .filter(|s| s.cost <= remaining_budget)
        .collect();
    Ok(pick_best(&affordable).map(|i| {
        let s = &affordable[i];
        Selection {
            config: Configuration {
                mixture: s.mixture.clone(),
                model_scale: s.scale,
                train_step: s.step,
            },
            ei: s.ei,
            eipu: s.eipu,
            cost: s.cost,
            shrink_fired,
        }
    }))
}
