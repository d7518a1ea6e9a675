//! Seeded synthetic ground-truth surfaces standing in for real
//! pre-training runs, plus the trainable MLP performance predictor that
//! can replace them as the evaluation backend.
//!
//! Each loss metric follows an exponential response to the mixture with a
//! scale-coupled sensitivity vector plus power-law improvements in model
//! scale and training step:
//!
//! `L(w, m, z) = c + A exp(-<t0 + t1 ln(m/m_ref), w>)
//!             + B (m/m_ref)^-beta + C (z/z_ref)^-gamma + noise`
//!
//! The coupling `t1` makes the optimal mixture scale-dependent. Accuracy
//! metrics are monotone decreasing transforms of a designated loss.
//! Observation noise is a pure function of (master seed, w, m, z, metric),
//! so repeated queries agree bit for bit across processes.

mod mlp;
mod runlog;

pub use mlp::{
    encode_inputs, mlp_train, r_squared, MlpPredictor, MlpTrainOptions, MlpTrainOutcome,
    PredictorBackend, MLP_INPUT_DIM, MLP_LAYER_DIMS,
};
pub use runlog::{synthesize_rows_at, synthesize_runlog, RunLog, RunRow, RUNLOG_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    metric_index, MetricDirection, Metrics, LOSS_METRIC_COUNT, METRIC_COUNT, METRIC_NAMES,
};
use crate::mixture::{simplex_distance, simplex_lattice, MixtureWeights, SimplexDistanceKind};
use crate::parallel;
use crate::space::{Configuration, DEFAULT_SCALES, DEFAULT_STEPS};

/// Anything that can evaluate a configuration on all 11 metrics.
pub trait Simulator: Sync {
    fn evaluate(&self, config: &Configuration) -> Result<Metrics>;

    /// The full training curve: one entry per grid step up to
    /// `up_to_step` inclusive, each consistent with `evaluate`.
    fn curve(
        &self,
        mixture: &MixtureWeights,
        scale: u64,
        up_to_step: u64,
    ) -> Result<Vec<(u64, Metrics)>>;

    fn mixture_dimension(&self) -> usize;
}

/// Parameters of one loss metric's response surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub offset: f64,
    pub mix_amplitude: f64,
    pub mix_sensitivity: Vec<f64>,
    pub scale_coupling: Vec<f64>,
    pub scale_amplitude: f64,
    pub scale_power: f64,
    pub step_amplitude: f64,
    pub step_power: f64,
}

/// Accuracy as a saturating transform of a designated loss:
/// `floor + (1 - floor) * sigmoid(shift - slope * loss)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTerm {
    /// Index of the source loss metric.
    pub source_metric: usize,
    pub floor: f64,
    pub shift: f64,
    pub slope: f64,
}

pub const SURFACE_FORMAT_TAG: &str = "surface-spec-v1";

/// Seeded parameterization of a synthetic ground-truth performance field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub format: String,
    pub n_datasets: usize,
    pub scales: Vec<u64>,
    pub steps: Vec<u64>,
    pub scale_ref: f64,
    pub step_ref: f64,
    pub losses: Vec<LossTerm>,
    pub accuracies: Vec<AccuracyTerm>,
    pub noise_sd: f64,
    pub master_seed: u64,
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.format != SURFACE_FORMAT_TAG {
            return Err(Error::invalid(format!(
                "unsupported surface format tag {:?}",
                self.format
            )));
        }
        if self.n_datasets < 2 {
            return Err(Error::invalid("surface needs at least 2 datasets"));
        }
        if self.scales.is_empty() || self.steps.is_empty() {
            return Err(Error::invalid("surface needs non-empty scale and step grids"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1])
            || self.steps.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("scale and step grids must be strictly ascending"));
        }
        if !(self.scale_ref > 0.0) || !(self.step_ref > 0.0) {
            return Err(Error::invalid("surface reference scales must be positive"));
        }
        if self.losses.len() != LOSS_METRIC_COUNT {
            return Err(Error::invalid(format!(
                "surface needs {LOSS_METRIC_COUNT} loss terms, got {}",
                self.losses.len()
            )));
        }
        if self.accuracies.len() != METRIC_COUNT - LOSS_METRIC_COUNT {
            return Err(Error::invalid(format!(
                "surface needs {} accuracy terms, got {}",
                METRIC_COUNT - LOSS_METRIC_COUNT,
                self.accuracies.len()
            )));
        }
        for (j, term) in self.losses.iter().enumerate() {
            if !(term.offset > 0.0) {
                return Err(Error::invalid(format!("loss {j}: offset must be positive")));
            }
            if !(term.mix_amplitude > 0.0) {
                return Err(Error::invalid(format!("loss {j}: mix amplitude must be positive")));
            }
            if term.mix_sensitivity.len() != self.n_datasets
                || term.scale_coupling.len() != self.n_datasets
            {
                return Err(Error::invalid(format!(
                    "loss {j}: sensitivity vectors must have length {}",
                    self.n_datasets
                )));
            }
            if !(term.scale_amplitude >= 0.0) || !(term.step_amplitude >= 0.0) {
                return Err(Error::invalid(format!("loss {j}: amplitudes must be nonnegative")));
            }
            if !(term.scale_power > 0.0) || !(term.step_power > 0.0) {
                return Err(Error::invalid(format!("loss {j}: powers must be positive")));
            }
            let finite = term.mix_sensitivity.iter().chain(&term.scale_coupling).all(|x| x.is_finite());
            if !finite {
                return Err(Error::invalid(format!("loss {j}: non-finite sensitivity")));
            }
        }
        for (j, term) in self.accuracies.iter().enumerate() {
            if term.source_metric >= LOSS_METRIC_COUNT {
                return Err(Error::invalid(format!(
                    "accuracy {j}: source metric index {} out of range",
                    term.source_metric
                )));
            }
            if !(0.0..1.0).contains(&term.floor) {
                return Err(Error::invalid(format!("accuracy {j}: floor must be in [0, 1)")));
            }
            if !(term.slope > 0.0) {
                return Err(Error::invalid(format!("accuracy {j}: slope must be positive")));
            }
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid("noise standard deviation must be nonnegative"));
        }
        Ok(())
    }

    fn check_in_grid(&self, config: &Configuration) -> Result<()> {
        if config.mixture.dimension() != self.n_datasets {
            return Err(Error::invalid(format!(
                "configuration has {} datasets, surface expects {}",
                config.mixture.dimension(),
                self.n_datasets
            )));
        }
        if !self.scales.contains(&config.model_scale) {
            return Err(Error::invalid(format!(
                "model scale {} is not in the surface's scale set",
                config.model_scale
            )));
        }
        if !self.steps.contains(&config.train_step) {
            return Err(Error::invalid(format!(
                "train step {} is not in the surface's step grid",
                config.train_step
            )));
        }
        Ok(())
    }

    /// Noise-free value of metric `index` at (w, m, z).
    pub fn noiseless_value(&self, index: usize, w: &MixtureWeights, scale: u64, step: u64) -> f64 {
        if index < LOSS_METRIC_COUNT {
            self.noiseless_loss(index, w, scale, step)
        } else {
            let term = &self.accuracies[index - LOSS_METRIC_COUNT];
            let loss = self.noiseless_loss(term.source_metric, w, scale, step);
            accuracy_transform(term, loss)
        }
    }

    fn noiseless_loss(&self, j: usize, w: &MixtureWeights, scale: u64, step: u64) -> f64 {
        let term = &self.losses[j];
        let log_scale = (scale as f64 / self.scale_ref).ln();
        let mut exponent = 0.0;
        for (i, &wi) in w.as_slice().iter().enumerate() {
            exponent += (term.mix_sensitivity[i] + term.scale_coupling[i] * log_scale) * wi;
        }
        term.offset
            + term.mix_amplitude * (-exponent).exp()
            + term.scale_amplitude * (scale as f64 / self.scale_ref).powf(-term.scale_power)
            + term.step_amplitude * (step as f64 / self.step_ref).powf(-term.step_power)
    }

    /// Seeded observation noise: a pure function of (master seed, w, m, z,
    /// loss index), identical across processes.
    fn noise(&self, w: &MixtureWeights, scale: u64, step: u64, j: usize) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0;
        }
        let mut h = self.master_seed;
        for &wi in w.as_slice() {
            h = splitmix64(h ^ wi.to_bits());
        }
        h = splitmix64(h ^ scale);
        h = splitmix64(h ^ step);
        h = splitmix64(h ^ j as u64);
        let a = splitmix64(h);
        let b = splitmix64(h ^ 0xD1B5_4A32_D192_ED03);
        let u1 = ((a >> 11) + 1) as f64 / (1u64 << 53) as f64; // (0, 1]
        let u2 = (b >> 11) as f64 / (1u64 << 53) as f64; // [0, 1)
        self.noise_sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// All 11 metrics at a configuration, with seeded noise on the losses;
    /// accuracies inherit the noise of their source loss, so per-candidate
    /// loss and derived-accuracy rankings always agree.
    pub fn evaluate_metrics(&self, config: &Configuration) -> Result<Metrics> {
        self.check_in_grid(config)?;
        let mut values = [0.0; METRIC_COUNT];
        for j in 0..LOSS_METRIC_COUNT {
            values[j] = self.noiseless_loss(j, &config.mixture, config.model_scale, config.train_step)
                + self.noise(&config.mixture, config.model_scale, config.train_step, j);
        }
        for (j, term) in self.accuracies.iter().enumerate() {
            values[LOSS_METRIC_COUNT + j] = accuracy_transform(term, values[term.source_metric]);
        }
        Ok(Metrics(values))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("surface serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: SurfaceSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

fn accuracy_transform(term: &AccuracyTerm, loss: f64) -> f64 {
    let logistic = 1.0 / (1.0 + (-(term.shift - term.slope * loss)).exp());
    term.floor + (1.0 - term.floor) * logistic
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Simulator for SurfaceSpec {
    fn evaluate(&self, config: &Configuration) -> Result<Metrics> {
        self.evaluate_metrics(config)
    }

    fn curve(
        &self,
        mixture: &MixtureWeights,
        scale: u64,
        up_to_step: u64,
    ) -> Result<Vec<(u64, Metrics)>> {
        if !self.steps.contains(&up_to_step) {
            return Err(Error::invalid(format!(
                "curve endpoint {up_to_step} is not in the surface's step grid"
            )));
        }
        self.steps
            .iter()
            .copied()
            .filter(|&z| z <= up_to_step)
            .map(|z| {
                let config = Configuration {
                    mixture: mixture.clone(),
                    model_scale: scale,
                    train_step: z,
                };
                Ok((z, self.evaluate_metrics(&config)?))
            })
            .collect()
    }

    fn mixture_dimension(&self) -> usize {
        self.n_datasets
    }
}

/// Exhaustive noise-free optimum of one metric over the simplex lattice at
/// the given resolution: argmin for losses, argmax for accuracies.
pub fn surface_optimum(
    spec: &SurfaceSpec,
    metric: &str,
    scale: u64,
    step: u64,
    resolution: f64,
) -> Result<(MixtureWeights, f64)> {
    let index = metric_index(metric)?;
    let direction = MetricDirection::of_index(index);
    if !spec.scales.contains(&scale) || !spec.steps.contains(&step) {
        return Err(Error::invalid(format!(
            "optimum requested off-grid at scale {scale}, step {step}"
        )));
    }
    let lattice = simplex_lattice(spec.n_datasets, resolution)?;
    let chunk = 8192;
    // per-chunk best, merged sequentially in chunk order so ties always
    // resolve to the lowest lattice index
    let chunk_bests: Vec<Option<(usize, f64)>> = parallel::map_ranges(lattice.len(), chunk, |range| {
        let mut best: Option<(usize, f64)> = None;
        let mut point_index = range.start;
        for point in lattice.iter_range(range) {
            let w = MixtureWeights::new(point).expect("lattice points are valid mixtures");
            let value = spec.noiseless_value(index, &w, scale, step);
            let improves = match best {
                None => true,
                Some((_, b)) => direction.is_improvement(value, b),
            };
            if improves {
                best = Some((point_index, value));
            }
            point_index += 1;
        }
        best
    });
    let mut best: Option<(usize, f64)> = None;
    for cb in chunk_bests.into_iter().flatten() {
        let improves = match best {
            None => true,
            Some((_, b)) => direction.is_improvement(cb.1, b),
        };
        if improves {
            best = Some(cb);
        }
    }
    let (idx, value) = best.ok_or_else(|| Error::invalid("empty lattice"))?;
    Ok((MixtureWeights::new(lattice.point(idx))?, value))
}

/// Metric the minted acceptance surfaces are tuned around.
pub const ACCEPTANCE_METRIC: &str = "val_arxiv";

/// Mints a surface whose optimal mixture flips between the smallest scales
/// and the target scale (total-variation separation of the two optima at
/// least 0.1, checked against the grid oracle), with moderate observation
/// noise. Deterministic in the seed.
pub fn acceptance_surface(seed: u64) -> Result<SurfaceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = mint_surface(&mut rng, MintProfile::Acceptance)?;
    let designated = ACCEPTANCE_METRIC;
    let top_step = *spec.steps.last().expect("non-empty");
    let (w_small, _) = surface_optimum(&spec, designated, spec.scales[0], top_step, 0.05)?;
    let (w_large, _) =
        surface_optimum(&spec, designated, *spec.scales.last().unwrap(), top_step, 0.05)?;
    let separation = simplex_distance(&w_small, &w_large, SimplexDistanceKind::TotalVariation)?;
    if separation < 0.1 {
        return Err(Error::invalid(format!(
            "minted surface has scale-dependent optima separated by only {separation}"
        )));
    }
    Ok(spec)
}

/// Mints a surface with strong cross-scale correlation (small coupling)
/// for predictor-transfer experiments.
pub fn transfer_surface(seed: u64) -> Result<SurfaceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mint_surface(&mut rng, MintProfile::Transfer)
}

enum MintProfile {
    Acceptance,
    Transfer,
}

fn mint_surface(rng: &mut ChaCha8Rng, profile: MintProfile) -> Result<SurfaceSpec> {
    let n = 5;
    let scales = DEFAULT_SCALES.to_vec();
    let steps = DEFAULT_STEPS.to_vec();
    let scale_ref = 1e9;
    let step_ref = 19_700.0;
    let designated = metric_index(ACCEPTANCE_METRIC)?;

    let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        Normal::new(0.0, sd).expect("valid sd").sample(rng)
    };

    let mut losses = Vec::with_capacity(LOSS_METRIC_COUNT);
    for j in 0..LOSS_METRIC_COUNT {
        let offset = rng.random_range(1.5..3.0);
        let mix_amplitude = rng.random_range(0.6..1.0);
        let (mix_sensitivity, scale_coupling) = match profile {
            MintProfile::Acceptance if j == designated => {
                flip_coupled_sensitivity(rng, n, &scales, scale_ref)
            }
            MintProfile::Acceptance => {
                let t0: Vec<f64> = (0..n).map(|_| normal(rng, 0.5)).collect();
                let t1: Vec<f64> = (0..n).map(|_| normal(rng, 0.08)).collect();
                (t0, t1)
            }
            MintProfile::Transfer => {
                let t0: Vec<f64> = (0..n).map(|_| normal(rng, 0.5)).collect();
                let t1: Vec<f64> = (0..n).map(|_| normal(rng, 0.04)).collect();
                (t0, t1)
            }
        };
        losses.push(LossTerm {
            offset,
            mix_amplitude,
            mix_sensitivity,
            scale_coupling,
            scale_amplitude: rng.random_range(0.3..0.6),
            scale_power: rng.random_range(0.2..0.4),
            step_amplitude: rng.random_range(0.2..0.4),
            step_power: rng.random_range(0.3..0.5),
        });
    }

    // task accuracies ride on representative validation losses; floors
    // echo 4-way and binary chance levels
    let accuracy_sources = [(1usize, 0.25), (7, 0.25), (5, 0.5)];
    let accuracies = accuracy_sources
        .iter()
        .map(|&(source_metric, floor)| {
            let slope = rng.random_range(1.0..2.0);
            AccuracyTerm {
                source_metric,
                floor,
                shift: slope * (losses[source_metric].offset + 1.0),
                slope,
            }
        })
        .collect();

    let spec = SurfaceSpec {
        format: SURFACE_FORMAT_TAG.to_string(),
        n_datasets: n,
        scales,
        steps,
        scale_ref,
        step_ref,
        losses,
        accuracies,
        noise_sd: match profile {
            MintProfile::Acceptance => 0.01,
            MintProfile::Transfer => 0.02,
        },
        master_seed: rng.random(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Rejection-samples sensitivity vectors whose best mixture coordinate
/// flips between the smallest scale and the upper scales, with a clear
/// margin at both ends.
fn flip_coupled_sensitivity(
    rng: &mut ChaCha8Rng,
    n: usize,
    scales: &[u64],
    scale_ref: f64,
) -> (Vec<f64>, Vec<f64>) {
    let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        Normal::new(0.0, sd).expect("valid sd").sample(rng)
    };
    loop {
        let t0: Vec<f64> = (0..n).map(|_| normal(rng, 0.5)).collect();
        let t1: Vec<f64> = (0..n).map(|_| normal(rng, 0.15)).collect();
        let argmax_with_margin = |scale: u64| -> (usize, f64) {
            let ls = (scale as f64 / scale_ref).ln();
            let v: Vec<f64> = (0..n).map(|i| t0[i] + t1[i] * ls).collect();
            let mut best = 0;
            for i in 1..n {
                if v[i] > v[best] {
                    best = i;
                }
            }
            let second = v
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != best)
                .map(|(_, &x)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            (best, v[best] - second)
        };
        let (small_best, small_margin) = argmax_with_margin(scales[0]);
        let top_three: Vec<(usize, f64)> = scales[scales.len().saturating_sub(3)..]
            .iter()
            .map(|&m| argmax_with_margin(m))
            .collect();
        let large_best = top_three.last().unwrap().0;
        let stable_at_large = top_three.iter().all(|&(b, _)| b == large_best);
        let large_margin = top_three.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
        if small_best != large_best
            && stable_at_large
            && small_margin > 0.15
            && large_margin > 0.25
        {
            return (t0, t1);
        }
    }
}
