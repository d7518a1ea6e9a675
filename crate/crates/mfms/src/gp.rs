//! Exact Gaussian-process regression over configurations (w, m, z).
//!
//! The covariance is a product of three RBF factors: one over the mixture
//! simplex under a configurable probability distance, and one each over
//! log-transformed model scale and training step. A linear mean in the
//! transformed scale/step coordinates captures the monotone improvement of
//! performance with size and training length. Targets are standardized
//! before fitting and de-standardized on prediction. Hyperparameters are
//! fitted by adaptive-moment gradient ascent on the log marginal
//! likelihood in log-parameter space.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{simplex_distance, simplex_distance_gradient, MixtureWeights, SimplexDistanceKind};
use crate::space::{Configuration, InputTransform};

/// Floor on the learned observation-noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-8;

/// Diagonal jitter ladder tried during factorization, in standardized
/// units: base 1e-6, escalated tenfold up to 1e-2 before giving up.
pub const JITTER_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

const LN_2PI: f64 = 1.8378770664093453;

/// Kernel and mean parameters of the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub length_scale_w: f64,
    pub length_scale_m: f64,
    pub length_scale_z: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Linear-mean coefficients on [1, scale coordinate, step coordinate].
    pub mean_coeffs: Vec<f64>,
    pub distance_kind: SimplexDistanceKind,
}

impl GpHyperparams {
    /// Fitting starts from unit length scales, unit signal variance, and
    /// 1e-2 noise with a zero mean.
    pub fn default_init(distance_kind: SimplexDistanceKind) -> Self {
        GpHyperparams {
            length_scale_w: 1.0,
            length_scale_m: 1.0,
            length_scale_z: 1.0,
            signal_variance: 1.0,
            noise_variance: 1e-2,
            mean_coeffs: vec![0.0; 3],
            distance_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length_scale_w", self.length_scale_w),
            ("length_scale_m", self.length_scale_m),
            ("length_scale_z", self.length_scale_z),
            ("signal_variance", self.signal_variance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "noise_variance must be nonnegative, got {}",
                self.noise_variance
            )));
        }
        if self.mean_coeffs.len() != 3 {
            return Err(Error::invalid(format!(
                "mean_coeffs must have 3 entries, got {}",
                self.mean_coeffs.len()
            )));
        }
        if self.mean_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("mean_coeffs contain non-finite values"));
        }
        Ok(())
    }

    /// Key-value text serialization, one field per line.
    pub fn to_kv_string(&self) -> String {
        let coeffs = self
            .mean_coeffs
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "length_scale_w = {}\nlength_scale_m = {}\nlength_scale_z = {}\nsignal_variance = {}\nnoise_variance = {}\nmean_coeffs = {}\ndistance_kind = {}\n",
            self.length_scale_w,
            self.length_scale_m,
            self.length_scale_z,
            self.signal_variance,
            self.noise_variance,
            coeffs,
            self.distance_kind.as_str(),
        )
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut fields: std::collections::BTreeMap<&str, &str> = Default::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<hyperparams>".into(),
                line: lineno + 1,
                message: "expected `key = value`".into(),
            })?;
            fields.insert(key.trim(), value.trim());
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::invalid(format!("missing hyperparameter field {key}")))
        };
        let parse = |key: &str| -> Result<f64> {
            get(key)?
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad value for {key}: {e}")))
        };
        let mean_coeffs = get("mean_coeffs")?
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad mean coefficient {t}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let hp = GpHyperparams {
            length_scale_w: parse("length_scale_w")?,
            length_scale_m: parse("length_scale_m")?,
            length_scale_z: parse("length_scale_z")?,
            signal_variance: parse("signal_variance")?,
            noise_variance: parse("noise_variance")?,
            mean_coeffs,
            distance_kind: get("distance_kind")?.parse()?,
        };
        hp.validate()?;
        Ok(hp)
    }
}

/// Hyperparameters plus the input transform: everything needed to evaluate
/// the kernel and mean, and to fit posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub hyperparams: GpHyperparams,
    pub transform: InputTransform,
}

impl GpModel {
    pub fn new(hyperparams: GpHyperparams, transform: InputTransform) -> Result<Self> {
        hyperparams.validate()?;
        Ok(GpModel {
            hyperparams,
            transform,
        })
    }

    /// Product-RBF covariance between two configurations. The mixture
    /// factor divides the configured simplex distance directly by
    /// `2 * length_scale_w^2`; scale and step use squared distances in log
    /// coordinates.
    pub fn kernel(&self, a: &Configuration, b: &Configuration) -> Result<f64> {
        if a.mixture.dimension() != b.mixture.dimension() {
            return Err(Error::invalid("kernel inputs have mismatched mixture dimensions"));
        }
        let hp = &self.hyperparams;
        let dw = simplex_distance(&a.mixture, &b.mixture, hp.distance_kind)?;
        let dm = self.transform.scale_coord(a.model_scale) - self.transform.scale_coord(b.model_scale);
        let dz = self.transform.step_coord(a.train_step) - self.transform.step_coord(b.train_step);
        Ok(hp.signal_variance * kernel_exponent(hp, dw, dm * dm, dz * dz).exp())
    }

    /// Linear mean: `mean_coeffs . [1, scale coord, step coord]`. The
    /// mixture does not enter the mean.
    pub fn mean_function(&self, c: &Configuration) -> f64 {
        let mc = &self.hyperparams.mean_coeffs;
        mc[0]
            + mc[1] * self.transform.scale_coord(c.model_scale)
            + mc[2] * self.transform.step_coord(c.train_step)
    }

    /// Fits the posterior with the standard jitter ladder.
    pub fn fit(&self, history: &[(Configuration, f64)]) -> Result<GpPosterior> {
        self.fit_with_jitter(history, &JITTER_LADDER)
    }

    /// Fits the posterior, escalating through `jitter_ladder` on
    /// factorization failure.
    pub fn fit_with_jitter(
        &self,
        history: &[(Configuration, f64)],
        jitter_ladder: &[f64],
    ) -> Result<GpPosterior> {
        let ctx = FitContext::build(self, history)?;
        let hp = &self.hyperparams;
        let k_signal = ctx.signal_matrix(hp);
        let mut attempted = Vec::new();
        for &jitter in jitter_ladder {
            attempted.push(jitter);
            let mut k_y = k_signal.clone();
            for i in 0..ctx.len() {
                k_y[(i, i)] += hp.noise_variance.max(NOISE_FLOOR) + jitter;
            }
            if let Some(chol) = Cholesky::new(k_y) {
                let lower = chol.l();
                if lower.iter().all(|x| x.is_finite()) {
                    let residuals = ctx.residuals(hp);
                    let alpha = chol.solve(&residuals);
                    let k_inv = chol.inverse();
                    return Ok(GpPosterior {
                        model: self.clone(),
                        inputs: history.iter().map(|(c, _)| c.clone()).collect(),
                        coords: ctx.coords.clone(),
                        chol_lower: lower,
                        k_inv,
                        alpha,
                        target_mean: ctx.target_mean,
                        target_scale: ctx.target_scale,
                        jitter,
                    });
                }
            }
        }
        Err(Error::NumericFailure {
            message: format!("kernel matrix factorization failed for {} observations", ctx.len()),
            attempted_jitter: attempted,
        })
    }

    /// Log marginal likelihood of the (standardized, mean-centered)
    /// targets under `K + noise * I`.
    pub fn log_marginal_likelihood(&self, history: &[(Configuration, f64)]) -> Result<f64> {
        let ctx = FitContext::build_for_lml(self, history)?;
        lml_at(&ctx, &pack(&self.hyperparams)).map(|(value, _)| value)
    }

    /// Log marginal likelihood and its analytic gradient with respect to
    /// the log-domain kernel parameters and the (linear-domain) mean
    /// coefficients; see [`LmlGradient`] for the layout.
    pub fn lml_with_gradient(&self, history: &[(Configuration, f64)]) -> Result<(f64, LmlGradient)> {
        let ctx = FitContext::build_for_lml(self, history)?;
        let (value, grad) = lml_grad_at(&ctx, &pack(&self.hyperparams))?;
        Ok((value, grad))
    }
}

/// Gradient of the log marginal likelihood. Kernel parameters are in the
/// log domain (d LML / d ln theta); mean coefficients are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct LmlGradient {
    pub log_length_scale_w: f64,
    pub log_length_scale_m: f64,
    pub log_length_scale_z: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
    pub mean_coeffs: Vec<f64>,
}

impl LmlGradient {
    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.log_length_scale_w,
            self.log_length_scale_m,
            self.log_length_scale_z,
            self.log_signal_variance,
            self.log_noise_variance,
        ];
        v.extend_from_slice(&self.mean_coeffs);
        v
    }
}

/// Fitted posterior: immutable after construction, safe for concurrent
/// prediction.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    model: GpModel,
    inputs: Vec<Configuration>,
    coords: Vec<(f64, f64)>,
    chol_lower: DMatrix<f64>,
    k_inv: DMatrix<f64>,
    alpha: DVector<f64>,
    target_mean: f64,
    target_scale: f64,
    jitter: f64,
}

impl GpPosterior {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn inputs(&self) -> &[Configuration] {
        &self.inputs
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn target_standardization(&self) -> (f64, f64) {
        (self.target_mean, self.target_scale)
    }

    /// De-standardized predictive mean and (latent) variance at `c`.
    pub fn predict(&self, c: &Configuration) -> Result<(f64, f64)> {
        let slice = self.at_fidelity(c.model_scale, c.train_step);
        slice.predict(&c.mixture)
    }

    /// A view of the posterior at fixed (scale, step), with the scale/step
    /// kernel factors precomputed for fast mixture sweeps.
    pub fn at_fidelity(&self, scale: u64, step: u64) -> PosteriorSlice<'_> {
        let hp = &self.model.hyperparams;
        let tm = self.model.transform.scale_coord(scale);
        let tz = self.model.transform.step_coord(step);
        let mz_factors: Vec<f64> = self
            .coords
            .iter()
            .map(|&(tmi, tzi)| {
                let dm = tm - tmi;
                let dz = tz - tzi;
                hp.signal_variance
                    * (-(dm * dm) / (2.0 * hp.length_scale_m * hp.length_scale_m)
                        - (dz * dz) / (2.0 * hp.length_scale_z * hp.length_scale_z))
                        .exp()
            })
            .collect();
        let mean_value = hp.mean_coeffs[0] + hp.mean_coeffs[1] * tm + hp.mean_coeffs[2] * tz;
        PosteriorSlice {
            posterior: self,
            mz_factors,
            mean_value,
        }
    }
}

/// Posterior restricted to one (scale, step) pair.
pub struct PosteriorSlice<'a> {
    posterior: &'a GpPosterior,
    mz_factors: Vec<f64>,
    mean_value: f64,
}

impl PosteriorSlice<'_> {
    fn cross_kernel(&self, w: &MixtureWeights) -> Result<DVector<f64>> {
        let hp = &self.posterior.model.hyperparams;
        let denom = 2.0 * hp.length_scale_w * hp.length_scale_w;
        let mut k = DVector::zeros(self.posterior.len());
        for (i, input) in self.posterior.inputs.iter().enumerate() {
            let dw = simplex_distance(w, &input.mixture, hp.distance_kind)?;
            k[i] = self.mz_factors[i] * (-dw / denom).exp();
        }
        Ok(k)
    }

    /// De-standardized (mean, variance) at mixture `w`.
    pub fn predict(&self, w: &MixtureWeights) -> Result<(f64, f64)> {
        let hp = &self.posterior.model.hyperparams;
        let k = self.cross_kernel(w)?;
        let mean_std = self.mean_value + k.dot(&self.posterior.alpha);
        let u = &self.posterior.k_inv * &k;
        let var_std = (hp.signal_variance - k.dot(&u)).max(0.0);
        let scale = self.posterior.target_scale;
        Ok((
            mean_std * scale + self.posterior.target_mean,
            var_std * scale * scale,
        ))
    }

    /// De-standardized (mean, variance) plus their gradients with respect
    /// to the mixture coordinates.
    pub fn predict_with_gradient(&self, w: &MixtureWeights) -> Result<PredictionWithGradient> {
        let hp = &self.posterior.model.hyperparams;
        let n = self.posterior.len();
        let dim = w.dimension();
        let denom = 2.0 * hp.length_scale_w * hp.length_scale_w;
        let k = self.cross_kernel(w)?;
        let u = &self.posterior.k_inv * &k;

        let mut dmean = vec![0.0; dim];
        let mut dvar = vec![0.0; dim];
        for i in 0..n {
            let grad_d = simplex_distance_gradient(w, &self.posterior.inputs[i].mixture, hp.distance_kind);
            let scale_i = -k[i] / denom;
            for j in 0..dim {
                let dk_ij = scale_i * grad_d[j];
                dmean[j] += self.posterior.alpha[i] * dk_ij;
                dvar[j] += -2.0 * u[i] * dk_ij;
            }
        }

        let mean_std = self.mean_value + k.dot(&self.posterior.alpha);
        let var_std = (hp.signal_variance - k.dot(&u)).max(0.0);
        let s = self.posterior.target_scale;
        for j in 0..dim {
            dmean[j] *= s;
            dvar[j] *= s * s;
        }
        Ok(PredictionWithGradient {
            mean: mean_std * s + self.posterior.target_mean,
            variance: var_std * s * s,
            dmean_dw: dmean,
            dvariance_dw: dvar,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PredictionWithGradient {
    pub mean: f64,
    pub variance: f64,
    pub dmean_dw: Vec<f64>,
    pub dvariance_dw: Vec<f64>,
}

/// Fits hyperparameters by adaptive-moment ascent on the log marginal
/// likelihood, in log space for the positive parameters. Returns the
/// best-likelihood iterate seen (including the initial point), so the
/// result never has lower likelihood than `init`. Iterates whose
/// likelihood evaluation fails numerically are retried with halved steps
/// and skipped if that keeps failing.
pub fn fit_hyperparams(
    history: &[(Configuration, f64)],
    init: &GpHyperparams,
    transform: &InputTransform,
    learning_rate: f64,
    iterations: usize,
) -> Result<GpHyperparams> {
    init.validate()?;
    if iterations == 0 {
        return Ok(init.clone());
    }
    let model = GpModel::new(init.clone(), transform.clone())?;
    let ctx = FitContext::build_for_lml(&model, history)?;

    let mut theta = pack(init);
    let (mut cur_lml, mut cur_grad) = lml_grad_at(&ctx, &theta)?;
    let mut best_lml = cur_lml;
    let mut best_theta = theta.clone();

    let dim = theta.len();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];

    for t in 1..=iterations {
        let grad = cur_grad.as_vec();
        for j in 0..dim {
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
        }
        let bias1 = 1.0 - beta1.powi(t as i32);
        let bias2 = 1.0 - beta2.powi(t as i32);
        let mut step: Vec<f64> = (0..dim)
            .map(|j| learning_rate * (m[j] / bias1) / ((v[j] / bias2).sqrt() + eps))
            .collect();

        let mut accepted = false;
        for _ in 0..8 {
            let trial = clamp_theta(&add(&theta, &step));
            match lml_grad_at(&ctx, &trial) {
                Ok((lml, grad)) => {
                    theta = trial;
                    cur_lml = lml;
                    cur_grad = grad;
                    if lml > best_lml {
                        best_lml = lml;
                        best_theta = theta.clone();
                    }
                    accepted = true;
                    break;
                }
                Err(_) => {
                    for s in &mut step {
                        *s *= 0.5;
                    }
                }
            }
        }
        if !accepted {
            // keep the previous iterate and move on
            continue;
        }
    }
    let _ = cur_lml;
    Ok(unpack(&best_theta, &init.distance_kind))
}

// ---- internals -----------------------------------------------------------

fn kernel_exponent(hp: &GpHyperparams, dw: f64, dm_sq: f64, dz_sq: f64) -> f64 {
    -dw / (2.0 * hp.length_scale_w * hp.length_scale_w)
        - dm_sq / (2.0 * hp.length_scale_m * hp.length_scale_m)
        - dz_sq / (2.0 * hp.length_scale_z * hp.length_scale_z)
}

/// Precomputed, hyperparameter-independent fit state: distance matrices,
/// standardized targets, and the mean design matrix.
struct FitContext {
    dw: DMatrix<f64>,
    dm_sq: DMatrix<f64>,
    dz_sq: DMatrix<f64>,
    design: DMatrix<f64>,
    y_std: DVector<f64>,
    coords: Vec<(f64, f64)>,
    target_mean: f64,
    target_scale: f64,
    distance_kind: SimplexDistanceKind,
}

impl FitContext {
    fn build(model: &GpModel, history: &[(Configuration, f64)]) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::invalid("cannot fit a posterior on an empty history"));
        }
        let n = history.len();
        let dim = history[0].0.mixture.dimension();
        if history.iter().any(|(c, _)| c.mixture.dimension() != dim) {
            return Err(Error::invalid("history mixes mixture dimensions"));
        }
        if history.iter().any(|(_, y)| !y.is_finite()) {
            return Err(Error::invalid("history contains non-finite targets"));
        }
        let kind = model.hyperparams.distance_kind;
        let coords: Vec<(f64, f64)> = history
            .iter()
            .map(|(c, _)| {
                (
                    model.transform.scale_coord(c.model_scale),
                    model.transform.step_coord(c.train_step),
                )
            })
            .collect();

        let mut dw = DMatrix::zeros(n, n);
        let mut dm_sq = DMatrix::zeros(n, n);
        let mut dz_sq = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = simplex_distance(&history[i].0.mixture, &history[j].0.mixture, kind)?;
                let dm = coords[i].0 - coords[j].0;
                let dz = coords[i].1 - coords[j].1;
                dw[(i, j)] = d;
                dw[(j, i)] = d;
                dm_sq[(i, j)] = dm * dm;
                dm_sq[(j, i)] = dm * dm;
                dz_sq[(i, j)] = dz * dz;
                dz_sq[(j, i)] = dz * dz;
            }
        }

        let ys: Vec<f64> = history.iter().map(|(_, y)| *y).collect();
        let target_mean = ys.iter().sum::<f64>() / n as f64;
        let variance = ys.iter().map(|y| (y - target_mean) * (y - target_mean)).sum::<f64>() / n as f64;
        let target_scale = if variance.sqrt() > 1e-12 { variance.sqrt() } else { 1.0 };
        let y_std = DVector::from_iterator(n, ys.iter().map(|y| (y - target_mean) / target_scale));

        let design = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => coords[i].0,
            _ => coords[i].1,
        });

        Ok(FitContext {
            dw,
            dm_sq,
            dz_sq,
            design,
            y_std,
            coords,
            target_mean,
            target_scale,
            distance_kind: kind,
        })
    }

    fn build_for_lml(model: &GpModel, history: &[(Configuration, f64)]) -> Result<Self> {
        if history.len() < 2 {
            return Err(Error::invalid(format!(
                "log marginal likelihood needs at least 2 observations, got {}",
                history.len()
            )));
        }
        FitContext::build(model, history)
    }

    fn len(&self) -> usize {
        self.y_std.len()
    }

    fn signal_matrix(&self, hp: &GpHyperparams) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            hp.signal_variance
                * kernel_exponent(hp, self.dw[(i, j)], self.dm_sq[(i, j)], self.dz_sq[(i, j)]).exp()
        })
    }

    fn residuals(&self, hp: &GpHyperparams) -> DVector<f64> {
        let mc = DVector::from_column_slice(&hp.mean_coeffs);
        &self.y_std - &self.design * mc
    }
}

/// Parameter packing order: [ln ls_w, ln ls_m, ln ls_z, ln sv, ln noise,
/// mean coefficients...].
fn pack(hp: &GpHyperparams) -> Vec<f64> {
    let mut theta = vec![
        hp.length_scale_w.ln(),
        hp.length_scale_m.ln(),
        hp.length_scale_z.ln(),
        hp.signal_variance.ln(),
        hp.noise_variance.max(NOISE_FLOOR).ln(),
    ];
    theta.extend_from_slice(&hp.mean_coeffs);
    theta
}

fn unpack(theta: &[f64], kind: &SimplexDistanceKind) -> GpHyperparams {
    GpHyperparams {
        length_scale_w: theta[0].exp(),
        length_scale_m: theta[1].exp(),
        length_scale_z: theta[2].exp(),
        signal_variance: theta[3].exp(),
        noise_variance: theta[4].exp(),
        mean_coeffs: theta[5..].to_vec(),
        distance_kind: *kind,
    }
}

fn clamp_theta(theta: &[f64]) -> Vec<f64> {
    let mut out = theta.to_vec();
    for t in out.iter_mut().take(4) {
        *t = t.clamp(-10.0, 10.0);
    }
    out[4] = out[4].clamp(NOISE_FLOOR.ln(), 10.0);
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn factorize_for_lml(ctx: &FitContext, hp: &GpHyperparams) -> Result<(Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>)> {
    let k_signal = ctx.signal_matrix(hp);
    let mut k_y = k_signal.clone();
    for i in 0..ctx.len() {
        k_y[(i, i)] += hp.noise_variance.max(NOISE_FLOOR);
    }
    let chol = Cholesky::new(k_y).ok_or_else(|| Error::NumericFailure {
        message: "kernel matrix factorization failed in likelihood evaluation".into(),
        attempted_jitter: vec![],
    })?;
    if !chol.l_dirty().iter().all(|x| x.is_finite()) {
        return Err(Error::NumericFailure {
            message: "non-finite Cholesky factor in likelihood evaluation".into(),
            attempted_jitter: vec![],
        });
    }
    Ok((chol, k_signal))
}

fn lml_at(ctx: &FitContext, theta: &[f64]) -> Result<(f64, ())> {
    let hp = unpack(theta, &ctx.distance_kind);
    let (chol, _) = factorize_for_lml(ctx, &hp)?;
    let r = ctx.residuals(&hp);
    let alpha = chol.solve(&r);
    let log_det_half: f64 = (0..ctx.len()).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let value = -0.5 * r.dot(&alpha) - log_det_half - 0.5 * ctx.len() as f64 * LN_2PI;
    Ok((value, ()))
}

fn lml_grad_at(ctx: &FitContext, theta: &[f64]) -> Result<(f64, LmlGradient)> {
    let hp = unpack(theta, &ctx.distance_kind);
    let (chol, k_signal) = factorize_for_lml(ctx, &hp)?;
    let n = ctx.len();
    let r = ctx.residuals(&hp);
    let alpha = chol.solve(&r);
    let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let value = -0.5 * r.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // G = alpha alpha^T - K^-1; d LML / d theta = tr(G dK/dtheta) / 2
    let k_inv = chol.inverse();
    let noise = hp.noise_variance.max(NOISE_FLOOR);

    let mut g_lsw = 0.0;
    let mut g_lsm = 0.0;
    let mut g_lsz = 0.0;
    let mut g_sv = 0.0;
    let mut g_noise = 0.0;
    let inv_lw2 = 1.0 / (hp.length_scale_w * hp.length_scale_w);
    let inv_lm2 = 1.0 / (hp.length_scale_m * hp.length_scale_m);
    let inv_lz2 = 1.0 / (hp.length_scale_z * hp.length_scale_z);
    for i in 0..n {
        for j in 0..n {
            let g = alpha[i] * alpha[j] - k_inv[(i, j)];
            let ks = k_signal[(i, j)];
            g_lsw += g * ks * ctx.dw[(i, j)] * inv_lw2;
            g_lsm += g * ks * ctx.dm_sq[(i, j)] * inv_lm2;
            g_lsz += g * ks * ctx.dz_sq[(i, j)] * inv_lz2;
            g_sv += g * ks;
            if i == j {
                g_noise += g * noise;
            }
        }
    }
    // d LML / d mean_coeffs = H^T alpha
    let mean_grad = ctx.design.transpose() * &alpha;

    Ok((
        value,
        LmlGradient {
            log_length_scale_w: 0.5 * g_lsw,
            log_length_scale_m: 0.5 * g_lsm,
            log_length_scale_z: 0.5 * g_lsz,
            log_signal_variance: 0.5 * g_sv,
            log_noise_variance: 0.5 * g_noise,
            mean_coeffs: mean_grad.iter().copied().collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::space::SearchSpace;

    fn paper_transform() -> InputTransform {
        InputTransform::for_space(&SearchSpace::paper_default(5).unwrap())
    }

    fn random_config(rng: &mut ChaCha8Rng, dim: usize) -> Configuration {
        let scales = crate::space::DEFAULT_SCALES;
        let steps = crate::space::DEFAULT_STEPS;
        Configuration {
            mixture: MixtureWeights::sample_dirichlet(dim, 1.0, rng).unwrap(),
            model_scale: scales[rng.random_range(0..scales.len())],
            train_step: steps[rng.random_range(0..steps.len())],
        }
    }

    fn random_hyperparams(rng: &mut ChaCha8Rng, kind: SimplexDistanceKind) -> GpHyperparams {
        GpHyperparams {
            length_scale_w: rng.random_range(0.3..2.0),
            length_scale_m: rng.random_range(0.5..3.0),
            length_scale_z: rng.random_range(0.5..3.0),
            signal_variance: rng.random_range(0.5..2.0),
            noise_variance: rng.random_range(1e-4..0.05),
            mean_coeffs: vec![
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
            distance_kind: kind,
        }
    }

    fn random_history(
        rng: &mut ChaCha8Rng,
        n: usize,
        dim: usize,
    ) -> Vec<(Configuration, f64)> {
        (0..n)
            .map(|_| (random_config(rng, dim), rng.random_range(-2.0..4.0)))
            .collect()
    }

    /// Dense-inverse oracle: recomputes the posterior moments from scratch
    /// with Gauss-Jordan elimination, independent of the Cholesky path.
    pub(crate) fn oracle_predict(
        model: &GpModel,
        history: &[(Configuration, f64)],
        jitter: f64,
        test: &Configuration,
    ) -> (f64, f64) {
        let n = history.len();
        let hp = &model.hyperparams;
        let ys: Vec<f64> = history.iter().map(|(_, y)| *y).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                k[i][j] = model.kernel(&history[i].0, &history[j].0).unwrap();
                if i == j {
                    k[i][j] += hp.noise_variance.max(NOISE_FLOOR) + jitter;
                }
            }
        }
        let k_inv = gauss_jordan_inverse(k);
        let r: Vec<f64> = history
            .iter()
            .map(|(c, y)| (y - mean) / scale - model.mean_function(c))
            .collect();
        let ks: Vec<f64> = history
            .iter()
            .map(|(c, _)| model.kernel(test, c).unwrap())
            .collect();
        let mut mean_std = model.mean_function(test);
        for i in 0..n {
            for j in 0..n {
                mean_std += ks[i] * k_inv[i][j] * r[j];
            }
        }
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += ks[i] * k_inv[i][j] * ks[j];
            }
        }
        let var_std = (hp.signal_variance - quad).max(0.0);
        (mean_std * scale + mean, var_std * scale * scale)
    }

    fn gauss_jordan_inverse(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut inv: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot_row);
            inv.swap(col, pivot_row);
            let pivot = a[col][col];
            for j in 0..n {
                a[col][j] /= pivot;
                inv[col][j] /= pivot;
            }
            for i in 0..n {
                if i != col {
                    let factor = a[i][col];
                    for j in 0..n {
                        a[i][j] -= factor * a[col][j];
                        inv[i][j] -= factor * inv[col][j];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn kernel_at_identical_inputs_is_signal_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hp = GpHyperparams {
            signal_variance: 1.0,
            ..random_hyperparams(&mut rng, SimplexDistanceKind::SquaredL2)
        };
        let model = GpModel::new(hp, paper_transform()).unwrap();
        let c = random_config(&mut rng, 5);
        assert_abs_diff_eq!(model.kernel(&c, &c).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_at_one_length_scale_in_m_gives_exp_minus_half() {
        // pick the transform so the two scales sit exactly ls_m apart
        let hp = GpHyperparams {
            length_scale_m: 0.5,
            signal_variance: 2.0,
            ..GpHyperparams::default_init(SimplexDistanceKind::SquaredL2)
        };
        let transform = InputTransform {
            scale_ref: 1e9,
            step_ref: 19_700.0,
        };
        let model = GpModel::new(hp, transform).unwrap();
        let m_far = (1e9 * (-0.5f64).exp()).round() as u64;
        let w = MixtureWeights::uniform(5).unwrap();
        let a = Configuration {
            mixture: w.clone(),
            model_scale: 1_000_000_000,
            train_step: 19_700,
        };
        let b = Configuration {
            mixture: w,
            model_scale: m_far,
            train_step: 19_700,
        };
        let expected = 2.0 * (-0.5f64).exp();
        assert_relative_eq!(model.kernel(&a, &b).unwrap(), expected, max_relative = 1e-6);
    }

    #[test]
    fn kernel_matches_independent_formula_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [
            SimplexDistanceKind::SquaredL2,
            SimplexDistanceKind::TotalVariation,
            SimplexDistanceKind::JensenShannon,
        ] {
            for _ in 0..20 {
                let hp = random_hyperparams(&mut rng, kind);
                let transform = paper_transform();
                let model = GpModel::new(hp.clone(), transform.clone()).unwrap();
                let a = random_config(&mut rng, 5);
                let b = random_config(&mut rng, 5);
                // independent scripted evaluation of the product formula
                let dw = simplex_distance(&a.mixture, &b.mixture, kind).unwrap();
                let dm = transform.scale_coord(a.model_scale) - transform.scale_coord(b.model_scale);
                let dz = transform.step_coord(a.train_step) - transform.step_coord(b.train_step);
                let expected = hp.signal_variance
                    * (-dw / (2.0 * hp.length_scale_w.powi(2))).exp()
                    * (-dm * dm / (2.0 * hp.length_scale_m.powi(2))).exp()
                    * (-dz * dz / (2.0 * hp.length_scale_z.powi(2))).exp();
                assert_relative_eq!(model.kernel(&a, &b).unwrap(), expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn mean_function_matches_examples() {
        let transform = InputTransform {
            scale_ref: 1e9 / 0.3f64.exp(),
            step_ref: 19_700.0 / 0.5f64.exp(),
        };
        let c = Configuration {
            mixture: MixtureWeights::uniform(5).unwrap(),
            model_scale: 1_000_000_000,
            train_step: 19_700,
        };
        let mut hp = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
        hp.mean_coeffs = vec![0.0, 0.0, 0.0];
        assert_eq!(GpModel::new(hp.clone(), transform.clone()).unwrap().mean_function(&c), 0.0);
        hp.mean_coeffs = vec![1.0, 0.0, 0.0];
        assert_eq!(GpModel::new(hp.clone(), transform.clone()).unwrap().mean_function(&c), 1.0);
        hp.mean_coeffs = vec![0.0, 1.0, 1.0];
        let model = GpModel::new(hp, transform).unwrap();
        assert_relative_eq!(model.mean_function(&c), 0.8, max_relative = 1e-9);
    }

    #[test]
    fn single_noiseless_observation_interpolates() {
        let mut hp = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
        hp.noise_variance = 0.0;
        let model = GpModel::new(hp, paper_transform()).unwrap();
        let c = Configuration {
            mixture: MixtureWeights::uniform(5).unwrap(),
            model_scale: 300_000_000,
            train_step: 12_000,
        };
        let post = model.fit(&[(c.clone(), 2.75)]).unwrap();
        let (mean, var) = post.predict(&c).unwrap();
        assert_abs_diff_eq!(mean, 2.75, epsilon = 1e-8);
        // standardized variance at a noiseless training input stays at the
        // jitter level
        let (_, scale) = post.target_standardization();
        assert!(var / (scale * scale) <= 1e-6);
    }

    #[test]
    fn posterior_matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let hp = random_hyperparams(&mut rng, SimplexDistanceKind::SquaredL2);
            let model = GpModel::new(hp, paper_transform()).unwrap();
            let history = random_history(&mut rng, 20, 5);
            let post = model.fit(&history).unwrap();
            for _ in 0..10 {
                let test = random_config(&mut rng, 5);
                let (mean, var) = post.predict(&test).unwrap();
                let (omean, ovar) = oracle_predict(&model, &history, post.jitter(), &test);
                assert_relative_eq!(mean, omean, max_relative = 1e-8, epsilon = 1e-10);
                assert_relative_eq!(var, ovar, max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn empty_history_is_rejected() {
        let model = GpModel::new(
            GpHyperparams::default_init(SimplexDistanceKind::SquaredL2),
            paper_transform(),
        )
        .unwrap();
        assert!(model.fit(&[]).is_err());
    }

    #[test]
    fn far_from_data_recovers_the_prior() {
        let mut hp = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
        hp.length_scale_w = 0.01;
        hp.length_scale_m = 0.01;
        hp.length_scale_z = 0.01;
        hp.mean_coeffs = vec![0.4, 0.1, -0.2];
        let model = GpModel::new(hp.clone(), paper_transform()).unwrap();
        let history = vec![
            (
                Configuration {
                    mixture: MixtureWeights::vertex(5, 0).unwrap(),
                    model_scale: 20_000_000,
                    train_step: 6_000,
                },
                1.0,
            ),
            (
                Configuration {
                    mixture: MixtureWeights::vertex(5, 1).unwrap(),
                    model_scale: 20_000_000,
                    train_step: 6_000,
                },
                2.0,
            ),
        ];
        let post = model.fit(&history).unwrap();
        let far = Configuration {
            mixture: MixtureWeights::vertex(5, 4).unwrap(),
            model_scale: 1_000_000_000,
            train_step: 19_700,
        };
        let (mean, var) = post.predict(&far).unwrap();
        let (tmean, tscale) = post.target_standardization();
        let expected_mean = model.mean_function(&far) * tscale + tmean;
        assert_relative_eq!(mean, expected_mean, max_relative = 1e-9);
        assert_relative_eq!(
            var,
            hp.signal_variance * tscale * tscale,
            max_relative = 1e-9
        );
    }

    #[test]
    fn duplicate_noiseless_observations_exhaust_the_jitter_ladder() {
        let mut hp = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
        hp.noise_variance = 0.0;
        let model = GpModel::new(hp, paper_transform()).unwrap();
        let c = Configuration {
            mixture: MixtureWeights::uniform(5).unwrap(),
            model_scale: 1_000_000_000,
            train_step: 19_700,
        };
        let history = vec![(c.clone(), 1.0), (c, 2.0)];
        // zero jitter cannot regularize an exactly singular kernel matrix
        match model.fit_with_jitter(&history, &[0.0]) {
            Err(Error::NumericFailure { attempted_jitter, .. }) => {
                assert_eq!(attempted_jitter, vec![0.0]);
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
        // the default ladder succeeds
        assert!(model.fit(&history).is_ok());
    }

    #[test]
    fn factor_reconstructs_the_kernel_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hp = random_hyperparams(&mut rng, SimplexDistanceKind::JensenShannon);
        let model = GpModel::new(hp.clone(), paper_transform()).unwrap();
        let history = random_history(&mut rng, 12, 5);
        let post = model.fit(&history).unwrap();
        let l = post.factor();
        let reconstructed = l * l.transpose();
        let n = history.len();
        let mut expected = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                expected[(i, j)] = model.kernel(&history[i].0, &history[j].0).unwrap();
            }
            expected[(i, i)] += hp.noise_variance.max(NOISE_FLOOR) + post.jitter();
        }
        let diff = (&reconstructed - &expected).norm() / expected.norm();
        assert!(diff < 1e-8, "Frobenius relative error {diff}");
    }

    #[test]
    fn lml_needs_two_observations() {
        let model = GpModel::new(
            GpHyperparams::default_init(SimplexDistanceKind::SquaredL2),
            paper_transform(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let history = random_history(&mut rng, 1, 5);
        assert!(model.log_marginal_likelihood(&history).is_err());
    }

    #[test]
    fn lml_gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..5 {
            let kind = if trial % 2 == 0 {
                SimplexDistanceKind::SquaredL2
            } else {
                SimplexDistanceKind::JensenShannon
            };
            let hp = random_hyperparams(&mut rng, kind);
            let transform = paper_transform();
            let history = random_history(&mut rng, 10, 5);
            let model = GpModel::new(hp.clone(), transform.clone()).unwrap();
            let (_, grad) = model.lml_with_gradient(&history).unwrap();
            let grad = grad.as_vec();
            let ctx = FitContext::build_for_lml(&model, &history).unwrap();
            let theta = pack(&hp);
            let h = 1e-5;
            for (j, &g) in grad.iter().enumerate() {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd =
                    (lml_at(&ctx, &plus).unwrap().0 - lml_at(&ctx, &minus).unwrap().0) / (2.0 * h);
                if g.abs() < 1e-8 {
                    assert_abs_diff_eq!(g, fd, epsilon = 1e-6);
                } else {
                    assert_relative_eq!(g, fd, max_relative = 1e-4);
                }
            }
        }
    }

    #[test]
    fn lml_with_identity_kernel_matches_independent_gaussians() {
        // tiny length scales make off-diagonal covariances vanish
        let hp = GpHyperparams {
            length_scale_w: 1e-3,
            length_scale_m: 1e-3,
            length_scale_z: 1e-3,
            signal_variance: 1.0,
            noise_variance: 0.0,
            mean_coeffs: vec![0.0; 3],
            distance_kind: SimplexDistanceKind::SquaredL2,
        };
        let model = GpModel::new(hp, paper_transform()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let history = random_history(&mut rng, 8, 5);
        let lml = model.log_marginal_likelihood(&history).unwrap();

        let ys: Vec<f64> = history.iter().map(|(_, y)| *y).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64;
        let scale = var.sqrt();
        let expected: f64 = ys
            .iter()
            .map(|y| {
                let r = (y - mean) / scale;
                -0.5 * r * r - 0.5 * LN_2PI
            })
            .sum();
        assert_relative_eq!(lml, expected, max_relative = 1e-6);
    }

    #[test]
    fn fit_hyperparams_with_zero_iterations_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let init = random_hyperparams(&mut rng, SimplexDistanceKind::SquaredL2);
        let history = random_history(&mut rng, 6, 5);
        let out = fit_hyperparams(&history, &init, &paper_transform(), 0.1, 0).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn fit_hyperparams_never_decreases_the_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let init = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
            let transform = paper_transform();
            let history = random_history(&mut rng, 15, 5);
            let fitted = fit_hyperparams(&history, &init, &transform, 0.1, 50).unwrap();
            let lml_init = GpModel::new(init, transform.clone())
                .unwrap()
                .log_marginal_likelihood(&history)
                .unwrap();
            let lml_fit = GpModel::new(fitted, transform)
                .unwrap()
                .log_marginal_likelihood(&history)
                .unwrap();
            assert!(
                lml_fit >= lml_init - 1e-12,
                "fitted {lml_fit} below init {lml_init}"
            );
        }
    }

    #[test]
    fn fit_hyperparams_recovers_a_known_length_scale() {
        // data drawn from a GP with ls_w = 0.5; the fitted ls_w should land
        // within a factor of two (median over 5 seeds)
        let truth = GpHyperparams {
            length_scale_w: 0.5,
            length_scale_m: 1.0,
            length_scale_z: 1.0,
            signal_variance: 1.0,
            noise_variance: 1e-4,
            mean_coeffs: vec![0.0; 3],
            distance_kind: SimplexDistanceKind::SquaredL2,
        };
        let transform = paper_transform();
        let model = GpModel::new(truth.clone(), transform.clone()).unwrap();
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let configs: Vec<Configuration> = (0..40).map(|_| random_config(&mut rng, 5)).collect();
            let n = configs.len();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = model.kernel(&configs[i], &configs[j]).unwrap();
                }
                k[(i, i)] += truth.noise_variance + 1e-9;
            }
            let chol = Cholesky::new(k).unwrap();
            let xi = DVector::from_iterator(
                n,
                (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)),
            );
            let y = chol.l() * xi;
            let history: Vec<(Configuration, f64)> = configs
                .into_iter()
                .zip(y.iter().copied())
                .collect();
            let init = GpHyperparams::default_init(SimplexDistanceKind::SquaredL2);
            let fitted = fit_hyperparams(&history, &init, &transform, 0.1, 50).unwrap();
            ratios.push(fitted.length_scale_w / truth.length_scale_w);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(
            (0.5..=2.0).contains(&median),
            "median length-scale ratio {median} outside [0.5, 2]"
        );
    }

    #[test]
    fn hyperparams_round_trip_through_kv_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let hp = random_hyperparams(&mut rng, SimplexDistanceKind::TotalVariation);
        let text = hp.to_kv_string();
        let back = GpHyperparams::from_kv_str(&text).unwrap();
        assert_eq!(hp, back);
        assert!(GpHyperparams::from_kv_str("length_scale_w 0.5").is_err());
    }

    #[test]
    fn standardization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = GpModel::new(
            GpHyperparams::default_init(SimplexDistanceKind::SquaredL2),
            paper_transform(),
        )
        .unwrap();
        let history = random_history(&mut rng, 10, 5);
        let post = model.fit(&history).unwrap();
        let (mean, scale) = post.target_standardization();
        for (_, y) in &history {
            let std = (y - mean) / scale;
            assert_abs_diff_eq!(std * scale + mean, *y, epsilon = 1e-12);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn kernel_matrix_plus_jitter_factorizes(
                seed in 0u64..500,
                n in 2usize..50,
                kind_idx in 0usize..3,
            ) {
                let kind = [
                    SimplexDistanceKind::SquaredL2,
                    SimplexDistanceKind::TotalVariation,
                    SimplexDistanceKind::JensenShannon,
                ][kind_idx];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let hp = random_hyperparams(&mut rng, kind);
                let model = GpModel::new(hp, paper_transform()).unwrap();
                let history = random_history(&mut rng, n, 4);
                prop_assert!(model.fit(&history).is_ok());
            }

            #[test]
            fn predictive_variance_is_bounded(seed in 0u64..500) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let hp = random_hyperparams(&mut rng, SimplexDistanceKind::SquaredL2);
                let model = GpModel::new(hp.clone(), paper_transform()).unwrap();
                let history = random_history(&mut rng, 12, 4);
                let post = model.fit(&history).unwrap();
                let (_, scale) = post.target_standardization();
                for _ in 0..5 {
                    let test = random_config(&mut rng, 4);
                    let (_, var) = post.predict(&test).unwrap();
                    let var_std = var / (scale * scale);
                    prop_assert!(var_std >= 0.0);
                    prop_assert!(var_std <= hp.signal_variance + hp.noise_variance + 1e-8);
                }
            }
        }
    }
}
