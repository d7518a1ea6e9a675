//! The MLP performance predictor: three 64-unit hidden layers with ReLU
//! and dropout 0.1, mapping 9 standardized run features to the 11 metrics.
//! Trained from run logs with Adam; usable as a simulation backend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runlog::RunLog;
use super::Simulator;
use crate::error::{Error, Result};
use crate::metrics::{Metrics, METRIC_COUNT};
use crate::mixture::MixtureWeights;
use crate::space::Configuration;

pub const MLP_INPUT_DIM: usize = 9;
pub const MLP_LAYER_DIMS: [usize; 5] = [MLP_INPUT_DIM, 64, 64, 64, METRIC_COUNT];
pub const PREDICTOR_FORMAT_TAG: &str = "mlp-predictor-v1";

/// One dense layer, weights stored row-major (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Layer {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Layer {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Layer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(output.len(), self.out_dim);
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out = acc;
        }
    }
}

/// Feed-forward performance predictor with input/output standard scaling
/// baked in. The forward pass never applies dropout, so inference is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPredictor {
    pub layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    output_mean: Vec<f64>,
    output_scale: Vec<f64>,
    pub dropout_rate: f64,
}

/// Features fed to the predictor: the five mixture proportions, the log
/// and raw model scale, and the log and raw training step.
pub fn encode_inputs(weights: &[f64], scale: u64, step: u64) -> Result<[f64; MLP_INPUT_DIM]> {
    if weights.len() != 5 {
        return Err(Error::invalid(format!(
            "predictor inputs need 5 mixture weights, got {}",
            weights.len()
        )));
    }
    Ok([
        weights[0],
        weights[1],
        weights[2],
        weights[3],
        weights[4],
        (scale as f64).ln(),
        (step as f64).ln(),
        scale as f64,
        step as f64,
    ])
}

impl MlpPredictor {
    fn with_layers(
        layer_dims: Vec<usize>,
        layers: Vec<Layer>,
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        output_mean: Vec<f64>,
        output_scale: Vec<f64>,
        dropout_rate: f64,
    ) -> MlpPredictor {
        MlpPredictor {
            layer_dims,
            layers,
            input_mean,
            input_scale,
            output_mean,
            output_scale,
            dropout_rate,
        }
    }

    /// Untrained predictor with the standard architecture, identity
    /// standardization, and seeded initialization.
    pub fn random(seed: u64) -> MlpPredictor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = MLP_LAYER_DIMS.to_vec();
        let layers = dims
            .windows(2)
            .map(|w| Layer::init(w[0], w[1], &mut rng))
            .collect();
        MlpPredictor::with_layers(
            dims.clone(),
            layers,
            vec![0.0; dims[0]],
            vec![1.0; dims[0]],
            vec![0.0; *dims.last().unwrap()],
            vec![1.0; *dims.last().unwrap()],
            0.1,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Deterministic forward pass (dropout disabled): standardize inputs,
    /// run the affine/ReLU stack, de-standardize outputs.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "predictor expects {} inputs, got {}",
                self.input_dim(),
                inputs.len()
            )));
        }
        let mut activation: Vec<f64> = inputs
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.apply(&activation, &mut next);
            if l != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            activation = next;
        }
        Ok(activation
            .iter()
            .zip(self.output_mean.iter().zip(&self.output_scale))
            .map(|(y, (m, s))| y * s + m)
            .collect())
    }

    /// Versioned structured-text serialization: layer dimensions,
    /// row-major weight matrices, bias vectors, standardization vectors.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::new();
        out.push_str(PREDICTOR_FORMAT_TAG);
        out.push('\n');
        out.push_str(&format!(
            "layers {}\n",
            self.layer_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
        out.push_str(&format!("dropout {}\n", self.dropout_rate));
        out.push_str(&format!("input_mean {}\n", join(&self.input_mean)));
        out.push_str(&format!("input_scale {}\n", join(&self.input_scale)));
        out.push_str(&format!("output_mean {}\n", join(&self.output_mean)));
        out.push_str(&format!("output_scale {}\n", join(&self.output_scale)));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push_str(&format!("weights {} {} {}\n", l, layer.out_dim, layer.in_dim));
            for o in 0..layer.out_dim {
                out.push_str(&join(&layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim]));
                out.push('\n');
            }
            out.push_str(&format!("bias {} {}\n", l, join(&layer.bias)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MlpPredictor> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<predictor>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, tag) = lines
            .next()
            .ok_or_else(|| err(1, "empty predictor file".into()))?;
        if tag.trim() != PREDICTOR_FORMAT_TAG {
            return Err(err(1, format!("unsupported format tag {tag:?}")));
        }
        let parse_floats = |lineno: usize, text: &str| -> Result<Vec<f64>> {
            text.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(lineno + 1, format!("bad float {t}: {e}")))
                })
                .collect()
        };
        let mut expect_keyword = |keyword: &str| -> Result<(usize, String)> {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing {keyword} section")))?;
            let rest = line
                .strip_prefix(keyword)
                .ok_or_else(|| err(lineno + 1, format!("expected {keyword}, got {line:?}")))?;
            Ok((lineno, rest.trim().to_string()))
        };

        let (lineno, dims_text) = expect_keyword("layers")?;
        let layer_dims: Vec<usize> = dims_text
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| err(lineno + 1, format!("bad layer dim {t}: {e}")))
            })
            .collect::<Result<_>>()?;
        if layer_dims.len() < 2 {
            return Err(err(lineno + 1, "need at least two layer dimensions".into()));
        }
        let (lineno, dropout_text) = expect_keyword("dropout")?;
        let dropout_rate: f64 = dropout_text
            .parse()
            .map_err(|e| err(lineno + 1, format!("bad dropout: {e}")))?;
        let (lineno, t) = expect_keyword("input_mean")?;
        let input_mean = parse_floats(lineno, &t)?;
        let (lineno, t) = expect_keyword("input_scale")?;
        let input_scale = parse_floats(lineno, &t)?;
        let (lineno, t) = expect_keyword("output_mean")?;
        let output_mean = parse_floats(lineno, &t)?;
        let (lineno, t) = expect_keyword("output_scale")?;
        let output_scale = parse_floats(lineno, &t)?;
        if input_mean.len() != layer_dims[0] || input_scale.len() != layer_dims[0] {
            return Err(err(lineno + 1, "input standardization length mismatch".into()));
        }
        let out_dim = *layer_dims.last().unwrap();
        if output_mean.len() != out_dim || output_scale.len() != out_dim {
            return Err(err(lineno + 1, "output standardization length mismatch".into()));
        }

        let mut layers = Vec::new();
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (lineno, header) = expect_keyword("weights")?;
            let fields: Vec<usize> = header
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| err(lineno + 1, format!("bad weights header: {e}")))
                })
                .collect::<Result<_>>()?;
            if fields != vec![l, pair[1], pair[0]] {
                return Err(err(
                    lineno + 1,
                    format!("weights header {fields:?} does not match layer {l} ({} x {})", pair[1], pair[0]),
                ));
            }
            let mut weights = Vec::with_capacity(pair[0] * pair[1]);
            for _ in 0..pair[1] {
                let (lineno, line) = lines
                    .next()
                    .ok_or_else(|| err(0, format!("truncated weights for layer {l}")))?;
                let row = parse_floats(lineno, line)?;
                if row.len() != pair[0] {
                    return Err(err(lineno + 1, format!("expected {} weights per row", pair[0])));
                }
                weights.extend(row);
            }
            let (lineno, bias_text) = {
                let (lineno, line) = lines
                    .next()
                    .ok_or_else(|| err(0, format!("missing bias for layer {l}")))?;
                let rest = line
                    .strip_prefix("bias")
                    .ok_or_else(|| err(lineno + 1, format!("expected bias, got {line:?}")))?;
                let rest = rest.trim();
                let rest = rest
                    .strip_prefix(&l.to_string())
                    .ok_or_else(|| err(lineno + 1, format!("bias layer index mismatch on {line:?}")))?;
                (lineno, rest.trim().to_string())
            };
            let bias = parse_floats(lineno, &bias_text)?;
            if bias.len() != pair[1] {
                return Err(err(lineno + 1, format!("expected {} bias entries", pair[1])));
            }
            layers.push(Layer {
                in_dim: pair[0],
                out_dim: pair[1],
                weights,
                bias,
            });
        }
        Ok(MlpPredictor::with_layers(
            layer_dims,
            layers,
            input_mean,
            input_scale,
            output_mean,
            output_scale,
            dropout_rate,
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<MlpPredictor> {
        let text = std::fs::read_to_string(path)?;
        MlpPredictor::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::invalid("r_squared needs equal-length vectors"));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("r_squared needs at least 2 points"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r_squared is undefined for zero-variance truth"));
    }
    let ss_res: f64 = truth
        .iter()
        .zip(pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
}

impl Default for MlpTrainOptions {
    fn default() -> Self {
        MlpTrainOptions {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            dropout_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpTrainOutcome {
    pub predictor: MlpPredictor,
    /// Training-set R-squared per metric; NaN where the target column has
    /// zero variance.
    pub training_r2: Vec<f64>,
    /// Full-training-set MSE on standardized targets after each epoch.
    pub epoch_mse: Vec<f64>,
}

/// Trains the standard-architecture predictor on a run log with Adam and
/// inverted dropout. Inputs and outputs are standard-scaled from the
/// training rows. Deterministic given the seed.
pub fn mlp_train(log: &RunLog, options: &MlpTrainOptions, seed: u64) -> Result<MlpTrainOutcome> {
    if log.rows.len() < 2 {
        return Err(Error::invalid(format!(
            "predictor training needs at least 2 rows, got {}",
            log.rows.len()
        )));
    }
    if options.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(0.0..1.0).contains(&options.dropout_rate) {
        return Err(Error::invalid("dropout rate must be in [0, 1)"));
    }
    let n = log.rows.len();
    let raw_inputs: Vec<[f64; MLP_INPUT_DIM]> = log
        .rows
        .iter()
        .map(|row| encode_inputs(&row.weights, row.model_scale, row.train_step))
        .collect::<Result<_>>()?;
    let raw_outputs: Vec<[f64; METRIC_COUNT]> =
        log.rows.iter().map(|row| row.metrics.0).collect();

    let (input_mean, input_scale) = column_standardization(&raw_inputs);
    let (output_mean, output_scale) = column_standardization(&raw_outputs);
    let inputs: Vec<Vec<f64>> = raw_inputs
        .iter()
        .map(|row| {
            row.iter()
                .zip(input_mean.iter().zip(&input_scale))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();
    let targets: Vec<Vec<f64>> = raw_outputs
        .iter()
        .map(|row| {
            row.iter()
                .zip(output_mean.iter().zip(&output_scale))
                .map(|(y, (m, s))| (y - m) / s)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = MLP_LAYER_DIMS.to_vec();
    let mut layers: Vec<Layer> = dims
        .windows(2)
        .map(|w| Layer::init(w[0], w[1], &mut rng))
        .collect();
    let mut adam = AdamState::new(&layers);
    let mut epoch_mse = Vec::with_capacity(options.epochs);

    let mut order: Vec<usize> = (0..n).collect();
    let keep = 1.0 - options.dropout_rate;
    let mut step_count = 0;
    for _epoch in 0..options.epochs {
        // Fisher-Yates shuffle
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(options.batch_size) {
            step_count += 1;
            let mut grads: Vec<Layer> = dims
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect();
            let scale = 1.0 / (batch.len() * METRIC_COUNT) as f64;
            for &row in batch {
                backprop_one(
                    &layers,
                    &inputs[row],
                    &targets[row],
                    keep,
                    scale,
                    &mut grads,
                    &mut rng,
                );
            }
            // decoupled-from-nothing: classic L2-in-gradient weight decay
            for (g, l) in grads.iter_mut().zip(&layers) {
                for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
                    *gw += options.weight_decay * w;
                }
                for (gb, b) in g.bias.iter_mut().zip(&l.bias) {
                    *gb += options.weight_decay * b;
                }
            }
            adam.update(&mut layers, &grads, options.learning_rate, step_count);
        }
        epoch_mse.push(dataset_mse(&layers, &inputs, &targets));
    }

    let predictor = MlpPredictor::with_layers(
        dims,
        layers,
        input_mean,
        input_scale,
        output_mean,
        output_scale,
        options.dropout_rate,
    );

    // held-in training R-squared per metric
    let mut training_r2 = Vec::with_capacity(METRIC_COUNT);
    let predictions: Vec<Vec<f64>> = raw_inputs
        .iter()
        .map(|x| predictor.forward(x).expect("dims match"))
        .collect();
    for metric in 0..METRIC_COUNT {
        let truth: Vec<f64> = raw_outputs.iter().map(|row| row[metric]).collect();
        let pred: Vec<f64> = predictions.iter().map(|p| p[metric]).collect();
        match r_squared(&truth, &pred) {
            Ok(r2) => training_r2.push(r2),
            Err(_) => {
                eprintln!(
                    "warning: metric {} has zero-variance targets; R^2 undefined",
                    crate::metrics::METRIC_NAMES[metric]
                );
                training_r2.push(f64::NAN);
            }
        }
    }

    Ok(MlpTrainOutcome {
        predictor,
        training_r2,
        epoch_mse,
    })
}

fn column_standardization<const D: usize>(rows: &[[f64; D]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; D];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut scale = vec![0.0; D];
    for row in rows {
        for ((s, x), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, scale)
}

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    fn new(layers: &[Layer]) -> AdamState {
        let zeros: Vec<Layer> = layers
            .iter()
            .map(|l| Layer::zeros(l.in_dim, l.out_dim))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, layers: &mut [Layer], grads: &[Layer], lr: f64, step: usize) {
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let bias1 = 1.0 - beta1.powi(step as i32);
        let bias2 = 1.0 - beta2.powi(step as i32);
        for ((layer, grad), (m, v)) in layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..layer.weights.len() {
                let g = grad.weights[i];
                m.weights[i] = beta1 * m.weights[i] + (1.0 - beta1) * g;
                v.weights[i] = beta2 * v.weights[i] + (1.0 - beta2) * g * g;
                layer.weights[i] -=
                    lr * (m.weights[i] / bias1) / ((v.weights[i] / bias2).sqrt() + eps);
            }
            for i in 0..layer.bias.len() {
                let g = grad.bias[i];
                m.bias[i] = beta1 * m.bias[i] + (1.0 - beta1) * g;
                v.bias[i] = beta2 * v.bias[i] + (1.0 - beta2) * g * g;
                layer.bias[i] -= lr * (m.bias[i] / bias1) / ((v.bias[i] / bias2).sqrt() + eps);
            }
        }
    }
}

/// Accumulates the gradient of the squared error of one example into
/// `grads`, applying inverted dropout to hidden activations.
fn backprop_one(
    layers: &[Layer],
    input: &[f64],
    target: &[f64],
    keep: f64,
    loss_scale: f64,
    grads: &mut [Layer],
    rng: &mut ChaCha8Rng,
) {
    let depth = layers.len();
    // forward with stored pre-activations and dropout masks
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut pre_activations: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(depth.saturating_sub(1));
    activations.push(input.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        layer.apply(activations.last().unwrap(), &mut z);
        pre_activations.push(z.clone());
        if l != depth - 1 {
            let mut a = z;
            let mut mask = vec![0.0; a.len()];
            for (v, m) in a.iter_mut().zip(mask.iter_mut()) {
                *v = v.max(0.0);
                *m = if keep >= 1.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                };
                *v *= *m;
            }
            masks.push(mask);
            activations.push(a);
        } else {
            activations.push(z);
        }
    }

    // backward
    let output = activations.last().unwrap();
    let mut delta: Vec<f64> = output
        .iter()
        .zip(target)
        .map(|(y, t)| 2.0 * (y - t) * loss_scale)
        .collect();
    for l in (0..depth).rev() {
        let layer = &layers[l];
        let a_prev = &activations[l];
        let grad = &mut grads[l];
        for o in 0..layer.out_dim {
            grad.bias[o] += delta[o];
            let row = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, x) in row.iter_mut().zip(a_prev) {
                *g += delta[o] * x;
            }
        }
        if l > 0 {
            let mut next_delta = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (nd, w) in next_delta.iter_mut().zip(row) {
                    *nd += w * delta[o];
                }
            }
            // through dropout and ReLU of the previous hidden layer
            let mask = &masks[l - 1];
            let pre = &pre_activations[l - 1];
            for ((nd, m), z) in next_delta.iter_mut().zip(mask).zip(pre) {
                *nd *= m * if *z > 0.0 { 1.0 } else { 0.0 };
            }
            delta = next_delta;
        }
    }
}

/// Deterministic full-dataset MSE on standardized targets (dropout off).
fn dataset_mse(layers: &[Layer], inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let depth = layers.len();
    let mut total = 0.0;
    for (input, target) in inputs.iter().zip(targets) {
        let mut activation = input.clone();
        for (l, layer) in layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.apply(&activation, &mut next);
            if l != depth - 1 {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            activation = next;
        }
        total += activation
            .iter()
            .zip(target)
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>();
    }
    total / (inputs.len() * METRIC_COUNT) as f64
}

/// A trained predictor acting as the evaluation backend: queries are
/// noise-free forward passes.
#[derive(Debug, Clone)]
pub struct PredictorBackend {
    pub predictor: MlpPredictor,
    pub steps: Vec<u64>,
}

impl PredictorBackend {
    pub fn new(predictor: MlpPredictor, mut steps: Vec<u64>) -> Result<Self> {
        if predictor.input_dim() != MLP_INPUT_DIM || predictor.output_dim() != METRIC_COUNT {
            return Err(Error::invalid(
                "backend predictor must map 9 run features to the 11 metrics",
            ));
        }
        steps.sort_unstable();
        steps.dedup();
        if steps.is_empty() {
            return Err(Error::invalid("predictor backend needs a step grid"));
        }
        Ok(PredictorBackend { predictor, steps })
    }
}

impl Simulator for PredictorBackend {
    fn evaluate(&self, config: &Configuration) -> Result<Metrics> {
        let features = encode_inputs(
            config.mixture.as_slice(),
            config.model_scale,
            config.train_step,
        )?;
        let out = self.predictor.forward(&features)?;
        let mut values = [0.0; METRIC_COUNT];
        values.copy_from_slice(&out);
        Ok(Metrics(values))
    }

    fn curve(
        &self,
        mixture: &MixtureWeights,
        scale: u64,
        up_to_step: u64,
    ) -> Result<Vec<(u64, Metrics)>> {
        if !self.steps.contains(&up_to_step) {
            return Err(Error::invalid(format!(
                "curve endpoint {up_to_step} is not in the backend step grid"
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
                Ok((z, self.evaluate(&config)?))
            })
            .collect()
    }

    fn mixture_dimension(&self) -> usize {
        5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::runlog::RunRow;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn zero_network_outputs_the_destandardized_bias() {
        let dims = vec![MLP_INPUT_DIM, 4, METRIC_COUNT];
        let mut layers = vec![Layer::zeros(MLP_INPUT_DIM, 4), Layer::zeros(4, METRIC_COUNT)];
        for (i, b) in layers[1].bias.iter_mut().enumerate() {
            *b = i as f64 * 0.1;
        }
        let output_mean = vec![1.0; METRIC_COUNT];
        let output_scale = vec![2.0; METRIC_COUNT];
        let p = MlpPredictor::with_layers(
            dims,
            layers,
            vec![0.0; MLP_INPUT_DIM],
            vec![1.0; MLP_INPUT_DIM],
            output_mean,
            output_scale,
            0.1,
        );
        let out = p.forward(&[0.3; MLP_INPUT_DIM]).unwrap();
        for (i, y) in out.iter().enumerate() {
            assert_abs_diff_eq!(*y, i as f64 * 0.1 * 2.0 + 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn hand_computed_single_unit_network_matches() {
        let dims = vec![2, 1, 2];
        let layers = vec![
            Layer {
                in_dim: 2,
                out_dim: 1,
                weights: vec![1.0, -1.0],
                bias: vec![0.5],
            },
            Layer {
                in_dim: 1,
                out_dim: 2,
                weights: vec![2.0, -1.0],
                bias: vec![0.1, 0.2],
            },
        ];
        let p = MlpPredictor::with_layers(
            dims,
            layers,
            vec![0.0; 2],
            vec![1.0; 2],
            vec![0.0; 2],
            vec![1.0; 2],
            0.0,
        );
        // z1 = 0.3 - 0.1 + 0.5 = 0.7, relu keeps it; out = [1.5, -0.5]
        let out = p.forward(&[0.3, 0.1]).unwrap();
        assert_abs_diff_eq!(out[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -0.5, epsilon = 1e-12);
        // negative pre-activation is clipped
        let out = p.forward(&[-1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn forward_is_locally_linear_within_an_activation_region() {
        let p = MlpPredictor::random(3);
        let x: Vec<f64> = (0..MLP_INPUT_DIM).map(|i| 0.1 * i as f64).collect();
        let mut x2 = x.clone();
        for v in &mut x2 {
            *v += 1e-6;
        }
        let mid: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
        let fa = p.forward(&x).unwrap();
        let fb = p.forward(&x2).unwrap();
        let fm = p.forward(&mid).unwrap();
        for i in 0..METRIC_COUNT {
            assert_abs_diff_eq!(fm[i], 0.5 * (fa[i] + fb[i]), epsilon = 1e-9);
        }
    }

    #[test]
    fn r_squared_matches_hand_values() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert!(r_squared(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    fn rows_from_predictor(target: &MlpPredictor, n: usize, seed: u64) -> RunLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales = crate::space::DEFAULT_SCALES;
        let steps = crate::space::DEFAULT_STEPS;
        let rows = (0..n)
            .map(|_| {
                let w = MixtureWeights::sample_dirichlet(5, 1.0, &mut rng).unwrap();
                let scale = scales[rng.random_range(0..scales.len())];
                let step = steps[rng.random_range(0..steps.len())];
                let features = encode_inputs(w.as_slice(), scale, step).unwrap();
                let out = target.forward(&features).unwrap();
                let mut metrics = [0.0; METRIC_COUNT];
                metrics.copy_from_slice(&out);
                RunRow {
                    weights: w.as_slice().to_vec(),
                    model_scale: scale,
                    train_step: step,
                    metrics: Metrics(metrics),
                }
            })
            .collect();
        RunLog { rows }
    }

    #[test]
    fn training_recovers_a_generating_network() {
        // median validation R^2 over 3 seeds must reach 0.9 on every metric
        let mut per_seed: Vec<Vec<f64>> = Vec::new();
        for seed in 0..3u64 {
            let target = MlpPredictor::random(1000 + seed);
            let train = rows_from_predictor(&target, 2_000, 500 + seed);
            let valid = rows_from_predictor(&target, 400, 900 + seed);
            let outcome = mlp_train(&train, &MlpTrainOptions::default(), seed).unwrap();
            let mut r2s = Vec::new();
            for metric in 0..METRIC_COUNT {
                let truth: Vec<f64> = valid.rows.iter().map(|r| r.metrics.0[metric]).collect();
                let pred: Vec<f64> = valid
                    .rows
                    .iter()
                    .map(|r| {
                        let f = encode_inputs(&r.weights, r.model_scale, r.train_step).unwrap();
                        outcome.predictor.forward(&f).unwrap()[metric]
                    })
                    .collect();
                r2s.push(r_squared(&truth, &pred).unwrap());
            }
            per_seed.push(r2s);
        }
        for metric in 0..METRIC_COUNT {
            let mut vals: Vec<f64> = per_seed.iter().map(|r| r[metric]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = vals[vals.len() / 2];
            assert!(
                median >= 0.9,
                "metric {} median validation R^2 {median}",
                crate::metrics::METRIC_NAMES[metric]
            );
        }
    }

    #[test]
    fn zero_epochs_returns_an_untrained_network() {
        let target = MlpPredictor::random(7);
        let log = rows_from_predictor(&target, 300, 8);
        let outcome = mlp_train(
            &log,
            &MlpTrainOptions {
                epochs: 0,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(outcome.epoch_mse.is_empty());
        // an untrained net explains little variance
        for r2 in &outcome.training_r2 {
            assert!(*r2 < 0.5, "untrained R^2 unexpectedly high: {r2}");
        }
    }

    #[test]
    fn training_loss_is_mostly_nonincreasing() {
        let target = MlpPredictor::random(11);
        let log = rows_from_predictor(&target, 1_000, 12);
        let outcome = mlp_train(&log, &MlpTrainOptions::default(), 2).unwrap();
        assert_eq!(outcome.epoch_mse.len(), 20);
        let decreasing = outcome
            .epoch_mse
            .windows(2)
            .filter(|w| w[1] <= w[0])
            .count();
        assert!(
            decreasing >= 15,
            "only {decreasing}/19 epoch transitions nonincreasing: {:?}",
            outcome.epoch_mse
        );
    }

    #[test]
    fn constant_target_column_reports_nan_r2() {
        let target = MlpPredictor::random(13);
        let mut log = rows_from_predictor(&target, 100, 14);
        for row in &mut log.rows {
            row.metrics.0[10] = 0.5; // acc_piqa pinned
        }
        let outcome = mlp_train(&log, &MlpTrainOptions::default(), 3).unwrap();
        assert!(outcome.training_r2[10].is_nan());
        assert!(outcome.training_r2[0].is_finite());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let target = MlpPredictor::random(17);
        let log = rows_from_predictor(&target, 200, 18);
        let opts = MlpTrainOptions {
            epochs: 3,
            ..Default::default()
        };
        let a = mlp_train(&log, &opts, 42).unwrap();
        let b = mlp_train(&log, &opts, 42).unwrap();
        assert_eq!(a.predictor, b.predictor);
        assert_eq!(a.epoch_mse, b.epoch_mse);
    }

    #[test]
    fn predictor_round_trips_through_text() {
        let target = MlpPredictor::random(19);
        let log = rows_from_predictor(&target, 150, 20);
        let outcome = mlp_train(
            &log,
            &MlpTrainOptions {
                epochs: 2,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let text = outcome.predictor.to_text();
        let back = MlpPredictor::from_text(&text).unwrap();
        assert_eq!(outcome.predictor, back);
        assert!(MlpPredictor::from_text("bogus\n").is_err());
    }
}
