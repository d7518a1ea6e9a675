//! The tabular run-log format: one row per (mixture, scale, step)
//! observation with the 11 metric values, as comma-separated text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Simulator, SurfaceSpec};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, METRIC_COUNT};
use crate::mixture::MixtureWeights;
use crate::space::Configuration;

pub const RUNLOG_HEADER: &str = "w_wikipedia,w_stackexchange,w_github,w_arxiv,w_book,model_scale,train_step,train_loss,val_wikipedia,val_stackexchange,val_github,val_arxiv,val_book,val_commoncrawl,val_c4,acc_arceasy,acc_hellaswag,acc_piqa";

const WEIGHT_COLUMNS: usize = 5;
const TOTAL_COLUMNS: usize = WEIGHT_COLUMNS + 2 + METRIC_COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub weights: Vec<f64>,
    pub model_scale: u64,
    pub train_step: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn ingest_from_str(text: &str, path: &str) -> Result<RunLog> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            message: "empty file, expected header".into(),
        })?;
        if header.trim() != RUNLOG_HEADER {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("unexpected header {:?}", header.trim()),
            });
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != TOTAL_COLUMNS {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("expected {TOTAL_COLUMNS} columns, got {}", fields.len()),
                });
            }
            let parse_f64 = |idx: usize| -> Result<f64> {
                fields[idx].trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("column {}: {e}", idx + 1),
                })
            };
            let parse_u64 = |idx: usize| -> Result<u64> {
                fields[idx].trim().parse::<u64>().map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("column {}: {e}", idx + 1),
                })
            };
            let weights: Vec<f64> = (0..WEIGHT_COLUMNS)
                .map(parse_f64)
                .collect::<Result<_>>()?;
            let model_scale = parse_u64(WEIGHT_COLUMNS)?;
            let train_step = parse_u64(WEIGHT_COLUMNS + 1)?;
            let mut metrics = [0.0; METRIC_COUNT];
            for (k, slot) in metrics.iter_mut().enumerate() {
                *slot = parse_f64(WEIGHT_COLUMNS + 2 + k)?;
            }
            let row_index = rows.len();
            MixtureWeights::new(weights.clone()).map_err(|e| Error::Validation {
                row: row_index,
                message: format!("mixture weights invalid: {e}"),
            })?;
            rows.push(RunRow {
                weights,
                model_scale,
                train_step,
                metrics: Metrics(metrics),
            });
        }
        Ok(RunLog { rows })
    }

    pub fn ingest(path: &std::path::Path) -> Result<RunLog> {
        let text = std::fs::read_to_string(path)?;
        RunLog::ingest_from_str(&text, &path.display().to_string())
    }

    pub fn emit_to_string(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for row in &self.rows {
            let mut fields: Vec<String> = row.weights.iter().map(|w| w.to_string()).collect();
            fields.push(row.model_scale.to_string());
            fields.push(row.train_step.to_string());
            fields.extend(row.metrics.0.iter().map(|v| v.to_string()));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn emit(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.emit_to_string())?;
        Ok(())
    }

    /// Rows grouped into runs: rows sharing (weights, scale) belong to one
    /// training run observed at several steps. Groups keep first-seen
    /// order; rows within a group are sorted by step.
    pub fn runs(&self) -> Vec<Vec<usize>> {
        let mut keys: Vec<(u64, Vec<u64>)> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let key = (
                row.model_scale,
                row.weights.iter().map(|w| w.to_bits()).collect::<Vec<u64>>(),
            );
            match keys.iter().position(|k| *k == key) {
                Some(g) => groups[g].push(i),
                None => {
                    keys.push(key);
                    groups.push(vec![i]);
                }
            }
        }
        for group in &mut groups {
            group.sort_by_key(|&i| self.rows[i].train_step);
        }
        groups
    }
}

/// Synthesizes a run log from a surface: `n_runs` full-depth runs with
/// Dirichlet(1) mixtures and uniformly drawn scales, each observed at
/// every grid step.
pub fn synthesize_runlog(spec: &SurfaceSpec, n_runs: usize, seed: u64) -> Result<RunLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..n_runs {
        let w = MixtureWeights::sample_dirichlet(spec.n_datasets, 1.0, &mut rng)?;
        let scale = spec.scales[rng.random_range(0..spec.scales.len())];
        let up_to = *spec.steps.last().expect("non-empty step grid");
        for (step, metrics) in spec.curve(&w, scale, up_to)? {
            rows.push(RunRow {
                weights: w.as_slice().to_vec(),
                model_scale: scale,
                train_step: step,
                metrics,
            });
        }
    }
    Ok(RunLog { rows })
}

/// Synthesizes independent single-row observations (no curve expansion) at
/// a fixed step for the given per-scale counts.
pub fn synthesize_rows_at(
    spec: &SurfaceSpec,
    counts: &[(u64, usize)],
    step: u64,
    seed: u64,
) -> Result<RunLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &(scale, count) in counts {
        for _ in 0..count {
            let w = MixtureWeights::sample_dirichlet(spec.n_datasets, 1.0, &mut rng)?;
            let config = Configuration {
                mixture: w.clone(),
                model_scale: scale,
                train_step: step,
            };
            rows.push(RunRow {
                weights: w.as_slice().to_vec(),
                model_scale: scale,
                train_step: step,
                metrics: spec.evaluate(&config)?,
            });
        }
    }
    Ok(RunLog { rows })
}
