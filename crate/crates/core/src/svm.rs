//! Linear SVM with L1 hinge loss, trained by dual coordinate descent.
//!
//! The bias is folded in as an extra feature that is always 1, so the dual
//! has only box constraints `0 <= alpha_i <= C` and each coordinate update is
//! a clipped Newton step.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, Vocabulary};

pub const MODEL_FORMAT: &str = "wxhome-linear-svm 1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub cost: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale each class's cost by `n / (2 * n_class)`.
    pub balanced: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            cost: 0.025,
            tol: 1e-3,
            max_iter: 1000,
            seed: 0,
            balanced: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub iterations: usize,
    /// Largest projected-gradient magnitude at the returned duals.
    pub kkt_residual: f64,
    pub converged: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
    bias: f64,
    cost: f64,
    meta: TrainMeta,
}

impl LinearModel {
    pub fn from_parts(weights: Vec<f64>, bias: f64, cost: f64) -> Result<Self> {
        if !(cost > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cost must be positive, got {cost}"
            )));
        }
        Ok(Self {
            weights,
            bias,
            cost,
            meta: TrainMeta {
                iterations: 0,
                kkt_residual: 0.0,
                converged: true,
                seed: 0,
            },
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    /// Text serialisation bound to `vocab` by its fingerprint.
    pub fn to_text(&self, vocab: &Vocabulary) -> Result<String> {
        if vocab.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: vocab.len(),
            });
        }
        let nonzero: Vec<(usize, f64)> = self
            .weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w != 0.0)
            .collect();
        let mut out = String::new();
        writeln!(out, "{MODEL_FORMAT}").unwrap();
        writeln!(out, "vocabulary {}", vocab.fingerprint()).unwrap();
        writeln!(out, "dim {}", self.dim()).unwrap();
        writeln!(out, "cost {}", self.cost).unwrap();
        writeln!(out, "bias {}", self.bias).unwrap();
        writeln!(out, "iterations {}", self.meta.iterations).unwrap();
        writeln!(out, "kkt_residual {}", self.meta.kkt_residual).unwrap();
        writeln!(out, "converged {}", self.meta.converged).unwrap();
        writeln!(out, "seed {}", self.meta.seed).unwrap();
        writeln!(out, "nonzero {}", nonzero.len()).unwrap();
        for (i, w) in nonzero {
            writeln!(out, "{i} {w}").unwrap();
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text(vocab)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body, vocab).map_err(|(line, msg)| match msg {
            ParseFailure::Mismatch(model, given) => Error::VocabularyMismatch { model, given },
            ParseFailure::Message(m) => Error::parse(path, line, m),
        })
    }

    fn parse(body: &str, vocab: &Vocabulary) -> std::result::Result<Self, (u64, ParseFailure)> {
        let mut lines = body.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
        let mut next = |key: &str| -> std::result::Result<(u64, String), (u64, ParseFailure)> {
            let (n, line) = lines
                .next()
                .ok_or((0, ParseFailure::Message(format!("missing {key:?}"))))?;
            if key.is_empty() {
                return Ok((n, line.to_string()));
            }
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err((n, ParseFailure::Message(format!("expected {key:?}")))),
            }
        };
        let (n, header) = next("")?;
        if header != MODEL_FORMAT {
            return Err((
                n,
                ParseFailure::Message(format!("unsupported format {header:?}")),
            ));
        }
        let (_, fingerprint) = next("vocabulary")?;
        if fingerprint != vocab.fingerprint() {
            return Err((0, ParseFailure::Mismatch(fingerprint, vocab.fingerprint())));
        }
        fn num<T: std::str::FromStr>(
            (n, v): (u64, String),
        ) -> std::result::Result<T, (u64, ParseFailure)> {
            v.parse()
                .map_err(|_| (n, ParseFailure::Message(format!("bad number {v:?}"))))
        }
        let dim: usize = num(next("dim")?)?;
        if dim != vocab.len() {
            return Err((
                0,
                ParseFailure::Message(format!("dim {dim} != vocabulary size")),
            ));
        }
        let cost: f64 = num(next("cost")?)?;
        let bias: f64 = num(next("bias")?)?;
        let iterations: usize = num(next("iterations")?)?;
        let kkt_residual: f64 = num(next("kkt_residual")?)?;
        let converged: bool = num(next("converged")?)?;
        let seed: u64 = num(next("seed")?)?;
        let nonzero: usize = num(next("nonzero")?)?;
        let mut weights = vec![0.0; dim];
        for _ in 0..nonzero {
            let (n, line) = next("")?;
            let (i, w) = line
                .split_once(' ')
                .ok_or((n, ParseFailure::Message("expected `index weight`".into())))?;
            let i: usize = num((n, i.to_string()))?;
            if i >= dim {
                return Err((n, ParseFailure::Message(format!("index {i} out of range"))));
            }
            weights[i] = num((n, w.to_string()))?;
        }
        Ok(Self {
            weights,
            bias,
            cost,
            meta: TrainMeta {
                iterations,
                kkt_residual,
                converged,
                seed,
            },
        })
    }
}

enum ParseFailure {
    Message(String),
    Mismatch(String, String),
}

/// A trained model together with its dual variables.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub model: LinearModel,
    pub alpha: Vec<f64>,
    /// Per-example upper bound on `alpha`.
    pub upper: Vec<f64>,
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

fn check_inputs(vectors: &[FeatureVector], labels: &[bool]) -> Result<usize> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            actual: labels.len(),
        });
    }
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.dim(),
        });
    }
    Ok(dim)
}

/// Augmented score `w . x + b`.
fn margin(weights: &[f64], bias: f64, x: &FeatureVector) -> f64 {
    x.active().iter().map(|&j| weights[j as usize]).sum::<f64>() + bias
}

fn projected_gradient(g: f64, alpha: f64, upper: f64) -> f64 {
    if alpha <= 0.0 {
        g.min(0.0)
    } else if alpha >= upper {
        g.max(0.0)
    } else {
        g
    }
}

pub fn train(
    vectors: &[FeatureVector],
    labels: &[bool],
    params: TrainParams,
) -> Result<LinearModel> {
    train_dual(vectors, labels, params).map(|s| s.model)
}

pub fn train_dual(
    vectors: &[FeatureVector],
    labels: &[bool],
    params: TrainParams,
) -> Result<DualSolution> {
    let dim = check_inputs(vectors, labels)?;
    if !(params.cost > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cost must be positive, got {}",
            params.cost
        )));
    }
    let n = vectors.len();
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    let upper: Vec<f64> = labels
        .iter()
        .map(|&l| {
            if params.balanced {
                let class = if l { positives } else { n - positives };
                params.cost * n as f64 / (2.0 * class as f64)
            } else {
                params.cost
            }
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| sign(l)).collect();
    // diagonal of Q: |x_i|^2 plus the bias feature
    let qd: Vec<f64> = vectors.iter().map(|v| v.nnz() as f64 + 1.0).collect();

    let mut alpha = vec![0.0; n];
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        order.shuffle(&mut rng);
        let mut worst: f64 = 0.0;
        for &i in &order {
            let g = y[i] * margin(&weights, bias, &vectors[i]) - 1.0;
            let pg = projected_gradient(g, alpha[i], upper[i]);
            worst = worst.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper[i]);
                let step = (alpha[i] - old) * y[i];
                for &j in vectors[i].active() {
                    weights[j as usize] += step;
                }
                bias += step;
            }
        }
        iterations += 1;
        if worst < params.tol {
            converged = true;
            break;
        }
    }

    let kkt_residual = (0..n)
        .map(|i| {
            let g = y[i] * margin(&weights, bias, &vectors[i]) - 1.0;
            projected_gradient(g, alpha[i], upper[i]).abs()
        })
        .fold(0.0, f64::max);

    Ok(DualSolution {
        model: LinearModel {
            weights,
            bias,
            cost: params.cost,
            meta: TrainMeta {
                iterations,
                kkt_residual,
                converged,
                seed: params.seed,
            },
        },
        alpha,
        upper,
    })
}

/// Dual objective `0.5 |sum_i alpha_i y_i x~_i|^2 - sum_i alpha_i` (to be minimised),
/// with `x~` the bias-augmented vector.
pub fn dual_objective(vectors: &[FeatureVector], labels: &[bool], alpha: &[f64]) -> Result<f64> {
    let dim = check_inputs(vectors, labels)?;
    let mut w = vec![0.0; dim + 1];
    for ((x, &l), &a) in vectors.iter().zip(labels).zip(alpha) {
        for &j in x.active() {
            w[j as usize] += a * sign(l);
        }
        w[dim] += a * sign(l);
    }
    let norm: f64 = w.iter().map(|v| v * v).sum();
    Ok(0.5 * norm - alpha.iter().sum::<f64>())
}

/// Primal objective `0.5 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w . x_i + b))`.
pub fn primal_objective(
    model: &LinearModel,
    vectors: &[FeatureVector],
    labels: &[bool],
) -> Result<f64> {
    check_inputs(vectors, labels)?;
    let reg = 0.5 * (model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias);
    let mut loss = 0.0;
    for (x, &l) in vectors.iter().zip(labels) {
        loss += (1.0 - sign(l) * decision(model, x)?).max(0.0);
    }
    Ok(reg + model.cost * loss)
}

pub fn decision(model: &LinearModel, v: &FeatureVector) -> Result<f64> {
    if v.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: v.dim(),
        });
    }
    Ok(margin(&model.weights, model.bias, v))
}

/// `true` (rain) iff the decision value is strictly positive.
pub fn predict(model: &LinearModel, v: &FeatureVector) -> Result<bool> {
    decision(model, v).map(|d| d > 0.0)
}
