//! Synthetic training runs with per-epoch diagnostics.
//!
//! A grid of feature points is labeled by a random linear teacher with
//! symmetric label noise, giving an exactly known population joint `q̄`.
//! A small network is trained by mini-batch SGD with momentum and weight
//! decay; after every epoch the full training set is diagnosed (`E_X[F]`,
//! `E_X[G]`, `max_x λmax`) and test accuracy is recorded. Pearson
//! correlations between accuracy and the diagnostics are then taken over the
//! post-stabilization tail.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, JointDistribution};
use crate::error::{check_len, invalid, Error, Result};
use crate::fitdiag::fit_report;
use crate::model::{forward, vjp, ModelSpec, ParamVector};
use crate::prob::{softmax, Pmf, RngSeed};
use crate::risk::{risk, ConditionalSource, LossSpec};

/// Upper limit on `num_grid_points · num_classes`.
pub const MAX_JOINT_ALPHABET: usize = 10_000;

/// Teacher redraws allowed before giving up on covering every class.
pub const TEACHER_ATTEMPTS: usize = 10;

const SEED_DATA: u64 = 1;
const SEED_INIT: u64 = 2;
const SEED_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDataSpec {
    pub num_grid_points: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub label_noise: f64,
    pub train_n: u64,
    pub test_n: u64,
}

impl Default for SyntheticDataSpec {
    fn default() -> Self {
        Self {
            num_grid_points: 64,
            input_dim: 2,
            num_classes: 3,
            label_noise: 0.1,
            train_n: 1000,
            test_n: 1000,
        }
    }
}

impl SyntheticDataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_grid_points == 0 || self.input_dim == 0 || self.num_classes == 0 {
            return invalid("grid points, input dimension and classes must be positive");
        }
        if self.num_grid_points * self.num_classes > MAX_JOINT_ALPHABET {
            return invalid(format!(
                "joint alphabet {} exceeds {MAX_JOINT_ALPHABET}",
                self.num_grid_points * self.num_classes
            ));
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return invalid(format!("label noise {} outside [0, 0.5]", self.label_noise));
        }
        if self.train_n == 0 || self.test_n == 0 {
            return invalid("train and test sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub q_bar: JointDistribution,
}

/// The first `count` points of a regular lattice on `[−1, 1]^dim`.
fn lattice(count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut side = 1usize;
    while side.checked_pow(dim as u32).is_some_and(|v| v < count) {
        side += 1;
    }
    let coord = |i: usize| {
        if side == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (side - 1) as f64
        }
    };
    (0..count)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let c = coord(idx % side);
                    idx /= side;
                    c
                })
                .collect()
        })
        .collect()
}

/// Grid features labeled by a random linear teacher with symmetric label
/// noise. `q_X` is uniform over the grid.
pub fn make_synthetic(spec: &SyntheticDataSpec, seed: RngSeed) -> Result<SyntheticData> {
    spec.validate()?;
    let points = lattice(spec.num_grid_points, spec.input_dim);
    let k = spec.num_classes;
    let mut rng = seed.derive(SEED_DATA).rng();
    let mut teacher_classes = None;
    for _ in 0..TEACHER_ATTEMPTS {
        let w: Vec<f64> = (0..k * spec.input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-0.2..0.2)).collect();
        let classes: Vec<usize> = points
            .iter()
            .map(|x| {
                let scores: Vec<f64> = (0..k)
                    .map(|c| {
                        b[c] + x
                            .iter()
                            .enumerate()
                            .map(|(d, xd)| w[c * spec.input_dim + d] * xd)
                            .sum::<f64>()
                    })
                    .collect();
                let mut best = 0;
                for c in 1..k {
                    if scores[c] > scores[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        let mut seen = vec![false; k];
        for c in &classes {
            seen[*c] = true;
        }
        if seen.iter().all(|s| *s) {
            teacher_classes = Some(classes);
            break;
        }
    }
    let Some(classes) = teacher_classes else {
        return invalid(format!(
            "no teacher covering all {k} classes after {TEACHER_ATTEMPTS} attempts"
        ));
    };

    let mass = 1.0 / points.len() as f64;
    let off = if k > 1 {
        spec.label_noise / (k - 1) as f64
    } else {
        0.0
    };
    let mut joint = Vec::with_capacity(points.len() * k);
    for &c in &classes {
        for y in 0..k {
            let cond = if k == 1 {
                1.0
            } else if y == c {
                1.0 - spec.label_noise
            } else {
                off
            };
            joint.push(mass * cond);
        }
    }
    let q_bar = JointDistribution::new(points, k, Pmf::from_weights(&joint)?)?;
    let train = q_bar.sample_dataset(spec.train_n, &mut rng)?;
    let test = q_bar.sample_dataset(spec.test_n, &mut rng)?;
    Ok(SyntheticData { train, test, q_bar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `(epoch, rate)` pairs; the rate applies from that epoch on.
    pub learning_rate_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: RngSeed,
    pub stabilization_window: usize,
    pub stabilization_tolerance: f64,
    /// Divisor for the scaled-accuracy column of the correlation report.
    pub accuracy_display_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate_schedule: vec![(0, 0.1), (120, 0.01), (160, 0.001)],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 100,
            epochs: 200,
            seed: RngSeed(0),
            stabilization_window: 10,
            stabilization_tolerance: 1e-3,
            accuracy_display_scale: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.learning_rate_schedule;
        if s.first().map(|e| e.0) != Some(0) {
            return invalid("learning-rate schedule must start at epoch 0");
        }
        if s.windows(2).any(|w| w[0].0 >= w[1].0) {
            return invalid("learning-rate schedule epochs must be strictly increasing");
        }
        if s.iter().any(|(_, r)| !(*r >= 0.0 && r.is_finite())) {
            return invalid("learning rates must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("weight decay must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.stabilization_window == 0 {
            return invalid("batch size, epochs and stabilization window must be positive");
        }
        if !(self.stabilization_tolerance > 0.0) {
            return invalid("stabilization tolerance must be positive");
        }
        if !(self.accuracy_display_scale > 0.0) {
            return invalid("accuracy display scale must be positive");
        }
        Ok(())
    }

    /// Rate in force during (zero-based) epoch `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.learning_rate_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(0.0, |(_, r)| *r)
    }
}

/// Heavy-ball SGD with L2 weight decay:
/// `g = ∇L + λθ`, `v ← μv + g`, `θ ← θ − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        for ((t, v), g) in theta.iter_mut().zip(&mut self.velocity).zip(grad) {
            let g = g + self.weight_decay * *t;
            *v = self.momentum * *v + g;
            *t -= lr * *v;
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Diagnostics recorded at the end of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub mean_f: f64,
    pub mean_g: f64,
    pub lambda_max_max: f64,
}

/// Quantities from the same diagnostic pass used to re-check the fitting
/// identities every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochCheck {
    pub mean_residual_sq: f64,
    pub fit_normalized: f64,
    /// `√(E_X[F] + E_X[G])`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub checks: Vec<EpochCheck>,
    pub theta: ParamVector,
}

/// Fraction of test samples whose label equals the model's top class.
pub fn accuracy(spec: &ModelSpec, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    let mut acc = 0.0;
    for e in data.entries() {
        let p = softmax(&forward(spec, theta, &e.x)?).0;
        acc += e.weight * e.q_yx.probs()[p.argmax()];
    }
    Ok(acc)
}

/// One `(entry, label)` pair per training sample.
fn expand_samples(data: &Dataset) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (i, e) in data.entries().iter().enumerate() {
        let Some(counts) = &e.label_counts else {
            return invalid("training needs a dataset built from samples");
        };
        for (y, c) in counts.iter().enumerate() {
            out.extend(std::iter::repeat_n((i, y), *c as usize));
        }
    }
    Ok(out)
}

fn diagnose_epoch(
    spec: &ModelSpec,
    theta: &ParamVector,
    train: &Dataset,
    test: &Dataset,
    epoch: usize,
) -> Result<(EpochRecord, EpochCheck)> {
    let loss = LossSpec::SoftmaxCrossEntropy;
    let train_loss = risk(spec, theta, train, ConditionalSource::Empirical, &loss)?;
    let report = fit_report(spec, theta, train, &loss)?;
    Ok((
        EpochRecord {
            epoch,
            train_loss,
            test_accuracy: accuracy(spec, theta, test)?,
            mean_f: report.mean_f,
            mean_g: report.mean_g,
            lambda_max_max: report.lambda_max_max,
        },
        EpochCheck {
            mean_residual_sq: report.mean_residual_sq,
            fit_normalized: report.fit_normalized,
            bound: report.bound,
        },
    ))
}

/// Trains from the initialization in `config.seed` and returns the epoch
/// records with the final parameters.
pub fn train_model(
    model_spec: &ModelSpec,
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainRun> {
    config.validate()?;
    model_spec.validate()?;
    check_len(model_spec.input_dim, train.input_dim())?;
    check_len(model_spec.input_dim, test.input_dim())?;
    check_len(model_spec.num_classes, train.num_classes())?;
    check_len(model_spec.num_classes, test.num_classes())?;
    let theta = ParamVector::init(model_spec, config.seed.derive(SEED_INIT));
    train_from(model_spec, config, train, test, theta)
}

/// Trains from the given parameters.
pub fn train_from(
    model_spec: &ModelSpec,
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    mut theta: ParamVector,
) -> Result<TrainRun> {
    config.validate()?;
    let mut samples = expand_samples(train)?;
    let mut order_rng = config.seed.derive(SEED_SHUFFLE).rng();
    let m = model_spec.num_params();
    let mut sgd = Sgd::new(m, config.momentum, config.weight_decay);
    let mut records = Vec::with_capacity(config.epochs);
    let mut checks = Vec::with_capacity(config.epochs);
    let k = model_spec.num_classes;
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        samples.shuffle(&mut order_rng);
        for batch in samples.chunks(config.batch_size) {
            let mut grad = vec![0.0; m];
            let scale = 1.0 / batch.len() as f64;
            for &(i, y) in batch {
                let x = &train.entries()[i].x;
                let diverged = |_| Error::Diverged {
                    epoch: epoch + 1,
                    records: records.clone(),
                };
                let p = softmax(&forward(model_spec, &theta, x).map_err(diverged)?).0;
                let mut v = p.into_vec();
                v[y] -= 1.0;
                debug_assert_eq!(v.len(), k);
                let g = vjp(model_spec, &theta, x, &v).map_err(diverged)?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += scale * gi;
                }
            }
            sgd.step(theta.as_mut_slice(), &grad, lr);
            if theta.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    records,
                });
            }
        }
        match diagnose_epoch(model_spec, &theta, train, test, epoch + 1) {
            Ok((record, check)) if record.train_loss.is_finite() => {
                records.push(record);
                checks.push(check);
            }
            _ => {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    records,
                })
            }
        }
    }
    Ok(TrainRun {
        records,
        checks,
        theta,
    })
}

/// Mini-batch SGD on softmax cross-entropy; one record per epoch.
pub fn train(
    model_spec: &ModelSpec,
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<EpochRecord>> {
    Ok(train_model(model_spec, config, train, test)?.records)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_len(xs.len(), ys.len())?;
    if xs.len() < 3 {
        return invalid("correlation needs at least 3 points");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Rounding in the mean leaves ~ε² variance on a constant sequence.
    let floor = |v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        n * (8.0 * f64::EPSILON * scale).powi(2)
    };
    if sxx <= floor(xs) || syy <= floor(ys) {
        return Err(Error::UndefinedCorrelation(
            "a sequence has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,test_accuracy,mean_f,mean_g,lambda_max_max";

pub fn records_to_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        return Ok(format!("{EPOCH_CSV_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != EPOCH_CSV_HEADER {
        return invalid(format!(
            "expected header {EPOCH_CSV_HEADER}, found {}",
            header.join(",")
        ));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub seed: u64,
    /// Epoch at which the train-loss window first fell within tolerance.
    pub stabilized_at: Option<usize>,
    pub r_accuracy_f: Option<f64>,
    pub r_accuracy_g: Option<f64>,
    pub window: usize,
    pub tail_start_epoch: usize,
    pub tail_len: usize,
    pub unstable: bool,
    pub accuracy_display_scale: f64,
    /// Test accuracy divided by the display scale, one per epoch.
    pub scaled_accuracy: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Index of the first record ending a stable train-loss window.
fn stabilization_index(records: &[EpochRecord], window: usize, tol: f64) -> Option<usize> {
    if records.len() < window {
        return None;
    }
    (window - 1..records.len()).find(|&end| {
        let w = &records[end + 1 - window..=end];
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.train_loss), hi.max(r.train_loss))
            });
        hi - lo < tol
    })
}

/// Correlates test accuracy with `E_X[F]` and `E_X[G]` over the
/// post-stabilization tail (or the final window when training never
/// stabilizes).
pub fn correlate_records(
    records: &[EpochRecord],
    config: &TrainConfig,
    seed: RngSeed,
) -> Result<CorrelationReport> {
    if records.is_empty() {
        return invalid("no epoch records");
    }
    let window = config.stabilization_window;
    let mut warnings = Vec::new();
    let stable = stabilization_index(records, window, config.stabilization_tolerance);
    let mut start = match stable {
        Some(i) => i,
        None => {
            warnings.push("training loss never stabilized; correlating the final window".into());
            records.len().saturating_sub(window)
        }
    };
    if records.len() - start < 3 {
        warnings.push("post-stabilization tail shorter than 3 epochs; extended backwards".into());
        start = records.len().saturating_sub(window.max(3));
    }
    let tail = &records[start..];
    let acc: Vec<f64> = tail.iter().map(|r| r.test_accuracy).collect();
    let mut corr = |name: &str, ys: Vec<f64>| match pearson(&acc, &ys) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("accuracy vs {name}: {e}"));
            None
        }
    };
    let r_accuracy_f = corr("mean_f", tail.iter().map(|r| r.mean_f).collect());
    let r_accuracy_g = corr("mean_g", tail.iter().map(|r| r.mean_g).collect());
    Ok(CorrelationReport {
        seed: seed.0,
        stabilized_at: stable.map(|i| records[i].epoch),
        r_accuracy_f,
        r_accuracy_g,
        window,
        tail_start_epoch: tail[0].epoch,
        tail_len: tail.len(),
        unstable: stable.is_none(),
        accuracy_display_scale: config.accuracy_display_scale,
        scaled_accuracy: records
            .iter()
            .map(|r| r.test_accuracy / config.accuracy_display_scale)
            .collect(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRun {
    pub records_csv: String,
    pub report: CorrelationReport,
    pub run: TrainRun,
    pub data: SyntheticData,
}

/// Generates data, trains, and correlates; `seed` drives data, init and
/// shuffling (it replaces `config.seed`).
pub fn run_correlation_experiment(
    model_spec: &ModelSpec,
    config: &TrainConfig,
    data_spec: &SyntheticDataSpec,
    seed: RngSeed,
) -> Result<CorrelationRun> {
    let data = make_synthetic(data_spec, seed)?;
    let config = TrainConfig {
        seed,
        ..config.clone()
    };
    let run = train_model(model_spec, &config, &data.train, &data.test)?;
    let report = correlate_records(&run.records, &config, seed)?;
    Ok(CorrelationRun {
        records_csv: records_to_csv(&run.records)?,
        report,
        run,
        data,
    })
}

/// The default toy network: `input_dim`-16-`num_classes` with tanh.
pub fn default_model(data_spec: &SyntheticDataSpec) -> ModelSpec {
    ModelSpec {
        input_dim: data_spec.input_dim,
        hidden_dims: vec![16],
        num_classes: data_spec.num_classes,
        activation: crate::model::Activation::Tanh,
    }
}
