//! Grouped labeled datasets and joint distributions over a discrete
//! feature support.
//!
//! A [`Dataset`] stores one entry per distinct feature vector: its marginal
//! weight `q_X(x)` and conditional label PMF `q_{Y|x}`. Joint symbols are
//! indexed as `z = i·|𝒴| + y` where `i` is the entry (or point) index.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::prob::{entropy, sample_counts, Pmf, PMF_SUM_TOL};

/// Hashable identity of a feature vector; `-0.0` and `0.0` coincide.
fn feature_key(x: &[f64]) -> Vec<u64> {
    x.iter()
        .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub x: Vec<f64>,
    pub q_yx: Pmf,
    pub weight: f64,
    /// Raw label counts when the entry was built from samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_counts: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    entries: Vec<DatasetEntry>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return invalid("dataset is empty");
        };
        let input_dim = first.x.len();
        let num_classes = first.q_yx.alphabet_size();
        let mut seen = HashMap::with_capacity(entries.len());
        let mut total = 0.0;
        for (i, e) in entries.iter().enumerate() {
            check_len(input_dim, e.x.len())?;
            check_len(num_classes, e.q_yx.alphabet_size())?;
            if e.x.iter().any(|v| !v.is_finite()) {
                return invalid(format!("entry {i} has a non-finite feature"));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return invalid(format!(
                    "entry {i} has weight {} (must be positive)",
                    e.weight
                ));
            }
            if seen.insert(feature_key(&e.x), i).is_some() {
                return invalid(format!("entry {i} repeats an earlier feature vector"));
            }
            total += e.weight;
        }
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self {
            entries,
            input_dim,
            num_classes,
        })
    }

    /// Groups raw `(x, label)` samples into distinct features, in order of
    /// first appearance.
    pub fn from_samples(xs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        check_len(xs.len(), labels.len())?;
        if xs.is_empty() {
            return invalid("no samples");
        }
        let mut index = HashMap::new();
        let mut points: Vec<&[f64]> = Vec::new();
        let mut counts: Vec<Vec<u64>> = Vec::new();
        for (x, &y) in xs.iter().zip(labels) {
            if y >= num_classes {
                return invalid(format!("label {y} out of range for {num_classes} classes"));
            }
            let i = *index.entry(feature_key(x)).or_insert_with(|| {
                points.push(x);
                counts.push(vec![0; num_classes]);
                points.len() - 1
            });
            counts[i][y] += 1;
        }
        let n = xs.len() as f64;
        let entries = points
            .into_iter()
            .zip(counts)
            .map(|(x, c)| {
                let total: u64 = c.iter().sum();
                Ok(DatasetEntry {
                    x: x.to_vec(),
                    q_yx: Pmf::from_counts(&c)?,
                    weight: total as f64 / n,
                    label_counts: Some(c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(renormalize(entries))
    }

    /// Dataset with the given joint counts over `points × classes`; points with
    /// no samples are dropped.
    pub fn from_joint_counts(
        points: &[Vec<f64>],
        num_classes: usize,
        counts: &[u64],
    ) -> Result<Self> {
        check_len(points.len() * num_classes, counts.len())?;
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return invalid("all counts are zero");
        }
        let entries = points
            .iter()
            .zip(counts.chunks(num_classes))
            .filter(|(_, c)| c.iter().any(|v| *v > 0))
            .map(|(x, c)| {
                let total: u64 = c.iter().sum();
                Ok(DatasetEntry {
                    x: x.clone(),
                    q_yx: Pmf::from_counts(c)?,
                    weight: total as f64 / n as f64,
                    label_counts: Some(c.to_vec()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(renormalize(entries))
    }

    /// Reads a CSV with header `f0,f1,…,label`. The class count defaults to
    /// the largest label plus one.
    pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        let expected: Vec<String> = (0..dim)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        if dim == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
            return invalid(format!(
                "dataset header must be f0,…,f{{d-1}},label; found {:?}",
                headers.iter().collect::<Vec<_>>()
            ));
        }
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let parse_err =
                |field: &str| Error::Validation(format!("row {}: cannot parse {field:?}", row + 1));
            let x = record
                .iter()
                .take(dim)
                .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(s)))
                .collect::<Result<Vec<_>>>()?;
            let label_str = record.get(dim).unwrap_or("").trim();
            let label = label_str
                .parse::<usize>()
                .map_err(|_| parse_err(label_str))?;
            xs.push(x);
            labels.push(label);
        }
        if xs.is_empty() {
            return invalid("dataset has no rows");
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Self::from_samples(&xs, &labels, k)
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Empirical joint `q(x_i, y)` at `z = i·|𝒴| + y`.
    pub fn joint_pmf(&self) -> Pmf {
        let probs: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|e| e.q_yx.probs().iter().map(move |q| e.weight * q))
            .collect();
        Pmf::from_weights(&probs).expect("a valid dataset has a valid joint")
    }

    /// Joint sample counts, if every entry carries them.
    pub fn joint_counts(&self) -> Option<Vec<u64>> {
        let mut out = Vec::with_capacity(self.entries.len() * self.num_classes);
        for e in &self.entries {
            out.extend(e.label_counts.as_ref()?);
        }
        Some(out)
    }

    /// Total sample count, if known.
    pub fn sample_count(&self) -> Option<u64> {
        self.joint_counts().map(|c| c.iter().sum())
    }

    /// `H_q(Y|X) = E_X H(q_{Y|x})`.
    pub fn conditional_entropy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.weight * entropy(&e.q_yx))
            .sum()
    }

    /// Index of the entry at feature vector `x`.
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        let key = feature_key(x);
        self.entries.iter().position(|e| feature_key(&e.x) == key)
    }
}

/// Rescales weights so rounding in `c/n` cannot break the sum check.
fn renormalize(mut entries: Vec<DatasetEntry>) -> Vec<DatasetEntry> {
    let total: f64 = entries.iter().map(|e| e.weight).sum();
    for e in &mut entries {
        e.weight /= total;
    }
    entries
}

/// A joint PMF over `points × classes`, used as the population `q̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    points: Vec<Vec<f64>>,
    num_classes: usize,
    pmf: Pmf,
}

impl JointDistribution {
    pub fn new(points: Vec<Vec<f64>>, num_classes: usize, pmf: Pmf) -> Result<Self> {
        if points.is_empty() || num_classes == 0 {
            return invalid("joint distribution needs points and classes");
        }
        check_len(points.len() * num_classes, pmf.alphabet_size())?;
        let dim = points[0].len();
        let mut seen = HashMap::new();
        for (i, x) in points.iter().enumerate() {
            check_len(dim, x.len())?;
            if seen.insert(feature_key(x), i).is_some() {
                return invalid(format!("point {i} is repeated"));
            }
        }
        Ok(Self {
            points,
            num_classes,
            pmf,
        })
    }

    /// The empirical joint of a dataset.
    pub fn from_dataset(data: &Dataset) -> Self {
        Self {
            points: data.entries.iter().map(|e| e.x.clone()).collect(),
            num_classes: data.num_classes,
            pmf: data.joint_pmf(),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pmf(&self) -> &Pmf {
        &self.pmf
    }

    pub fn input_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn marginal(&self, i: usize) -> f64 {
        let k = self.num_classes;
        self.pmf.probs()[i * k..(i + 1) * k].iter().sum()
    }

    /// `q̄_{Y|x_i}`, or `None` when `x_i` has no mass.
    pub fn conditional(&self, i: usize) -> Option<Pmf> {
        let k = self.num_classes;
        Pmf::from_weights(&self.pmf.probs()[i * k..(i + 1) * k]).ok()
    }

    /// Index of `x` among points with positive mass.
    pub fn support_index(&self, x: &[f64]) -> Option<usize> {
        let key = feature_key(x);
        self.points
            .iter()
            .position(|p| feature_key(p) == key)
            .filter(|&i| self.marginal(i) > 0.0)
    }

    /// Draws `n` i.i.d. samples and groups them into a dataset.
    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Result<Dataset> {
        if n == 0 {
            return invalid("sample size must be positive");
        }
        let counts = sample_counts(&self.pmf, n, rng);
        Dataset::from_joint_counts(&self.points, self.num_classes, &counts)
    }
}
