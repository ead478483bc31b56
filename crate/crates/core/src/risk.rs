//! Risk functionals over empirical, model and population distributions, and
//! assembly of the high-probability expected-risk bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{complexity_closed_form, PosteriorSpec};
use crate::dataset::{Dataset, JointDistribution};
use crate::error::{check_len, invalid, Error, Result};
use crate::fitdiag;
use crate::model::{forward, ModelSpec, ParamVector};
use crate::prob::{kl_divergence, softmax, Logits, Pmf};

/// Default clip level for the bounded cross-entropy, in nats.
pub const DEFAULT_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    #[default]
    SoftmaxCrossEntropy,
    ClippedCrossEntropy { l_max: f64 },
    ZeroOne,
}

impl LossSpec {
    pub fn clipped() -> Self {
        LossSpec::ClippedCrossEntropy {
            l_max: DEFAULT_CLIP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossSpec::ClippedCrossEntropy { l_max } = self {
            if !(*l_max > 0.0 && l_max.is_finite()) {
                return invalid(format!(
                    "clip level must be positive and finite, got {l_max}"
                ));
            }
        }
        Ok(())
    }

    /// `L = ‖ℓ‖_∞`; infinite for plain cross-entropy.
    pub fn loss_sup(&self) -> f64 {
        match self {
            LossSpec::SoftmaxCrossEntropy => f64::INFINITY,
            LossSpec::ClippedCrossEntropy { l_max } => *l_max,
            LossSpec::ZeroOne => 1.0,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.loss_sup().is_finite()
    }

    /// `ℓ(f(x))`: the loss of every label at once.
    pub fn loss_vector(&self, logits: &Logits) -> Vec<f64> {
        let f = logits.values();
        match self {
            LossSpec::SoftmaxCrossEntropy | LossSpec::ClippedCrossEntropy { .. } => {
                let (_, ln_z) = softmax(logits);
                let cap = self.loss_sup();
                f.iter().map(|fy| (ln_z - fy).max(0.0).min(cap)).collect()
            }
            LossSpec::ZeroOne => {
                let pred = argmax(f);
                (0..f.len())
                    .map(|y| if y == pred { 0.0 } else { 1.0 })
                    .collect()
            }
        }
    }
}

/// Lowest index among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Which conditional (or joint) distribution a risk is taken under.
#[derive(Debug, Clone, Copy)]
pub enum ConditionalSource<'a> {
    /// The dataset's `q_X(x) q_{Y|x}(y)`.
    Empirical,
    /// `q_X(x) p_{Y|x}(y)` with `p` the model's predictive distribution.
    Model,
    /// A full population joint `q̄`.
    External(&'a JointDistribution),
}

/// `Σ_y w_y ℓ_y` with `0·∞ = 0`.
fn weighted_loss(w: &[f64], loss: &[f64]) -> f64 {
    w.iter()
        .zip(loss)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, l)| w * l)
        .sum()
}

fn finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InfiniteRisk)
    }
}

/// `R_ℓ(f_θ, ·)` under the selected distribution.
pub fn risk(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    source: ConditionalSource<'_>,
    loss: &LossSpec,
) -> Result<f64> {
    loss.validate()?;
    check_len(spec.num_classes, dataset.num_classes())?;
    let terms: Vec<f64> = match source {
        ConditionalSource::Empirical | ConditionalSource::Model => dataset
            .entries()
            .par_iter()
            .map(|e| {
                let logits = forward(spec, theta, &e.x)?;
                let l = loss.loss_vector(&logits);
                let w = match source {
                    ConditionalSource::Model => softmax(&logits).0,
                    _ => e.q_yx.clone(),
                };
                Ok(e.weight * weighted_loss(w.probs(), &l))
            })
            .collect::<Result<_>>()?,
        ConditionalSource::External(q_bar) => {
            check_len(spec.num_classes, q_bar.num_classes())?;
            let k = q_bar.num_classes();
            q_bar
                .points()
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let w = &q_bar.pmf().probs()[i * k..(i + 1) * k];
                    if w.iter().all(|v| *v == 0.0) {
                        return Ok(0.0);
                    }
                    let logits = forward(spec, theta, x)?;
                    Ok(weighted_loss(w, &loss.loss_vector(&logits)))
                })
                .collect::<Result<_>>()?
        }
    };
    finite(terms.iter().sum())
}

/// Expected rate function `E_X D_KL(q_{Y|x} ‖ p_{Y|x})`.
pub fn erf_risk(spec: &ModelSpec, theta: &ParamVector, dataset: &Dataset) -> Result<f64> {
    check_len(spec.num_classes, dataset.num_classes())?;
    let terms: Vec<f64> = dataset
        .entries()
        .par_iter()
        .map(|e| {
            let p = softmax(&forward(spec, theta, &e.x)?).0;
            Ok(e.weight * kl_divergence(&e.q_yx, &p)?)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// `|R_ℓ(f, q̄) − R_ℓ(f, q)|`.
pub fn gen_error(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    q_bar: &JointDistribution,
    loss: &LossSpec,
) -> Result<f64> {
    check_len(q_bar.input_dim(), dataset.input_dim())?;
    for (i, e) in dataset.entries().iter().enumerate() {
        if q_bar.support_index(&e.x).is_none() {
            return Err(Error::OutsideSupport(i));
        }
    }
    let population = risk(
        spec,
        theta,
        dataset,
        ConditionalSource::External(q_bar),
        loss,
    )?;
    let empirical = risk(spec, theta, dataset, ConditionalSource::Empirical, loss)?;
    Ok((population - empirical).abs())
}

/// Right-hand side of the expected-risk bound, with its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBoundReport {
    pub model_risk: f64,
    pub fit_bound_term: f64,
    pub gen_epsilon: f64,
    pub delta: f64,
    pub total_bound: f64,
    pub complexity: f64,
    pub loss_sup: f64,
    /// Heuristic: scale regularization strength by `√C(q)` (0 when `C = 0`).
    pub suggested_regularization_multiplier: f64,
}

/// `ε(δ) = L √(C / δ)`: the deviation exceeded with probability at most `δ`.
pub fn gen_epsilon(complexity: f64, loss_sup: f64, delta: f64) -> f64 {
    loss_sup * (complexity.max(0.0) / delta).sqrt()
}

/// `R_ℓ(f, q̄) ≤ R_ℓ(f, p) + √(E_X[F+G]) √(E_X‖ℓ‖²) + L√(C(q)/δ)` with
/// probability at least `1 − δ`.
pub fn expected_risk_bound(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    posterior: &PosteriorSpec,
    delta: f64,
    loss: &LossSpec,
) -> Result<RiskBoundReport> {
    loss.validate()?;
    if !loss.is_bounded() {
        return Err(Error::Config(
            "the expected-risk bound needs a bounded loss (clipped cross-entropy or zero-one)"
                .into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    let model_risk = risk(spec, theta, dataset, ConditionalSource::Model, loss)?;
    let moments = fitdiag::fit_moments(spec, theta, dataset, loss)?;
    let fit_bound_term = moments.mean_residual_sq.sqrt() * moments.loss_l2_mean.sqrt();
    let complexity = complexity_closed_form(posterior);
    let loss_sup = loss.loss_sup();
    let eps = gen_epsilon(complexity, loss_sup, delta);
    Ok(RiskBoundReport {
        model_risk,
        fit_bound_term,
        gen_epsilon: eps,
        delta,
        total_bound: model_risk + fit_bound_term + eps,
        complexity,
        loss_sup,
        suggested_regularization_multiplier: complexity.max(0.0).sqrt(),
    })
}

/// Posterior over the dataset's joint alphabet with a symmetric prior.
pub fn dataset_posterior(dataset: &Dataset, prior_alpha: f64) -> Result<PosteriorSpec> {
    let counts = dataset
        .joint_counts()
        .ok_or_else(|| Error::Validation("dataset carries no sample counts".into()))?;
    PosteriorSpec::symmetric(prior_alpha, counts)
}

/// Conditional `p_{Y|x}` for every dataset entry.
pub fn model_conditionals(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
) -> Result<Vec<Pmf>> {
    dataset
        .entries()
        .par_iter()
        .map(|e| Ok(softmax(&forward(spec, theta, &e.x)?).0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetEntry;
    use crate::prob::{entropy, RngSeed};

    fn three_points() -> Dataset {
        Dataset::from_samples(
            &[vec![0.0], vec![1.0], vec![2.0], vec![2.0]],
            &[0, 1, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn loss_vectors() {
        let f = Logits::new(vec![0.0, 0.0]).unwrap();
        let sce = LossSpec::SoftmaxCrossEntropy.loss_vector(&f);
        assert!((sce[0] - 2f64.ln()).abs() < 1e-15);
        let z = LossSpec::ZeroOne.loss_vector(&f);
        assert_eq!(z, vec![0.0, 1.0]);
        let big = Logits::new(vec![100.0, 0.0]).unwrap();
        assert_eq!(LossSpec::clipped().loss_vector(&big)[1], DEFAULT_CLIP);
        assert!(LossSpec::ClippedCrossEntropy { l_max: -1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn model_risk_is_conditional_entropy_under_cross_entropy() {
        let spec = ModelSpec::linear(1, 3);
        let theta = ParamVector::init(&spec, RngSeed(5));
        let data = Dataset::from_samples(&[vec![0.5], vec![-1.0]], &[0, 2], 3).unwrap();
        let r = risk(
            &spec,
            &theta,
            &data,
            ConditionalSource::Model,
            &LossSpec::SoftmaxCrossEntropy,
        )
        .unwrap();
        let h: f64 = model_conditionals(&spec, &theta, &data)
            .unwrap()
            .iter()
            .zip(data.entries())
            .map(|(p, e)| e.weight * entropy(p))
            .sum();
        assert!((r - h).abs() < 1e-10);
    }

    #[test]
    fn zero_one_risk_by_hand() {
        // f = x·w with w = (−1, 1) per class and no bias: class 1 wins for x > 0
        let spec = ModelSpec::linear(1, 2);
        let theta = ParamVector::new(&spec, vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        let data = three_points();
        // x=0 ties → predicts class 0 (correct), x=1 → 1 (correct), x=2 → 1, wrong on half
        let r = risk(
            &spec,
            &theta,
            &data,
            ConditionalSource::Empirical,
            &LossSpec::ZeroOne,
        )
        .unwrap();
        assert!((r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn erf_identity() {
        let spec = ModelSpec::linear(1, 2);
        let theta = ParamVector::init(&spec, RngSeed(11));
        let data = three_points();
        let sce = risk(
            &spec,
            &theta,
            &data,
            ConditionalSource::Empirical,
            &LossSpec::SoftmaxCrossEntropy,
        )
        .unwrap();
        let erf = erf_risk(&spec, &theta, &data).unwrap();
        assert!((sce - erf - data.conditional_entropy()).abs() < 1e-10);
    }

    #[test]
    fn one_hot_fit_has_zero_cross_entropy() {
        let spec = ModelSpec::linear(1, 2);
        // huge bias drives p to one-hot within double precision
        let theta = ParamVector::new(&spec, vec![0.0, 0.0, 800.0, 0.0]).unwrap();
        let data = Dataset::new(vec![DatasetEntry {
            x: vec![1.0],
            q_yx: Pmf::one_hot(2, 0),
            weight: 1.0,
            label_counts: None,
        }])
        .unwrap();
        for src in [ConditionalSource::Empirical, ConditionalSource::Model] {
            let r = risk(&spec, &theta, &data, src, &LossSpec::SoftmaxCrossEntropy).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn gen_error_cases() {
        let spec = ModelSpec::linear(1, 2);
        let theta = ParamVector::init(&spec, RngSeed(1));
        let data = three_points();
        let same = JointDistribution::from_dataset(&data);
        assert!(gen_error(&spec, &theta, &data, &same, &LossSpec::ZeroOne).unwrap() < 1e-15);

        let elsewhere =
            JointDistribution::new(vec![vec![0.0], vec![1.0]], 2, Pmf::uniform(4)).unwrap();
        assert!(matches!(
            gen_error(&spec, &theta, &data, &elsewhere, &LossSpec::ZeroOne),
            Err(Error::OutsideSupport(2))
        ));
    }

    #[test]
    fn bound_rejects_bad_inputs() {
        let spec = ModelSpec::linear(1, 2);
        let theta = ParamVector::init(&spec, RngSeed(1));
        let data = three_points();
        let post = dataset_posterior(&data, 1.0).unwrap();
        assert!(matches!(
            expected_risk_bound(
                &spec,
                &theta,
                &data,
                &post,
                0.1,
                &LossSpec::SoftmaxCrossEntropy
            ),
            Err(Error::Config(_))
        ));
        assert!(expected_risk_bound(&spec, &theta, &data, &post, 1.0, &LossSpec::ZeroOne).is_err());
        let r = expected_risk_bound(&spec, &theta, &data, &post, 0.1, &LossSpec::ZeroOne).unwrap();
        assert!((r.total_bound - (r.model_risk + r.fit_bound_term + r.gen_epsilon)).abs() < 1e-15);
    }

    #[test]
    fn epsilon_scaling() {
        let base = gen_epsilon(0.02, 1.0, 0.1);
        assert!((gen_epsilon(0.02, 1.0, 0.025) - 2.0 * base).abs() < 1e-14);
        assert!((gen_epsilon(0.02, 3.0, 0.1) - 3.0 * base).abs() < 1e-14);
        assert_eq!(gen_epsilon(0.0, 1.0, 0.999), 0.0);
    }
}
