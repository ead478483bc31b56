//! Finite-alphabet probability primitives.
//!
//! Everything here works on dense probability vectors in double precision.
//! Conventions: `0 · ln 0 = 0`, and a KL term with `q(z) > 0`, `p(z) = 0`
//! evaluates to `+∞` (never NaN).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// Absolute tolerance on `Σ p = 1` accepted by [`Pmf::new`].
pub const PMF_SUM_TOL: f64 = 1e-12;

/// A probability vector over a finite alphabet `{0, .., k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("empty probability vector");
        }
        if let Some((i, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return invalid(format!("probability entry {i} is {v}"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return invalid(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("weights must be finite and non-negative");
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return invalid("weights sum to zero");
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return invalid("counts sum to zero");
        }
        let n = n as f64;
        Self::new(counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution over an empty alphabet");
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k);
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alphabet_size(&self) -> usize {
        self.probs.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.probs.iter().enumerate() {
            if v > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// `E_p f` for a function tabulated on the alphabet.
    pub fn expect(&self, f: &[f64]) -> Result<f64> {
        check_len(self.probs.len(), f.len())?;
        Ok(self.probs.iter().zip(f).map(|(p, v)| p * v).sum())
    }
}

impl<'de> Deserialize<'de> for Pmf {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            probs: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        Pmf::new(raw.probs).map_err(serde::de::Error::custom)
    }
}

/// Real-valued log-scores, one per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("empty logit vector");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("logit {i} is not finite ({})", values[i]));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Seed for every random operation.
///
/// Independent streams are derived per task index so parallel work stays
/// reproducible regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Main generator for this seed (stream 0).
    pub fn rng(self) -> ChaCha8Rng {
        self.stream(0)
    }

    /// Counter-based substream `index` of this seed.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// A child seed for a nested computation.
    pub fn derive(self, tag: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &Pmf) -> f64 {
    -p.probs
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `D_KL(q ‖ p)` in nats; `+∞` when `q` puts mass where `p` has none.
pub fn kl_divergence(q: &Pmf, p: &Pmf) -> Result<f64> {
    check_len(q.alphabet_size(), p.alphabet_size())?;
    let mut total = 0.0;
    for (&qz, &pz) in q.probs.iter().zip(&p.probs) {
        if qz == 0.0 {
            continue;
        }
        if pz == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += qz * (qz / pz).ln();
    }
    // Rounding can leave a tiny negative value when q ≈ p.
    Ok(total.max(0.0))
}

/// Softmax with max-shift stabilization. Returns the distribution and `ln Z`.
pub fn softmax(f: &Logits) -> (Pmf, f64) {
    let values = f.values();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let shifted_sum: f64 = exps.iter().sum();
    let log_partition = max + shifted_sum.ln();
    let probs = exps.into_iter().map(|e| e / shifted_sum).collect();
    (Pmf { probs }, log_partition)
}

pub fn l1_distance(q: &Pmf, p: &Pmf) -> Result<f64> {
    check_len(q.alphabet_size(), p.alphabet_size())?;
    Ok(q.probs
        .iter()
        .zip(&p.probs)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// `D_KL(q‖p) − (2/L²)(E_q f − E_p f)²` for `f` with values in `[0, L]`.
///
/// Non-negative for every valid input.
pub fn pinsker_gap(q: &Pmf, p: &Pmf, f: &[f64], loss_sup: f64) -> Result<f64> {
    if !(loss_sup > 0.0 && loss_sup.is_finite()) {
        return invalid(format!("L must be positive and finite, got {loss_sup}"));
    }
    check_len(q.alphabet_size(), f.len())?;
    if let Some(v) = f.iter().find(|v| !(**v >= 0.0 && **v <= loss_sup)) {
        return invalid(format!("f value {v} outside [0, {loss_sup}]"));
    }
    let kl = kl_divergence(q, p)?;
    let diff = q.expect(f)? - p.expect(f)?;
    Ok(kl - 2.0 / (loss_sup * loss_sup) * diff * diff)
}

/// Inverse-CDF sampler over a fixed PMF.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    pub fn new(p: &Pmf) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .probs
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let last_positive = p.probs.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        Self { cdf, last_positive }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        // first index with cdf > u; zero-mass symbols are never selected
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.last_positive)
    }
}

/// Multinomial counts from `n` independent categorical draws.
pub fn sample_counts<R: Rng + ?Sized>(q_bar: &Pmf, n: u64, rng: &mut R) -> Vec<u64> {
    sample_counts_with(&Categorical::new(q_bar), q_bar.alphabet_size(), n, rng)
}

pub(crate) fn sample_counts_with<R: Rng + ?Sized>(
    cat: &Categorical,
    k: usize,
    n: u64,
    rng: &mut R,
) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        counts[cat.sample(rng)] += 1;
    }
    counts
}

/// Empirical PMF of `n` i.i.d. draws from `q_bar`: `Multinomial(n, q̄) / n`.
pub fn sample_empirical(q_bar: &Pmf, n: u64, seed: RngSeed) -> Result<Pmf> {
    if n == 0 {
        return invalid("sample size n must be at least 1");
    }
    let counts = sample_counts(q_bar, n, &mut seed.rng());
    Pmf::from_counts(&counts)
}

pub(crate) fn validate_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return invalid("empty concentration vector");
    }
    if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return invalid(format!("Dirichlet concentration must be positive, got {a}"));
    }
    Ok(())
}

/// Raw normalized Gamma draws; may contain exact zeros for tiny concentrations.
pub(crate) fn dirichlet_raw<R: Rng + ?Sized>(
    gammas: &[Gamma<f64>],
    rng: &mut R,
) -> Option<Vec<f64>> {
    let mut draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    for d in &mut draws {
        *d /= total;
    }
    Some(draws)
}

pub(crate) fn gamma_samplers(alpha: &[f64]) -> Result<Vec<Gamma<f64>>> {
    alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::Validation(e.to_string())))
        .collect()
}

/// One draw from `Dirichlet(alpha)` by normalizing independent `Gamma(α_i, 1)`.
pub fn sample_dirichlet(alpha: &[f64], seed: RngSeed) -> Result<Pmf> {
    validate_alpha(alpha)?;
    let gammas = gamma_samplers(alpha)?;
    let mut rng = seed.rng();
    for _ in 0..1000 {
        if let Some(draws) = dirichlet_raw(&gammas, &mut rng) {
            // renormalize once more so the sum check is tight
            return Pmf::from_weights(&draws);
        }
    }
    Err(Error::Numeric(
        "Dirichlet draw underflowed to zero repeatedly".into(),
    ))
}
