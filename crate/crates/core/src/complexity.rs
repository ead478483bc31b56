//! Task complexity `C(q) = ½ · E_{q̄|q} D_KL(q ‖ q̄)` and the generalization
//! tail bound it controls.
//!
//! The posterior over the true PMF `q̄` is Dirichlet (`α + counts`), which
//! gives both an exact sampler and a digamma closed form. The tail-bound
//! verifier instead averages over the sampling distribution
//! `q ~ Multinomial(n, q̄)/n`, which is the expectation the Markov step of the
//! bound actually uses. Both are exposed and labeled.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{check_len, invalid, Error, Result};
use crate::prob::{
    self, dirichlet_raw, entropy, gamma_samplers, kl_divergence, Categorical, Pmf, RngSeed,
};

/// Monte-Carlo work is split into chunks of this many draws, each on its own
/// RNG stream, so results do not depend on the thread count.
const CHUNK: usize = 4096;

/// Maximum fraction of Dirichlet draws allowed to need resampling.
const MAX_RESAMPLE_FRACTION: f64 = 1e-3;

/// Observed counts over a finite alphabet plus a Dirichlet prior on `q̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSpec {
    prior_alpha: Vec<f64>,
    counts: Vec<u64>,
    n: u64,
}

impl PosteriorSpec {
    pub fn new(prior_alpha: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        prob::validate_alpha(&prior_alpha)?;
        check_len(prior_alpha.len(), counts.len())?;
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return invalid("sample size n must be at least 1");
        }
        Ok(Self {
            prior_alpha,
            counts,
            n,
        })
    }

    /// Symmetric prior `Dirichlet(alpha, …, alpha)`.
    pub fn symmetric(alpha: f64, counts: Vec<u64>) -> Result<Self> {
        Self::new(vec![alpha; counts.len()], counts)
    }

    /// Uniform prior over the simplex, `Dirichlet(1, …, 1)`.
    pub fn uniform_prior(counts: Vec<u64>) -> Result<Self> {
        Self::symmetric(1.0, counts)
    }

    pub fn prior_alpha(&self) -> &[f64] {
        &self.prior_alpha
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn alphabet_size(&self) -> usize {
        self.counts.len()
    }

    /// Empirical PMF `q = counts / n`.
    pub fn empirical(&self) -> Pmf {
        Pmf::from_counts(&self.counts).expect("validated counts")
    }

    fn posterior_alpha(&self) -> Vec<f64> {
        self.prior_alpha
            .iter()
            .zip(&self.counts)
            .map(|(a, &c)| a + c as f64)
            .collect()
    }
}

/// Monte-Carlo estimate of `C(q)` next to its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_samples: usize,
    pub closed_form: f64,
    /// Draws rejected because `q̄(z)` underflowed to zero on the support of `q`.
    pub resampled: usize,
}

impl ComplexityEstimate {
    /// `|mean − closed_form|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == self.closed_form {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - self.closed_form).abs() / self.std_error
        }
    }
}

/// Dirichlet posterior mean `(α_z + c_z) / (α₀ + n)`.
pub fn posterior_mean(spec: &PosteriorSpec) -> Pmf {
    let post = spec.posterior_alpha();
    Pmf::from_weights(&post).expect("positive posterior concentration")
}

/// Exact `C(q)` under the Dirichlet posterior:
/// `½ Σ_{q(z)>0} q(z) [ln q(z) − ψ(α_z + c_z) + ψ(α₀ + n)]`.
pub fn complexity_closed_form(spec: &PosteriorSpec) -> f64 {
    let n = spec.n as f64;
    let alpha0: f64 = spec.prior_alpha.iter().sum();
    let psi_total = digamma(alpha0 + n);
    let mut sum = 0.0;
    for (&a, &c) in spec.prior_alpha.iter().zip(&spec.counts) {
        if c == 0 {
            continue;
        }
        let q = c as f64 / n;
        sum += q * (q.ln() - digamma(a + c as f64) + psi_total);
    }
    0.5 * sum
}

/// Jensen bound `D_KL(q ‖ E_{q̄|q} q̄)`.
///
/// Jensen bounds the posterior-expected divergence `E D_KL(q‖q̄) = 2·C(q)`,
/// so the guaranteed relation is `lower_bound ≤ 2·C(q)`. The tighter
/// `lower_bound ≤ C(q)` fails when some counts are zero: counts (4,0) with a
/// uniform prior give `ln(6/5) ≈ 0.182` against `C = 0.1`.
pub fn complexity_lower_bound(spec: &PosteriorSpec) -> f64 {
    kl_divergence(&spec.empirical(), &posterior_mean(spec)).expect("same alphabet")
}

/// The `−H(q) + E_{q̄|q} E_{Z∼q} (1 − q̄(z))/q̄(z)` expression, evaluated in
/// closed form under the posterior. Reported only when every count is
/// positive; it is not a proven upper bound on `C(q)` and is never asserted.
pub fn complexity_reported_upper(spec: &PosteriorSpec) -> Option<f64> {
    if spec.counts.contains(&0) {
        return None;
    }
    let post = spec.posterior_alpha();
    let total: f64 = post.iter().sum();
    let q = spec.empirical();
    // E[1/q̄_z] = (A − 1)/(a_z − 1) for a_z > 1
    let mut expect = 0.0;
    for (qz, az) in q.probs().iter().zip(&post) {
        if *az <= 1.0 {
            return None;
        }
        expect += qz * ((total - 1.0) / (az - 1.0) - 1.0);
    }
    Some(-entropy(&q) + expect)
}

#[derive(Clone, Copy)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        count: 0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * self.count as f64 * other.count as f64 / count as f64;
        Moments { count, mean, m2 }
    }
}

/// Monte-Carlo `C(q)`: mean of `½ D_KL(q ‖ q̄_k)` over `q̄_k ~ Dirichlet(α + counts)`.
pub fn estimate_complexity(
    spec: &PosteriorSpec,
    num_samples: usize,
    seed: RngSeed,
) -> Result<ComplexityEstimate> {
    if num_samples < 100 {
        return invalid(format!(
            "num_samples must be at least 100, got {num_samples}"
        ));
    }
    let gammas = gamma_samplers(&spec.posterior_alpha())?;
    let q = spec.empirical();
    let support: Vec<(usize, f64)> = q
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i, *v))
        .collect();
    let neg_entropy = -entropy(&q);

    let chunks = num_samples.div_ceil(CHUNK);
    let max_resampled = (MAX_RESAMPLE_FRACTION * num_samples as f64).floor() as usize;
    let parts: Vec<(Moments, usize)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = seed.stream(chunk as u64);
            let take = CHUNK.min(num_samples - chunk * CHUNK);
            let mut moments = Moments::EMPTY;
            let mut resampled = 0;
            while moments.count < take {
                // a zero on the support means an infinite KL term; redraw
                let draw = dirichlet_raw(&gammas, &mut rng)
                    .filter(|d| support.iter().all(|&(i, _)| d[i] > 0.0));
                let Some(draw) = draw else {
                    resampled += 1;
                    if resampled > max_resampled {
                        break;
                    }
                    continue;
                };
                let cross: f64 = support.iter().map(|&(i, qz)| qz * draw[i].ln()).sum();
                moments.push(0.5 * (neg_entropy - cross));
            }
            (moments, resampled)
        })
        .collect();

    let (moments, resampled) = parts
        .into_iter()
        .fold((Moments::EMPTY, 0), |(m, r), (pm, pr)| {
            (m.merge(pm), r + pr)
        });
    if resampled > max_resampled {
        return Err(Error::ZeroDraws {
            resampled,
            draws: num_samples,
        });
    }
    let variance = moments.m2 / (moments.count as f64 - 1.0);
    Ok(ComplexityEstimate {
        mean: moments.mean,
        std_error: (variance / moments.count as f64).sqrt(),
        num_samples,
        closed_form: complexity_closed_form(spec),
        resampled,
    })
}

/// Closed-form complexities of a uniform count vector versus less uniform
/// alternatives at the same `n` and prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub n: u64,
    pub alphabet: usize,
    pub uniform_value: f64,
    pub compared: Vec<(Vec<u64>, f64)>,
    pub uniform_is_min: bool,
}

/// Number of random compositions compared by [`uniformity_ordering_check`].
pub const UNIFORMITY_RANDOM_COMPOSITIONS: usize = 50;

/// Compares the uniform composition of `n` into `k` parts against
/// [`UNIFORMITY_RANDOM_COMPOSITIONS`] random compositions (symmetric uniform
/// prior). `n` must be divisible by `k`.
pub fn uniformity_ordering_check(n: u64, k: usize, seed: RngSeed) -> Result<UniformityReport> {
    check_uniform_args(n, k)?;
    let mut rng = seed.rng();
    let candidates = (0..UNIFORMITY_RANDOM_COMPOSITIONS)
        .map(|_| random_composition(n, k, &mut rng))
        .collect();
    uniformity_report(n, k, candidates)
}

/// Same comparison against every composition of `n` into `k` parts.
pub fn uniformity_ordering_exhaustive(n: u64, k: usize) -> Result<UniformityReport> {
    check_uniform_args(n, k)?;
    uniformity_report(n, k, compositions(n, k))
}

fn check_uniform_args(n: u64, k: usize) -> Result<()> {
    if k == 0 || n == 0 {
        return invalid("n and k must be positive");
    }
    if !n.is_multiple_of(k as u64) {
        return invalid(format!("n = {n} is not divisible by k = {k}"));
    }
    Ok(())
}

fn uniformity_report(n: u64, k: usize, candidates: Vec<Vec<u64>>) -> Result<UniformityReport> {
    let uniform = vec![n / k as u64; k];
    let uniform_value = complexity_closed_form(&PosteriorSpec::uniform_prior(uniform)?);
    let mut compared = Vec::with_capacity(candidates.len());
    for counts in candidates {
        let value = complexity_closed_form(&PosteriorSpec::uniform_prior(counts.clone())?);
        compared.push((counts, value));
    }
    let uniform_is_min = compared.iter().all(|(_, v)| uniform_value <= *v);
    Ok(UniformityReport {
        n,
        alphabet: k,
        uniform_value,
        compared,
        uniform_is_min,
    })
}

/// Uniformly random composition via stars and bars.
fn random_composition<R: Rng + ?Sized>(n: u64, k: usize, rng: &mut R) -> Vec<u64> {
    let slots = n as usize + k - 1;
    let mut positions: Vec<usize> = (0..slots).collect();
    positions.shuffle(rng);
    let mut bars: Vec<usize> = positions[..k - 1].to_vec();
    bars.sort_unstable();
    let mut counts = Vec::with_capacity(k);
    let mut prev = 0usize;
    for (i, &b) in bars.iter().enumerate() {
        let start = if i == 0 { 0 } else { prev + 1 };
        counts.push((b - start) as u64);
        prev = b;
    }
    let start = if bars.is_empty() { 0 } else { prev + 1 };
    counts.push((slots - start) as u64);
    counts
}

/// All compositions of `n` into `k` non-negative parts, lexicographic.
pub fn compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
    fn rec(n: u64, k: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if k == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=n {
            prefix.push(first);
            rec(n - first, k - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// `true` when `a` majorizes `b` (equal totals, sorted partial sums dominate).
pub fn majorizes(a: &[u64], b: &[u64]) -> bool {
    if a.len() != b.len() || a.iter().sum::<u64>() != b.iter().sum::<u64>() {
        return false;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(|x, y| y.cmp(x));
    b.sort_unstable_by(|x, y| y.cmp(x));
    let (mut sa, mut sb) = (0, 0);
    for (x, y) in a.iter().zip(&b) {
        sa += x;
        sb += y;
        if sa < sb {
            return false;
        }
    }
    true
}

/// Wilson score half-width at `z` standard deviations.
pub fn wilson_half_width(p_hat: f64, trials: usize, z: f64) -> f64 {
    let n = trials as f64;
    let z2 = z * z;
    z / (1.0 + z2 / n) * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Standard deviations of slack used in tail comparisons.
pub const TAIL_SIGMAS: f64 = 3.0;

/// Below this many trials the tail estimates are flagged unreliable.
pub const MIN_RELIABLE_TRIALS: usize = 1000;

/// Independent Markov-inequality check `Pr(D_KL ≥ t) ≤ E[D_KL]/t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovCheck {
    pub t: f64,
    pub empirical_tail: f64,
    pub markov_bound: f64,
    pub half_width: f64,
    pub holds: bool,
}

/// Monte-Carlo comparison of `Pr(gen ≥ ε)` with `L² E[D_KL] / (2ε²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenBoundReport {
    pub epsilon_grid: Vec<f64>,
    pub empirical_tail: Vec<f64>,
    pub bound_values: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub loss_sup: f64,
    pub trials: usize,
    pub n: u64,
    /// Mean of `D_KL(q ‖ q̄)` over resampled empirical PMFs; this is `2 C`
    /// under the sampling-distribution reading.
    pub mean_kl: f64,
    pub markov: Vec<MarkovCheck>,
    pub low_trials_warning: bool,
    /// Every ε satisfies `tail ≤ bound + half_width`, and every Markov check holds.
    pub holds: bool,
}

impl GenBoundReport {
    /// Flat `epsilon,empirical_tail,bound` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,empirical_tail,bound\n");
        for ((e, t), b) in self
            .epsilon_grid
            .iter()
            .zip(&self.empirical_tail)
            .zip(&self.bound_values)
        {
            out.push_str(&format!("{e},{t},{b}\n"));
        }
        out
    }
}

/// Draws `trials` empirical PMFs `q ~ Multinomial(n, q̄)/n` and compares the
/// generalization-error tail of a fixed loss table against the KL bound.
pub fn verify_gen_bound(
    q_bar: &Pmf,
    n: u64,
    loss_table: &[f64],
    loss_sup: f64,
    epsilon_grid: &[f64],
    trials: usize,
    seed: RngSeed,
) -> Result<GenBoundReport> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    if q_bar.alphabet_size() > 1000 {
        return invalid("joint alphabet larger than 1000 symbols");
    }
    if !(loss_sup > 0.0 && loss_sup.is_finite()) {
        return invalid("L must be positive and finite");
    }
    check_len(q_bar.alphabet_size(), loss_table.len())?;
    if loss_table.iter().any(|v| !(*v >= 0.0 && *v <= loss_sup)) {
        return invalid(format!("loss table entries must lie in [0, {loss_sup}]"));
    }
    if epsilon_grid.iter().any(|e| !(*e > 0.0)) {
        return invalid("epsilon grid values must be positive");
    }

    let cat = Categorical::new(q_bar);
    let k = q_bar.alphabet_size();
    let expected_loss = q_bar.expect(loss_table)?;
    let chunks = trials.div_ceil(CHUNK);
    let samples: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = seed.stream(chunk as u64);
            let take = CHUNK.min(trials - chunk * CHUNK);
            let cat = &cat;
            (0..take)
                .map(move |_| {
                    let counts = prob::sample_counts_with(cat, k, n, &mut rng);
                    let q = Pmf::from_counts(&counts).expect("n ≥ 1");
                    let gen = (q.expect(loss_table).expect("same length") - expected_loss).abs();
                    let kl = kl_divergence(&q, q_bar).expect("same alphabet");
                    (gen, kl)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mean_kl = samples.iter().map(|s| s.1).sum::<f64>() / trials as f64;
    let mut empirical_tail = Vec::new();
    let mut bound_values = Vec::new();
    let mut half_widths = Vec::new();
    let mut markov = Vec::new();
    let mut holds = true;
    for &eps in epsilon_grid {
        let tail = samples.iter().filter(|s| s.0 >= eps).count() as f64 / trials as f64;
        let bound = loss_sup * loss_sup * mean_kl / (2.0 * eps * eps);
        let hw = wilson_half_width(tail, trials, TAIL_SIGMAS);
        holds &= tail <= bound + hw;
        empirical_tail.push(tail);
        bound_values.push(bound);
        half_widths.push(hw);

        // the threshold the proof feeds to Markov for this ε
        let t = 2.0 * eps * eps / (loss_sup * loss_sup);
        let kl_tail = samples.iter().filter(|s| s.1 >= t).count() as f64 / trials as f64;
        let check_hw = wilson_half_width(kl_tail, trials, TAIL_SIGMAS);
        let check = MarkovCheck {
            t,
            empirical_tail: kl_tail,
            markov_bound: mean_kl / t,
            half_width: check_hw,
            holds: kl_tail <= mean_kl / t + check_hw,
        };
        holds &= check.holds;
        markov.push(check);
    }

    Ok(GenBoundReport {
        epsilon_grid: epsilon_grid.to_vec(),
        empirical_tail,
        bound_values,
        half_widths,
        loss_sup,
        trials,
        n,
        mean_kl,
        markov,
        low_trials_warning: trials < MIN_RELIABLE_TRIALS,
        holds,
    })
}

#[derive(Deserialize)]
struct JointRow {
    z_index: usize,
    probability: f64,
}

#[derive(Deserialize)]
struct LossRow {
    z_index: usize,
    loss: f64,
}

fn dense_from_rows(rows: Vec<(usize, f64)>, what: &str) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return invalid(format!("{what} file has no rows"));
    }
    let k = rows.len();
    let mut values = vec![f64::NAN; k];
    for (z, v) in rows {
        if z >= k || !values[z].is_nan() {
            return invalid(format!("{what}: z_index values must be exactly 0..{k}"));
        }
        values[z] = v;
    }
    Ok(values)
}

/// Reads a joint distribution CSV with columns `z_index,probability`.
pub fn read_joint_csv(path: impl AsRef<Path>) -> Result<Pmf> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader
        .deserialize::<JointRow>()
        .map(|r| r.map(|r| (r.z_index, r.probability)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Pmf::new(dense_from_rows(rows, "joint distribution")?)
}

/// Reads a loss table CSV with columns `z_index,loss`.
pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader
        .deserialize::<LossRow>()
        .map(|r| r.map(|r| (r.z_index, r.loss)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    dense_from_rows(rows, "loss table")
}
