//! Fitting-error diagnostics: the Lagrange cross-product identity, the exact
//! F/G split of `‖q_{Y|x} − p_{Y|x}‖²`, the normalized fitting error and its
//! bound, `G_M` statistics, and Hessian-versus-eNTK spectral checks.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{asymmetry, lambda_max, symmetric_eigenvalues};
use crate::model::{forward_with_jacobian, EntkMatrix, JacobianMatrix, ModelSpec, ParamVector};
use crate::prob::{kl_divergence, Pmf};
use crate::risk::LossSpec;

/// Parameters whose gradient norm is at or below this are left out of
/// per-parameter quantities.
pub const ZERO_GRAD_TOL: f64 = 1e-12;

/// Central-difference step for the Hessian check.
pub const HESSIAN_FD_STEP: f64 = 1e-4;

/// Largest parameter count for the dense finite-difference Hessian.
pub const HESSIAN_MAX_PARAMS: usize = 500;

/// Side-condition norms below this count as vanishing.
pub const SIDE_CONDITION_TOL: f64 = 1e-6;

/// `½ Σ_i Σ_j (a_i x_j − a_j x_i)²`, evaluated term by term.
pub fn cross_norm_sq(a: &[f64], x: &[f64]) -> Result<f64> {
    check_len(a.len(), x.len())?;
    Ok(cross_norm_sq_unchecked(a, x))
}

fn cross_norm_sq_unchecked(a: &[f64], x: &[f64]) -> f64 {
    // each unordered pair appears twice in the full double sum
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let t = a[i] * x[j] - a[j] * x[i];
            s += t * t;
        }
    }
    s
}

/// `|‖Ax‖² − (‖A‖_F²‖x‖² − Σ_rows cross_norm_sq(row, x))|`.
pub fn lagrange_identity_residual(a: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    check_len(a.ncols(), x.len())?;
    let xv = DVector::from_column_slice(x);
    let lhs = (a * &xv).norm_squared();
    let cross: f64 = a
        .row_iter()
        .map(|row| {
            let r: Vec<f64> = row.iter().copied().collect();
            cross_norm_sq_unchecked(&r, x)
        })
        .sum();
    Ok((lhs - (a.norm_squared() * xv.norm_squared() - cross)).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDecomposition {
    pub f_term: f64,
    pub g_term: f64,
    pub residual_sq: f64,
    pub per_param_f: Vec<f64>,
    pub per_param_g: Vec<f64>,
    /// Parameters excluded from the per-parameter split (their entries are 0).
    pub zero_grad_params: Vec<usize>,
}

fn decompose_with(j: &JacobianMatrix, q: &Pmf, p: &Pmf) -> Result<FitDecomposition> {
    let jm = j.matrix();
    let total = jm.norm_squared();
    if total == 0.0 {
        return Err(Error::DegenerateModel(
            "the Jacobian is identically zero".into(),
        ));
    }
    let r: Vec<f64> = q
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(q, p)| q - p)
        .collect();
    let residual_sq = r.iter().map(|v| v * v).sum();
    let m = jm.ncols();
    let mut per_param_f = vec![0.0; m];
    let mut per_param_g = vec![0.0; m];
    let mut zero_grad_params = Vec::new();
    let (mut f_num, mut g_num) = (0.0, 0.0);
    for (idx, col) in jm.column_iter().enumerate() {
        let c: Vec<f64> = col.iter().copied().collect();
        let dot: f64 = c.iter().zip(&r).map(|(a, b)| a * b).sum();
        let cross = cross_norm_sq_unchecked(&c, &r);
        f_num += dot * dot;
        g_num += cross;
        let norm_sq: f64 = c.iter().map(|v| v * v).sum();
        if norm_sq.sqrt() > ZERO_GRAD_TOL {
            per_param_f[idx] = dot * dot / norm_sq;
            per_param_g[idx] = cross / norm_sq;
        } else {
            zero_grad_params.push(idx);
        }
    }
    Ok(FitDecomposition {
        f_term: f_num / total,
        g_term: g_num / total,
        residual_sq,
        per_param_f,
        per_param_g,
        zero_grad_params,
    })
}

/// Exact split `‖q − p‖² = F + G = F_j + G_j` at one input.
pub fn decompose(
    spec: &ModelSpec,
    theta: &ParamVector,
    x: &[f64],
    q_yx: &Pmf,
) -> Result<FitDecomposition> {
    check_len(spec.num_classes, q_yx.alphabet_size())?;
    let (_, p, j) = forward_with_jacobian(spec, theta, x)?;
    decompose_with(&j, q_yx, &p)
}

/// `λmax ‖q − p‖² / trace(eNTK) − F`; never negative up to rounding.
pub fn f_term_entk_bound_gap(
    spec: &ModelSpec,
    theta: &ParamVector,
    x: &[f64],
    q_yx: &Pmf,
) -> Result<f64> {
    check_len(spec.num_classes, q_yx.alphabet_size())?;
    let (_, p, j) = forward_with_jacobian(spec, theta, x)?;
    entk_bound_gap_with(&j, q_yx, &p)
}

fn entk_bound_gap_with(j: &JacobianMatrix, q: &Pmf, p: &Pmf) -> Result<f64> {
    let d = decompose_with(j, q, p)?;
    let entk = EntkMatrix::from_jacobian(j);
    Ok(entk.lambda_max()? * d.residual_sq / entk.trace() - d.f_term)
}

/// Per-input row of a [`FitReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDiagnostics {
    pub x_index: usize,
    pub weight: f64,
    pub residual_sq: f64,
    pub f_term: f64,
    pub g_term: f64,
    pub lambda_max: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: f64,
    pub fit_normalized: f64,
    /// `√E_X[F + G]`.
    pub bound: f64,
    pub loss_l2_mean: f64,
    /// `None` when every parameter has a vanishing gradient somewhere.
    pub g_min: Option<f64>,
    pub lambda_max_max: f64,
    pub mean_f: f64,
    pub mean_g: f64,
    pub mean_residual_sq: f64,
    /// `E_X D_KL(q_{Y|x} ‖ p_{Y|x})`.
    pub erf: f64,
    pub zero_grad_params: usize,
    #[serde(skip)]
    pub per_input: Vec<InputDiagnostics>,
}

impl FitReport {
    /// Per-input rows as CSV: `x_index,residual_sq,f_term,g_term,lambda_max`.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("x_index,residual_sq,f_term,g_term,lambda_max\n");
        for r in &self.per_input {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.x_index, r.residual_sq, r.f_term, r.g_term, r.lambda_max
            );
        }
        out
    }
}

struct EntryEval {
    decomposition: FitDecomposition,
    lambda_max: f64,
    /// `(p − q)ᵀ ℓ`
    fit_contrib: f64,
    loss_sq: f64,
    kl: f64,
}

fn evaluate_entries(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    loss: &LossSpec,
) -> Result<Vec<EntryEval>> {
    loss.validate()?;
    check_len(spec.num_classes, dataset.num_classes())?;
    dataset
        .entries()
        .par_iter()
        .map(|e| {
            let (logits, p, j) = forward_with_jacobian(spec, theta, &e.x)?;
            let decomposition = decompose_with(&j, &e.q_yx, &p)?;
            let l = loss.loss_vector(&logits);
            let fit_contrib = p
                .probs()
                .iter()
                .zip(e.q_yx.probs())
                .zip(&l)
                .map(|((p, q), l)| (p - q) * l)
                .sum();
            Ok(EntryEval {
                decomposition,
                lambda_max: EntkMatrix::from_jacobian(&j).lambda_max()?,
                fit_contrib,
                loss_sq: l.iter().map(|v| v * v).sum(),
                kl: kl_divergence(&e.q_yx, &p)?,
            })
        })
        .collect()
}

/// Dataset-level second moments used by the fitting bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FitMoments {
    pub mean_residual_sq: f64,
    pub loss_l2_mean: f64,
}

pub(crate) fn fit_moments(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    loss: &LossSpec,
) -> Result<FitMoments> {
    let evals = evaluate_entries(spec, theta, dataset, loss)?;
    let mut m = FitMoments {
        mean_residual_sq: 0.0,
        loss_l2_mean: 0.0,
    };
    for (e, ev) in dataset.entries().iter().zip(&evals) {
        m.mean_residual_sq += e.weight * (ev.decomposition.f_term + ev.decomposition.g_term);
        m.loss_l2_mean += e.weight * ev.loss_sq;
    }
    Ok(m)
}

/// `E_X per_param_g[j]` and the dataset-wide zero-gradient set (union over
/// inputs).
fn per_param_g_means(
    dataset: &Dataset,
    evals: &[EntryEval],
    m: usize,
) -> (Vec<f64>, BTreeSet<usize>) {
    let mut means = vec![0.0; m];
    let mut zero = BTreeSet::new();
    for (e, ev) in dataset.entries().iter().zip(evals) {
        for (acc, g) in means.iter_mut().zip(&ev.decomposition.per_param_g) {
            *acc += e.weight * g;
        }
        zero.extend(ev.decomposition.zero_grad_params.iter().copied());
    }
    (means, zero)
}

fn min_over_prefix(means: &[f64], zero: &BTreeSet<usize>, k: usize) -> f64 {
    means[..k]
        .iter()
        .enumerate()
        .filter(|(j, _)| !zero.contains(j))
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min)
}

/// Fitting error, its normalized form, and the bound `√E_X[F+G]`.
pub fn fit_report(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    loss: &LossSpec,
) -> Result<FitReport> {
    let evals = evaluate_entries(spec, theta, dataset, loss)?;
    let mut fit_signed = 0.0;
    let mut loss_l2_mean = 0.0;
    let (mut mean_f, mut mean_g, mut mean_residual_sq, mut erf) = (0.0, 0.0, 0.0, 0.0);
    let mut lambda_max_max: f64 = 0.0;
    let mut per_input = Vec::with_capacity(evals.len());
    for (i, (e, ev)) in dataset.entries().iter().zip(&evals).enumerate() {
        let d = &ev.decomposition;
        fit_signed += e.weight * ev.fit_contrib;
        loss_l2_mean += e.weight * ev.loss_sq;
        mean_f += e.weight * d.f_term;
        mean_g += e.weight * d.g_term;
        mean_residual_sq += e.weight * d.residual_sq;
        erf += e.weight * ev.kl;
        lambda_max_max = lambda_max_max.max(ev.lambda_max);
        per_input.push(InputDiagnostics {
            x_index: i,
            weight: e.weight,
            residual_sq: d.residual_sq,
            f_term: d.f_term,
            g_term: d.g_term,
            lambda_max: ev.lambda_max,
            kl: ev.kl,
        });
    }
    if !loss_l2_mean.is_finite() {
        return Err(Error::InfiniteRisk);
    }
    if loss_l2_mean == 0.0 {
        return Err(Error::ZeroLoss);
    }
    let fit = fit_signed.abs();
    let (means, zero) = per_param_g_means(dataset, &evals, spec.num_params());
    let g_min = Some(min_over_prefix(&means, &zero, means.len())).filter(|g| g.is_finite());
    Ok(FitReport {
        fit,
        fit_normalized: fit / loss_l2_mean.sqrt(),
        bound: (mean_f + mean_g).sqrt(),
        loss_l2_mean,
        g_min,
        lambda_max_max,
        mean_f,
        mean_g,
        mean_residual_sq,
        erf,
        zero_grad_params: zero.len(),
        per_input,
    })
}

/// `√(E_X‖p − q‖² · E_X‖ℓ‖²) − fit`.
pub fn cauchy_schwarz_gap(
    dataset: &Dataset,
    spec: &ModelSpec,
    theta: &ParamVector,
    loss: &LossSpec,
) -> Result<f64> {
    let r = fit_report(spec, theta, dataset, loss)?;
    Ok((r.mean_residual_sq * r.loss_l2_mean).sqrt() - r.fit)
}

/// `G_M` over parameter prefixes `θ_1..θ_k` for each `k` in `prefix_sizes`.
/// Prefixes containing only zero-gradient parameters give `+∞`.
pub fn g_min_monotonicity(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    prefix_sizes: &[usize],
) -> Result<Vec<f64>> {
    let m = spec.num_params();
    if prefix_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("prefix sizes must be strictly increasing");
    }
    if let Some(&k) = prefix_sizes.iter().find(|&&k| k == 0 || k > m) {
        return invalid(format!("prefix size {k} outside 1..={m}"));
    }
    let evals = evaluate_entries(spec, theta, dataset, &LossSpec::SoftmaxCrossEntropy)?;
    let (means, zero) = per_param_g_means(dataset, &evals, m);
    Ok(prefix_sizes
        .iter()
        .map(|&k| min_over_prefix(&means, &zero, k))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    /// Largest eigenvalue of the finite-difference Hessian of `E_X D_KL`.
    pub fd_lambda_max: f64,
    pub b_lambda_max_max: f64,
    pub entk_lambda_max_max: f64,
    /// `‖H_fd − E_X(B_x + C_x + F_x)‖_F`.
    pub decomposition_residual: f64,
    pub relative_residual: f64,
    pub symmetry_residual: f64,
    /// `max_x ‖Σ_i q_{Y|x}(y_i) ∇_θ[f]_i‖`.
    pub side_grad_q_norm: f64,
    /// `max_x ‖Σ_i p_{Y|x}(y_i) ∇_θ[f]_i‖`.
    pub side_grad_p_norm: f64,
    /// `‖E_X Σ_i q_{Y|x}(y_i) ∇²p_i / p_i‖_F`.
    pub side_curv_q_norm: f64,
    /// `‖E_X Σ_i ∇²p_i‖_F`, the p-weighted counterpart.
    pub side_curv_p_norm: f64,
    /// Both q-weighted side terms fall below [`SIDE_CONDITION_TOL`].
    pub proposition_applicable: bool,
    /// `fd_lambda_max ≤ entk_lambda_max_max`, evaluated only when applicable.
    pub proposition_holds: Option<bool>,
}

/// Per-input quantities at one parameter point.
struct PointEval {
    /// `∇_θ E_X D_KL`
    grad: DVector<f64>,
    /// Per input, per class: `∇_θ p_i`.
    grad_p: Vec<Vec<DVector<f64>>>,
}

fn eval_point(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
) -> Result<(PointEval, Vec<(Pmf, JacobianMatrix)>)> {
    let per: Vec<(Pmf, JacobianMatrix)> = dataset
        .entries()
        .par_iter()
        .map(|e| {
            let (_, p, j) = forward_with_jacobian(spec, theta, &e.x)?;
            Ok((p, j))
        })
        .collect::<Result<_>>()?;
    let m = spec.num_params();
    let mut grad = DVector::zeros(m);
    let mut grad_p = Vec::with_capacity(per.len());
    for (e, (p, j)) in dataset.entries().iter().zip(&per) {
        let jm = j.matrix();
        let pv = DVector::from_column_slice(p.probs());
        let qv = DVector::from_column_slice(e.q_yx.probs());
        grad += jm.tr_mul(&(&pv - &qv)) * e.weight;
        let b = jm.tr_mul(&pv);
        grad_p.push(
            (0..spec.num_classes)
                .map(|i| (jm.row(i).transpose() - &b) * p.probs()[i])
                .collect(),
        );
    }
    Ok((PointEval { grad, grad_p }, per))
}

/// Finite-difference Hessian of `E_X D_KL` against its exact assembly
/// `E_X(B_x + C_x + F_x)`, with `B_x = Jᵀ diag(q) J`,
/// `F_x = b bᵀ − a bᵀ − b aᵀ` (`a = Jᵀq`, `b = Jᵀp`) and
/// `C_x = −Σ_i q_i ∇²p_i / p_i` from differences of the exact `∇p_i`.
pub fn hessian_check(
    spec: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
) -> Result<HessianCheck> {
    let m = spec.num_params();
    if m > HESSIAN_MAX_PARAMS {
        return invalid(format!(
            "Hessian check needs at most {HESSIAN_MAX_PARAMS} parameters, model has {m}"
        ));
    }
    check_len(spec.num_classes, dataset.num_classes())?;
    let k = spec.num_classes;
    let h = HESSIAN_FD_STEP;
    let n = dataset.len();

    let mut hess = DMatrix::zeros(m, m);
    // curvature[x][i] holds the FD Hessian of p_i at input x
    let mut curvature: Vec<Vec<DMatrix<f64>>> = vec![vec![DMatrix::zeros(m, m); k]; n];
    let mut shifted = theta.clone();
    for col in 0..m {
        let orig = shifted.as_slice()[col];
        shifted.as_mut_slice()[col] = orig + h;
        let (plus, _) = eval_point(spec, &shifted, dataset)?;
        shifted.as_mut_slice()[col] = orig - h;
        let (minus, _) = eval_point(spec, &shifted, dataset)?;
        shifted.as_mut_slice()[col] = orig;
        hess.set_column(col, &((&plus.grad - &minus.grad) / (2.0 * h)));
        for x in 0..n {
            for i in 0..k {
                let d = (&plus.grad_p[x][i] - &minus.grad_p[x][i]) / (2.0 * h);
                curvature[x][i].set_column(col, &d);
            }
        }
    }
    let scale = hess.norm().max(1.0);
    let symmetry_residual = asymmetry(&hess);
    if symmetry_residual > 1e-4 * scale {
        return Err(Error::Numeric(format!(
            "finite-difference Hessian asymmetry {symmetry_residual:e} exceeds tolerance"
        )));
    }
    let hess = (&hess + hess.transpose()) * 0.5;

    let (_, per) = eval_point(spec, theta, dataset)?;
    let mut assembled = DMatrix::zeros(m, m);
    let mut curv_q = DMatrix::zeros(m, m);
    let mut curv_p = DMatrix::zeros(m, m);
    let (mut b_max, mut entk_max, mut side_q, mut side_p): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for (x, (e, (p, j))) in dataset.entries().iter().zip(&per).enumerate() {
        let jm = j.matrix();
        let q = e.q_yx.probs();
        let qv = DVector::from_column_slice(q);
        let pv = DVector::from_column_slice(p.probs());
        let a = jm.tr_mul(&qv);
        let b = jm.tr_mul(&pv);
        side_q = side_q.max(a.norm());
        side_p = side_p.max(b.norm());

        let mut scaled = jm.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= q[i].sqrt();
        }
        let b_x = scaled.tr_mul(&scaled);
        let f_x = &b * b.transpose() - &a * b.transpose() - &b * a.transpose();
        let mut c_x = DMatrix::zeros(m, m);
        let mut sym_curv = Vec::with_capacity(k);
        for i in 0..k {
            let c = &curvature[x][i];
            let c = (c + c.transpose()) * 0.5;
            if q[i] > 0.0 {
                c_x -= &c * (q[i] / p.probs()[i]);
            }
            sym_curv.push(c);
        }
        assembled += (&b_x + &c_x + &f_x) * e.weight;
        curv_q -= &c_x * e.weight;
        for c in &sym_curv {
            curv_p += c * e.weight;
        }

        // λmax(Jᵀ Q J) = λmax(Q^{1/2} J Jᵀ Q^{1/2}) on the small side
        let small = &scaled * scaled.transpose();
        b_max = b_max.max(lambda_max(&small)?);
        entk_max = entk_max.max(EntkMatrix::from_jacobian(j).lambda_max()?);
    }

    let decomposition_residual = (&hess - &assembled).norm();
    let fd_lambda_max = *symmetric_eigenvalues(&hess).last().unwrap();
    let side_curv_q_norm = curv_q.norm();
    let proposition_applicable =
        side_q < SIDE_CONDITION_TOL && side_curv_q_norm < SIDE_CONDITION_TOL;
    Ok(HessianCheck {
        fd_lambda_max,
        b_lambda_max_max: b_max,
        entk_lambda_max_max: entk_max,
        decomposition_residual,
        relative_residual: decomposition_residual / hess.norm().max(f64::MIN_POSITIVE),
        symmetry_residual,
        side_grad_q_norm: side_q,
        side_grad_p_norm: side_p,
        side_curv_q_norm,
        side_curv_p_norm: curv_p.norm(),
        proposition_applicable,
        proposition_holds: proposition_applicable.then_some(fd_lambda_max <= entk_max + 1e-9),
    })
}
