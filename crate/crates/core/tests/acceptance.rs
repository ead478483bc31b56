//! Acceptance run: each criterion at its stated scale, tolerance and time
//! budget. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! fails. Runs without the libtest harness so the lines are never captured.

use std::time::{Duration, Instant};

use infobound::complexity::{
    complexity_closed_form, complexity_lower_bound, estimate_complexity, uniformity_ordering_check,
    uniformity_ordering_exhaustive, verify_gen_bound, PosteriorSpec,
};
use infobound::experiment::{
    default_model, pearson, run_correlation_experiment, SyntheticDataSpec, TrainConfig,
};
use infobound::fitdiag::{
    cauchy_schwarz_gap, decompose, fit_report, g_min_monotonicity, hessian_check,
    lagrange_identity_residual, ZERO_GRAD_TOL,
};
use infobound::linalg::symmetric_eigenvalues;
use infobound::model::{entk, jacobian, predictive};
use infobound::prob::{pinsker_gap, Pmf, RngSeed};
use infobound::risk::LossSpec;
use infobound::verify::{
    jacobian_fd_error, kl_grad_fd_error, random_dataset, random_input, random_model, random_pmf,
    risk_bound_coverage, GRAD_FD_STEP, GRAD_FD_TOL,
};
use infobound::Result;
use nalgebra::DMatrix;
use rand::Rng;

const SEED: RngSeed = RngSeed(20_240_601);

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn run(
    id: usize,
    name: &'static str,
    budget_secs: u64,
    body: impl FnOnce() -> Result<(bool, String)>,
) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_secs);
    Outcome {
        id,
        name,
        passed: passed && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

fn lagrange() -> Result<(bool, String)> {
    let mut rng = SEED.derive(1).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (r, k) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(r, k, |_, _| scale * rng.random_range(-1.0..1.0));
        let x = random_input(&mut rng, k);
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let res = lagrange_identity_residual(&a, &x)?;
        worst = worst.max(res / (1.0 + a.norm_squared() * xx));
    }
    Ok((
        worst <= 1e-9,
        format!("worst scaled residual {worst:.3e} over 1000 cases"),
    ))
}

fn pinsker() -> Result<(bool, String)> {
    let mut rng = SEED.derive(2).rng();
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=12);
        let q = random_pmf(&mut rng, k, true);
        let p = random_pmf(&mut rng, k, true);
        let l = 10f64.powf(rng.random_range(-1.0..1.0));
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=l)).collect();
        worst = worst.min(pinsker_gap(&q, &p, &f, l)?);
    }
    Ok((
        worst >= -1e-12,
        format!("smallest gap {worst:.3e} over 10000 cases"),
    ))
}

fn decomposition() -> Result<(bool, String)> {
    let mut rng = SEED.derive(3).rng();
    let (mut worst, mut worst_param, mut worst_direct) = (0.0f64, 0.0f64, 0.0f64);
    let mut params_checked = 0usize;
    for _ in 0..1000 {
        let (spec, theta) = random_model(&mut rng, 16, 3);
        let x = random_input(&mut rng, 2);
        let q = random_pmf(&mut rng, 3, true);
        let d = decompose(&spec, &theta, &x, &q)?;
        let rr = d.residual_sq;
        if rr == 0.0 {
            continue;
        }
        worst = worst.max((d.f_term + d.g_term - rr).abs() / rr);

        // Direct evaluation from the Jacobian, independent of the library split.
        let j = jacobian(&spec, &theta, &x)?;
        let jm = j.matrix();
        let p = predictive(&spec, &theta, &x)?;
        let r: Vec<f64> = q
            .probs()
            .iter()
            .zip(p.probs())
            .map(|(a, b)| a - b)
            .collect();
        let total = jm.norm_squared();
        let (mut f, mut g) = (0.0, 0.0);
        for c in 0..jm.ncols() {
            let col = jm.column(c);
            let dot: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
            let cn = col.norm_squared();
            f += dot * dot;
            g += cn * rr - dot * dot;
            if cn.sqrt() > ZERO_GRAD_TOL {
                params_checked += 1;
                let fj = dot * dot / cn;
                let gj = rr - fj;
                worst_param = worst_param.max((fj + gj - rr).abs() / rr);
                let lib = d.per_param_f[c] + d.per_param_g[c];
                worst_param = worst_param.max((lib - rr).abs() / rr);
            }
        }
        worst_direct = worst_direct
            .max((f / total - d.f_term).abs() / rr)
            .max((g / total - d.g_term).abs() / rr);
    }
    let ok = worst <= 1e-9 && worst_param <= 1e-9 && worst_direct <= 1e-9;
    Ok((
        ok,
        format!(
            "aggregate {worst:.2e}, per-parameter {worst_param:.2e} ({params_checked} params), direct {worst_direct:.2e}"
        ),
    ))
}

fn fitting_bound() -> Result<(bool, String)> {
    let mut rng = SEED.derive(4).rng();
    let (mut worst_fit, mut worst_cs) = (f64::NEG_INFINITY, f64::INFINITY);
    let loss = LossSpec::SoftmaxCrossEntropy;
    for _ in 0..50 {
        let (spec, theta) = random_model(&mut rng, 16, 3);
        let points = rng.random_range(1..=12);
        let data = random_dataset(&mut rng, points, 2, 3);
        let r = fit_report(&spec, &theta, &data, &loss)?;
        let direct = (r.mean_f + r.mean_g).sqrt();
        worst_fit = worst_fit.max(r.fit_normalized - direct);
        worst_cs = worst_cs.min(cauchy_schwarz_gap(&data, &spec, &theta, &loss)?);
    }
    Ok((
        worst_fit <= 1e-9 && worst_cs >= -1e-12,
        format!("max fit_n − √E[F+G] = {worst_fit:.3e}, min Cauchy–Schwarz gap {worst_cs:.3e}"),
    ))
}

fn gen_bound() -> Result<(bool, String)> {
    let mut rng = SEED.derive(5).rng();
    let loss: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
    let grid = [0.05, 0.1, 0.2, 0.4];
    let r = verify_gen_bound(
        &Pmf::uniform(6),
        50,
        &loss,
        1.0,
        &grid,
        100_000,
        SEED.derive(6),
    )?;
    let mut ok = r.trials == 100_000;
    let mut parts = Vec::new();
    for i in 0..grid.len() {
        let bound = loss_bound(r.mean_kl, grid[i]);
        ok &= (bound - r.bound_values[i]).abs() <= 1e-12 * bound.max(1.0);
        ok &= r.empirical_tail[i] <= bound + r.half_widths[i];
        parts.push(format!(
            "ε={}: {:.4} ≤ {:.4}",
            grid[i], r.empirical_tail[i], bound
        ));
    }
    ok &= r.markov.iter().all(|m| m.holds) && r.holds;
    Ok((ok, parts.join(", ")))
}

fn loss_bound(mean_kl: f64, eps: f64) -> f64 {
    mean_kl / (2.0 * eps * eps)
}

/// Counts may be zero; a draw is rejected only when every count is.
fn random_spec(rng: &mut impl Rng) -> Option<PosteriorSpec> {
    let k = rng.random_range(2..=6);
    let counts: Vec<u64> = (0..k).map(|_| rng.random_range(0..=20)).collect();
    let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
    PosteriorSpec::new(alpha, counts).ok()
}

fn complexity_oracle(literal: &mut String) -> Result<(bool, String)> {
    let mut rng = SEED.derive(7).rng();
    let (mut worst_z, mut worst_lb, mut worst_literal) =
        (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut specs = 0;
    while specs < 50 {
        let Some(spec) = random_spec(&mut rng) else {
            continue;
        };
        let est = estimate_complexity(&spec, 100_000, SEED.derive(100 + specs))?;
        worst_z = worst_z.max(est.z_score().abs());
        let lb = complexity_lower_bound(&spec);
        worst_lb = worst_lb.max(lb - 2.0 * est.closed_form);
        worst_literal = worst_literal.max(lb - est.closed_form);
        specs += 1;
    }
    let reference = complexity_closed_form(&PosteriorSpec::uniform_prior(vec![5, 5])?);
    let counter = PosteriorSpec::uniform_prior(vec![4, 0])?;
    *literal = format!(
        "literal form lower_bound ≤ C: worst excess {worst_literal:.4} on these specs; counts (4,0) give {:.4} vs C = {:.4}",
        complexity_lower_bound(&counter),
        complexity_closed_form(&counter)
    );
    let ok = worst_z <= 4.0 && (reference - 0.021698).abs() <= 1e-6 && worst_lb <= 1e-12;
    Ok((
        ok,
        format!(
            "max |z| {worst_z:.2} over 50 specs, C(5,5) = {reference:.7}, max lower_bound − 2C = {worst_lb:.3e}"
        ),
    ))
}

fn asymptotics() -> Result<(bool, String)> {
    let mut values = Vec::new();
    for i in 0..=10 {
        let n = 10u64 << i;
        values.push(complexity_closed_form(&PosteriorSpec::uniform_prior(
            vec![3 * n / 10, 7 * n / 10],
        )?));
    }
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let last = values[10];
    Ok((
        decreasing && last < 1e-4,
        format!(
            "C(10) = {:.4e}, C(10240) = {last:.4e}, strictly decreasing: {decreasing}",
            values[0]
        ),
    ))
}

fn uniformity() -> Result<(bool, String)> {
    let exhaustive = uniformity_ordering_exhaustive(20, 2)?;
    let random = uniformity_ordering_check(20, 4, SEED.derive(8))?;
    // Recompute every comparison from the closed form.
    let mut ok = exhaustive.uniform_is_min && random.uniform_is_min;
    for r in [&exhaustive, &random] {
        let u = complexity_closed_form(&PosteriorSpec::uniform_prior(vec![
            20 / r.alphabet as u64;
            r.alphabet
        ])?);
        for (counts, _) in &r.compared {
            ok &= complexity_closed_form(&PosteriorSpec::uniform_prior(counts.clone())?) >= u;
        }
    }
    Ok((
        ok,
        format!(
            "{} k=2 and {} k=4 compositions compared",
            exhaustive.compared.len(),
            random.compared.len()
        ),
    ))
}

fn random_psd(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let rank = rng.random_range(1..=k);
    let b = DMatrix::from_fn(k, rank, |_, _| rng.random_range(-1.0..1.0));
    let a = &b * b.transpose();
    (&a + a.transpose()) * 0.5
}

fn oracles() -> Result<(bool, String)> {
    let mut rng = SEED.derive(9).rng();
    let (mut wj, mut wg, mut wtr, mut wpsd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (spec, theta) = random_model(&mut rng, 16, 3);
        let x = random_input(&mut rng, 2);
        let q = random_pmf(&mut rng, 3, false);
        wj = wj.max(jacobian_fd_error(&spec, &theta, &x, GRAD_FD_STEP)?);
        wg = wg.max(kl_grad_fd_error(&spec, &theta, &x, &q, GRAD_FD_STEP)?);
        let fro = jacobian(&spec, &theta, &x)?.frobenius_sq();
        let e = entk(&spec, &theta, &x)?;
        wtr = wtr.max((e.trace() - fro).abs() / fro);
        wpsd = wpsd.max(-e.eigenvalues()[0] / fro);
    }
    let mut lemma_violations = 0usize;
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let a = random_psd(&mut rng, k);
        let b = random_psd(&mut rng, k);
        let ea = symmetric_eigenvalues(&a);
        let eb = symmetric_eigenvalues(&b);
        let es = symmetric_eigenvalues(&(&a + &b));
        let tol = 1e-12 * (1.0 + ea[k - 1] + eb[k - 1]);
        let diag_ok = (0..k).all(|i| a[(i, i)] <= ea[k - 1] + tol);
        let tr = a.trace();
        let trace_ok = ea[k - 1] <= tr + tol && tr <= k as f64 * ea[k - 1] + tol;
        let weyl_ok = es[k - 1] <= ea[k - 1] + eb[k - 1] + tol;
        lemma_violations += [diag_ok, trace_ok, weyl_ok].iter().filter(|v| !**v).count();
    }
    let ok = wj <= GRAD_FD_TOL
        && wg <= GRAD_FD_TOL
        && wtr <= 1e-10
        && wpsd <= 1e-10
        && lemma_violations == 0;
    Ok((
        ok,
        format!(
            "FD jacobian {wj:.2e}, kl_grad {wg:.2e}, trace {wtr:.2e}, neg eig {wpsd:.2e}, lemma violations {lemma_violations}/300"
        ),
    ))
}

fn hessian() -> Result<(bool, String)> {
    let mut rng = SEED.derive(10).rng();
    let mut worst_b = f64::NEG_INFINITY;
    for _ in 0..20 {
        let (spec, theta) = random_model(&mut rng, 4, 2);
        let data = random_dataset(&mut rng, 3, 2, 2);
        let h = hessian_check(&spec, &theta, &data)?;
        worst_b = worst_b.max(h.b_lambda_max_max - h.entk_lambda_max_max);
    }
    let (spec, theta) = random_model(&mut rng, 16, 3);
    let m = spec.num_params();
    let data = random_dataset(&mut rng, 4, 2, 3);
    let h = hessian_check(&spec, &theta, &data)?;
    Ok((
        worst_b <= 1e-9 && m <= 200 && h.relative_residual <= 1e-3,
        format!(
            "max λmax(B) − λmax(eNTK) = {worst_b:.3e}, Hessian residual {:.3e} at m = {m}",
            h.relative_residual
        ),
    ))
}

fn g_min() -> Result<(bool, String)> {
    let mut rng = SEED.derive(11).rng();
    let mut violations = 0usize;
    let mut prefixes_seen = 0usize;
    for _ in 0..20 {
        let (spec, theta) = random_model(&mut rng, 16, 3);
        let data = random_dataset(&mut rng, 5, 2, 3);
        let prefixes: Vec<usize> = (1..=spec.num_params()).collect();
        let seq = g_min_monotonicity(&spec, &theta, &data, &prefixes)?;
        prefixes_seen += seq.len();
        violations += seq.windows(2).filter(|w| w[1] > w[0]).count();
    }
    Ok((
        violations == 0,
        format!("{violations} increases across {prefixes_seen} prefixes"),
    ))
}

fn coverage() -> Result<(bool, String)> {
    let (covered, triangle) = risk_bound_coverage(10_000, 0.1, SEED.derive(12))?;
    Ok((
        covered >= 0.9 && triangle <= 1e-12,
        format!("coverage {covered:.4} at δ = 0.1 over 10000 datasets"),
    ))
}

fn workflow(report: &mut Vec<String>) -> Result<(bool, String)> {
    let data_spec = SyntheticDataSpec::default();
    let model = default_model(&data_spec);
    let config = TrainConfig::default();
    let mut ok = true;
    for seed in [1u64, 2, 3] {
        let a = run_correlation_experiment(&model, &config, &data_spec, RngSeed(seed))?;
        let b = run_correlation_experiment(&model, &config, &data_spec, RngSeed(seed))?;
        let reproducible = a.records_csv == b.records_csv;
        let complete = a.run.records.len() == 200;
        let identity = a.run.records.iter().zip(&a.run.checks).all(|(r, c)| {
            let rr = c.mean_residual_sq;
            (r.mean_f + r.mean_g - rr).abs() <= 1e-9 * rr.max(f64::MIN_POSITIVE)
                && c.fit_normalized <= c.bound + 1e-9
        });
        // Independent Pearson over the reported tail.
        let tail = &a.run.records[a.report.tail_start_epoch - 1..];
        let acc: Vec<f64> = tail.iter().map(|r| r.test_accuracy).collect();
        let f: Vec<f64> = tail.iter().map(|r| r.mean_f).collect();
        let consistent = match (pearson(&acc, &f), a.report.r_accuracy_f) {
            (Ok(x), Some(y)) => (x - y).abs() <= 1e-12,
            (Err(_), None) => true,
            _ => false,
        };
        ok &= reproducible && complete && identity && consistent;
        report.push(format!(
            "seed {seed}: r(acc, F) = {}, r(acc, G) = {}, tail from epoch {} ({} epochs), final acc {:.3}, reproducible {reproducible}, identity every epoch {identity}",
            fmt_r(a.report.r_accuracy_f),
            fmt_r(a.report.r_accuracy_g),
            a.report.tail_start_epoch,
            a.report.tail_len,
            a.run.records.last().map_or(f64::NAN, |r| r.test_accuracy),
        ));
    }
    Ok((ok, "3 seeds × 200 epochs".into()))
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or("undefined".into(), |v| format!("{v:+.3}"))
}

fn main() {
    let mut literal = String::new();
    let mut workflow_lines = Vec::new();
    let outcomes = vec![
        run(1, "Lagrange identity", 1, lagrange),
        run(2, "Pinsker gap", 5, pinsker),
        run(3, "F/G decomposition", 30, decomposition),
        run(4, "fitting bound", 30, fitting_bound),
        run(5, "generalization tail bound", 60, gen_bound),
        run(6, "complexity oracle", 60, || {
            complexity_oracle(&mut literal)
        }),
        run(7, "complexity asymptotics", 1, asymptotics),
        run(8, "uniformity ordering", 1, uniformity),
        run(9, "Jacobian and eNTK oracles", 10, oracles),
        run(10, "B and Hessian machinery", 120, hessian),
        run(11, "G_M monotonicity", 10, g_min),
        run(12, "risk bound coverage", 120, coverage),
        run(13, "training workflow", 600, || {
            workflow(&mut workflow_lines)
        }),
    ];
    for o in &outcomes {
        println!(
            "{} criterion {:>2}: {:<28} {:>8.3}s (budget {}s)  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.budget.as_secs(),
            o.detail
        );
        if o.id == 6 {
            println!("     note: {literal}");
        }
        if o.id == 13 {
            for line in &workflow_lines {
                println!("     {line}");
            }
        }
    }
    let failed: Vec<usize> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", outcomes.len());
    } else {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
