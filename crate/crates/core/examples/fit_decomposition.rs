//! The F/G split of the fitting residual and the fitting-error bound.
//!
//! Run with `cargo run --example fit_decomposition`.

use infobound::fitdiag::{decompose, fit_report, g_min_monotonicity};
use infobound::verify::{random_dataset, random_input, random_model, random_pmf};
use infobound::{LossSpec, RngSeed};

fn main() -> infobound::Result<()> {
    let mut rng = RngSeed(17).rng();
    let (spec, theta) = random_model(&mut rng, 16, 3);
    let x = random_input(&mut rng, 2);
    let q = random_pmf(&mut rng, 3, false);

    let d = decompose(&spec, &theta, &x, &q)?;
    println!("‖q − p‖² = {:.8}", d.residual_sq);
    println!(
        "F = {:.8}, G = {:.8}, F + G = {:.8}",
        d.f_term,
        d.g_term,
        d.f_term + d.g_term
    );
    let (j, fj) = d
        .per_param_f
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("model has parameters");
    println!(
        "largest per-parameter F_j at j = {j}: {fj:.6} (+ G_j = {:.6})",
        d.per_param_g[j]
    );

    let data = random_dataset(&mut rng, 8, 2, 3);
    let r = fit_report(&spec, &theta, &data, &LossSpec::SoftmaxCrossEntropy)?;
    println!("\ndataset of {} inputs", data.len());
    println!(
        "fit = {:.6}, normalized {:.6} ≤ bound {:.6}",
        r.fit, r.fit_normalized, r.bound
    );
    println!(
        "E[F] = {:.6}, E[G] = {:.6}, max λmax = {:.4}",
        r.mean_f, r.mean_g, r.lambda_max_max
    );
    print!("{}", r.rows_csv());

    let m = spec.num_params();
    let prefixes: Vec<usize> = (1..=m).step_by(m / 8).collect();
    let seq = g_min_monotonicity(&spec, &theta, &data, &prefixes)?;
    println!("\nG_M over growing parameter prefixes:");
    for (k, g) in prefixes.iter().zip(&seq) {
        println!("  first {k:>3}: {g:.6}");
    }
    Ok(())
}
