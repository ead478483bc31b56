//! Task complexity of a labeled sample under a Dirichlet posterior.
//!
//! Run with `cargo run --release --example task_complexity`.

use infobound::complexity::{
    complexity_closed_form, complexity_lower_bound, estimate_complexity,
    uniformity_ordering_exhaustive, PosteriorSpec,
};
use infobound::RngSeed;

fn main() -> infobound::Result<()> {
    let spec = PosteriorSpec::uniform_prior(vec![5, 5])?;
    let est = estimate_complexity(&spec, 200_000, RngSeed(1))?;
    println!("counts (5,5), uniform prior");
    println!("  closed form  {:.6}", est.closed_form);
    println!(
        "  Monte Carlo  {:.6} ± {:.6} (z = {:+.2})",
        est.mean,
        est.std_error,
        est.z_score()
    );

    // Jensen bounds the expected divergence, which is twice the complexity.
    for counts in [vec![4, 0], vec![8, 2], vec![3, 3, 3, 1]] {
        let spec = PosteriorSpec::uniform_prior(counts.clone())?;
        let c = complexity_closed_form(&spec);
        let lb = complexity_lower_bound(&spec);
        println!(
            "counts {counts:?}: C = {c:.4}, D_KL(q || E q̄) = {lb:.4}, 2C = {:.4}",
            2.0 * c
        );
    }

    println!("\nmore data at the same proportions lowers the complexity:");
    for i in 0..=6 {
        let n = 10u64 << i;
        let spec = PosteriorSpec::uniform_prior(vec![3 * n / 10, 7 * n / 10])?;
        println!("  n = {n:>4}: C = {:.3e}", complexity_closed_form(&spec));
    }

    let r = uniformity_ordering_exhaustive(12, 3)?;
    println!(
        "\nuniform counts (4,4,4) give C = {:.5}; minimal among {} compositions: {}",
        r.uniform_value,
        r.compared.len(),
        r.uniform_is_min
    );
    Ok(())
}
