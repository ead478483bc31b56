//! Finite-difference Hessian of the expected KL against its exact assembly.
//!
//! Run with `cargo run --release --example hessian_flatness`.

use infobound::dataset::{Dataset, DatasetEntry};
use infobound::fitdiag::hessian_check;
use infobound::model::predictive;
use infobound::verify::{random_dataset, random_model};
use infobound::RngSeed;

fn main() -> infobound::Result<()> {
    let mut rng = RngSeed(23).rng();
    let (spec, theta) = random_model(&mut rng, 8, 3);
    let data = random_dataset(&mut rng, 4, 2, 3);
    let h = hessian_check(&spec, &theta, &data)?;
    println!("m = {} parameters, random targets", spec.num_params());
    report(&h);

    // Targets equal to the predictions: the curvature side term vanishes,
    // the gradient side term generally does not.
    let entries = data
        .entries()
        .iter()
        .map(|e| {
            Ok(DatasetEntry {
                q_yx: predictive(&spec, &theta, &e.x)?,
                ..e.clone()
            })
        })
        .collect::<infobound::Result<Vec<_>>>()?;
    let h = hessian_check(&spec, &theta, &Dataset::new(entries)?)?;
    println!("\ntargets matched to the model");
    report(&h);
    Ok(())
}

fn report(h: &infobound::fitdiag::HessianCheck) {
    println!("  λmax(H_fd)            {:.6}", h.fd_lambda_max);
    println!("  max λmax(B_x)         {:.6}", h.b_lambda_max_max);
    println!("  max λmax(eNTK)        {:.6}", h.entk_lambda_max_max);
    println!(
        "  assembly residual     {:.2e} (relative)",
        h.relative_residual
    );
    println!(
        "  side terms |q·∇f| {:.2e}, curvature {:.2e}",
        h.side_grad_q_norm, h.side_curv_q_norm
    );
    match h.proposition_holds {
        Some(ok) => println!("  flatness bound applies, holds: {ok}"),
        None => println!("  side terms non-zero, flatness bound not applicable"),
    }
}
