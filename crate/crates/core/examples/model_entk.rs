//! Exact Jacobians of a small MLP, KL gradients and eNTK spectra.
//!
//! Run with `cargo run --example model_entk`.

use infobound::model::{entk, forward_with_jacobian, kl_grad, Activation, ModelSpec, ParamVector};
use infobound::verify::{jacobian_fd_error, kl_grad_fd_error, GRAD_FD_STEP};
use infobound::{Pmf, RngSeed};

fn main() -> infobound::Result<()> {
    let spec = ModelSpec::new(2, vec![16], 3, Activation::Tanh)?;
    let theta = ParamVector::init(&spec, RngSeed(5));
    let x = [0.3, -1.2];
    println!("{} parameters", spec.num_params());

    let (logits, p, j) = forward_with_jacobian(&spec, &theta, &x)?;
    println!("logits {:?}", logits.values());
    println!("p(y|x) {:?}", p.probs());
    println!("‖J‖²_F = {:.6}", j.frobenius_sq());

    let q = Pmf::new(vec![0.7, 0.2, 0.1])?;
    let g = kl_grad(&spec, &theta, &x, &q)?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("‖∇ D_KL(q || p)‖ = {norm:.6}");
    println!(
        "finite-difference errors: Jacobian {:.2e}, gradient {:.2e}",
        jacobian_fd_error(&spec, &theta, &x, GRAD_FD_STEP)?,
        kl_grad_fd_error(&spec, &theta, &x, &q, GRAD_FD_STEP)?
    );

    let k = entk(&spec, &theta, &x)?;
    println!("eNTK eigenvalues {:?}", k.eigenvalues());
    println!(
        "trace {:.6} = ‖J‖² ; λmax {:.6}",
        k.trace(),
        k.lambda_max()?
    );
    Ok(())
}
