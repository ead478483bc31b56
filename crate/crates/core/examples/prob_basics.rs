//! PMFs, KL divergence, stable softmax and the Pinsker-type gap.
//!
//! Run with `cargo run --example prob_basics`.

use infobound::prob::{
    entropy, kl_divergence, l1_distance, pinsker_gap, sample_dirichlet, sample_empirical, softmax,
    Logits, Pmf, RngSeed,
};

fn main() -> infobound::Result<()> {
    let q = Pmf::from_counts(&[6, 3, 1])?;
    let p = Pmf::new(vec![0.5, 0.3, 0.2])?;
    println!("q = {:?}", q.probs());
    println!("H(q) = {:.6} nats", entropy(&q));
    println!("KL(q || p) = {:.6}", kl_divergence(&q, &p)?);
    println!("KL(p || q) = {:.6}", kl_divergence(&p, &q)?);

    // Mass outside the support makes the divergence infinite.
    let point = Pmf::one_hot(3, 0);
    println!("KL(q || delta_0) = {}", kl_divergence(&q, &point)?);

    // Huge logits stay finite thanks to the max shift.
    let (s, ln_z) = softmax(&Logits::new(vec![1000.0, 999.0, 990.0])?);
    println!("softmax = {:?}, ln Z = {ln_z:.6}", s.probs());

    // D_KL(q||p) ≥ (2/L²)(E_q f − E_p f)² for f in [0, L].
    let f = [0.0, 2.5, 4.0];
    let gap = pinsker_gap(&q, &p, &f, 4.0)?;
    println!("Pinsker gap for f = {f:?}, L = 4: {gap:.6} (never negative)");
    println!("L1(q, p) = {:.4}", l1_distance(&q, &p)?);

    // Empirical PMFs concentrate around the source as n grows.
    let q_bar = Pmf::new(vec![0.2, 0.3, 0.5])?;
    for n in [10, 100, 1000, 10000] {
        let emp = sample_empirical(&q_bar, n, RngSeed(n))?;
        println!(
            "n = {n:>5}: KL(q_n || q̄) = {:.6}",
            kl_divergence(&emp, &q_bar)?
        );
    }
    let draw = sample_dirichlet(&[2.0, 2.0, 2.0], RngSeed(3))?;
    println!("Dirichlet(2,2,2) draw: {:?}", draw.probs());
    Ok(())
}
