//! Assembling the expected-risk bound and measuring how often it covers
//! the population risk.
//!
//! Run with `cargo run --release --example risk_bound`.

use infobound::dataset::{Dataset, JointDistribution};
use infobound::prob::sample_counts;
use infobound::risk::{expected_risk_bound, risk, ConditionalSource};
use infobound::verify::risk_bound_coverage;
use infobound::{LossSpec, ModelSpec, ParamVector, Pmf, PosteriorSpec, RngSeed};

fn main() -> infobound::Result<()> {
    let points = vec![vec![-1.0], vec![1.0]];
    let q_bar = JointDistribution::new(
        points.clone(),
        3,
        Pmf::new(vec![0.25, 0.15, 0.1, 0.05, 0.15, 0.3])?,
    )?;
    let spec = ModelSpec::linear(1, 3);
    let theta = ParamVector::init(&spec, RngSeed(2));
    let counts = sample_counts(q_bar.pmf(), 50, &mut RngSeed(9).rng());
    let data = Dataset::from_joint_counts(&points, 3, &counts)?;
    let post = PosteriorSpec::uniform_prior(counts.clone())?;
    println!("sample counts {counts:?}");

    for loss in [LossSpec::ZeroOne, LossSpec::clipped()] {
        let b = expected_risk_bound(&spec, &theta, &data, &post, 0.1, &loss)?;
        let truth = risk(
            &spec,
            &theta,
            &data,
            ConditionalSource::External(&q_bar),
            &loss,
        )?;
        println!("\n{loss:?}");
        println!("  model risk   {:.4}", b.model_risk);
        println!("  fit term     {:.4}", b.fit_bound_term);
        println!(
            "  gen epsilon  {:.4} (C = {:.5})",
            b.gen_epsilon, b.complexity
        );
        println!(
            "  total bound  {:.4} ≥ population risk {truth:.4}",
            b.total_bound
        );
    }

    // Unbounded cross-entropy has no finite bound.
    let err = expected_risk_bound(
        &spec,
        &theta,
        &data,
        &post,
        0.1,
        &LossSpec::SoftmaxCrossEntropy,
    );
    println!("\nsoftmax cross-entropy: {}", err.unwrap_err());

    let (coverage, _) = risk_bound_coverage(5_000, 0.1, RngSeed(4))?;
    println!("coverage over 5000 resampled datasets at δ = 0.1: {coverage:.4}");
    Ok(())
}
