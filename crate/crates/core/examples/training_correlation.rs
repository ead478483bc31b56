//! SGD training on the synthetic task with per-epoch diagnostics, then the
//! accuracy correlations over the stable tail.
//!
//! Run with `cargo run --release --example training_correlation [seed]`.

use infobound::experiment::{
    default_model, run_correlation_experiment, SyntheticDataSpec, TrainConfig,
};
use infobound::RngSeed;

fn main() -> infobound::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let data_spec = SyntheticDataSpec::default();
    let model = default_model(&data_spec);
    let config = TrainConfig::default();
    let run = run_correlation_experiment(&model, &config, &data_spec, RngSeed(seed))?;

    println!(
        "{:>5} {:>9} {:>8} {:>9} {:>9} {:>9}",
        "epoch", "loss", "acc", "E[F]", "E[G]", "λmax"
    );
    for r in run
        .run
        .records
        .iter()
        .filter(|r| r.epoch % 20 == 0 || r.epoch == 1)
    {
        println!(
            "{:>5} {:>9.5} {:>8.3} {:>9.5} {:>9.5} {:>9.3}",
            r.epoch, r.train_loss, r.test_accuracy, r.mean_f, r.mean_g, r.lambda_max_max
        );
    }
    let c = &run.report;
    let show = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:+.3}"));
    println!(
        "\nseed {seed}: tail from epoch {} ({} epochs)",
        c.tail_start_epoch, c.tail_len
    );
    println!("r(accuracy, E[F]) = {}", show(c.r_accuracy_f));
    println!("r(accuracy, E[G]) = {}", show(c.r_accuracy_g));
    for w in &c.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
