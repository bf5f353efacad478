//! Trains the desk-sized model on the bundled two-sinusoid series and
//! probes the frozen representations at two horizons.
//!
//! Extra `section.key=value` arguments override the configuration, e.g.
//! `cargo run --release --example train_synthetic -- train.epochs=10`.

use std::time::Instant;

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let cfg = RunConfig::resolve(Some("desk"), None, &overrides)?;
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let prepared = workflow::prepare(&raw, &cfg)?;
    println!("{} training windows of {} steps", workflow::train_windows(&prepared, &cfg)?.len(), cfg.data.window);

    let start = Instant::now();
    let (model, history) = workflow::train_model(&prepared, &cfg, |e| {
        if e.epoch % 5 == 0 {
            println!(
                "epoch {:>3}  total {:>9.3}  time {:>9.3}  freq {:>7.3}",
                e.epoch, e.mean.total, e.mean.time, e.mean.freq
            );
        }
    })?;
    let totals = history.totals();
    if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
        println!("trained in {:.1?}; loss {first:.3} -> {last:.3}", start.elapsed());
    }

    let report = workflow::evaluate(&model, &prepared, &cfg)?;
    print!("{}", report.table());
    for e in &report.entries {
        println!("h={:<4} probe MSE {:.4}  mean-predictor MSE {:.4}  alpha {}", e.horizon, e.mse, e.baseline_mse, e.alpha);
    }
    Ok(())
}
