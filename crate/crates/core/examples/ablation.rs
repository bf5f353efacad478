//! Trains a handful of ablation variants under one seed and prints the
//! probe errors side by side. Epochs are cut short to keep the run brief.

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let mut cfg = RunConfig::profile("desk")?;
    cfg.train.epochs = 10;
    cfg.data.horizons = vec![24];
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let variants: Vec<String> = ["full", "w/o FM", "w/o CM", "w/o DA", "w/o Si"].map(String::from).to_vec();
    let (report, histories) = workflow::ablate(&raw, &cfg, &variants, |row| {
        println!("finished {:<8} final loss {:.3}", row.variant, row.final_loss.unwrap_or(f64::NAN));
    })?;
    print!("{}", report.table());
    // with the frequency loss off, the objective is the time loss alone
    let fm = histories[1].epochs.last().expect("trained").mean;
    println!("w/o FM last epoch: total {:.4} = time {:.4}", fm.total, fm.time);
    Ok(())
}
