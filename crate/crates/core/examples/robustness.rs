//! Perturbs the training split with large Gaussian noise at growing ratios
//! and reports how the probe degrades. The encoder is trained once on clean
//! data; only the probe sees the damaged rows.

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::{load_csv, PerturbationKind};
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let mut cfg = RunConfig::profile("desk")?;
    cfg.train.epochs = 10;
    cfg.data.horizons = vec![24];
    cfg.robustness.retrain = false;
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    for kind in [PerturbationKind::Noise, PerturbationKind::Missing] {
        let report = workflow::robustness(&raw, &cfg, kind, &[0.05, 0.1, 0.2, 0.3], |_| {})?;
        println!("{kind:?}");
        print!("{}", report.table());
    }
    Ok(())
}
