//! Pretrains on one synthetic series and fine-tunes on another whose
//! seasonality and trend differ, then compares against training on the
//! target alone for the same total number of epochs.

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let mut cfg = RunConfig::profile("desk")?;
    cfg.data.horizons = vec![24];
    cfg.transfer.pretrain_epochs = 10;
    cfg.transfer.finetune_epochs = 5;
    let source = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let target = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_shift.csv"))?;

    let out = workflow::transfer(&source, &target, &cfg)?;
    println!("pretrain losses {:.3?}", out.pretrain_history.totals());
    println!("finetune losses {:.3?}", out.finetune_history.totals());
    print!("transfer\n{}", out.report.table());

    let mut direct = cfg.clone();
    direct.train.epochs = cfg.transfer.pretrain_epochs + cfg.transfer.finetune_epochs;
    let p = workflow::prepare(&target, &direct)?;
    let (model, _) = workflow::train_model(&p, &direct, |_| {})?;
    print!("target only\n{}", workflow::evaluate(&model, &p, &direct)?.table());
    Ok(())
}
