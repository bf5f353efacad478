//! Saves a trained model, reloads it and checks the representations are
//! bit-for-bit the same.

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::training::Checkpoint;
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let mut cfg = RunConfig::profile("desk")?;
    cfg.train.epochs = 3;
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let p = workflow::prepare(&raw, &cfg)?;
    let (model, history) = workflow::train_model(&p, &cfg, |_| {})?;

    let path = std::env::temp_dir().join("mff_example.ckpt");
    workflow::checkpoint(&model, &cfg, history.epochs.len()).save(&path)?;
    let ck = Checkpoint::load(&path)?;
    println!("{}: {} bytes, epoch {}, {} tensors", path.display(), ck.to_bytes().len(), ck.epoch, ck.params.len());
    println!("embedded configuration:\n{}", ck.config_text.lines().take(6).collect::<Vec<_>>().join("\n"));

    let (restored, restored_cfg) = workflow::load_model(&ck)?;
    assert_eq!(restored_cfg, cfg);
    let x = p.table.rows(0..cfg.data.window);
    let (a, b) = (model.encode(&x)?, restored.encode(&x)?);
    let identical = a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
    println!("representations identical after reload: {identical}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
