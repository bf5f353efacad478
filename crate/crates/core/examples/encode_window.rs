//! Runs one window through the full encoder and prints every intermediate
//! representation together with the time-domain contrastive loss.

use mff_ftnet::config::RunConfig;
use mff_ftnet::ctcm::time_contrastive_loss;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::Model;

fn main() -> mff_ftnet::Result<()> {
    let cfg = RunConfig::profile("desk")?;
    let table = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let model = Model::new(&cfg.model_config(table.num_features()), cfg.train.seed)?;
    println!("{} parameters in {} tensors", model.store().num_scalars(), model.store().len());
    println!("backbone receptive field: {} steps", cfg.backbone.receptive_field());

    let x = table.rows(0..cfg.data.window);
    let reps = model.represent(&x)?;
    for (name, t) in [("input", &x), ("r", &reps.r), ("h_freq", &reps.h_freq), ("h_time", &reps.h_time), ("h", &reps.h)] {
        println!("{name:>7}: {:?}", t.shape());
    }
    let t = cfg.data.window as f64;
    println!(
        "time loss {:.4} (uniform scores would give T·ln T = {:.4})",
        time_contrastive_loss(&reps.r, &reps.h)?,
        t * t.ln()
    );
    Ok(())
}
