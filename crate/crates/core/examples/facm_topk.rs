//! Which frequency bins the frequency module keeps for a window, and how
//! the kept spectrum looks after the learned complex reweighting.

use mff_ftnet::dataio::{load_csv, split, standardize, SplitRule};
use mff_ftnet::facm::{mean_amplitude, select_topk};
use mff_ftnet::config::RunConfig;
use mff_ftnet::{spectral, Model, Tape};

fn main() -> mff_ftnet::Result<()> {
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let sp = split(&raw, &SplitRule::Auto)?;
    let table = standardize(&raw, &sp)?;
    let t = 120;
    let mut run = RunConfig::profile("desk")?;
    run.data.window = t;
    run.facm.mask_ratio = 0.05;
    let cfg = run.model_config(raw.num_features());
    let model = Model::new(&cfg, 0)?;

    let x = table.rows(0..t);
    let input_amp = mean_amplitude(&spectral::rfft(&x)?);
    // the raw data repeats every 24 and 60 steps: bins 5 and 2 of 61
    println!("strongest input bins: {:?}", select_topk(&input_amp, 0.05));

    let reps = model.represent(&x)?;
    let amp = mean_amplitude(&spectral::rfft(&reps.r)?);
    let kept = select_topk(&amp, cfg.facm.mask_ratio);
    println!("kept bins of r ({} of {}): {kept:?}", kept.len(), amp.len());

    let mut tape = Tape::new(model.store());
    let rv = tape.constant(reps.r.clone());
    let out = model.facm().forward(&mut tape, rv, None)?;
    assert_eq!(out.selected, kept);
    let h = tape.value(out.h);
    println!("frequency output {:?}, first row {:.4?}", h.shape(), &h.data()[..h.shape()[1]]);
    Ok(())
}
