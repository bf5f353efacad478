//! The forecasting probe on its own: encode every window position of each
//! split, fit ridge on train, choose alpha on validation, score on test.

use mff_ftnet::config::RunConfig;
use mff_ftnet::dataio::load_csv;
use mff_ftnet::evaluation::{extract_features, fit_ridge, mean_baseline, ridge_solve, score, Features, ALPHA_GRID};
use mff_ftnet::workflow;

fn main() -> mff_ftnet::Result<()> {
    let mut cfg = RunConfig::profile("desk")?;
    cfg.train.epochs = 10;
    let raw = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let p = workflow::prepare(&raw, &cfg)?;
    let (model, _) = workflow::train_model(&p, &cfg, |_| {})?;

    let (t, horizon) = (cfg.data.window, 24);
    let feats = |r| extract_features(&model, &p.table, r, t, horizon, cfg.data.mode);
    let (train, valid, test) = (feats(p.split.train())?, feats(p.split.valid())?, feats(p.split.test())?);
    println!(
        "features: train {}x{}, targets {}x{}",
        train.len(),
        train.inputs().shape()[1],
        train.len(),
        train.targets().shape()[1]
    );

    for alpha in ALPHA_GRID {
        let probe = ridge_solve(train.inputs(), train.targets(), alpha)?;
        let v = Features::new(valid.inputs().clone(), valid.targets().clone())?;
        println!("alpha {alpha:>6}: validation MSE {:.5}", score(&probe, &v)?.mse);
    }
    let probe = fit_ridge(&train, &valid, &ALPHA_GRID)?;
    let m = score(&probe, &test)?;
    let b = mean_baseline(&train, &test)?;
    println!("chosen alpha {}; test MSE {:.4} MAE {:.4}; mean predictor MSE {:.4}", probe.alpha, m.mse, m.mae, b.mse);
    Ok(())
}
