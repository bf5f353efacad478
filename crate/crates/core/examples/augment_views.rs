//! Two stochastic views of one window. Each feature gets its own scale and
//! shift, sized by that feature's spread inside the window.

use mff_ftnet::augment::{augment_view, draw_factors, series_stats, AugmentConfig};
use mff_ftnet::dataio::load_csv;

fn main() -> mff_ftnet::Result<()> {
    let table = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_2sin.csv"))?;
    let x = table.rows(0..64);
    let cfg = AugmentConfig { seed: 42, ..AugmentConfig::default() };
    let (mu, sigma) = series_stats(&x)?;
    println!("window mean {mu:.3?}\nwindow std  {sigma:.3?}");
    for view in [1, 2] {
        let factors = draw_factors(&sigma, &cfg, view);
        let v = augment_view(&x, &cfg, view)?;
        println!("view {view}:");
        for (f, (s, b)) in factors.iter().enumerate() {
            println!("  feature {f}: scale {s:+.4} shift {b:+.4}  first value {:.4} -> {:.4}", x.at2(0, f), v.at2(0, f));
        }
    }
    Ok(())
}
