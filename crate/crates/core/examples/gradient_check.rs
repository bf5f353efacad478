//! Central-difference check of every differentiable primitive on the tape.

use mff_ftnet::gradcheck::primitive_suite;

fn main() -> mff_ftnet::Result<()> {
    let checks = primitive_suite(7)?;
    for c in &checks {
        println!("{:<24} {:.2e}", c.name, c.rel_error);
    }
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    println!("{} checks, worst relative error {worst:.2e}", checks.len());
    Ok(())
}
