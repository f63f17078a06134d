//! Finite-difference verification of every differentiable operator and block.
//!
//! `cargo run --example gradcheck_suite [op]`

use std::time::Instant;

use tsnet::gradcheck::suite;

fn main() -> tsnet::Result<()> {
    let only = std::env::args().nth(1);
    let start = Instant::now();
    let mut failed = 0;
    for r in suite::run(only.as_deref(), 1)? {
        let status = if r.passed() { "ok" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{status:4} {:22} max rel err {:.2e} (tol {:.0e}, {} trials, {} checks)",
            r.name, r.max_rel_error, r.tolerance, r.trials, r.checked
        );
    }
    println!("{failed} failing, {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
