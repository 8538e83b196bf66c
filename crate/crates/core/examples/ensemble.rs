//! Lagrange multipliers versus orthogonal projection on random chains.

use perturbix::constraint_space::{ensemble_compare, EnsembleConfig};

fn main() -> perturbix::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let report = ensemble_compare(&EnsembleConfig { count, ..Default::default() })?;
    println!("spectral gap {:.3} +- {:.3}", report.spectral_gap_mean, report.spectral_gap_std);
    println!(
        "entropy production decreased in {:.1}% (Lagrange) and {:.1}% (projection) of chains",
        100.0 * report.fraction_decreased_lagrange,
        100.0 * report.fraction_decreased_projection
    );
    println!("method difference: median {:.1e}, max {:.1e}", report.median_method_diff, report.max_method_diff);
    let h = &report.method_diff_hist;
    for (k, c) in h.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        println!("  [{:.0e}, {:.0e}) {}", h.edges[k], h.edges[k + 1], "#".repeat(*c));
    }
    Ok(())
}
