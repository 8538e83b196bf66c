//! Recover the drift of a 1D double well from its Ulam matrix.

use perturbix::dynamics::{double_well_1d_field, simulate_sde_em, SdeSpec};
use perturbix::reconstruct::{matrix_log, reconstruct_drift, series_radius, LogMethod};
use perturbix::ulam::{estimate_with, BoxPartition, UlamConfig};

fn main() -> perturbix::Result<()> {
    let alpha = -0.1;
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000_000);
    let traj = simulate_sde_em(&SdeSpec::new(double_well_1d_field(alpha), vec![0.0], 0.7, 0.01, steps, 1))?;
    let part = BoxPartition::new(vec![[-1.75, 1.75]], vec![256])?;
    let tau = 0.1;
    let est = estimate_with(&traj, &part, tau, &UlamConfig::default())?;
    println!("radius of M - I: {:.3} (the full series needs < 1)", series_radius(est.matrix.entries())?);

    // Two terms of log(I + A) = A - A^2/2 + ... are enough for a drift.
    let l = matrix_log(&est.matrix, tau, LogMethod::Truncated { order: 2 }, 0.0, 0)?;
    let field = reconstruct_drift(l.entries(), &part, &est.retained_index)?;
    let occ = est.retained_occupancy();
    println!("{:>8} {:>10} {:>10}", "x", "estimate", "exact");
    for r in (0..field.len()).step_by(16) {
        let x = field.centers[[r, 0]];
        if occ[r] >= 100 {
            println!("{x:>8.3} {:>10.4} {:>10.4}", field.values[[r, 0]], x - x.powi(3) + alpha);
        }
    }
    Ok(())
}
