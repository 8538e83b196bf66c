//! A double well with a rotational drift is irreversible. Compare removing
//! the irreversibility wholesale (additive reversibilization) against the
//! steepest measure-preserving descent of entropy production.

use perturbix::dynamics::{double_well_2d_field, simulate_sde_em, SdeSpec};
use perturbix::functionals::entropy_production;
use perturbix::markov_core::{invariant_vector, perturb};
use perturbix::optimize::{additive_reversibilization, entropy_production_coefficients, minimize_measure_preserving, Direction};
use perturbix::ulam::{estimate_with, BoxPartition, UlamConfig};

fn main() -> perturbix::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000_000);
    let traj = simulate_sde_em(&SdeSpec::new(double_well_2d_field(0.0, true), vec![0.0, 0.0], 1.0, 0.01, steps, 1))?;
    let part = BoxPartition::new(vec![[-2.0, 2.0], [-1.5, 1.5]], vec![32, 32])?;
    // Reversibilization needs i -> j and j -> i to be both present or both absent.
    let cfg = UlamConfig { min_transition_count: 20, symmetric_mask: true, ..Default::default() };
    let est = estimate_with(&traj, &part, 0.25, &cfg)?;
    let m = &est.matrix;
    let u = invariant_vector(m, 1e-13, 1_000_000)?;
    println!("{} states, s(M) = {:.4}", m.n(), entropy_production(m, &u)?);

    let pr = additive_reversibilization(m, &u, false)?;
    println!("s(M + P_r) = {:.2e}", entropy_production(&perturb(m, &pr, 1.0)?, &u)?);
    let pr = pr.normalize().expect("irreversible chain");
    let ps = minimize_measure_preserving(m, &u, &entropy_production_coefficients(m, &u)?, Direction::Min)?;
    println!("{:>6} {:>12} {:>12}", "eps", "optimal", "reversible");
    for eps in [0.01, 0.02, 0.05, 0.1] {
        let s_opt = entropy_production(&perturb(m, &ps.p, eps)?, &u)?;
        let s_rev = entropy_production(&perturb(m, &pr, eps)?, &u)?;
        println!("{eps:>6} {s_opt:>12.5} {s_rev:>12.5}");
    }
    Ok(())
}
