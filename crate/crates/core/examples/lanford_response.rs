//! Noisy Lanford map: Ulam matrix, optimal perturbations, and how fast the
//! finite-horizon response converges.
//!
//! `cargo run --release --example lanford_response -- [steps]`

use perturbix::dynamics::{simulate_lanford, MapSpec};
use perturbix::functionals::{entropy_gradient, ObservableVector};
use perturbix::markov_core::{invariant_vector, l1, linear_response, perturbed_invariant, response_operator, transient_responses, Horizon};
use perturbix::optimize::{maximize_kl, maximize_linear_functional, Direction};
use perturbix::ulam::{estimate_with, BoxPartition, UlamConfig};

fn main() -> perturbix::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000_000);
    let traj = simulate_lanford(&MapSpec { steps, ..Default::default() })?;
    let part = BoxPartition::new(vec![[0.0, 1.0]], vec![256])?;
    // Rare transitions are mostly sampling noise; dropping them keeps eps = 0.1 feasible.
    let cfg = UlamConfig { min_transition_count: 200, ..Default::default() };
    let est = estimate_with(&traj, &part, 1.0, &cfg)?;
    let m = &est.matrix;
    let u = invariant_vector(m, 1e-13, 1_000_000)?;
    let g = response_operator(m, &u, Horizon::Infinite)?;
    println!("{} of 256 boxes retained", m.n());

    let psi = ObservableVector::new(entropy_gradient(&u))?;
    let runs = [
        ("entropy", maximize_linear_functional(m, &u, &g, &psi, Direction::Max)?),
        ("kl", maximize_kl(m, &u, &g, None)?),
    ];
    for (name, r) in &runs {
        let v1 = linear_response(&g, &r.p, &u);
        println!("\n{name}: objective {:.4e}, feasible eps <= {:.3}", r.objective_gradient, r.max_feasible_eps);
        for (t, vt) in transient_responses(m, &r.p, &u, 6).iter().enumerate().skip(1) {
            println!("  t = {t}: |v1(t) - v1|_1 = {:.4}", l1(&(vt - &v1)));
        }
        let eps = 0.1f64.min(r.max_feasible_eps);
        let exact = perturbed_invariant(m, &r.p, eps)?;
        println!("  eps {eps:.3}: linear prediction error {:.4}", l1(&(u.values() + &(&v1 * eps) - exact.values())));
    }
    Ok(())
}
