//! Lorenz 63 projected onto (x, z). The entropy-optimal response keeps the
//! x <-> -x symmetry of the attractor; the KL-optimal one breaks it.
//!
//! `cargo run --release --example lorenz_marginals -- [steps]` (default 1e7;
//! the acceptance run uses 1e8).

use ndarray::Array1;
use perturbix::dynamics::{simulate_lorenz63, Lorenz63Spec};
use perturbix::functionals::{entropy_gradient, ObservableVector};
use perturbix::markov_core::{invariant_vector, l1, linear_response, response_operator, Horizon};
use perturbix::optimize::{maximize_kl, maximize_linear_functional, Direction};
use perturbix::ulam::{estimate_with, marginal, BoxPartition, Trajectory, UlamConfig};

fn main() -> perturbix::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000_000);
    let full = simulate_lorenz63(&Lorenz63Spec { steps, sample_every: 10, ..Default::default() })?;
    let xz: Vec<f64> = full.as_flat().chunks(3).flat_map(|v| [v[0], v[2]]).collect();
    let traj = Trajectory::new(2, full.dt, xz)?;
    let part = BoxPartition::new(vec![[-20.0, 20.0], [0.0, 50.0]], vec![64, 64])?;
    let min_occupancy = (steps / 100_000).max(5) as u64;
    let cfg = UlamConfig { min_occupancy, min_transition_count: (min_occupancy / 10).max(1), symmetric_mask: false };
    let est = estimate_with(&traj, &part, 0.1, &cfg)?;
    let m = &est.matrix;
    let u = invariant_vector(m, 1e-13, 1_000_000)?;
    let g = response_operator(m, &u, Horizon::Infinite)?;
    println!("{} boxes retained", m.n());

    let psi = ObservableVector::new(entropy_gradient(&u))?;
    let runs = [
        ("entropy", maximize_linear_functional(m, &u, &g, &psi, Direction::Max)?.p),
        ("kl", maximize_kl(m, &u, &g, None)?.p),
    ];
    for (name, p) in &runs {
        let v1 = linear_response(&g, p, &u);
        let mx = marginal(v1.view(), &part, &est.retained_index, 0)?;
        let mirrored: Array1<f64> = mx.iter().rev().copied().collect();
        let anti = 0.5 * l1(&(&mx - &mirrored)) / l1(&mx);
        println!("{name}: antisymmetric part of the x-marginal response is {:.0}%", 100.0 * anti);
    }
    Ok(())
}
