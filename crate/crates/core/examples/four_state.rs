//! A tour of the basic objects on a hand-written four-state chain.

use ndarray::array;
use perturbix::functionals::{entropy_gradient, entropy_response, kl_quadratic_response, kl_weight, ObservableVector};
use perturbix::markov_core::{invariant_vector, linear_response, perturbed_invariant, response_operator, Horizon, StochasticMatrix};
use perturbix::optimize::{maximize_kl, maximize_linear_functional, Direction};

fn main() -> perturbix::Result<()> {
    // Columns sum to one: entry (i, j) is the probability of j -> i.
    let m = StochasticMatrix::new(array![
        [0.6, 0.1, 0.2, 0.3],
        [0.2, 0.5, 0.1, 0.1],
        [0.1, 0.3, 0.4, 0.2],
        [0.1, 0.1, 0.3, 0.4]
    ])?;
    let u = invariant_vector(&m, 1e-15, 1000)?;
    let g = response_operator(&m, &u, Horizon::Infinite)?;
    println!("stationary u = {:.4}", u.values());

    let psi = ObservableVector::new(entropy_gradient(&u))?;
    let best = maximize_linear_functional(&m, &u, &g, &psi, Direction::Max)?;
    let v1 = linear_response(&g, &best.p, &u);
    println!("\nentropy-optimal P (unit Frobenius norm):\n{:.4}", best.p.entries());
    println!("dS/deps = {:.6}, feasible up to eps = {:.4}", entropy_response(&u, &v1), best.max_feasible_eps);

    for eps in [0.01, 0.05] {
        let exact = perturbed_invariant(&m, &best.p, eps)?;
        let predicted = u.values() + &(&v1 * eps);
        let err: f64 = (exact.values() - &predicted).iter().map(|x| x.abs()).sum();
        println!("  eps {eps}: |u_eps - (u + eps v1)|_1 = {err:.2e}");
    }

    let kl = maximize_kl(&m, &u, &g, None)?;
    let q = kl_quadratic_response(&kl_weight(&u), &g, &kl.p, &u);
    println!("\nKL-optimal P has D(u_eps || u) ~ {q:.5} eps^2");
    Ok(())
}
