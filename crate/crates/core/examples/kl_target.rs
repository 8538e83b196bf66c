//! KL objectives against a target law on a random chain.
//!
//! The weighted KL optimizer maximizes the response measured in the target's
//! metric, so it moves *away* from `u` as fast as possible as seen by the
//! target. Moving *toward* the target is a linear problem with observable
//! `-log(u / target)`, the gradient of `-D(u || target)`.

use ndarray::Array1;
use perturbix::constraint_space::random_chain;
use perturbix::functionals::{kl_divergence, ObservableVector};
use perturbix::markov_core::{invariant_vector, perturbed_invariant, response_operator, Horizon, ProbabilityVector};
use perturbix::optimize::{maximize_kl, maximize_linear_functional, Direction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> perturbix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_chain(&mut rng, 20, 0.5, 1.0).expect("chain");
    let u = invariant_vector(&m, 1e-14, 10_000)?;
    let g = response_operator(&m, &u, Horizon::Infinite)?;
    // Tilt mass toward the high-index states.
    let target = ProbabilityVector::normalized(Array1::from_shape_fn(m.n(), |i| u.values()[i] * (1.0 + i as f64 / 10.0)))?;
    let toward = ObservableVector::new(Array1::from_shape_fn(m.n(), |i| -(u.values()[i] / target.values()[i]).ln()))?;

    let runs = [
        ("kl", maximize_kl(&m, &u, &g, None)?),
        ("kl, target metric", maximize_kl(&m, &u, &g, Some(&target))?),
        ("toward target", maximize_linear_functional(&m, &u, &g, &toward, Direction::Max)?),
    ];
    let eps = 0.5 * runs.iter().map(|(_, r)| r.max_feasible_eps).fold(f64::INFINITY, f64::min);
    println!("eps = {eps:.4}, D(u || target) = {:.5}", kl_divergence(u.view(), target.view())?);
    for (name, r) in &runs {
        let ue = perturbed_invariant(&m, &r.p, eps)?;
        println!(
            "{name:>18}: D(u_eps || u) = {:.3e}, D(u_eps || target) = {:.5}",
            kl_divergence(ue.view(), u.view())?,
            kl_divergence(ue.view(), target.view())?
        );
    }
    Ok(())
}
