//! Orbit-weighted averages on a synthetic reduced model of periodic orbits.

use perturbix::markov_core::{invariant_vector, linear_response, response_operator, Horizon};
use perturbix::optimize::Direction;
use perturbix::upo_reduced::{maximize_weighted_observable, synthetic_model, weight_response, weighted_average, weighted_profile};

fn main() -> perturbix::Result<()> {
    let model = synthetic_model(2024);
    let u = invariant_vector(&model.m, 1e-15, 1_000_000)?;
    let g = response_operator(&model.m, &u, Horizon::Infinite)?;
    for name in ["energy", "dissipation"] {
        let (avg, w) = weighted_average(&model, &u, name)?;
        let best = maximize_weighted_observable(&model, &u, &g, name, Direction::Max)?;
        let dw = weight_response(&model, &u, &linear_response(&g, &best.p, &u))?;
        let rate = model.observable(name)?.dot(&dw);
        println!("<{name}> = {avg:.4}, steepest increase {rate:.4} per unit eps");
        if name == "energy" {
            let base = weighted_profile(&model, &w, "velocity")?;
            let slope = weighted_profile(&model, &dw, "velocity")?;
            let mid = base.len() / 2;
            println!("  mid-channel velocity {:.4}, response {:.4}", base[mid], slope[mid]);
        }
    }
    Ok(())
}
