//! Reduced models built from periodic orbits.
//!
//! Each state is an orbit with a period `T_i` and per-orbit averages of some
//! observables. A long trajectory spends time in orbit `i` in proportion to
//! `u_i T_i`, so time averages use the weights
//!
//! ```text
//! w_i = u_i T_i / sum_j u_j T_j
//! ```
//!
//! and a perturbation of `u` moves them linearly, `dw = A v1` with
//! `A = (diag(T) - w T^T) / sum_j u_j T_j`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::functionals::ObservableVector;
use crate::markov_core::{ProbabilityVector, ResponseOperator, StochasticMatrix};
use crate::optimize::{maximize_linear_functional, Direction, OptimizationResult};
use crate::{Error, Result};

/// Per-orbit samples of a function on a shared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub grid: Vec<f64>,
    /// One row per orbit.
    pub rows: Vec<Vec<f64>>,
}

/// On-disk layout. `transition_matrix` is written row by row; columns sum
/// to one.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    transition_matrix: Vec<Vec<f64>>,
    periods: Vec<f64>,
    #[serde(default)]
    observables: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    profiles: BTreeMap<String, Profile>,
}

#[derive(Clone, Debug)]
pub struct ReducedOrbitModel {
    pub m: StochasticMatrix,
    periods: Array1<f64>,
    observables: BTreeMap<String, Array1<f64>>,
    profiles: BTreeMap<String, Profile>,
}

impl ReducedOrbitModel {
    pub fn new(
        m: StochasticMatrix,
        periods: Array1<f64>,
        observables: BTreeMap<String, Array1<f64>>,
        profiles: BTreeMap<String, Profile>,
    ) -> Result<Self> {
        let n = m.n();
        if periods.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: periods.len() });
        }
        if let Some(i) = periods.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::DomainError(format!("period {i} = {} is not positive", periods[i])));
        }
        for (name, h) in &observables {
            if h.len() != n {
                return Err(Error::ParameterError(format!("observable `{name}` has {} entries, expected {n}", h.len())));
            }
            ObservableVector::new(h.clone())?;
        }
        for p in profiles.values() {
            if p.rows.len() != n || p.rows.iter().any(|r| r.len() != p.grid.len()) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(Self { m, periods, observables, profiles })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        if f.transition_matrix.len() != f.n || f.transition_matrix.iter().any(|r| r.len() != f.n) {
            return Err(Error::Parse(format!("transition_matrix must be {0}x{0}", f.n)));
        }
        let flat: Vec<f64> = f.transition_matrix.into_iter().flatten().collect();
        let m = StochasticMatrix::new(Array2::from_shape_vec((f.n, f.n), flat).expect("checked shape"))?;
        let observables = f.observables.into_iter().map(|(k, v)| (k, Array1::from(v))).collect();
        Self::new(m, Array1::from(f.periods), observables, f.profiles)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let f = ModelFile {
            n: self.n(),
            transition_matrix: self.m.entries().outer_iter().map(|r| r.to_vec()).collect(),
            periods: self.periods.to_vec(),
            observables: self.observables.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect(),
            profiles: self.profiles.clone(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    pub fn periods(&self) -> &Array1<f64> {
        &self.periods
    }

    pub fn observable(&self, name: &str) -> Result<&Array1<f64>> {
        self.observables.get(name).ok_or_else(|| Error::UnknownObservable(name.to_string()))
    }

    pub fn observable_names(&self) -> impl Iterator<Item = &str> {
        self.observables.keys().map(String::as_str)
    }

    pub fn profile(&self, name: &str) -> Result<&Profile> {
        self.profiles.get(name).ok_or_else(|| Error::UnknownObservable(name.to_string()))
    }
}

fn check_len(model: &ReducedOrbitModel, got: usize) -> Result<()> {
    if got != model.n() {
        return Err(Error::LengthMismatch { expected: model.n(), got });
    }
    Ok(())
}

/// Time-fraction weights `w_i = u_i T_i / sum_j u_j T_j`.
pub fn weights(model: &ReducedOrbitModel, u: &ProbabilityVector) -> Result<Array1<f64>> {
    check_len(model, u.len())?;
    let ut = u.values() * model.periods();
    let z = ut.sum();
    Ok(ut / z)
}

/// `<h> = sum w_i h_i`, returned with the weights.
pub fn weighted_average(model: &ReducedOrbitModel, u: &ProbabilityVector, name: &str) -> Result<(f64, Array1<f64>)> {
    let h = model.observable(name)?;
    let w = weights(model, u)?;
    Ok((w.dot(h), w))
}

/// `A` with `dw = A v1`.
pub fn weight_response_matrix(model: &ReducedOrbitModel, u: &ProbabilityVector) -> Result<Array2<f64>> {
    let w = weights(model, u)?;
    let t = model.periods();
    let z = u.values().dot(t);
    let n = model.n();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| ((if i == j { t[i] } else { 0.0 }) - w[i] * t[j]) / z))
}

/// First-order change of the weights when `u` moves along `v1`.
pub fn weight_response(model: &ReducedOrbitModel, u: &ProbabilityVector, v1: &Array1<f64>) -> Result<Array1<f64>> {
    check_len(model, v1.len())?;
    let w = weights(model, u)?;
    let t = model.periods();
    let z = u.values().dot(t);
    let shift = v1.dot(t) / z;
    Ok((t * v1) / z - &w * shift)
}

/// Perturbation that extremizes `sum h_i dw_i` at unit norm.
///
/// `A^T h = T ∘ (h - <h>) / sum u_j T_j`, so a constant observable has no
/// gradient and gives [`Error::DegenerateObjective`].
pub fn maximize_weighted_observable(
    model: &ReducedOrbitModel,
    u: &ProbabilityVector,
    g: &ResponseOperator,
    name: &str,
    direction: Direction,
) -> Result<OptimizationResult> {
    let (mean, _) = weighted_average(model, u, name)?;
    let h = model.observable(name)?;
    let t = model.periods();
    let z = u.values().dot(t);
    let centered = h.mapv(|x| x - mean);
    let scale = h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if centered.iter().all(|x| x.abs() <= 1e-12 * scale) {
        return Err(Error::DegenerateObjective);
    }
    let f = ObservableVector::new(t * &centered / z)?;
    maximize_linear_functional(&model.m, u, g, &f, direction)
}

/// `sum_i w_i profile_i` on the profile's grid.
pub fn weighted_profile(model: &ReducedOrbitModel, weights: &Array1<f64>, name: &str) -> Result<Array1<f64>> {
    let p = model.profile(name)?;
    if weights.len() != p.rows.len() {
        return Err(Error::GridMismatch);
    }
    let mut out = Array1::zeros(p.grid.len());
    for (w, row) in weights.iter().zip(&p.rows) {
        if row.len() != p.grid.len() {
            return Err(Error::GridMismatch);
        }
        out.scaled_add(*w, &Array1::from(row.clone()));
    }
    Ok(out)
}

/// Seeded 17-orbit stand-in for a real orbit library.
///
/// Dense random transitions with a heavy diagonal, periods in `[1, 6]`,
/// observables `energy` and `dissipation`, and a `velocity` profile on 33
/// points whose peak height grows with the orbit's energy.
pub fn synthetic_model(seed: u64) -> ReducedOrbitModel {
    const N: usize = 17;
    const GRID: usize = 33;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::from_shape_fn((N, N), |_| rng.gen_range(0.0..1.0));
    for i in 0..N {
        m[[i, i]] += 2.0;
    }
    let m = StochasticMatrix::from_nonnegative(m).expect("positive entries");
    let periods = Array1::from_shape_fn(N, |_| rng.gen_range(1.0..6.0));
    let energy = Array1::from_shape_fn(N, |_| rng.gen_range(0.5..2.0));
    let dissipation = energy.mapv(|e| e * e + 0.1);
    let grid: Vec<f64> = (0..GRID).map(|k| k as f64 / (GRID - 1) as f64).collect();
    let rows = energy.iter().map(|e| grid.iter().map(|y| e * (std::f64::consts::PI * y).sin()).collect()).collect();
    let observables = BTreeMap::from([("energy".to_string(), energy), ("dissipation".to_string(), dissipation)]);
    let profiles = BTreeMap::from([("velocity".to_string(), Profile { grid, rows })]);
    ReducedOrbitModel::new(m, periods, observables, profiles).expect("valid fixture")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_core::{invariant_vector, linear_response, response_operator, Horizon};
    use ndarray::array;

    fn three_orbit(periods: Array1<f64>) -> ReducedOrbitModel {
        let m = StochasticMatrix::new(array![[0.5, 0.2, 0.3], [0.3, 0.6, 0.2], [0.2, 0.2, 0.5]]).unwrap();
        let obs = BTreeMap::from([("h".to_string(), array![1.0, 2.0, 4.0]), ("c".to_string(), array![3.0, 3.0, 3.0])]);
        ReducedOrbitModel::new(m, periods, obs, BTreeMap::new()).unwrap()
    }

    #[test]
    fn hand_weights() {
        let model = three_orbit(array![1.0, 2.0, 3.0]);
        let u = ProbabilityVector::new(array![0.5, 0.25, 0.25]).unwrap();
        // u T = (0.5, 0.5, 0.75), total 1.75.
        let (avg, w) = weighted_average(&model, &u, "h").unwrap();
        assert!((&w - &array![0.5 / 1.75, 0.5 / 1.75, 0.75 / 1.75]).iter().all(|x| x.abs() < 1e-15));
        assert!((avg - (0.5 + 1.0 + 3.0) / 1.75).abs() < 1e-14);
        assert!(matches!(weighted_average(&model, &u, "nope"), Err(Error::UnknownObservable(_))));
    }

    #[test]
    fn equal_periods_collapse() {
        let model = three_orbit(array![2.0, 2.0, 2.0]);
        let u = ProbabilityVector::new(array![0.2, 0.3, 0.5]).unwrap();
        let (avg, w) = weighted_average(&model, &u, "h").unwrap();
        assert!((&w - u.values()).iter().all(|x| x.abs() < 1e-15));
        assert!((avg - 2.8).abs() < 1e-14);
        let v1 = array![0.1, -0.3, 0.2];
        assert_eq!(weight_response(&model, &u, &v1).unwrap(), v1);
        assert_eq!(weight_response(&model, &u, &Array1::zeros(3)).unwrap(), Array1::<f64>::zeros(3));
    }

    #[test]
    fn single_orbit() {
        let m = StochasticMatrix::new(array![[1.0]]).unwrap();
        let model = ReducedOrbitModel::new(m, array![3.0], BTreeMap::from([("e".into(), array![1.7])]), BTreeMap::new()).unwrap();
        assert_eq!(weighted_average(&model, &ProbabilityVector::uniform(1), "e").unwrap().0, 1.7);
    }

    #[test]
    fn response_matches_finite_difference() {
        let model = synthetic_model(3);
        let u = invariant_vector(&model.m, 1e-14, 1000).unwrap();
        let g = response_operator(&model.m, &u, Horizon::Infinite).unwrap();
        let opt = maximize_weighted_observable(&model, &u, &g, "dissipation", Direction::Max).unwrap();
        let v1 = linear_response(&g, &opt.p, &u);
        let dw = weight_response(&model, &u, &v1).unwrap();
        assert!(dw.sum().abs() < 1e-12);
        let a = weight_response_matrix(&model, &u).unwrap();
        assert!((a.dot(&v1) - &dw).iter().all(|x| x.abs() < 1e-14));
        let eps = 1e-6;
        let shifted = u.values() + &(&v1 * eps);
        let ut = &shifted * model.periods();
        let w_eps = &ut / ut.sum();
        let fd = (w_eps - weights(&model, &u).unwrap()) / eps;
        let err = (fd - &dw).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn period_rescaling_invariance() {
        let u = ProbabilityVector::new(array![0.2, 0.3, 0.5]).unwrap();
        let a = weighted_average(&three_orbit(array![1.0, 2.0, 3.0]), &u, "h").unwrap().0;
        let b = weighted_average(&three_orbit(array![7.0, 14.0, 21.0]), &u, "h").unwrap().0;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn optimizer_cases() {
        let model = three_orbit(array![1.0, 2.0, 3.0]);
        let u = invariant_vector(&model.m, 1e-14, 1000).unwrap();
        let g = response_operator(&model.m, &u, Horizon::Infinite).unwrap();
        assert!(matches!(maximize_weighted_observable(&model, &u, &g, "c", Direction::Max), Err(Error::DegenerateObjective)));
        let up = maximize_weighted_observable(&model, &u, &g, "h", Direction::Max).unwrap();
        let down = maximize_weighted_observable(&model, &u, &g, "h", Direction::Min).unwrap();
        assert!((up.p.entries() + down.p.entries()).iter().all(|x| x.abs() < 1e-15));
        let dw = weight_response(&model, &u, &linear_response(&g, &up.p, &u)).unwrap();
        let gain = dw.dot(model.observable("h").unwrap());
        assert!(gain > 0.0 && (gain - up.objective_gradient).abs() < 1e-12);
    }

    #[test]
    fn equal_periods_indicator_matches_direct() {
        let obs = BTreeMap::from([("k".to_string(), array![0.0, 1.0, 0.0])]);
        let base = three_orbit(array![1.0, 1.0, 1.0]);
        let model = ReducedOrbitModel::new(base.m.clone(), array![1.0, 1.0, 1.0], obs, BTreeMap::new()).unwrap();
        let u = invariant_vector(&model.m, 1e-14, 1000).unwrap();
        let g = response_operator(&model.m, &u, Horizon::Infinite).unwrap();
        let a = maximize_weighted_observable(&model, &u, &g, "k", Direction::Max).unwrap();
        let f = ObservableVector::new(array![0.0, 1.0, 0.0]).unwrap();
        let b = maximize_linear_functional(&model.m, &u, &g, &f, Direction::Max).unwrap();
        assert!((a.p.entries() - b.p.entries()).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn profiles() {
        let model = synthetic_model(1);
        let mut single = Array1::zeros(17);
        single[4] = 1.0;
        let p = weighted_profile(&model, &single, "velocity").unwrap();
        assert_eq!(p.to_vec(), model.profile("velocity").unwrap().rows[4]);
        assert!(matches!(weighted_profile(&model, &Array1::zeros(3), "velocity"), Err(Error::GridMismatch)));

        // Raising the weighted energy stretches the profile peak.
        let u = invariant_vector(&model.m, 1e-14, 1000).unwrap();
        let g = response_operator(&model.m, &u, Horizon::Infinite).unwrap();
        let opt = maximize_weighted_observable(&model, &u, &g, "energy", Direction::Max).unwrap();
        let w = weights(&model, &u).unwrap();
        let dw = weight_response(&model, &u, &linear_response(&g, &opt.p, &u)).unwrap();
        let before = weighted_profile(&model, &w, "velocity").unwrap();
        let after = weighted_profile(&model, &(&w + &(&dw * 0.05)), "velocity").unwrap();
        assert!(after[16] > before[16]);
    }

    #[test]
    fn json_round_trip() {
        let model = synthetic_model(9);
        let back = ReducedOrbitModel::from_json_str(&model.to_json_string().unwrap()).unwrap();
        assert_eq!(back.m.entries(), model.m.entries());
        assert_eq!(back.periods(), model.periods());
        assert_eq!(back.observable("energy").unwrap(), model.observable("energy").unwrap());
        let bad = r#"{"n": 2, "transition_matrix": [[1.0, 0.0], [0.0, 1.0]], "periods": [1.0, -1.0]}"#;
        assert!(ReducedOrbitModel::from_json_str(bad).is_err());
    }
}
