//! Scalar functionals of probability vectors and chains.
//!
//! Sign convention: [`entropy`] is `H(u) = sum u_i ln u_i`, the negative of
//! the Shannon entropy. Maximizing `H` therefore concentrates the measure.
//! Use [`shannon_entropy`] for the conventional sign.

use ndarray::{Array1, ArrayView1};

use crate::markov_core::{linear_response, PerturbationMatrix, ProbabilityVector, ResponseOperator, StochasticMatrix};
use crate::{Error, Result};

/// Coarse-grained observable, one finite value per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableVector(Array1<f64>);

impl ObservableVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::DomainError(format!("observable entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_positive(v: ArrayView1<f64>) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(Error::DomainError(format!("entry {i} = {} is not strictly positive", v[i]))),
        None => Ok(()),
    }
}

/// `H(u) = sum u_i ln u_i`. Negative Shannon entropy.
pub fn entropy(u: ArrayView1<f64>) -> Result<f64> {
    check_positive(u)?;
    Ok(u.iter().map(|&x| x * x.ln()).sum())
}

/// `-H(u)`.
pub fn shannon_entropy(u: ArrayView1<f64>) -> Result<f64> {
    entropy(u).map(|h| -h)
}

/// `f = ln u`, the gradient of `H` on sum-zero directions.
pub fn entropy_gradient(u: &ProbabilityVector) -> Array1<f64> {
    u.values().mapv(f64::ln)
}

/// `dH/deps` at zero: `sum ln(u_i) v1_i`.
pub fn entropy_response(u: &ProbabilityVector, v1: &Array1<f64>) -> f64 {
    entropy_gradient(u).dot(v1)
}

/// `D(v || u) = sum v_i ln(v_i / u_i)`.
pub fn kl_divergence(v: ArrayView1<f64>, u: ArrayView1<f64>) -> Result<f64> {
    if v.len() != u.len() {
        return Err(Error::LengthMismatch { expected: u.len(), got: v.len() });
    }
    check_positive(v)?;
    check_positive(u)?;
    Ok(v.iter().zip(u).map(|(&a, &b)| a * (a / b).ln()).sum())
}

/// Diagonal of the KL weight matrix, `sqrt(u)` (or `sqrt(w)` for a target).
pub fn kl_weight(u: &ProbabilityVector) -> Array1<f64> {
    u.values().mapv(f64::sqrt)
}

/// Diagonal of the measure matrix used by reversibilization, `u` itself.
pub fn measure_diag(u: &ProbabilityVector) -> Array1<f64> {
    u.values().clone()
}

/// `1/2 |D^-1 G P u|^2`, the second-order KL coefficient.
pub fn kl_quadratic_response(d: &Array1<f64>, g: &ResponseOperator, p: &PerturbationMatrix, u: &ProbabilityVector) -> f64 {
    let v1 = linear_response(g, p, u);
    0.5 * v1.iter().zip(d).map(|(x, w)| (x / w).powi(2)).sum::<f64>()
}

/// Schnakenberg entropy production.
///
/// ```text
/// s(M) = 1/2 sum_{i,j in mask} (u_j M_ij - u_i M_ji) ln(u_j M_ij / (u_i M_ji))
/// ```
///
/// Each unordered pair is counted once; the diagonal contributes nothing.
pub fn entropy_production(m: &StochasticMatrix, u: &ProbabilityVector) -> Result<f64> {
    if let Some((i, j)) = m.mask_asymmetry() {
        return Err(Error::AsymmetricMask(i, j));
    }
    let u = u.values();
    let mut s = 0.0;
    for j in 0..m.n() {
        for &i in m.column_support(j) {
            if i < j {
                let fwd = u[j] * m.get(i, j);
                let bwd = u[i] * m.get(j, i);
                s += (fwd - bwd) * (fwd / bwd).ln();
            }
        }
    }
    Ok(s)
}

/// `psi^T v`.
pub fn expectation(psi: &ObservableVector, v: ArrayView1<f64>) -> Result<f64> {
    if psi.len() != v.len() {
        return Err(Error::LengthMismatch { expected: psi.len(), got: v.len() });
    }
    Ok(psi.values().dot(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_core::{invariant_vector, response_operator, Horizon};
    use ndarray::{array, Array2};

    #[test]
    fn entropy_values() {
        let h = entropy(array![0.25, 0.25, 0.25, 0.25].view()).unwrap();
        assert!((h + 4f64.ln()).abs() < 1e-15);
        let h = entropy(array![0.6, 0.4].view()).unwrap();
        assert!((h - (-0.673_011_667_009_256_4)).abs() < 1e-12);
        assert!(entropy(array![1.0, 0.0].view()).is_err());
        assert_eq!(shannon_entropy(array![0.5, 0.5].view()).unwrap(), 2f64.ln());
    }

    #[test]
    fn entropy_response_cases() {
        let u = ProbabilityVector::uniform(3);
        assert!(entropy_response(&u, &array![0.2, -0.5, 0.3]).abs() < 1e-15);
        let u = ProbabilityVector::new(array![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(entropy_response(&u, &Array1::zeros(3)), 0.0);
        let v = array![0.1, -0.4, 0.3];
        let h = 1e-5;
        let fd = (entropy((u.values() + &(&v * h)).view()).unwrap() - entropy((u.values() - &(&v * h)).view()).unwrap()) / (2.0 * h);
        assert!((fd - entropy_response(&u, &v)).abs() < 1e-6);
    }

    #[test]
    fn kl_values() {
        let a = array![0.5, 0.5];
        let b = array![0.25, 0.75];
        let d = kl_divergence(a.view(), b.view()).unwrap();
        assert!((d - 0.143_841_036_225_890_3).abs() < 1e-12);
        assert!((d - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert_ne!(d, kl_divergence(b.view(), a.view()).unwrap());
        assert_eq!(kl_divergence(a.view(), a.view()).unwrap(), 0.0);
    }

    fn four_state() -> StochasticMatrix {
        StochasticMatrix::new(array![
            [0.6, 0.1, 0.2, 0.3],
            [0.2, 0.5, 0.1, 0.1],
            [0.1, 0.3, 0.4, 0.2],
            [0.1, 0.1, 0.3, 0.4]
        ])
        .unwrap()
    }

    #[test]
    fn kl_quadratic_matches_finite_eps() {
        let m = four_state();
        let u = invariant_vector(&m, 1e-13, 100).unwrap();
        let g = response_operator(&m, &u, Horizon::Infinite).unwrap();
        let raw = array![[-0.3, 0.2, 0.1, 0.0], [0.1, -0.4, 0.0, 0.2], [0.2, 0.1, -0.3, 0.1], [0.0, 0.1, 0.2, -0.3]];
        let p = PerturbationMatrix::unnormalized(raw, &m).unwrap().normalize().unwrap();
        let d = kl_weight(&u);
        let q = kl_quadratic_response(&d, &g, &p, &u);
        let v1 = linear_response(&g, &p, &u);
        let eps = 1e-4;
        let fin = kl_divergence((u.values() + &(&v1 * eps)).view(), u.view()).unwrap() / (eps * eps);
        assert!(((fin - q) / q).abs() < 1e-4);
        assert_eq!(kl_quadratic_response(&d, &g, &PerturbationMatrix::zero(4), &u), 0.0);
    }

    #[test]
    fn reversible_chain_has_zero_production() {
        // M = S D with S symmetric: u_j M_ij = S_ij u_j d_j, pick d = 1/u.
        let u = array![0.1, 0.2, 0.3, 0.4];
        let s = array![[0.0, 0.02, 0.03, 0.01], [0.02, 0.0, 0.05, 0.04], [0.03, 0.05, 0.0, 0.06], [0.01, 0.04, 0.06, 0.0]];
        let mut e = Array2::zeros((4, 4));
        for j in 0..4 {
            for i in 0..4 {
                e[[i, j]] = s[[i, j]] / u[j];
            }
            let off: f64 = e.column(j).sum();
            e[[j, j]] = 1.0 - off;
        }
        let m = StochasticMatrix::new(e).unwrap();
        let pv = invariant_vector(&m, 1e-13, 100).unwrap();
        assert!((pv.values() - &u).iter().all(|x| x.abs() < 1e-13));
        assert!(entropy_production(&m, &pv).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rotation_chain_production() {
        let m = StochasticMatrix::new(array![[0.1, 0.1, 0.8], [0.8, 0.1, 0.1], [0.1, 0.8, 0.1]]).unwrap();
        let u = ProbabilityVector::uniform(3);
        // Three edges, each with flux difference (0.8 - 0.1)/3 and log ratio ln 8.
        let expected = 3.0 * (0.7 / 3.0) * 8f64.ln();
        assert!((entropy_production(&m, &u).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_mask_rejected() {
        let m = StochasticMatrix::new(array![[0.5, 0.0], [0.5, 1.0]]).unwrap();
        let u = ProbabilityVector::uniform(2);
        assert!(matches!(entropy_production(&m, &u), Err(Error::AsymmetricMask(1, 0))));
    }

    #[test]
    fn expectation_cases() {
        let v = array![0.2, 0.3, 0.5];
        let one = ObservableVector::new(Array1::ones(3)).unwrap();
        assert!((expectation(&one, v.view()).unwrap() - 1.0).abs() < 1e-15);
        let ind = ObservableVector::new(array![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(expectation(&ind, v.view()).unwrap(), 0.3);
        assert!(ObservableVector::new(array![f64::NAN]).is_err());
    }
}
