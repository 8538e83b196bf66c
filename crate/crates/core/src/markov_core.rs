//! Column-stochastic matrices, stationary vectors and response operators.
//!
//! The generalized inverse
//!
//! ```text
//! G = (I - M + u 1^T)^-1
//! ```
//!
//! maps a perturbation flux `P u` to the first-order change of the stationary
//! vector, `v1 = G P u`. The finite-horizon version keeps the first `t + 1`
//! terms of the Neumann series of `G`:
//!
//! ```text
//! G(t) = sum_{s=0..t} (M - u 1^T)^s
//! ```
//!
//! On zero-column-sum `P` this acts as `sum_{s=0..t} M^s P u`, the transient
//! response after `t` steps.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use ndarray_linalg::{Eigh, EigVals, Inverse, Solve, UPLO};
use rayon::prelude::*;

use crate::{Error, Result};

const COLUMN_SUM_TOL: f64 = 1e-12;

/// Column-stochastic matrix. Entry `(i, j)` is the probability of `j -> i`.
///
/// The mask (set of positive entries) is cached per column so sparse loops
/// never scan zeros.
#[derive(Clone, Debug)]
pub struct StochasticMatrix {
    entries: Array2<f64>,
    support: Vec<Vec<usize>>,
}

impl StochasticMatrix {
    /// Validates squareness, entries in `[0, 1]` and unit column sums.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidMatrix(format!("expected a nonempty square matrix, got {r}x{c}")));
        }
        for ((i, j), &x) in entries.indexed_iter() {
            if !x.is_finite() || x < 0.0 || x > 1.0 + COLUMN_SUM_TOL {
                return Err(Error::InvalidMatrix(format!("entry ({i}, {j}) = {x} outside [0, 1]")));
            }
        }
        for (j, col) in entries.axis_iter(Axis(1)).enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidMatrix(format!("column {j} sums to {s}")));
            }
        }
        Ok(Self::from_trusted(entries))
    }

    /// Scales each column of a nonnegative matrix to sum to one.
    pub fn from_nonnegative(mut entries: Array2<f64>) -> Result<Self> {
        for (j, mut col) in entries.axis_iter_mut(Axis(1)).enumerate() {
            let s = col.sum();
            if !(s > 0.0) || col.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidMatrix(format!("column {j} cannot be normalized")));
            }
            col.mapv_inplace(|x| x / s);
        }
        Self::new(entries)
    }

    fn from_trusted(entries: Array2<f64>) -> Self {
        let n = entries.nrows();
        let support = (0..n)
            .map(|j| (0..n).filter(|&i| entries[[i, j]] > 0.0).collect())
            .collect();
        Self { entries, support }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    /// Rows `i` with `M[i, j] > 0`, ascending.
    pub fn column_support(&self, j: usize) -> &[usize] {
        &self.support[j]
    }

    pub fn in_mask(&self, i: usize, j: usize) -> bool {
        self.entries[[i, j]] > 0.0
    }

    /// Number of positive entries, `#I` in the vectorized constraint notation.
    pub fn mask_len(&self) -> usize {
        self.support.iter().map(Vec::len).sum()
    }

    pub fn is_dense_mask(&self) -> bool {
        self.mask_len() == self.n() * self.n()
    }

    /// First pair `(i, j)` with `M[i, j] > 0` but `M[j, i] == 0`.
    pub fn mask_asymmetry(&self) -> Option<(usize, usize)> {
        for j in 0..self.n() {
            for &i in &self.support[j] {
                if !(self.entries[[j, i]] > 0.0) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Drops one-sided transitions and renormalizes columns.
    ///
    /// The result can be reducible; callers that need mixing should re-check.
    pub fn symmetrized_mask(&self) -> Result<Self> {
        let n = self.n();
        let mut e = self.entries.clone();
        for j in 0..n {
            for i in 0..n {
                if !(self.entries[[j, i]] > 0.0) {
                    e[[i, j]] = 0.0;
                }
            }
        }
        Self::from_nonnegative(e)
    }

    /// Mask as a dense 0/1 matrix.
    pub fn mask_matrix(&self) -> Array2<f64> {
        self.entries.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 })
    }
}

/// Strictly positive probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    values: Array1<f64>,
}

impl ProbabilityVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DomainError("empty probability vector".into()));
        }
        if let Some((i, &x)) = values.iter().enumerate().find(|(_, &x)| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::DomainError(format!("entry {i} = {x} is not strictly positive")));
        }
        let s = values.sum();
        if (s - 1.0).abs() > COLUMN_SUM_TOL {
            return Err(Error::DomainError(format!("entries sum to {s}")));
        }
        Ok(Self { values })
    }

    /// Divides by the sum first; still rejects nonpositive entries.
    pub fn normalized(values: Array1<f64>) -> Result<Self> {
        let s = values.sum();
        Self::new(values / s)
    }

    pub fn uniform(n: usize) -> Self {
        Self { values: Array1::from_elem(n, 1.0 / n as f64) }
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Zero-column-sum perturbation supported on the mask of its parent chain.
///
/// `epsilon` is bookkeeping only; the entries are never pre-multiplied.
#[derive(Clone, Debug)]
pub struct PerturbationMatrix {
    entries: Array2<f64>,
    pub epsilon: f64,
    normalized: bool,
}

impl PerturbationMatrix {
    /// Checks C1 (unit Frobenius norm), C2 (zero column sums) and C3 (support).
    pub fn new(entries: Array2<f64>, parent: &StochasticMatrix) -> Result<Self> {
        let p = Self::unnormalized(entries, parent)?;
        let norm = frobenius(&p.entries);
        if (norm - 1.0).abs() > COLUMN_SUM_TOL {
            return Err(Error::InvalidMatrix(format!("Frobenius norm is {norm}, expected 1")));
        }
        Ok(Self { normalized: true, ..p })
    }

    /// Checks C2 and C3 only.
    pub fn unnormalized(entries: Array2<f64>, parent: &StochasticMatrix) -> Result<Self> {
        let n = parent.n();
        if entries.dim() != (n, n) {
            return Err(Error::LengthMismatch { expected: n * n, got: entries.len() });
        }
        for (j, col) in entries.axis_iter(Axis(1)).enumerate() {
            let abs: f64 = col.iter().map(|x| x.abs()).sum();
            if col.sum().abs() > COLUMN_SUM_TOL * abs.max(1.0) {
                return Err(Error::InvalidMatrix(format!("column {j} of P sums to {}", col.sum())));
            }
            for (i, &x) in col.iter().enumerate() {
                if x != 0.0 && !parent.in_mask(i, j) {
                    return Err(Error::InvalidMatrix(format!("P[{i}, {j}] = {x} lies outside the mask")));
                }
            }
        }
        Ok(Self { entries, epsilon: 0.0, normalized: false })
    }

    pub fn zero(n: usize) -> Self {
        Self { entries: Array2::zeros((n, n)), epsilon: 0.0, normalized: false }
    }

    pub(crate) fn from_parts(entries: Array2<f64>, normalized: bool) -> Self {
        Self { entries, epsilon: 0.0, normalized }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    /// Unit-Frobenius copy; `None` when the matrix is zero.
    pub fn normalize(&self) -> Option<Self> {
        let norm = frobenius(&self.entries);
        (norm > 0.0).then(|| Self::from_parts(&self.entries / norm, true))
    }

    pub fn negated(&self) -> Self {
        Self { entries: -&self.entries, epsilon: self.epsilon, normalized: self.normalized }
    }

    /// Largest `eps` keeping `M + eps P` entrywise nonnegative.
    pub fn max_feasible_eps(&self, m: &StochasticMatrix) -> f64 {
        self.entries
            .indexed_iter()
            .filter(|(_, &p)| p < 0.0)
            .map(|((i, j), &p)| m.get(i, j) / -p)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l1(a: &Array1<f64>) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Matrix 1-norm: largest absolute column sum.
pub fn matrix_l1(a: &Array2<f64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Time horizon of a response operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl std::str::FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinite" | "infinity" => Ok(Horizon::Infinite),
            _ => s
                .parse()
                .map(Horizon::Finite)
                .map_err(|_| Error::Parse(format!("horizon `{s}` is neither an integer nor `inf`"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Dense(Array2<f64>),
    // Matrix-free finite sum; M and u are kept instead of G(t).
    Series { m: Array2<f64>, u: Array1<f64>, t: usize },
}

/// `G` or `G(t)`.
#[derive(Clone, Debug)]
pub struct ResponseOperator {
    repr: Repr,
    horizon: Horizon,
}

impl ResponseOperator {
    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn n(&self) -> usize {
        match &self.repr {
            Repr::Dense(g) => g.nrows(),
            Repr::Series { u, .. } => u.len(),
        }
    }

    /// `G x`.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.repr {
            Repr::Dense(g) => g.dot(x),
            Repr::Series { m, u, t } => {
                let mut term = x.clone();
                let mut acc = x.clone();
                for _ in 0..*t {
                    let mass = term.sum();
                    term = m.dot(&term);
                    term.scaled_add(-mass, u);
                    acc += &term;
                }
                acc
            }
        }
    }

    /// `G^T y`.
    pub fn apply_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        match &self.repr {
            Repr::Dense(g) => g.t().dot(y),
            Repr::Series { m, u, t } => {
                let mut term = y.clone();
                let mut acc = y.clone();
                for _ in 0..*t {
                    let w = u.dot(&term);
                    term = m.t().dot(&term);
                    term -= w;
                    acc += &term;
                }
                acc
            }
        }
    }

    /// Dense matrix; `t` matrix products for a finite horizon.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.repr {
            Repr::Dense(g) => g.clone(),
            Repr::Series { m, u, t } => {
                let n = u.len();
                let mut shifted = m.clone();
                for j in 0..n {
                    shifted.column_mut(j).scaled_add(-1.0, u);
                }
                let mut power = Array2::<f64>::eye(n);
                let mut acc = power.clone();
                for _ in 0..*t {
                    power = shifted.dot(&power);
                    acc += &power;
                }
                acc
            }
        }
    }
}

/// Stationary vector of a mixing chain.
///
/// Up to 2048 states the bordered system `[(I - M) with row 0 -> 1^T] u = e_0`
/// is solved by LU; above that, power iteration with the given tolerance.
pub fn invariant_vector(m: &StochasticMatrix, tol: f64, max_iter: usize) -> Result<ProbabilityVector> {
    if !(tol > 0.0) {
        return Err(Error::ParameterError(format!("tol must be positive, got {tol}")));
    }
    let n = m.n();
    let u = if n <= 2048 {
        let mut a = -m.entries();
        a.diag_mut().mapv_inplace(|x| x + 1.0);
        a.row_mut(0).fill(1.0);
        let mut b = Array1::zeros(n);
        b[0] = 1.0;
        a.solve_into(b).map_err(|e| Error::NonMixing(format!("stationary solve failed: {e}")))?
    } else {
        power_iteration(m, tol, max_iter)?
    };
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonMixing("stationary solve produced non-finite values".into()));
    }
    let u = &u / u.sum();
    let residual = l1(&(m.entries().dot(&u) - &u));
    if residual > tol.max(1e-10) {
        return Err(Error::NonMixing(format!("stationary residual {residual:e} exceeds {tol:e}")));
    }
    if let Some(i) = u.iter().position(|&x| x <= 0.0) {
        return Err(Error::NonMixing(format!("stationary mass of state {i} is {}", u[i])));
    }
    ProbabilityVector::normalized(u)
}

fn power_iteration(m: &StochasticMatrix, tol: f64, max_iter: usize) -> Result<Array1<f64>> {
    let n = m.n();
    let mut x = Array1::from_elem(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let mut y = m.entries().dot(&x);
        y /= y.sum();
        let diff = l1(&(&y - &x));
        x = y;
        if diff <= tol {
            return Ok(x);
        }
    }
    Err(Error::NonMixing(format!("power iteration did not reach {tol:e} in {max_iter} steps")))
}

/// `tau(M) = 1/2 max_{j,k} sum_i |M_ij - M_ik|`.
pub fn ergodicity_coefficient(m: &StochasticMatrix) -> f64 {
    let cols = m.entries().t().as_standard_layout().to_owned();
    let n = m.n();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let cj = cols.row(j);
            (j + 1..n)
                .map(|k| cj.iter().zip(cols.row(k)).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
        * 0.5
}

/// `1 - tau(M)`: any perturbation with smaller 1-norm keeps the chain mixing.
pub fn perturbation_budget(m: &StochasticMatrix) -> Result<f64> {
    let tau = ergodicity_coefficient(m);
    if tau >= 1.0 - 1e-12 {
        return Err(Error::ZeroBudget(tau));
    }
    Ok(1.0 - tau)
}

/// Eigenvalue moduli sorted descending.
pub fn eigenvalue_moduli(a: &Array2<f64>) -> Result<Vec<f64>> {
    let ev = a.eigvals()?;
    let mut moduli: Vec<f64> = ev.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli)
}

/// Second-largest eigenvalue modulus.
pub fn subdominant_modulus(m: &StochasticMatrix) -> Result<f64> {
    let moduli = eigenvalue_moduli(m.entries())?;
    Ok(moduli.get(1).copied().unwrap_or(0.0))
}

/// `1 - |lambda_2|`.
pub fn spectral_gap(m: &StochasticMatrix) -> Result<f64> {
    Ok(1.0 - subdominant_modulus(m)?)
}

/// Raises NonMixing when `|lambda_1| - |lambda_2| < 1e-10`.
pub fn check_mixing(m: &StochasticMatrix) -> Result<()> {
    let moduli = eigenvalue_moduli(m.entries())?;
    if moduli.len() > 1 && moduli[0] - moduli[1] < 1e-10 {
        return Err(Error::NonMixing(format!("subdominant eigenvalue modulus {}", moduli[1])));
    }
    Ok(())
}

/// `G` (infinite horizon) or `G(t)`.
pub fn response_operator(m: &StochasticMatrix, u: &ProbabilityVector, horizon: Horizon) -> Result<ResponseOperator> {
    let n = m.n();
    if u.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: u.len() });
    }
    let repr = match horizon {
        Horizon::Infinite => {
            let mut a = -m.entries();
            for j in 0..n {
                a.column_mut(j).scaled_add(1.0, u.values());
            }
            a.diag_mut().mapv_inplace(|x| x + 1.0);
            let g = a.inv().map_err(|e| Error::SingularSystem(e.to_string()))?;
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::SingularSystem("generalized inverse is not finite".into()));
            }
            Repr::Dense(g)
        }
        Horizon::Finite(t) => Repr::Series { m: m.entries().clone(), u: u.values().clone(), t },
    };
    Ok(ResponseOperator { repr, horizon })
}

/// `v1 = G P u`.
pub fn linear_response(g: &ResponseOperator, p: &PerturbationMatrix, u: &ProbabilityVector) -> Array1<f64> {
    g.apply(&p.entries().dot(u.values()))
}

/// `v1(t) = G(t) P u` for `t = 0..=t_max`.
///
/// Since `1^T P u = 0`, every term `(M - u 1^T)^s P u` equals `M^s P u`, so
/// the whole table costs `t_max` matrix-vector products.
pub fn transient_responses(m: &StochasticMatrix, p: &PerturbationMatrix, u: &ProbabilityVector, t_max: usize) -> Vec<Array1<f64>> {
    let mut term = p.entries().dot(u.values());
    let mut acc = term.clone();
    let mut out = vec![acc.clone()];
    for _ in 0..t_max {
        term = m.entries().dot(&term);
        acc += &term;
        out.push(acc.clone());
    }
    out
}

/// `M + eps P` as a stochastic matrix.
///
/// Entries down to `-1e-12` are treated as roundoff and clamped to zero.
pub fn perturb(m: &StochasticMatrix, p: &PerturbationMatrix, eps: f64) -> Result<StochasticMatrix> {
    if p.n() != m.n() {
        return Err(Error::LengthMismatch { expected: m.n(), got: p.n() });
    }
    let mut e = m.entries() + &(p.entries() * eps);
    let min_entry = e.iter().copied().fold(f64::INFINITY, f64::min);
    if min_entry < -1e-12 {
        return Err(Error::InfeasibleEpsilon { eps, min_entry });
    }
    e.mapv_inplace(|x| x.clamp(0.0, 1.0));
    StochasticMatrix::new(e)
}

/// Stationary vector of `M + eps P`.
pub fn perturbed_invariant(m: &StochasticMatrix, p: &PerturbationMatrix, eps: f64) -> Result<ProbabilityVector> {
    invariant_vector(&perturb(m, p, eps)?, 1e-10, 1_000_000)
}

/// Smallest eigenvalue of a symmetric matrix, used for PSD checks in tests.
pub fn symmetric_min_eigenvalue(a: &Array2<f64>) -> Result<f64> {
    let (w, _) = a.eigh(UPLO::Lower)?;
    Ok(w.iter().copied().fold(f64::INFINITY, f64::min))
}
