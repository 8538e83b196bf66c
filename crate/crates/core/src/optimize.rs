//! Optimal perturbation matrices.
//!
//! The feasible set is always a subset of
//!
//! ```text
//! C1  |P|_F = 1
//! C2  1^T P = 0
//! C3  P_ij = 0 off the mask of M
//! C4  P u = 0          (measure preserving optimizers only)
//! ```
//!
//! Linear objectives `<C, P>` are maximized by the normalized orthogonal
//! projection of `C` onto the linear constraints. For `f^T G P u` that
//! projection has the closed form
//!
//! ```text
//! P_ij ∝ u_j (h_i - mean_{l in Z_j} h_l),   h = G^T f
//! ```
//!
//! with `Z_j` the support of column `j`. With C4 added, the projection is
//! `C_ij - r_j - q_i u_j` where the multipliers `q` solve an `N x N`
//! symmetric system (see [`multiplier_matrix`]).

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::{Eigh, Solve, SVD, UPLO};

use crate::constraint_space::feasible_basis;
use crate::functionals::ObservableVector;
use crate::markov_core::{frobenius, PerturbationMatrix, ProbabilityVector, ResponseOperator, StochasticMatrix};
use crate::{Error, Result};

/// Optimization sense.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Max => 1.0,
            Direction::Min => -1.0,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "maximize" => Ok(Direction::Max),
            "min" | "minimize" => Ok(Direction::Min),
            _ => Err(Error::Parse(format!("direction `{s}` is not `max` or `min`"))),
        }
    }
}

/// Which algorithm produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    ClosedForm,
    LagrangeMeasurePreserving,
    SvdKl,
    Projection,
}

/// Coefficients of a linear functional `sum C_ij P_ij`, zero off the mask.
#[derive(Clone, Debug)]
pub struct LinearCoefficients {
    c: Array2<f64>,
}

impl LinearCoefficients {
    pub fn new(mut c: Array2<f64>, m: &StochasticMatrix) -> Result<Self> {
        if c.dim() != (m.n(), m.n()) {
            return Err(Error::LengthMismatch { expected: m.n() * m.n(), got: c.len() });
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::DomainError("coefficients must be finite".into()));
        }
        c.zip_mut_with(m.entries(), |x, &w| {
            if !(w > 0.0) {
                *x = 0.0;
            }
        });
        Ok(Self { c })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }

    /// `sum C_ij P_ij`.
    pub fn evaluate(&self, p: &Array2<f64>) -> f64 {
        self.c.iter().zip(p).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub p: PerturbationMatrix,
    /// Objective at `p`: the linear functional, or `sigma^2 / 2` for KL.
    pub objective_gradient: f64,
    pub method_tag: MethodTag,
    /// Largest `eps` with `M + eps P >= 0`.
    pub max_feasible_eps: f64,
}

impl OptimizationResult {
    fn new(p: Array2<f64>, m: &StochasticMatrix, objective: f64, tag: MethodTag) -> Self {
        let p = PerturbationMatrix::from_parts(p, true);
        let max_feasible_eps = p.max_feasible_eps(m);
        Self { p, objective_gradient: objective, method_tag: tag, max_feasible_eps }
    }
}

/// Largest violations of C1 to C4 for a candidate perturbation.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ConstraintResiduals {
    pub norm: f64,
    pub column_sum: f64,
    pub off_mask: f64,
    pub measure: f64,
}

impl ConstraintResiduals {
    pub fn of(p: &Array2<f64>, m: &StochasticMatrix, u: &ProbabilityVector) -> Self {
        let norm = (frobenius(p) - 1.0).abs();
        let column_sum = p.sum_axis(Axis(0)).iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        let off_mask = p
            .indexed_iter()
            .filter(|((i, j), _)| !m.in_mask(*i, *j))
            .fold(0.0, |a: f64, (_, x)| a.max(x.abs()));
        let measure = p.dot(u.values()).iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        Self { norm, column_sum, off_mask, measure }
    }
}

/// Projection of `Y_ij = u_j h_i` onto C2+C3: `u_j (h_i - mean_{Z_j} h)`.
fn closed_form_raw(m: &StochasticMatrix, u: &ProbabilityVector, h: &Array1<f64>) -> Array2<f64> {
    let n = m.n();
    let mut p = Array2::zeros((n, n));
    for j in 0..n {
        let rows = m.column_support(j);
        let mean = rows.iter().map(|&i| h[i]).sum::<f64>() / rows.len() as f64;
        let uj = u.values()[j];
        for &i in rows {
            p[[i, j]] = uj * (h[i] - mean);
        }
    }
    p
}

/// Flips the sign so the first entry above 1e-12 in column-major order is positive.
pub(crate) fn sign_fix(p: &mut Array2<f64>) {
    let n = p.ncols();
    for j in 0..n {
        for i in 0..p.nrows() {
            let x = p[[i, j]];
            if x.abs() > 1e-12 {
                if x < 0.0 {
                    p.mapv_inplace(|v| -v);
                }
                return;
            }
        }
    }
}

fn check_sizes(m: &StochasticMatrix, u: &ProbabilityVector, g: &ResponseOperator) -> Result<()> {
    for got in [u.len(), g.n()] {
        if got != m.n() {
            return Err(Error::LengthMismatch { expected: m.n(), got });
        }
    }
    Ok(())
}

/// Extremizes `f^T G P u` over C1 to C3.
///
/// The horizon of `g` selects the asymptotic or transient response.
pub fn maximize_linear_functional(
    m: &StochasticMatrix,
    u: &ProbabilityVector,
    g: &ResponseOperator,
    f: &ObservableVector,
    direction: Direction,
) -> Result<OptimizationResult> {
    check_sizes(m, u, g)?;
    if f.len() != m.n() {
        return Err(Error::LengthMismatch { expected: m.n(), got: f.len() });
    }
    let h = g.apply_transpose(f.values());
    let raw = closed_form_raw(m, u, &h);
    let norm = frobenius(&raw);
    let scale = h.iter().fold(0.0, |a: f64, x| a.max(x.abs())) * frobenius(&u.values().clone().insert_axis(Axis(1)));
    if !(norm > 1e-11 * scale) {
        return Err(Error::DegenerateObjective);
    }
    let p = raw * (direction.sign() / norm);
    let objective = f.values().dot(&g.apply(&p.dot(u.values())));
    Ok(OptimizationResult::new(p, m, objective, MethodTag::ClosedForm))
}

/// `Xi - W`: the Gram matrix of the map `q -> (q_i u_j)` projected onto
/// zero column sums on the mask.
///
/// ```text
/// (Xi - W)_ik = delta_ik sum_{j: i in Z_j} u_j^2 - sum_{j: i,k in Z_j} u_j^2 / m_j
/// ```
///
/// Positive semidefinite; its nullspace is spanned by indicators of the
/// connected components of the "rows share a column" graph.
pub fn multiplier_matrix(m: &StochasticMatrix, u: &ProbabilityVector) -> Array2<f64> {
    let n = m.n();
    let mut a = Array2::zeros((n, n));
    for j in 0..n {
        let rows = m.column_support(j);
        let uj2 = u.values()[j].powi(2);
        let beta = uj2 / rows.len() as f64;
        for &i in rows {
            a[[i, i]] += uj2;
            for &k in rows {
                a[[i, k]] -= beta;
            }
        }
    }
    a
}

/// Number of connected components of the "rows share a column" graph.
pub fn row_components(m: &StochasticMatrix) -> usize {
    let n = m.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..n {
        let rows = m.column_support(j);
        if let Some(&first) = rows.first() {
            for &i in &rows[1..] {
                let (a, b) = (find(&mut parent, first), find(&mut parent, i));
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Orthogonal projection of `C` (restricted to the mask) onto C2+C3+C4.
pub fn project_measure_preserving(m: &StochasticMatrix, u: &ProbabilityVector, c: &Array2<f64>) -> Result<Array2<f64>> {
    project_measure_preserving_with(m, u, c, true)
}

fn project_measure_preserving_with(m: &StochasticMatrix, u: &ProbabilityVector, c: &Array2<f64>, dense_fast_path: bool) -> Result<Array2<f64>> {
    let n = m.n();
    let uv = u.values();
    let col_sum: Vec<f64> = (0..n).map(|j| m.column_support(j).iter().map(|&i| c[[i, j]]).sum()).collect();

    let mut alpha = Array1::<f64>::zeros(n);
    for j in 0..n {
        let rows = m.column_support(j);
        let shift = uv[j] * col_sum[j] / rows.len() as f64;
        for &k in rows {
            alpha[k] += c[[k, j]] * uv[j] - shift;
        }
    }

    let q = if dense_fast_path && m.is_dense_mask() {
        // Xi - W = S (I - 11^T/N); alpha is orthogonal to 1, so the
        // least-norm solution is alpha / S.
        let s = uv.dot(uv);
        &alpha / s
    } else {
        let comps = row_components(m);
        if comps > 1 {
            return Err(Error::SingularMultiplierSystem(comps));
        }
        let mut bordered = Array2::<f64>::zeros((n + 1, n + 1));
        bordered.slice_mut(s![..n, ..n]).assign(&multiplier_matrix(m, u));
        bordered.slice_mut(s![n, ..n]).fill(1.0);
        bordered.slice_mut(s![..n, n]).fill(1.0);
        let mut rhs = Array1::zeros(n + 1);
        rhs.slice_mut(s![..n]).assign(&alpha);
        let sol = bordered.solve_into(rhs).map_err(|_| Error::SingularMultiplierSystem(comps))?;
        sol.slice(s![..n]).to_owned()
    };

    let mut p = Array2::zeros((n, n));
    for j in 0..n {
        let rows = m.column_support(j);
        let qsum: f64 = rows.iter().map(|&i| q[i]).sum();
        let r = (col_sum[j] - uv[j] * qsum) / rows.len() as f64;
        for &i in rows {
            p[[i, j]] = c[[i, j]] - r - q[i] * uv[j];
        }
    }
    Ok(p)
}

/// Projection of `C` onto C2+C3: subtract the column mean over the mask.
pub fn project_column_sums(m: &StochasticMatrix, c: &Array2<f64>) -> Array2<f64> {
    let n = m.n();
    let mut p = Array2::zeros((n, n));
    for j in 0..n {
        let rows = m.column_support(j);
        let mean = rows.iter().map(|&i| c[[i, j]]).sum::<f64>() / rows.len() as f64;
        for &i in rows {
            p[[i, j]] = c[[i, j]] - mean;
        }
    }
    p
}

/// Extremizes `<C, P>` over C1 to C4 via the Lagrange multiplier system.
pub fn minimize_measure_preserving(
    m: &StochasticMatrix,
    u: &ProbabilityVector,
    coeffs: &LinearCoefficients,
    direction: Direction,
) -> Result<OptimizationResult> {
    if u.len() != m.n() {
        return Err(Error::LengthMismatch { expected: m.n(), got: u.len() });
    }
    let raw = project_measure_preserving(m, u, coeffs.matrix())?;
    let norm = frobenius(&raw);
    if !(norm > 1e-12 * frobenius(coeffs.matrix())) {
        return Err(Error::DegenerateObjective);
    }
    let p = raw * (direction.sign() / norm);
    let objective = coeffs.evaluate(&p);
    Ok(OptimizationResult::new(p, m, objective, MethodTag::LagrangeMeasurePreserving))
}

/// Gradient of `s(M + eps P)` at zero for measure-preserving `P`.
///
/// ```text
/// C_ij = u_j ln(u_j M_ij / (u_i M_ji)) - u_i M_ji / M_ij
/// ```
pub fn entropy_production_coefficients(m: &StochasticMatrix, u: &ProbabilityVector) -> Result<LinearCoefficients> {
    if let Some((i, j)) = m.mask_asymmetry() {
        return Err(Error::AsymmetricMask(i, j));
    }
    let n = m.n();
    let uv = u.values();
    let mut c = Array2::zeros((n, n));
    for j in 0..n {
        for &i in m.column_support(j) {
            let (mij, mji) = (m.get(i, j), m.get(j, i));
            c[[i, j]] = uv[j] * (uv[j] * mij / (uv[i] * mji)).ln() - uv[i] * mji / mij;
        }
    }
    Ok(LinearCoefficients { c })
}

/// `P_r = (M + D M^T D^-1)/2 - M` with `D = diag(u)`.
///
/// `M + P_r` is reversible with stationary vector `u`. The mask must be
/// symmetric, otherwise `P_r` would leave it.
pub fn additive_reversibilization(m: &StochasticMatrix, u: &ProbabilityVector, normalize: bool) -> Result<PerturbationMatrix> {
    if let Some((i, j)) = m.mask_asymmetry() {
        return Err(Error::AsymmetricMask(i, j));
    }
    let n = m.n();
    let uv = u.values();
    let e = m.entries();
    let mut p = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (uv[i] * e[[j, i]] / uv[j] - e[[i, j]]));
    // Column sums are ((Mu)_j / u_j - 1) / 2, nonzero only through the
    // stationary solve's roundoff, which light states amplify. The diagonal
    // carries no flux, so absorbing the residue there is harmless.
    for j in 0..n {
        let s = p.column(j).sum();
        p[[j, j]] -= s;
    }
    // A reversible chain gives P_r = 0 up to roundoff; do not blow that up.
    if frobenius(&p) <= 1e-13 * frobenius(e) {
        return Ok(PerturbationMatrix::zero(n));
    }
    let p = PerturbationMatrix::from_parts(p, false);
    Ok(if normalize { p.normalize().unwrap_or(p) } else { p })
}

/// Maximizes the second-order KL coefficient `1/2 |D^-1 G P u|^2` over C1 to C3.
///
/// `D = diag(sqrt(u))`, or `diag(sqrt(w))` when a target `w` is given.
/// Chains with at most 64 states use the explicit vectorized route (SVD of
/// `A B` with `B` an orthonormal feasible basis); larger chains use the
/// equivalent `N x N` eigenproblem `X (Xi - W) X^T`, `X = D^-1 G`.
pub fn maximize_kl(
    m: &StochasticMatrix,
    u: &ProbabilityVector,
    g: &ResponseOperator,
    target: Option<&ProbabilityVector>,
) -> Result<OptimizationResult> {
    if m.n() <= 64 {
        maximize_kl_explicit(m, u, g, target)
    } else {
        maximize_kl_implicit(m, u, g, target)
    }
}

fn kl_scaled_inverse(m: &StochasticMatrix, u: &ProbabilityVector, g: &ResponseOperator, target: Option<&ProbabilityVector>) -> Result<Array2<f64>> {
    check_sizes(m, u, g)?;
    let w = target.unwrap_or(u);
    if w.len() != m.n() {
        return Err(Error::LengthMismatch { expected: m.n(), got: w.len() });
    }
    if m.mask_len() == m.n() {
        return Err(Error::EmptyFeasibleSpace);
    }
    let mut x = g.to_dense();
    for (mut row, &wi) in x.axis_iter_mut(Axis(0)).zip(w.values()) {
        row /= wi.sqrt();
    }
    Ok(x)
}

/// Eigenproblem route, valid for any `N`.
pub fn maximize_kl_implicit(
    m: &StochasticMatrix,
    u: &ProbabilityVector,
    g: &ResponseOperator,
    target: Option<&ProbabilityVector>,
) -> Result<OptimizationResult> {
    let x = kl_scaled_inverse(m, u, g, target)?;
    let k = x.dot(&multiplier_matrix(m, u)).dot(&x.t());
    let k = (&k + &k.t()) * 0.5;
    let (vals, vecs) = k.eigh(UPLO::Lower)?;
    let top = vals.len() - 1;
    let z = vecs.column(top).to_owned();
    let h = x.t().dot(&z);
    let mut p = closed_form_raw(m, u, &h);
    let norm = frobenius(&p);
    if !(norm > 0.0) {
        return Err(Error::EmptyFeasibleSpace);
    }
    p /= norm;
    sign_fix(&mut p);
    Ok(OptimizationResult::new(p, m, 0.5 * vals[top], MethodTag::SvdKl))
}

/// Vectorized route: `A = u^T (x) D^-1 G` restricted to the support, times a
/// nullspace basis. Memory is `O(#I^2)`, so intended for small chains.
pub fn maximize_kl_explicit(
    m: &StochasticMatrix,
    u: &ProbabilityVector,
    g: &ResponseOperator,
    target: Option<&ProbabilityVector>,
) -> Result<OptimizationResult> {
    let x = kl_scaled_inverse(m, u, g, target)?;
    let n = m.n();
    let basis = feasible_basis(m, u, false)?;
    let support = support_positions(m);
    let mut a = Array2::zeros((n, support.len()));
    for (col, &(i, j)) in support.iter().enumerate() {
        a.column_mut(col).assign(&(&x.column(i) * u.values()[j]));
    }
    let ab = a.dot(&basis);
    let (_, sigma, vt) = ab.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::SingularSystem("SVD returned no right vectors".into()))?;
    let coords = basis.dot(&vt.row(0));
    let mut p = Array2::zeros((n, n));
    for (k, &(i, j)) in support.iter().enumerate() {
        p[[i, j]] = coords[k];
    }
    p /= frobenius(&p);
    sign_fix(&mut p);
    Ok(OptimizationResult::new(p, m, 0.5 * sigma[0] * sigma[0], MethodTag::SvdKl))
}

/// Mask positions `(i, j)` in column-major order; the support index `I`.
pub fn support_positions(m: &StochasticMatrix) -> Vec<(usize, usize)> {
    (0..m.n()).flat_map(|j| m.column_support(j).iter().map(move |&i| (i, j))).collect()
}
