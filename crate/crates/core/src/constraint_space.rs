//! Vectorized constraints and the projection method.
//!
//! With column-major `vec`, the constraints on `p = vec(P)` read
//!
//! ```text
//! A p = 0,   A = I_N (x) 1^T            (zero column sums)
//! B p = 0,   B = (I_N (x) u^T) K        (P u = 0)
//! ```
//!
//! where `K vec(P) = vec(P^T)`. Restricting to the support coordinates `I`
//! of the mask gives `A_r`, `B_r` and `S_r = [A_r; B_r]`, whose nullspaces
//! are the feasible perturbation spaces without and with measure preservation.
//!
//! [`ensemble_compare`] checks on random chains that the Lagrange optimizer
//! and the projection optimizer agree.

use ndarray::{concatenate, Array1, Array2, Axis};
use ndarray_linalg::SVD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::functionals::entropy_production;
use crate::markov_core::{frobenius, invariant_vector, perturb, spectral_gap, ProbabilityVector, StochasticMatrix};
use crate::optimize::{
    entropy_production_coefficients, minimize_measure_preserving, row_components, sign_fix, support_positions,
    Direction, LinearCoefficients, MethodTag, OptimizationResult,
};
use crate::{Error, Result};

/// Permutation with `K vec(P) = vec(P^T)`; never stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommutationMatrix {
    pub n: usize,
}

impl CommutationMatrix {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// Source index of output position `r`: `(K x)[r] = x[source(r)]`.
    pub fn source(&self, r: usize) -> usize {
        let (j, i) = (r / self.n, r % self.n);
        i * self.n + j
    }

    /// Dense `N^2 x N^2` matrix; only sensible for small `N`.
    pub fn to_dense(&self) -> Result<Array2<f64>> {
        if self.n > 64 {
            return Err(Error::ParameterError(format!("refusing to materialize K for N = {}", self.n)));
        }
        let nn = self.n * self.n;
        let mut k = Array2::zeros((nn, nn));
        for r in 0..nn {
            k[[r, self.source(r)]] = 1.0;
        }
        Ok(k)
    }
}

/// `K vec(P)`, as an index permutation.
pub fn commutation_apply(k: &CommutationMatrix, vec_p: &Array1<f64>) -> Result<Array1<f64>> {
    let nn = k.n * k.n;
    if vec_p.len() != nn {
        return Err(Error::LengthMismatch { expected: nn, got: vec_p.len() });
    }
    Ok(Array1::from_shape_fn(nn, |r| vec_p[k.source(r)]))
}

/// Column-major `vec`.
pub fn vec(p: &Array2<f64>) -> Array1<f64> {
    p.t().iter().copied().collect()
}

/// Inverse of [`vec`].
pub fn unvec(v: &Array1<f64>, n: usize) -> Result<Array2<f64>> {
    if v.len() != n * n {
        return Err(Error::LengthMismatch { expected: n * n, got: v.len() });
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| v[j * n + i]))
}

/// Constraint matrices over the support of a mask.
#[derive(Clone, Debug)]
pub struct VectorizedConstraints {
    pub n: usize,
    pub u: Array1<f64>,
    /// `(i, j)` mask positions in column-major order.
    pub support_index: Vec<(usize, usize)>,
    pub a_r: Array2<f64>,
    pub b_r: Array2<f64>,
}

impl VectorizedConstraints {
    pub fn new(m: &StochasticMatrix, u: &ProbabilityVector) -> Self {
        let n = m.n();
        let support_index = support_positions(m);
        let k = support_index.len();
        let mut a_r = Array2::zeros((n, k));
        let mut b_r = Array2::zeros((n, k));
        for (c, &(i, j)) in support_index.iter().enumerate() {
            a_r[[j, c]] = 1.0;
            b_r[[i, c]] = u.values()[j];
        }
        Self { n, u: u.values().clone(), support_index, a_r, b_r }
    }

    /// `[A_r; B_r]`.
    pub fn s_r(&self) -> Array2<f64> {
        concatenate![Axis(0), self.a_r, self.b_r]
    }

    /// Full `A = I (x) 1^T`, `N x N^2`.
    pub fn a(&self) -> Array2<f64> {
        let n = self.n;
        Array2::from_shape_fn((n, n * n), |(r, c)| if c / n == r { 1.0 } else { 0.0 })
    }

    /// Full `B = (I (x) u^T) K`, `N x N^2`, built as `(I (x) u^T)` times the permutation.
    pub fn b(&self) -> Array2<f64> {
        let n = self.n;
        let k = CommutationMatrix::new(n);
        let mut b = Array2::zeros((n, n * n));
        // (I (x) u^T)[r, c] = u[c % n] when c / n == r.
        for r in 0..n {
            for t in 0..n {
                let c = r * n + t;
                // (I (x) u^T) K: column k.source(c) of K has its one at row c.
                b[[r, k.source(c)]] += self.u[t];
            }
        }
        b
    }

    /// Full `S = [A; B]`.
    pub fn s(&self) -> Array2<f64> {
        concatenate![Axis(0), self.a(), self.b()]
    }
}

/// Orthonormal basis of a feasible space, in support coordinates.
#[derive(Clone, Debug)]
pub struct FeasibleBasis {
    pub n: usize,
    pub support_index: Vec<(usize, usize)>,
    /// `M[i, j]` at each support position, for feasibility bounds.
    pub support_values: Vec<f64>,
    /// `#I x dim`, orthonormal columns.
    pub basis: Array2<f64>,
}

impl FeasibleBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Places support coordinates back into an `N x N` matrix.
    pub fn assemble(&self, coords: &Array1<f64>) -> Array2<f64> {
        let mut p = Array2::zeros((self.n, self.n));
        for (k, &(i, j)) in self.support_index.iter().enumerate() {
            p[[i, j]] = coords[k];
        }
        p
    }

    /// Support coordinates of an `N x N` matrix.
    pub fn reduce(&self, c: &Array2<f64>) -> Array1<f64> {
        self.support_index.iter().map(|&(i, j)| c[[i, j]]).collect()
    }

    /// Unit-Frobenius feasible matrix, isotropic within the feasible space.
    pub fn sample_unit<R: Rng>(&self, rng: &mut R) -> Array2<f64> {
        let z: Array1<f64> = (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = self.basis.dot(&z);
        let norm = p.dot(&p).sqrt();
        self.assemble(&(p / norm))
    }
}

/// Nullspace of `A_r` (C2) or `S_r` (C2 and C4) via a full SVD.
///
/// Singular values at or below `1e-10 * sigma_max` count as zero.
pub fn feasible_basis(m: &StochasticMatrix, u: &ProbabilityVector, include_measure_preservation: bool) -> Result<Array2<f64>> {
    feasible_space(m, u, include_measure_preservation).map(|b| b.basis)
}

/// [`feasible_basis`] with the support index attached.
pub fn feasible_space(m: &StochasticMatrix, u: &ProbabilityVector, include_measure_preservation: bool) -> Result<FeasibleBasis> {
    let vc = VectorizedConstraints::new(m, u);
    let constraint = if include_measure_preservation { vc.s_r() } else { vc.a_r.clone() };
    let k = constraint.ncols();
    let (_, sigma, vt) = constraint.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::SingularSystem("SVD returned no right vectors".into()))?;
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    let rank = sigma.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank >= k {
        return Err(Error::EmptyFeasibleSpace);
    }
    let basis = vt.slice(ndarray::s![rank.., ..]).t().to_owned();
    let support_values = vc.support_index.iter().map(|&(i, j)| m.get(i, j)).collect();
    Ok(FeasibleBasis { n: m.n(), support_index: vc.support_index, support_values, basis })
}

/// Normalized projection of `C` onto the span of a feasible basis.
pub fn project_optimize(coeffs: &LinearCoefficients, basis: &FeasibleBasis, direction: Direction) -> Result<OptimizationResult> {
    let c = basis.reduce(coeffs.matrix());
    let proj = basis.basis.dot(&basis.basis.t().dot(&c));
    let norm = proj.dot(&proj).sqrt();
    let cnorm = c.dot(&c).sqrt();
    if !(norm > 1e-12 * cnorm) {
        return Err(Error::ZeroProjection);
    }
    let coords = proj * (direction.sign() / norm);
    let max_feasible_eps = coords
        .iter()
        .zip(&basis.support_values)
        .filter(|(&x, _)| x < 0.0)
        .map(|(&x, &w)| w / -x)
        .fold(f64::INFINITY, f64::min);
    let p = basis.assemble(&coords);
    let objective = coeffs.evaluate(&p);
    let pm = crate::markov_core::PerturbationMatrix::from_parts(p, true);
    Ok(OptimizationResult { p: pm, objective_gradient: objective, method_tag: MethodTag::Projection, max_feasible_eps })
}

/// Settings for the two-method comparison on random chains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub count: usize,
    pub n: usize,
    /// Probability that an off-diagonal transition is absent.
    pub sparsity: f64,
    /// Diagonal entry as a multiple of the off-diagonal column sum.
    pub dominance: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { count: 200, n: 50, sparsity: 0.5, dominance: 1.0, eps: 1e-3, seed: 2024 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins spanning the data.
    pub fn linear(data: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = data.iter().copied().filter(|x| x.is_finite()).collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if finite.is_empty() {
            return Self { edges: vec![], counts: vec![] };
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for x in finite {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    /// Decade bins of `log10(x)` from `1e-17` to `1`; zeros land in the first bin.
    pub fn log10(data: &[f64]) -> Self {
        let edges: Vec<f64> = (-17..=0).map(|e| 10f64.powi(e)).collect();
        let mut counts = vec![0; edges.len() - 1];
        for &x in data {
            let k = edges.iter().rposition(|&e| x >= e).unwrap_or(0).min(counts.len() - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelChangeHistograms {
    pub lagrange: Histogram,
    pub projection: Histogram,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub count: usize,
    pub n: usize,
    pub sparsity: f64,
    pub dominance: f64,
    pub eps: f64,
    pub seed: u64,
    pub spectral_gap_mean: f64,
    pub spectral_gap_std: f64,
    pub rel_change_hist: RelChangeHistograms,
    pub method_diff_hist: Histogram,
    pub fraction_decreased_lagrange: f64,
    pub fraction_decreased_projection: f64,
    pub median_method_diff: f64,
    pub max_method_diff: f64,
    /// Draws where `eps` exceeded the entrywise feasibility bound.
    pub infeasible_draws: usize,
    pub rejected_draws: usize,
}

/// One random chain for the comparison ensemble.
///
/// Off-diagonal transitions are present with probability `1 - sparsity`
/// independently per ordered pair; only pairs present in both directions are
/// kept, so the mask is symmetric. Values are uniform, the diagonal is
/// `dominance` times the off-diagonal column sum, then columns are normalized.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize, sparsity: f64, dominance: f64) -> Option<StochasticMatrix> {
    let keep = 1.0 - sparsity;
    let present = Array2::from_shape_fn((n, n), |(i, j)| i != j && rng.gen_bool(keep));
    let mut e = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            if present[[i, j]] && present[[j, i]] {
                e[[i, j]] = rng.gen::<f64>();
            }
        }
    }
    for j in 0..n {
        let off = e.column(j).sum();
        if !(off > 0.0) {
            return None;
        }
        e[[j, j]] = dominance * off;
    }
    StochasticMatrix::from_nonnegative(e).ok()
}

struct Draw {
    gap: f64,
    rel_lagrange: f64,
    rel_projection: f64,
    diff: f64,
    infeasible: bool,
    rejected: usize,
}

fn one_draw(cfg: &EnsembleConfig, index: u64) -> Result<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut rejected = 0;
    for _ in 0..10_000 {
        let Some(m) = random_chain(&mut rng, cfg.n, cfg.sparsity, cfg.dominance) else {
            rejected += 1;
            continue;
        };
        let gap = spectral_gap(&m)?;
        if gap < 1e-6 || row_components(&m) > 1 {
            rejected += 1;
            continue;
        }
        let Ok(u) = invariant_vector(&m, 1e-12, 1_000_000) else {
            rejected += 1;
            continue;
        };
        let s0 = entropy_production(&m, &u)?;
        let c = entropy_production_coefficients(&m, &u)?;
        let p1 = minimize_measure_preserving(&m, &u, &c, Direction::Min)?;
        let basis = feasible_space(&m, &u, true)?;
        let p2 = project_optimize(&c, &basis, Direction::Min)?;
        let rel = |p: &OptimizationResult| match perturb(&m, &p.p, cfg.eps) {
            Ok(mp) => entropy_production(&mp, &u).map(|s1| (s1 - s0) / s0).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        let (r1, r2) = (rel(&p1), rel(&p2));
        return Ok(Draw {
            gap,
            rel_lagrange: r1,
            rel_projection: r2,
            diff: frobenius(&(p1.p.entries() - p2.p.entries())),
            infeasible: r1.is_nan() || r2.is_nan(),
            rejected,
        });
    }
    Err(Error::ParameterError("no mixing chain found in 10000 attempts".into()))
}

/// Lagrange vs projection entropy-production minimization on random chains.
///
/// Draw `k` uses stream `k` of a ChaCha8 generator seeded with `seed`, so
/// results do not depend on the number of worker threads.
pub fn ensemble_compare(cfg: &EnsembleConfig) -> Result<EnsembleReport> {
    if cfg.count == 0 || cfg.n < 2 || !(cfg.eps > 0.0) || !(cfg.dominance >= 0.0) {
        return Err(Error::ParameterError("count, n >= 2, eps > 0 and dominance >= 0 are required".into()));
    }
    if !(cfg.sparsity > 0.0 && cfg.sparsity < 1.0) {
        return Err(Error::ParameterError(format!("sparsity {} is outside (0, 1)", cfg.sparsity)));
    }
    let expected_links = (1.0 - cfg.sparsity).powi(2) * (cfg.n - 1) as f64;
    if expected_links < 1.0 {
        return Err(Error::ParameterError(format!(
            "sparsity {} leaves {expected_links:.2} expected transitions per state; draws would not mix",
            cfg.sparsity
        )));
    }
    let draws: Vec<Draw> = (0..cfg.count as u64).into_par_iter().map(|k| one_draw(cfg, k)).collect::<Result<_>>()?;

    let count = draws.len() as f64;
    let gaps: Vec<f64> = draws.iter().map(|d| d.gap).collect();
    let mean = gaps.iter().sum::<f64>() / count;
    let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / count).sqrt();
    let r1: Vec<f64> = draws.iter().map(|d| d.rel_lagrange).collect();
    let r2: Vec<f64> = draws.iter().map(|d| d.rel_projection).collect();
    let mut diffs: Vec<f64> = draws.iter().map(|d| d.diff).collect();
    let decreased = |r: &[f64]| r.iter().filter(|&&x| x < 0.0).count() as f64 / count;
    let method_diff_hist = Histogram::log10(&diffs);
    diffs.sort_by(f64::total_cmp);
    Ok(EnsembleReport {
        count: cfg.count,
        n: cfg.n,
        sparsity: cfg.sparsity,
        dominance: cfg.dominance,
        eps: cfg.eps,
        seed: cfg.seed,
        spectral_gap_mean: mean,
        spectral_gap_std: std,
        rel_change_hist: RelChangeHistograms { lagrange: Histogram::linear(&r1, 20), projection: Histogram::linear(&r2, 20) },
        method_diff_hist,
        fraction_decreased_lagrange: decreased(&r1),
        fraction_decreased_projection: decreased(&r2),
        median_method_diff: diffs[diffs.len() / 2],
        max_method_diff: *diffs.last().unwrap(),
        infeasible_draws: draws.iter().filter(|d| d.infeasible).count(),
        rejected_draws: draws.iter().map(|d| d.rejected).sum(),
    })
}

/// Sign-normalized copy, used when comparing basis-dependent outputs.
pub fn canonical_sign(mut p: Array2<f64>) -> Array2<f64> {
    sign_fix(&mut p);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn commutation_examples() {
        let k = CommutationMatrix::new(2);
        let v = array![11.0, 21.0, 12.0, 22.0];
        assert_eq!(commutation_apply(&k, &v).unwrap(), array![11.0, 12.0, 21.0, 22.0]);
        let sym = vec(&array![[1.0, 2.0], [2.0, 3.0]]);
        assert_eq!(commutation_apply(&k, &sym).unwrap(), sym);
        let k3 = CommutationMatrix::new(3);
        let x: Array1<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(commutation_apply(&k3, &commutation_apply(&k3, &x).unwrap()).unwrap(), x);
        assert!(matches!(commutation_apply(&k3, &array![1.0]), Err(Error::LengthMismatch { expected: 9, got: 1 })));
        let p = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        assert_eq!(k3.to_dense().unwrap().dot(&vec(&p)), vec(&p.t().to_owned()));
    }

    fn dense3() -> (StochasticMatrix, ProbabilityVector) {
        let m = StochasticMatrix::new(array![[0.5, 0.2, 0.3], [0.3, 0.4, 0.3], [0.2, 0.4, 0.4]]).unwrap();
        let u = invariant_vector(&m, 1e-13, 100).unwrap();
        (m, u)
    }

    #[test]
    fn dense_dimensions() {
        let (m, u) = dense3();
        assert_eq!(feasible_basis(&m, &u, false).unwrap().ncols(), 6);
        // u-weighted rows of A sum to the summed rows of B, so rank(S_r) = 2N - 1.
        assert_eq!(feasible_basis(&m, &u, true).unwrap().ncols(), 4);
    }

    #[test]
    fn sparse_mask_dimensions() {
        // Two entries per column: #I = 2N leaves exactly one direction.
        let m = StochasticMatrix::new(array![[0.5, 0.0, 0.3], [0.5, 0.6, 0.0], [0.0, 0.4, 0.7]]).unwrap();
        let u = invariant_vector(&m, 1e-13, 100).unwrap();
        assert_eq!(m.mask_len(), 6);
        assert_eq!(feasible_basis(&m, &u, true).unwrap().ncols(), 1);
        // A single-entry column pins its P column to zero.
        let m = StochasticMatrix::new(array![[0.0, 0.5], [1.0, 0.5]]).unwrap();
        let u = invariant_vector(&m, 1e-13, 100).unwrap();
        assert_eq!(feasible_basis(&m, &u, false).unwrap().ncols(), 1);
        assert!(matches!(feasible_basis(&m, &u, true), Err(Error::EmptyFeasibleSpace)));
    }

    #[test]
    fn full_constraint_matrices_match_definitions() {
        let (m, u) = dense3();
        let vc = VectorizedConstraints::new(&m, &u);
        let p = array![[0.3, -0.1, 0.5], [-0.2, 0.4, 0.1], [0.7, 0.0, -0.9]];
        let colsum = p.sum_axis(Axis(0));
        assert!((vc.a().dot(&vec(&p)) - colsum).iter().all(|x| x.abs() < 1e-15));
        assert!((vc.b().dot(&vec(&p)) - p.dot(u.values())).iter().all(|x| x.abs() < 1e-15));
        // Dense mask: reduced equals full.
        assert_eq!(vc.a_r, vc.a());
        assert!((vc.b_r.clone() - vc.b()).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn basis_orthonormal_and_projection_idempotent() {
        let (m, u) = dense3();
        let fb = feasible_space(&m, &u, true).unwrap();
        let gram = fb.basis.t().dot(&fb.basis);
        assert!((gram - Array2::<f64>::eye(fb.dim())).iter().all(|x| x.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = fb.sample_unit(&mut rng);
        let c = LinearCoefficients::new(p.clone(), &m).unwrap();
        let res = project_optimize(&c, &fb, Direction::Max).unwrap();
        assert!((res.p.entries() - &p).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn orthogonal_coefficients_give_zero_projection() {
        let (m, u) = dense3();
        let fb = feasible_space(&m, &u, false).unwrap();
        // A column-constant C is orthogonal to zero-column-sum matrices.
        let c = LinearCoefficients::new(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], &m).unwrap();
        assert!(matches!(project_optimize(&c, &fb, Direction::Max), Err(Error::ZeroProjection)));
    }

    #[test]
    fn ensemble_rejects_bad_parameters() {
        let bad = EnsembleConfig { sparsity: 1.0, ..Default::default() };
        assert!(matches!(ensemble_compare(&bad), Err(Error::ParameterError(_))));
        let bad = EnsembleConfig { n: 5, sparsity: 0.9, ..Default::default() };
        assert!(matches!(ensemble_compare(&bad), Err(Error::ParameterError(_))));
    }

    #[test]
    fn small_ensemble_runs() {
        let cfg = EnsembleConfig { count: 6, n: 12, sparsity: 0.3, ..Default::default() };
        let r = ensemble_compare(&cfg).unwrap();
        assert!(r.median_method_diff < 1e-8);
        assert_eq!(r.method_diff_hist.counts.iter().sum::<usize>(), 6);
        let again = ensemble_compare(&cfg).unwrap();
        assert_eq!(r.spectral_gap_mean, again.spectral_gap_mean);
    }
}
