//! Generators from Markov matrices and the drift fields they imply.
//!
//! A chain `M` estimated at lag `tau` is read as `exp(tau L)`; `L` is a rate
//! matrix with zero column sums. Any rate-like matrix (a generator, or a
//! perturbation `P` whose columns sum to zero) defines a drift at box
//! centers through its rate-weighted displacements.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{c64, Eig, Inverse};
use serde::{Deserialize, Serialize};

use crate::markov_core::{frobenius, StochasticMatrix};
use crate::ulam::BoxPartition;
use crate::{Error, Result};

/// Rate matrix `L` with `M ≈ exp(tau L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    l: Array2<f64>,
    pub tau: f64,
}

impl GeneratorMatrix {
    /// Checks zero column sums to `1e-8` relative to the largest entry.
    pub fn new(l: Array2<f64>, tau: f64) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::InvalidMatrix("generator must be square".into()));
        }
        let scale = l.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for (j, col) in l.axis_iter(Axis(1)).enumerate() {
            let s = col.sum();
            if !(s.abs() <= 1e-8 * scale) {
                return Err(Error::InvalidMatrix(format!("generator column {j} sums to {s:e}")));
            }
        }
        Ok(Self { l, tau })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.l
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }
}

/// How to take the logarithm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogMethod {
    /// Alternating Mercator series in `M - I`; needs spectral radius < 1.
    Series,
    /// Principal logarithm of the eigenvalues.
    Eigen,
    /// Series when the radius is at most 0.9, eigen otherwise.
    #[default]
    Auto,
    /// First `order` series terms, without a convergence check. Order 1 is
    /// `(M - I) / tau`; low orders are far less sensitive to sampling noise
    /// in sparsely visited boxes than the full logarithm.
    Truncated { order: usize },
}

impl std::str::FromStr for LogMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "series" => Ok(LogMethod::Series),
            "eigen" => Ok(LogMethod::Eigen),
            "auto" => Ok(LogMethod::Auto),
            _ => match s.strip_prefix("truncated:").map(str::parse) {
                Some(Ok(order)) if order > 0 => Ok(LogMethod::Truncated { order }),
                _ => Err(Error::ParameterError(format!("unknown log method `{s}` (series, eigen, auto, truncated:K)"))),
            },
        }
    }
}

/// Spectral radius of `M - I`, from a full eigendecomposition.
pub fn series_radius(m: &Array2<f64>) -> Result<f64> {
    let a = m - &Array2::<f64>::eye(m.nrows());
    let (vals, _) = a.eig()?;
    Ok(vals.iter().fold(0.0, |r, z| r.max(z.norm())))
}

fn log_series(m: &Array2<f64>, tol: f64, max_terms: usize, check: bool) -> Result<Array2<f64>> {
    let a = m - &Array2::<f64>::eye(m.nrows());
    let mut power = a.clone();
    let mut out = a.clone();
    for k in 2..=max_terms {
        power = power.dot(&a);
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        let term = &power * (sign / k as f64);
        out += &term;
        if check && frobenius(&term) < tol {
            return Ok(out);
        }
    }
    if check {
        // Ran out of terms: report the rate actually seen.
        let r = frobenius(&power).powf(1.0 / max_terms as f64);
        return Err(Error::SeriesDivergence(r));
    }
    Ok(out)
}

fn log_eigen(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let (vals, vecs) = m.eig()?;
    let scale = vals.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let mut logs = Array1::<c64>::zeros(n);
    for (k, z) in vals.iter().enumerate() {
        if z.im.abs() <= 1e-12 * scale && z.re <= 0.0 {
            return Err(Error::ComplexLogBranch { re: z.re, im: z.im });
        }
        logs[k] = z.ln();
    }
    let inv = vecs.inv()?;
    let mut scaled = vecs;
    for (mut col, l) in scaled.axis_iter_mut(Axis(1)).zip(&logs) {
        col.mapv_inplace(|x| x * l);
    }
    Ok(scaled.dot(&inv).mapv(|z| z.re))
}

/// `L = log(M) / tau`.
///
/// `tol` stops the series once a term's Frobenius norm drops below it;
/// `max_terms` bounds the number of terms.
pub fn matrix_log(m: &StochasticMatrix, tau: f64, method: LogMethod, tol: f64, max_terms: usize) -> Result<GeneratorMatrix> {
    if !(tau > 0.0) {
        return Err(Error::ParameterError("tau must be positive".into()));
    }
    let e = m.entries();
    let log = match method {
        LogMethod::Truncated { order } => log_series(e, 0.0, order.max(1), false)?,
        LogMethod::Eigen => log_eigen(e)?,
        LogMethod::Series | LogMethod::Auto => {
            let r = series_radius(e)?;
            match method {
                LogMethod::Series if r >= 1.0 => return Err(Error::SeriesDivergence(r)),
                LogMethod::Auto if r > 0.9 => log_eigen(e)?,
                _ => log_series(e, tol, max_terms, true)?,
            }
        }
    };
    let mut l = log / tau;
    // Roundoff in the powers leaves column sums of order tol; remove them
    // from the diagonal so the result is an exact rate matrix.
    for j in 0..l.ncols() {
        let s = l.column(j).sum();
        l[[j, j]] -= s;
    }
    GeneratorMatrix::new(l, tau)
}

/// Vector field at retained box centers, one row per retained box.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField {
    pub centers: Array2<f64>,
    pub values: Array2<f64>,
    pub retained_index: Vec<usize>,
}

impl DriftField {
    /// Rows where `keep` holds.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.retained_index.len()).filter(|&r| keep(r)).collect();
        Self {
            centers: self.centers.select(Axis(0), &rows),
            values: self.values.select(Axis(0), &rows),
            retained_index: rows.iter().map(|&r| self.retained_index[r]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.retained_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained_index.is_empty()
    }
}

fn centers(p: &BoxPartition, retained_index: &[usize]) -> Result<Array2<f64>> {
    let d = p.dims();
    let mut c = Array2::zeros((retained_index.len(), d));
    for (r, &b) in retained_index.iter().enumerate() {
        if b >= p.n_boxes() {
            return Err(Error::ParameterError(format!("box {b} outside a partition of {}", p.n_boxes())));
        }
        for (k, x) in p.center(b).into_iter().enumerate() {
            c[[r, k]] = x;
        }
    }
    Ok(c)
}

/// `F_k(c_i) = sum_j L_ji (c_j,k - c_i,k)`.
///
/// `rates` may be a generator or any matrix with zero column sums, such as
/// a perturbation. Rows and columns follow `retained_index`.
pub fn reconstruct_drift(rates: &Array2<f64>, p: &BoxPartition, retained_index: &[usize]) -> Result<DriftField> {
    let n = retained_index.len();
    if rates.dim() != (n, n) {
        return Err(Error::LengthMismatch { expected: n, got: rates.nrows() });
    }
    let c = centers(p, retained_index)?;
    // F = L^T C - diag(1^T L) C.
    let mut values = rates.t().dot(&c);
    let colsum = rates.sum_axis(Axis(0));
    for (mut row, (s, ci)) in values.axis_iter_mut(Axis(0)).zip(colsum.iter().zip(c.axis_iter(Axis(0)))) {
        row.scaled_add(-s, &ci);
    }
    Ok(DriftField { centers: c, values, retained_index: retained_index.to_vec() })
}

/// Finite-difference derivative along `axis` on the retained boxes.
///
/// Centered where both neighbours are retained, one-sided where only one
/// is, zero row where neither is.
pub fn derivative_matrix(p: &BoxPartition, retained_index: &[usize], axis: usize) -> Result<Array2<f64>> {
    if axis >= p.dims() {
        return Err(Error::ParameterError(format!("axis {axis} out of range for {} dimensions", p.dims())));
    }
    let n = retained_index.len();
    let mut position = vec![usize::MAX; p.n_boxes()];
    for (r, &b) in retained_index.iter().enumerate() {
        if b >= p.n_boxes() {
            return Err(Error::ParameterError(format!("box {b} outside a partition of {}", p.n_boxes())));
        }
        position[b] = r;
    }
    let h = p.width(axis);
    let mut d = Array2::zeros((n, n));
    for (r, &b) in retained_index.iter().enumerate() {
        let bins = p.bins(b);
        let neighbour = |delta: isize| {
            let k = bins[axis] as isize + delta;
            if k < 0 || k as usize >= p.counts[axis] {
                return None;
            }
            let mut nb = bins.clone();
            nb[axis] = k as usize;
            let q = position[p.compose(&nb)];
            (q != usize::MAX).then_some(q)
        };
        match (neighbour(-1), neighbour(1)) {
            (Some(lo), Some(hi)) => {
                d[[r, hi]] += 0.5 / h;
                d[[r, lo]] -= 0.5 / h;
            }
            (None, Some(hi)) => {
                d[[r, hi]] += 1.0 / h;
                d[[r, r]] -= 1.0 / h;
            }
            (Some(lo), None) => {
                d[[r, r]] += 1.0 / h;
                d[[r, lo]] -= 1.0 / h;
            }
            (None, None) => {}
        }
    }
    Ok(d)
}

/// Cosine between two fields flattened into single vectors.
pub fn field_cosine(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Taylor series of `exp(A / 2^s)` squared `s` times.
    fn expm(a: &Array2<f64>) -> Array2<f64> {
        let norm = frobenius(a);
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let b = a / 2f64.powi(s);
        let mut term = Array2::eye(a.nrows());
        let mut out = term.clone();
        for k in 1..30 {
            term = term.dot(&b) / k as f64;
            out += &term;
        }
        for _ in 0..s {
            out = out.dot(&out);
        }
        out
    }

    fn random_rates(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let mut q = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { rng.gen_range(0.0..1.0) });
        for j in 0..n {
            let s = q.column(j).sum();
            q[[j, j]] = -s;
        }
        q
    }

    #[test]
    fn identity_has_zero_log() {
        let m = StochasticMatrix::new(Array2::eye(3)).unwrap();
        for method in [LogMethod::Series, LogMethod::Eigen, LogMethod::Auto, LogMethod::Truncated { order: 2 }] {
            let l = matrix_log(&m, 0.5, method, 1e-15, 200).unwrap();
            assert!(l.entries().iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn two_state_round_trip() {
        let q = array![[-1.0, 2.0], [1.0, -2.0]];
        let m = StochasticMatrix::new(expm(&(&q * 0.1))).unwrap();
        for method in [LogMethod::Series, LogMethod::Eigen] {
            let l = matrix_log(&m, 0.1, method, 1e-16, 500).unwrap();
            assert!(frobenius(&(l.entries() - &q)) < 1e-8, "{method:?}");
        }
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=8 {
            let q = random_rates(&mut rng, n);
            let tau = 0.3 / q.diag().iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let m = StochasticMatrix::from_nonnegative(expm(&(&q * tau)).mapv(|x| x.max(0.0))).unwrap();
            let l = matrix_log(&m, tau, LogMethod::Auto, 1e-16, 1000).unwrap();
            assert!(frobenius(&(l.entries() - &q)) < 1e-8 * frobenius(&q).max(1.0));
            for col in l.entries().axis_iter(Axis(1)) {
                assert!(col.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_eigenvalue_and_divergence() {
        let m = StochasticMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(matrix_log(&m, 1.0, LogMethod::Eigen, 1e-12, 100), Err(Error::ComplexLogBranch { .. })));
        assert!(matches!(matrix_log(&m, 1.0, LogMethod::Series, 1e-12, 100), Err(Error::SeriesDivergence(r)) if (r - 2.0).abs() < 1e-12));
        assert!(matrix_log(&m, 0.0, LogMethod::Auto, 1e-12, 100).is_err());
    }

    #[test]
    fn truncated_first_order() {
        let m = StochasticMatrix::new(array![[0.9, 0.2], [0.1, 0.8]]).unwrap();
        let l = matrix_log(&m, 0.5, LogMethod::Truncated { order: 1 }, 0.0, 0).unwrap();
        assert!(frobenius(&(l.entries() - &array![[-0.2, 0.4], [0.2, -0.4]])) < 1e-15);
        assert_eq!("truncated:3".parse::<LogMethod>().unwrap(), LogMethod::Truncated { order: 3 });
    }

    #[test]
    fn drift_cases() {
        let p = BoxPartition::new(vec![[0.0, 4.0]], vec![4]).unwrap();
        let idx = vec![0, 1, 2, 3];
        let f = reconstruct_drift(&Array2::zeros((4, 4)), &p, &idx).unwrap();
        assert!(f.values.iter().all(|&x| x == 0.0));
        // Uniform hopping right at rate 1 from every interior box.
        let mut l = Array2::zeros((4, 4));
        for j in 0..3 {
            l[[j + 1, j]] = 1.0;
            l[[j, j]] = -1.0;
        }
        let f = reconstruct_drift(&l, &p, &idx).unwrap();
        assert_eq!(f.values.column(0).to_vec(), vec![1.0, 1.0, 1.0, 0.0]);
        // Shifting the domain moves the centers but not the field.
        let q = BoxPartition::new(vec![[10.0, 14.0]], vec![4]).unwrap();
        assert_eq!(reconstruct_drift(&l, &q, &idx).unwrap().values, f.values);
        let some = f.select(|r| r < 2);
        assert_eq!(some.retained_index, vec![0, 1]);
    }

    #[test]
    fn derivative_cases() {
        let p = BoxPartition::new(vec![[0.0, 1.0]], vec![10]).unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let d = derivative_matrix(&p, &idx, 0).unwrap();
        let ramp = Array1::from_shape_fn(10, |i| 3.0 * p.center(i)[0] + 1.0);
        assert!(d.dot(&ramp).iter().all(|x| (x - 3.0).abs() < 1e-12));
        assert!(d.dot(&Array1::ones(10)).iter().all(|x| x.abs() < 1e-12));
        let q = BoxPartition::new(vec![[0.0, 1.0], [0.0, 2.0]], vec![4, 5]).unwrap();
        let all: Vec<usize> = (0..20).collect();
        let y = Array1::from_shape_fn(20, |i| q.center(i)[1]);
        assert!(derivative_matrix(&q, &all, 1).unwrap().dot(&y).iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(derivative_matrix(&q, &all, 0).unwrap().dot(&y).iter().all(|x| x.abs() < 1e-12));
        assert!(derivative_matrix(&q, &all, 2).is_err());
    }

    #[test]
    fn cosine() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        assert!((field_cosine(&a, &(-&a)) + 1.0).abs() < 1e-15);
    }
}
