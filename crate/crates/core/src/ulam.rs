//! Box partitions and Ulam transition-matrix estimation.
//!
//! For a trajectory `x_0, x_1, ...` sampled every `dt` and a lag
//! `k = tau / dt`,
//!
//! ```text
//! M_ij = #{n : x_n in B_j, x_{n+k} in B_i} / #{n : x_n in B_j}
//! ```
//!
//! counted over pairs whose two points both lie in the domain. Boxes are then
//! pruned (occupancy floor, optional transition-count floor, optional
//! symmetric mask, largest strongly connected component) and columns are
//! renormalized over the boxes that remain.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::functionals::ObservableVector;
use crate::markov_core::StochasticMatrix;
use crate::{Error, Result};

/// Uniform grid over a box in 1 to 3 dimensions.
///
/// Boxes are half-open `[lo, hi)` except the last one on each axis, which
/// also contains `hi`. Box indices are row-major: the first axis varies
/// slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPartition {
    pub bounds: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

impl BoxPartition {
    pub fn new(bounds: Vec<[f64; 2]>, counts: Vec<usize>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 3 || bounds.len() != counts.len() {
            return Err(Error::ParameterError(format!(
                "partition needs 1 to 3 axes with matching counts (got {} bounds, {} counts)",
                bounds.len(),
                counts.len()
            )));
        }
        for (k, (b, &c)) in bounds.iter().zip(&counts).enumerate() {
            if !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite() {
                return Err(Error::ParameterError(format!("axis {k}: lo must be below hi")));
            }
            if c == 0 {
                return Err(Error::ParameterError(format!("axis {k}: box count must be positive")));
            }
        }
        Ok(Self { bounds, counts })
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    pub fn n_boxes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.bounds[axis][1] - self.bounds[axis][0]) / self.counts[axis] as f64
    }

    fn axis_bin(&self, axis: usize, x: f64) -> Option<usize> {
        let [lo, hi] = self.bounds[axis];
        if !(x >= lo && x <= hi) {
            return None;
        }
        let c = self.counts[axis];
        Some((((x - lo) / (hi - lo) * c as f64) as usize).min(c - 1))
    }

    /// Per-axis bins of a box index.
    pub fn bins(&self, index: usize) -> Vec<usize> {
        let mut rest = index;
        let mut out = vec![0; self.dims()];
        for axis in (0..self.dims()).rev() {
            out[axis] = rest % self.counts[axis];
            rest /= self.counts[axis];
        }
        out
    }

    pub fn compose(&self, bins: &[usize]) -> usize {
        bins.iter().zip(&self.counts).fold(0, |acc, (&b, &c)| acc * c + b)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        self.bins(index)
            .iter()
            .enumerate()
            .map(|(axis, &b)| self.bounds[axis][0] + (b as f64 + 0.5) * self.width(axis))
            .collect()
    }
}

/// Box containing `x`, or `None` when `x` lies outside the domain.
pub fn partition_index(p: &BoxPartition, x: &[f64]) -> Option<usize> {
    if x.len() != p.dims() {
        return None;
    }
    let mut index = 0;
    for (axis, &xi) in x.iter().enumerate() {
        index = index * p.counts[axis] + p.axis_bin(axis, xi)?;
    }
    Some(index)
}

/// Uniformly sampled time series of `dims`-vectors, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dims: usize,
    pub dt: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dims: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if dims == 0 || data.len() % dims != 0 {
            return Err(Error::ParameterError(format!("{} values do not split into {dims}-vectors", data.len())));
        }
        if !(dt > 0.0) {
            return Err(Error::ParameterError(format!("dt must be positive, got {dt}")));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::DomainError(format!("non-finite coordinate at sample {}", k / dims)));
        }
        Ok(Self { dims, dt, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dims..(k + 1) * self.dims]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Every `every`-th sample, with `dt` scaled accordingly.
    pub fn thinned(&self, every: usize) -> Self {
        let every = every.max(1);
        let data = self.data.chunks(self.dims).step_by(every).flatten().copied().collect();
        Self { dims: self.dims, dt: self.dt * every as f64, data }
    }
}

/// Pruning options for [`estimate_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UlamConfig {
    /// Boxes visited fewer times are dropped.
    pub min_occupancy: u64,
    /// Pair counts below this are zeroed before normalization.
    pub min_transition_count: u64,
    /// Keep a transition only if its reverse is also present.
    pub symmetric_mask: bool,
}

impl Default for UlamConfig {
    fn default() -> Self {
        Self { min_occupancy: 5, min_transition_count: 0, symmetric_mask: false }
    }
}

#[derive(Clone, Debug)]
pub struct UlamEstimate {
    pub matrix: StochasticMatrix,
    /// Original box index of each retained state.
    pub retained_index: Vec<usize>,
    /// Source visits per original box, over in-domain pairs.
    pub occupancy: Vec<u64>,
    pub tau: f64,
    pub lag: usize,
}

impl UlamEstimate {
    /// Occupancy of each retained state.
    pub fn retained_occupancy(&self) -> Vec<u64> {
        self.retained_index.iter().map(|&b| self.occupancy[b]).collect()
    }
}

/// Integer lag `tau / dt`.
pub fn lag_steps(tau: f64, dt: f64) -> Result<usize> {
    let ratio = tau / dt;
    let lag = ratio.round();
    if !(tau > 0.0) || lag < 1.0 || (ratio - lag).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::ParameterError(format!("tau = {tau} is not a positive integer multiple of dt = {dt}")));
    }
    Ok(lag as usize)
}

/// Box of every sample, `u32::MAX` when out of domain.
pub fn box_sequence(traj: &Trajectory, p: &BoxPartition) -> Result<Vec<u32>> {
    if traj.dims != p.dims() {
        return Err(Error::LengthMismatch { expected: p.dims(), got: traj.dims });
    }
    if p.n_boxes() >= u32::MAX as usize {
        return Err(Error::ParameterError("too many boxes".into()));
    }
    Ok(traj
        .as_flat()
        .par_chunks(traj.dims)
        .map(|x| partition_index(p, x).map_or(u32::MAX, |b| b as u32))
        .collect())
}

/// Sparse pair counts `(source, target) -> count` at a given lag.
pub fn count_transitions(boxes: &[u32], lag: usize) -> HashMap<(u32, u32), u64> {
    if boxes.len() <= lag {
        return HashMap::new();
    }
    let mut keys: Vec<u64> = boxes[..boxes.len() - lag]
        .par_iter()
        .zip(&boxes[lag..])
        .filter(|(&a, &b)| a != u32::MAX && b != u32::MAX)
        .map(|(&a, &b)| ((a as u64) << 32) | b as u64)
        .collect();
    keys.par_sort_unstable();
    let mut counts = HashMap::new();
    for chunk in keys.chunk_by(|a, b| a == b) {
        let k = chunk[0];
        counts.insert(((k >> 32) as u32, k as u32), chunk.len() as u64);
    }
    counts
}

/// Estimate with the default pruning options.
pub fn estimate_transition_matrix(traj: &Trajectory, p: &BoxPartition, tau: f64) -> Result<UlamEstimate> {
    estimate_with(traj, p, tau, &UlamConfig::default())
}

pub fn estimate_with(traj: &Trajectory, p: &BoxPartition, tau: f64, cfg: &UlamConfig) -> Result<UlamEstimate> {
    let lag = lag_steps(tau, traj.dt)?;
    if traj.len() <= lag {
        return Err(Error::ParameterError(format!("trajectory of {} samples is shorter than the lag {lag}", traj.len())));
    }
    let boxes = box_sequence(traj, p)?;
    estimate_from_counts(&count_transitions(&boxes, lag), p.n_boxes(), tau, lag, cfg)
}

/// Pruning and normalization on precomputed pair counts.
pub fn estimate_from_counts(
    counts: &HashMap<(u32, u32), u64>,
    n_boxes: usize,
    tau: f64,
    lag: usize,
    cfg: &UlamConfig,
) -> Result<UlamEstimate> {
    let mut occupancy = vec![0u64; n_boxes];
    let mut target_hits = vec![0u64; n_boxes];
    for (&(a, b), &c) in counts {
        occupancy[a as usize] += c;
        target_hits[b as usize] += c;
    }
    let floor = cfg.min_transition_count.max(1);
    let mut edges: Vec<(usize, usize, u64)> = counts
        .iter()
        .filter(|(_, &c)| c >= floor)
        .map(|(&(a, b), &c)| (a as usize, b as usize, c))
        .collect();
    edges.sort_unstable();

    let mut active: Vec<bool> =
        (0..n_boxes).map(|b| occupancy[b] >= cfg.min_occupancy.max(1) && target_hits[b] > 0).collect();
    loop {
        edges.retain(|&(a, b, _)| active[a] && active[b]);
        if cfg.symmetric_mask {
            let present: std::collections::HashSet<(usize, usize)> = edges.iter().map(|&(a, b, _)| (a, b)).collect();
            edges.retain(|&(a, b, _)| present.contains(&(b, a)));
        }
        let mut has_out = vec![false; n_boxes];
        for &(a, _, _) in &edges {
            has_out[a] = true;
        }
        let keep = largest_component(&edges, &active, &has_out, n_boxes);
        if keep == active {
            break;
        }
        active = keep;
    }

    let retained_index: Vec<usize> = (0..n_boxes).filter(|&b| active[b]).collect();
    if retained_index.is_empty() {
        return Err(Error::EmptyEstimate);
    }
    let mut position = vec![usize::MAX; n_boxes];
    for (k, &b) in retained_index.iter().enumerate() {
        position[b] = k;
    }
    let n = retained_index.len();
    let mut m = Array2::<f64>::zeros((n, n));
    for &(a, b, c) in &edges {
        m[[position[b], position[a]]] += c as f64;
    }
    let matrix = StochasticMatrix::from_nonnegative(m)?;
    Ok(UlamEstimate { matrix, retained_index, occupancy, tau, lag })
}

fn largest_component(edges: &[(usize, usize, u64)], active: &[bool], has_out: &[bool], n_boxes: usize) -> Vec<bool> {
    let nodes: Vec<usize> = (0..n_boxes).filter(|&b| active[b] && has_out[b]).collect();
    let mut graph = DiGraph::<usize, ()>::with_capacity(nodes.len(), edges.len());
    let mut id = vec![None; n_boxes];
    for &b in &nodes {
        id[b] = Some(graph.add_node(b));
    }
    for &(a, b, _) in edges {
        if let (Some(x), Some(y)) = (id[a], id[b]) {
            graph.add_edge(x, y, ());
        }
    }
    let best = tarjan_scc(&graph)
        .into_iter()
        .map(|comp| comp.into_iter().map(|ix| graph[ix]).collect::<Vec<_>>())
        .max_by_key(|comp| (comp.len(), std::cmp::Reverse(*comp.iter().min().unwrap_or(&usize::MAX))));
    let mut keep = vec![false; n_boxes];
    for b in best.unwrap_or_default() {
        keep[b] = true;
    }
    keep
}

/// `psi_i = f(center of retained box i)`.
pub fn coarse_grain_observable<F: Fn(&[f64]) -> f64>(f: F, p: &BoxPartition, retained_index: &[usize]) -> Result<ObservableVector> {
    ObservableVector::new(retained_index.iter().map(|&b| f(&p.center(b))).collect())
}

/// Sums a vector over all retained boxes sharing each bin along `axis`.
///
/// Works for probability vectors and for sum-zero corrections alike.
pub fn marginal(v: ArrayView1<f64>, p: &BoxPartition, retained_index: &[usize], axis: usize) -> Result<Array1<f64>> {
    if axis >= p.dims() {
        return Err(Error::ParameterError(format!("axis {axis} out of range for {} dimensions", p.dims())));
    }
    if v.len() != retained_index.len() {
        return Err(Error::LengthMismatch { expected: retained_index.len(), got: v.len() });
    }
    let mut out = Array1::zeros(p.counts[axis]);
    for (&x, &b) in v.iter().zip(retained_index) {
        out[p.bins(b)[axis]] += x;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn index_examples() {
        let p = BoxPartition::new(vec![[-1.0, 1.0]], vec![2]).unwrap();
        assert_eq!(partition_index(&p, &[-0.5]), Some(0));
        assert_eq!(partition_index(&p, &[1.0]), Some(1));
        assert_eq!(partition_index(&p, &[0.0]), Some(1));
        assert_eq!(partition_index(&p, &[1.5]), None);
        assert_eq!(partition_index(&p, &[-1.0]), Some(0));
    }

    #[test]
    fn row_major_round_trip() {
        let p = BoxPartition::new(vec![[0.0, 1.0], [0.0, 2.0], [-1.0, 1.0]], vec![3, 4, 5]).unwrap();
        for b in 0..p.n_boxes() {
            assert_eq!(partition_index(&p, &p.center(b)), Some(b));
            assert_eq!(p.compose(&p.bins(b)), b);
        }
        assert_eq!(p.bins(1), vec![0, 0, 1]);
    }

    #[test]
    fn alternating_sequence() {
        let p = BoxPartition::new(vec![[0.0, 2.0]], vec![2]).unwrap();
        let data: Vec<f64> = (0..101).map(|k| if k % 2 == 0 { 0.5 } else { 1.5 }).collect();
        let t = Trajectory::new(1, 0.1, data).unwrap();
        let est = estimate_with(&t, &p, 0.1, &UlamConfig { min_occupancy: 1, ..Default::default() }).unwrap();
        assert_eq!(est.matrix.entries(), &array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(est.lag, 1);
    }

    #[test]
    fn constant_sequence_single_state() {
        let p = BoxPartition::new(vec![[0.0, 2.0]], vec![4]).unwrap();
        let t = Trajectory::new(1, 0.5, vec![1.2; 50]).unwrap();
        let est = estimate_transition_matrix(&t, &p, 1.0).unwrap();
        assert_eq!(est.matrix.entries(), &array![[1.0]]);
        assert_eq!(est.retained_index, vec![2]);
    }

    #[test]
    fn bad_lag_and_empty() {
        let p = BoxPartition::new(vec![[0.0, 2.0]], vec![4]).unwrap();
        let t = Trajectory::new(1, 0.1, vec![1.2; 50]).unwrap();
        assert!(matches!(estimate_transition_matrix(&t, &p, 0.15), Err(Error::ParameterError(_))));
        let out = Trajectory::new(1, 0.1, vec![5.0; 50]).unwrap();
        assert!(matches!(estimate_transition_matrix(&out, &p, 0.1), Err(Error::EmptyEstimate)));
    }

    #[test]
    fn out_of_domain_breaks_pairs() {
        let p = BoxPartition::new(vec![[0.0, 2.0]], vec![2]).unwrap();
        let t = Trajectory::new(1, 1.0, vec![0.5, 9.0, 1.5, 0.5, 1.5, 0.5]).unwrap();
        let boxes = box_sequence(&t, &p).unwrap();
        let c = count_transitions(&boxes, 1);
        assert_eq!(c.values().sum::<u64>(), 3);
        assert_eq!(c[&(1, 0)], 2);
    }

    #[test]
    fn pruning_keeps_strong_component() {
        // Box 0 leaks into the cycle 1 <-> 2 but is never re-entered.
        let mut counts = HashMap::new();
        counts.insert((0, 1), 10);
        counts.insert((1, 2), 10);
        counts.insert((2, 1), 10);
        let est = estimate_from_counts(&counts, 3, 1.0, 1, &UlamConfig { min_occupancy: 1, ..Default::default() }).unwrap();
        assert_eq!(est.retained_index, vec![1, 2]);
        // Symmetric mask drops the one-sided self structure.
        counts.insert((1, 1), 3);
        counts.insert((2, 0), 1);
        let cfg = UlamConfig { min_occupancy: 1, symmetric_mask: true, ..Default::default() };
        let est = estimate_from_counts(&counts, 3, 1.0, 1, &cfg).unwrap();
        assert_eq!(est.retained_index, vec![1, 2]);
        assert!(est.matrix.mask_asymmetry().is_none());
    }

    #[test]
    fn observables_and_marginals() {
        let p = BoxPartition::new(vec![[-1.0, 1.0]], vec![4]).unwrap();
        let idx: Vec<usize> = (0..4).collect();
        assert_eq!(coarse_grain_observable(|_| 1.0, &p, &idx).unwrap().values(), &Array1::<f64>::ones(4));
        let x = coarse_grain_observable(|c| c[0], &p, &idx).unwrap();
        assert_eq!(x.values(), &array![-0.75, -0.25, 0.25, 0.75]);
        let v = array![0.1, 0.2, 0.3, 0.4];
        assert_eq!(marginal(v.view(), &p, &idx, 0).unwrap(), v);
        let q = BoxPartition::new(vec![[0.0, 1.0], [0.0, 1.0]], vec![4, 4]).unwrap();
        let all: Vec<usize> = (0..16).collect();
        let m = marginal(Array1::from_elem(16, 1.0 / 16.0).view(), &q, &all, 1).unwrap();
        assert!(m.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(marginal(v.view(), &p, &idx, 1).is_err());
    }

    #[test]
    fn thinning_scales_dt() {
        let t = Trajectory::new(2, 0.01, (0..20).map(|k| k as f64).collect()).unwrap();
        let s = t.thinned(3);
        assert_eq!(s.len(), 4);
        assert_eq!(s.point(1), &[6.0, 7.0]);
        assert!((s.dt - 0.03).abs() < 1e-15);
    }
}
