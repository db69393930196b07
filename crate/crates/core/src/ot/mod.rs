//! Discrete optimal transport between weighted point clouds.
//!
//! [`w2_exact`] dispatches to a dense Hungarian solver when both clouds carry
//! the same number of equally weighted points, and to a transportation network
//! simplex otherwise. [`w2_sinkhorn`] is the log-domain entropic approximation.
//! Both return a [`TransportPlan`] that keeps copies of its marginals so that
//! [`displacement_interpolate`] can rebuild the McCann path from the plan alone.

mod assignment;
mod geodesic;
pub mod io;
mod simplex;
mod sinkhorn;

use thiserror::Error;

pub use geodesic::{
    displacement_interpolate, equispaced_thetas, geodesic_linf_check, GeodesicLinfReport, GeodesicSample,
    GeodesicStatus, DEFAULT_GEODESIC_TOLERANCE, DEFAULT_THETA_SAMPLES, REFINEMENT_INSTABILITY,
};
pub use sinkhorn::{w2_sinkhorn, DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_REGULARIZATION, DEFAULT_SINKHORN_TOL};

/// Largest cloud (per side) accepted by the exact solvers.
pub const MAX_EXACT_POINTS: usize = 4096;

/// Relative tolerance on the equality of total masses.
pub const MASS_MATCH_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("cloud is empty")]
    EmptyCloud,

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("coordinate buffer of length {len} is not a multiple of dimension {dim}")]
    RaggedCoordinates { len: usize, dim: usize },

    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },

    #[error("weight {index} is not strictly positive and finite: {value}")]
    BadWeight { index: usize, value: f64 },

    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("cloud of {0} points exceeds the exact-solver guard of {MAX_EXACT_POINTS}")]
    TooLarge(usize),

    #[error("exact solver did not reach optimality after {0} pivots")]
    NotConverged(usize),

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("theta {0} outside [1, 2]")]
    ThetaOutOfRange(f64),

    #[error(transparent)]
    Field(#[from] crate::field::FieldError),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OtError>;

/// Positively weighted point cloud in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl WeightedCloud {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(OtError::RaggedCoordinates { len: coords.len(), dim });
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(OtError::EmptyCloud);
        }
        if weights.len() != n {
            return Err(OtError::WeightCount { expected: n, got: weights.len() });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(OtError::BadWeight { index, value });
            }
        }
        for (index, p) in coords.chunks_exact(dim).enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(OtError::NonFinitePoint { index });
            }
        }
        let total_mass = weights.iter().sum();
        Ok(WeightedCloud { dim, coords, weights, total_mass })
    }

    /// Cloud of `points` sharing `total_mass` equally.
    pub fn uniform(dim: usize, coords: Vec<f64>, total_mass: f64) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(OtError::RaggedCoordinates { len: coords.len(), dim });
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(OtError::EmptyCloud);
        }
        Self::new(dim, coords, vec![total_mass / n as f64; n])
    }

    pub fn from_points3(points: &[[f64; 3]], weights: Vec<f64>) -> Result<Self> {
        Self::new(3, points.iter().flatten().copied().collect(), weights)
    }

    /// Phase-space cloud `(x, xi)` in `R^6`.
    pub fn from_phase_space(positions: &[[f64; 3]], velocities: &[[f64; 3]], weights: Vec<f64>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(OtError::WeightCount { expected: positions.len(), got: velocities.len() });
        }
        let mut coords = Vec::with_capacity(positions.len() * 6);
        for (x, v) in positions.iter().zip(velocities) {
            coords.extend_from_slice(x);
            coords.extend_from_slice(v);
        }
        Self::new(6, coords, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// First three coordinates of every point.
    pub fn positions3(&self) -> Vec<[f64; 3]> {
        assert!(self.dim >= 3, "cloud has fewer than three coordinates");
        self.points().map(|p| [p[0], p[1], p[2]]).collect()
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(OtError::DimensionMismatch(self.dim, shift.len()));
        }
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self::new(self.dim, coords, self.weights.clone())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.points().zip(&self.weights) {
            for (acc, c) in m.iter_mut().zip(p) {
                *acc += w * c;
            }
        }
        m.iter_mut().for_each(|c| *c /= self.total_mass);
        m
    }

    /// Merges exactly coincident points and sorts them lexicographically, giving
    /// a canonical representative of the underlying discrete measure.
    pub fn canonicalize(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut coords: Vec<f64> = Vec::with_capacity(self.coords.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        for i in order {
            let p = self.point(i);
            let n = weights.len();
            if n > 0 && &coords[(n - 1) * self.dim..] == p {
                weights[n - 1] += self.weights[i];
            } else {
                coords.extend_from_slice(p);
                weights.push(self.weights[i]);
            }
        }
        let total_mass = weights.iter().sum();
        WeightedCloud { dim: self.dim, coords, weights, total_mass }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Discrete coupling between two clouds, with quadratic cost.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    source: WeightedCloud,
    target: WeightedCloud,
    entries: Vec<PlanEntry>,
    cost: f64,
}

impl TransportPlan {
    /// Builds a plan and computes its cost `sum m |x - y|^2` in entry order.
    pub fn new(source: WeightedCloud, target: WeightedCloud, entries: Vec<PlanEntry>) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(OtError::DimensionMismatch(source.dim(), target.dim()));
        }
        for e in &entries {
            if e.source >= source.len() || e.target >= target.len() || !(e.mass >= 0.0) {
                return Err(OtError::InvalidParameter(format!(
                    "plan entry ({}, {}, {}) is out of range or negative",
                    e.source, e.target, e.mass
                )));
            }
        }
        let cost = entries
            .iter()
            .map(|e| e.mass * sq_dist(source.point(e.source), target.point(e.target)))
            .sum();
        Ok(TransportPlan { source, target, entries, cost })
    }

    /// The pairing `i -> i` between two index-aligned clouds, weighted by the
    /// source weights.
    pub fn identity_pairing(source: WeightedCloud, target: WeightedCloud) -> Result<Self> {
        if source.len() != target.len() {
            return Err(OtError::WeightCount { expected: source.len(), got: target.len() });
        }
        let entries = source
            .weights()
            .iter()
            .enumerate()
            .map(|(i, &mass)| PlanEntry { source: i, target: i, mass })
            .collect();
        Self::new(source, target, entries)
    }

    pub fn source(&self) -> &WeightedCloud {
        &self.source
    }

    pub fn target(&self) -> &WeightedCloud {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }

    /// Largest relative deviation of the row and column sums from the
    /// source and target weights.
    pub fn marginal_error(&self) -> f64 {
        let mut rows = vec![0.0; self.source.len()];
        let mut cols = vec![0.0; self.target.len()];
        for e in &self.entries {
            rows[e.source] += e.mass;
            cols[e.target] += e.mass;
        }
        let scale = self.source.total_mass().max(self.target.total_mass());
        let row_err = rows.iter().zip(self.source.weights()).map(|(r, w)| (r - w).abs()).fold(0.0, f64::max);
        let col_err = cols.iter().zip(self.target.weights()).map(|(c, w)| (c - w).abs()).fold(0.0, f64::max);
        row_err.max(col_err) / scale
    }
}

/// Exact solution together with the dual potentials that certify it:
/// `u_i + v_j <= |x_i - y_j|^2` everywhere, with equality on the support.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
    pub method: ExactMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMethod {
    Assignment,
    NetworkSimplex,
}

impl ExactSolution {
    /// Dual objective `sum a_i u_i + sum b_j v_j`.
    pub fn dual_objective(&self) -> f64 {
        let a: f64 = self.plan.source.weights().iter().zip(&self.source_potential).map(|(w, u)| w * u).sum();
        let b: f64 = self.plan.target.weights().iter().zip(&self.target_potential).map(|(w, v)| w * v).sum();
        a + b
    }

    /// Largest violation of `u_i + v_j <= c_ij` over all pairs.
    pub fn dual_infeasibility(&self) -> f64 {
        let (s, t) = (&self.plan.source, &self.plan.target);
        let mut worst: f64 = 0.0;
        for i in 0..s.len() {
            for j in 0..t.len() {
                let r = self.source_potential[i] + self.target_potential[j] - sq_dist(s.point(i), t.point(j));
                worst = worst.max(r);
            }
        }
        worst
    }
}

fn check_pair(a: &WeightedCloud, b: &WeightedCloud) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(OtError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (ma, mb) = (a.total_mass(), b.total_mass());
    if (ma - mb).abs() > MASS_MATCH_RTOL * ma.max(mb) {
        return Err(OtError::MassMismatch(ma, mb));
    }
    Ok(())
}

fn uniform_weights(c: &WeightedCloud) -> bool {
    let w0 = c.weights()[0];
    c.weights().iter().all(|&w| (w - w0).abs() <= 1e-12 * w0)
}

pub(crate) fn cost_matrix(a: &WeightedCloud, b: &WeightedCloud) -> Vec<f64> {
    use rayon::prelude::*;
    let m = b.len();
    let mut cost = vec![0.0; a.len() * m];
    cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let x = a.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = sq_dist(x, b.point(j));
        }
    });
    cost
}

/// Exact `W2` with its dual certificate.
pub fn solve_exact(a: &WeightedCloud, b: &WeightedCloud) -> Result<ExactSolution> {
    check_pair(a, b)?;
    for c in [a, b] {
        if c.len() > MAX_EXACT_POINTS {
            return Err(OtError::TooLarge(c.len()));
        }
    }
    if a.len() == b.len() && uniform_weights(a) && uniform_weights(b) {
        assignment::solve(a, b)
    } else {
        simplex::solve(a, b)
    }
}

/// Exact quadratic Wasserstein distance and an optimal plan.
pub fn w2_exact(a: &WeightedCloud, b: &WeightedCloud) -> Result<(f64, TransportPlan)> {
    let sol = solve_exact(a, b)?;
    Ok((sol.plan.distance(), sol.plan))
}
