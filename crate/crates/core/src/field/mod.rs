//! Free-space Poisson fields.
//!
//! Sign convention: `Psi(x) = -eps * sum_j m_j / (4 pi |x - y_j|)`, so the
//! field `grad Psi` points away from positive mass when `eps = +1`
//! (repulsive) and towards it when `eps = -1` (attractive). Particles are
//! accelerated by `grad Psi`.
//!
//! Grid quantities live on the nodes `lower + h * (i, j, k)`, stored x-major
//! with z fastest.

mod grid;
pub mod io;
mod loglip;
mod norms;
mod poisson;

use rayon::prelude::*;
use thiserror::Error;

use crate::ot::WeightedCloud;
use crate::vec3::{self, Vec3};

pub use grid::{cic_deposit, GridDensity, GridField, GridScalar, GridSpec};
pub use loglip::{loglip_modulus, LogLipReport};
pub use norms::{field_l2_diff, field_l2_norm, t2_grid_quadrature, FieldL2};
pub use poisson::PoissonSolver;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{} particle(s) outside the grid box, first indices {:?}", .indices.len(), &.indices[..(.indices.len().min(8))])]
    Escaped { indices: Vec<usize> },

    #[error("{} evaluation point(s) outside the field box, first indices {:?}", .points.len(), &.points[..(.points.len().min(8))])]
    OutsideBox { points: Vec<usize> },

    #[error("target {target} coincides with unsoftened source {source_index}")]
    Singularity { target: usize, source_index: usize },

    #[error("grid geometry mismatch")]
    GeometryMismatch,

    #[error("no valid sample pairs with separation in (0, 1/2)")]
    NoValidPairs,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("malformed grid dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// Cell-averaged value of `1/|x|` over the unit cube `[-1/2, 1/2]^3`; used
/// as the self term of the discrete Green kernel.
pub const UNIT_CUBE_MEAN_INV_DIST: f64 = 2.380077363979553;

/// Plummer-type regularization `|x - y|^2 -> |x - y|^2 + length^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SofteningSpec {
    pub length: f64,
}

impl SofteningSpec {
    pub const NONE: SofteningSpec = SofteningSpec { length: 0.0 };

    pub fn new(length: f64) -> Self {
        assert!(length >= 0.0 && length.is_finite(), "softening length must be finite and >= 0");
        SofteningSpec { length }
    }

    /// Default tie to the deposition cell size: `h / 2`.
    pub fn for_cell(h: f64) -> Self {
        Self::new(0.5 * h)
    }
}

/// Anything that can be evaluated as `grad Psi` at a point.
pub trait VectorField: Sync {
    fn eval(&self, x: Vec3) -> Result<Vec3>;

    /// Evaluates every point; points outside the domain are collected into a
    /// single [`FieldError::OutsideBox`].
    fn eval_many(&self, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        let results: Vec<Result<Vec3>> = xs.par_iter().map(|&x| self.eval(x)).collect();
        let mut out = Vec::with_capacity(xs.len());
        let mut outside = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(FieldError::OutsideBox { .. }) => outside.push(i),
                Err(e) => return Err(e),
            }
        }
        if outside.is_empty() {
            Ok(out)
        } else {
            Err(FieldError::OutsideBox { points: outside })
        }
    }
}

/// Wraps a closure as a [`VectorField`] defined everywhere.
pub struct FnField<F>(pub F);

impl<F: Fn(Vec3) -> Vec3 + Sync> VectorField for FnField<F> {
    fn eval(&self, x: Vec3) -> Result<Vec3> {
        Ok((self.0)(x))
    }
}

/// Exact pairwise sum
/// `grad Psi(x) = eps * sum_j w_j (x - y_j) / (4 pi (|x - y_j|^2 + s^2)^{3/2})`.
///
/// Sources are summed in index order for every target.
pub fn solve_field_direct(
    sources: &WeightedCloud,
    targets: &[Vec3],
    softening: SofteningSpec,
    epsilon_sign: f64,
) -> Result<Vec<Vec3>> {
    if sources.dim() != 3 {
        return Err(FieldError::InvalidGrid(format!("sources must be 3-d, got {}", sources.dim())));
    }
    if targets.iter().any(|t| !vec3::is_finite(*t)) {
        return Err(FieldError::NonFinite("target coordinates".into()));
    }
    let src = sources.positions3();
    let w = sources.weights();
    direct_sum(&src, w, targets, softening, epsilon_sign, None)
}

pub(crate) fn direct_sum(
    src: &[Vec3],
    w: &[f64],
    targets: &[Vec3],
    softening: SofteningSpec,
    epsilon_sign: f64,
    skip_self: Option<()>,
) -> Result<Vec<Vec3>> {
    let s2 = softening.length * softening.length;
    let k = epsilon_sign / (4.0 * std::f64::consts::PI);
    let results: Vec<Result<Vec3>> = targets
        .par_iter()
        .enumerate()
        .map(|(ti, &x)| {
            let mut acc = [0.0; 3];
            for (j, (&y, &wj)) in src.iter().zip(w).enumerate() {
                if skip_self.is_some() && j == ti {
                    continue;
                }
                let d = vec3::sub(x, y);
                let r2 = vec3::norm2(d) + s2;
                if r2 == 0.0 {
                    return Err(FieldError::Singularity { target: ti, source_index: j });
                }
                let inv = wj / (r2 * r2.sqrt());
                acc = vec3::axpy(acc, inv, d);
            }
            Ok(vec3::scale(acc, k))
        })
        .collect();
    results.into_iter().collect()
}

/// Field of every particle on every other particle (self pair excluded).
pub fn direct_self_field(positions: &[Vec3], weights: &[f64], softening: SofteningSpec, epsilon_sign: f64) -> Result<Vec<Vec3>> {
    direct_sum(positions, weights, positions, softening, epsilon_sign, Some(()))
}

/// `1/2 sum_{i != j} w_i w_j eps / (4 pi sqrt(|x_i - x_j|^2 + s^2))`, the
/// interaction energy matching [`direct_self_field`].
pub fn direct_potential_energy(positions: &[Vec3], weights: &[f64], softening: SofteningSpec, epsilon_sign: f64) -> f64 {
    let s2 = softening.length * softening.length;
    let mut total = 0.0;
    for i in 0..positions.len() {
        let mut row = 0.0;
        for j in (i + 1)..positions.len() {
            let r2 = vec3::dist2(positions[i], positions[j]) + s2;
            if r2 > 0.0 {
                row += weights[j] / r2.sqrt();
            }
        }
        total += weights[i] * row;
    }
    epsilon_sign * total / (4.0 * std::f64::consts::PI)
}
