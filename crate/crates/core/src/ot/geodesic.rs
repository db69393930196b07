//! Displacement interpolation along an optimal plan and the sup-norm check
//! along the resulting path.

use super::{sq_dist, OtError, Result, TransportPlan, WeightedCloud};
use crate::field::{cic_deposit, GridSpec};

/// Default relative slack allowed on `max_theta ||rho_theta||_inf`.
pub const DEFAULT_GEODESIC_TOLERANCE: f64 = 0.10;

/// Default number of equispaced theta samples in `[1, 2]`.
pub const DEFAULT_THETA_SAMPLES: usize = 11;

/// Relative change of an endpoint sup-norm between the grid and its 2x
/// coarsening above which the grid is considered unresolved.
pub const REFINEMENT_INSTABILITY: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct GeodesicSample {
    pub theta: f64,
    pub cloud: WeightedCloud,
    /// `sum m |y - x|^2` over the plan entries; does not depend on theta.
    pub kinetic_energy: f64,
}

/// Moves each plan entry `(x, y, m)` to `(2 - theta) x + (theta - 1) y`.
///
/// The point is evaluated from the nearer endpoint so that `theta = 1` and
/// `theta = 2` reproduce the source and target coordinates bit for bit.
pub fn displacement_interpolate(plan: &TransportPlan, theta: f64) -> Result<GeodesicSample> {
    if !(1.0..=2.0).contains(&theta) {
        return Err(OtError::ThetaOutOfRange(theta));
    }
    let (src, dst) = (plan.source(), plan.target());
    let dim = src.dim();
    let mut coords = Vec::with_capacity(plan.entries().len() * dim);
    let mut weights = Vec::with_capacity(plan.entries().len());
    let mut kinetic_energy = 0.0;
    for e in plan.entries() {
        let (x, y) = (src.point(e.source), dst.point(e.target));
        kinetic_energy += e.mass * sq_dist(x, y);
        if e.mass <= 0.0 {
            continue;
        }
        if theta <= 1.5 {
            coords.extend(x.iter().zip(y).map(|(a, b)| a + (theta - 1.0) * (b - a)));
        } else {
            coords.extend(x.iter().zip(y).map(|(a, b)| b + (2.0 - theta) * (a - b)));
        }
        weights.push(e.mass);
    }
    let cloud = WeightedCloud::new(dim, coords, weights)?;
    Ok(GeodesicSample { theta, cloud, kinetic_energy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeodesicStatus {
    Pass,
    Violation,
    /// An endpoint sup-norm is not stable between the grid and its 2x coarsening.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct GeodesicLinfReport {
    pub thetas: Vec<f64>,
    pub sup_norms: Vec<f64>,
    pub kinetic_energies: Vec<f64>,
    pub source_sup: f64,
    pub target_sup: f64,
    /// Endpoint sup-norms on the 2x coarser grid.
    pub coarse_source_sup: f64,
    pub coarse_target_sup: f64,
    pub ratio: f64,
    pub tolerance: f64,
    pub status: GeodesicStatus,
}

impl GeodesicLinfReport {
    /// Largest relative spread of the kinetic energy over the samples.
    pub fn kinetic_energy_spread(&self) -> f64 {
        let k0 = self.kinetic_energies[0];
        let spread = self.kinetic_energies.iter().map(|k| (k - k0).abs()).fold(0.0, f64::max);
        if k0 == 0.0 {
            spread
        } else {
            spread / k0.abs()
        }
    }
}

pub fn equispaced_thetas(count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![1.0],
        _ => (0..count).map(|k| 1.0 + k as f64 / (count - 1) as f64).collect(),
    }
}

fn deposit_sup(cloud: &WeightedCloud, grid: &GridSpec) -> Result<f64> {
    let rho = cic_deposit(&cloud.positions3(), cloud.weights(), grid, 1.0)?;
    Ok(rho.sup())
}

/// Deposits the displacement path at each theta and compares its sup-norm
/// with the larger endpoint sup-norm.
pub fn geodesic_linf_check(
    plan: &TransportPlan,
    thetas: &[f64],
    grid: &GridSpec,
    tolerance: f64,
) -> Result<GeodesicLinfReport> {
    if plan.source().dim() != 3 {
        return Err(OtError::DimensionMismatch(3, plan.source().dim()));
    }
    if thetas.is_empty() {
        return Err(OtError::InvalidParameter("no theta samples".into()));
    }
    let source_sup = deposit_sup(plan.source(), grid)?;
    let target_sup = deposit_sup(plan.target(), grid)?;
    let coarse = grid.coarsened();
    let coarse_source_sup = deposit_sup(plan.source(), &coarse)?;
    let coarse_target_sup = deposit_sup(plan.target(), &coarse)?;

    let mut sup_norms = Vec::with_capacity(thetas.len());
    let mut kinetic_energies = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let sample = displacement_interpolate(plan, theta)?;
        sup_norms.push(deposit_sup(&sample.cloud, grid)?);
        kinetic_energies.push(sample.kinetic_energy);
    }
    let endpoint = source_sup.max(target_sup);
    let path_max = sup_norms.iter().copied().fold(0.0, f64::max);
    let ratio = if endpoint > 0.0 { path_max / endpoint } else { 1.0 };

    let unstable = |fine: f64, coarse: f64| fine > 0.0 && ((fine - coarse).abs() / fine) > REFINEMENT_INSTABILITY;
    let status = if unstable(source_sup, coarse_source_sup) || unstable(target_sup, coarse_target_sup) {
        GeodesicStatus::Inconclusive
    } else if ratio <= 1.0 + tolerance {
        GeodesicStatus::Pass
    } else {
        GeodesicStatus::Violation
    };
    Ok(GeodesicLinfReport {
        thetas: thetas.to_vec(),
        sup_norms,
        kinetic_energies,
        source_sup,
        target_sup,
        coarse_source_sup,
        coarse_target_sup,
        ratio,
        tolerance,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{w2_exact, PlanEntry};

    #[test]
    fn endpoints_are_exact() {
        let a = WeightedCloud::uniform(3, vec![0.1, 0.2, 0.3, 0.7, -0.4, 0.9], 1.0).unwrap();
        let b = WeightedCloud::uniform(3, vec![1.3, 0.25, -0.3, 0.35, 0.45, 0.15], 1.0).unwrap();
        let (_, plan) = w2_exact(&a, &b).unwrap();
        let s1 = displacement_interpolate(&plan, 1.0).unwrap();
        let s2 = displacement_interpolate(&plan, 2.0).unwrap();
        assert_eq!(s1.cloud.canonicalize(), a.canonicalize());
        assert_eq!(s2.cloud.canonicalize(), b.canonicalize());
    }

    #[test]
    fn midpoint_of_two_points() {
        let a = WeightedCloud::new(3, vec![0.0, 0.0, 0.0], vec![1.0]).unwrap();
        let b = WeightedCloud::new(3, vec![2.0, 4.0, -2.0], vec![1.0]).unwrap();
        let plan = TransportPlan::new(a, b, vec![PlanEntry { source: 0, target: 0, mass: 1.0 }]).unwrap();
        let s = displacement_interpolate(&plan, 1.5).unwrap();
        assert_eq!(s.cloud.point(0), &[1.0, 2.0, -1.0]);
        assert_eq!(s.cloud.weights(), &[1.0]);
        assert_eq!(s.kinetic_energy, 24.0);
    }

    #[test]
    fn theta_range_enforced() {
        let a = WeightedCloud::new(3, vec![0.0; 3], vec![1.0]).unwrap();
        let plan = TransportPlan::identity_pairing(a.clone(), a).unwrap();
        assert!(matches!(displacement_interpolate(&plan, 0.99), Err(OtError::ThetaOutOfRange(_))));
        assert!(matches!(displacement_interpolate(&plan, 2.01), Err(OtError::ThetaOutOfRange(_))));
    }

    #[test]
    fn thetas_are_equispaced() {
        let t = equispaced_thetas(DEFAULT_THETA_SAMPLES);
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], 1.0);
        assert_eq!(t[10], 2.0);
        assert!((t[5] - 1.5).abs() < 1e-15);
    }
}
