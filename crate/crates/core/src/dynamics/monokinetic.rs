//! Monokinetic data `f = rho(x) delta(xi - v(x))` on a particle lattice, and
//! detection of the first crossing of neighbouring lattice particles (after
//! which the velocity is no longer single-valued).

use serde::{Deserialize, Serialize};

use super::{DynamicsError, ParticleEnsemble, Result};
use crate::vec3::{self, Vec3};

fn default_truncate() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityProfile {
    UniformBall { radius: f64 },
    Gaussian { sigma: f64, #[serde(default = "default_truncate")] truncate: f64 },
    /// Two Gaussians centred at `-separation/2` and `+separation/2` on the x axis.
    TwoBlob { separation: f64, sigma: f64, #[serde(default = "default_truncate")] truncate: f64 },
}

impl DensityProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityProfile::UniformBall { radius } => radius > 0.0 && radius.is_finite(),
            DensityProfile::Gaussian { sigma, truncate } => sigma > 0.0 && truncate > 0.0 && sigma.is_finite(),
            DensityProfile::TwoBlob { separation, sigma, truncate } => {
                separation >= 0.0 && sigma > 0.0 && truncate > 0.0 && separation.is_finite() && sigma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParameter(format!("invalid density profile {self:?}")))
        }
    }

    /// Unnormalized density; zero outside the support.
    pub fn value(&self, x: Vec3) -> f64 {
        let gauss = |c: Vec3, sigma: f64, truncate: f64| {
            let r2 = vec3::dist2(x, c) / (sigma * sigma);
            if r2 <= truncate * truncate {
                (-0.5 * r2).exp()
            } else {
                0.0
            }
        };
        match *self {
            DensityProfile::UniformBall { radius } => {
                if vec3::norm2(x) <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            DensityProfile::Gaussian { sigma, truncate } => gauss([0.0; 3], sigma, truncate),
            DensityProfile::TwoBlob { separation, sigma, truncate } => {
                gauss([-0.5 * separation, 0.0, 0.0], sigma, truncate)
                    + gauss([0.5 * separation, 0.0, 0.0], sigma, truncate)
            }
        }
    }

    /// Half extents of the bounding box of the support (centred at 0).
    pub fn half_extent(&self) -> Vec3 {
        match *self {
            DensityProfile::UniformBall { radius } => [radius; 3],
            DensityProfile::Gaussian { sigma, truncate } => [sigma * truncate; 3],
            DensityProfile::TwoBlob { separation, sigma, truncate } => {
                [0.5 * separation + sigma * truncate, sigma * truncate, sigma * truncate]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocityProfile {
    Zero,
    /// `v(x) = rate * x`.
    Hubble { rate: f64 },
    Uniform { velocity: Vec3 },
    /// `v(x) = -speed * sign(x_1) e_1`: the two half-spaces move towards each other.
    Converging { speed: f64 },
}

impl VelocityProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            VelocityProfile::Zero => true,
            VelocityProfile::Hubble { rate } => rate.is_finite(),
            VelocityProfile::Uniform { velocity } => vec3::is_finite(*velocity),
            VelocityProfile::Converging { speed } => speed.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParameter(format!("invalid velocity profile {self:?}")))
        }
    }

    pub fn value(&self, x: Vec3) -> Vec3 {
        match *self {
            VelocityProfile::Zero => [0.0; 3],
            VelocityProfile::Hubble { rate } => vec3::scale(x, rate),
            VelocityProfile::Uniform { velocity } => velocity,
            VelocityProfile::Converging { speed } => {
                if x[0] < 0.0 {
                    [speed, 0.0, 0.0]
                } else if x[0] > 0.0 {
                    [-speed, 0.0, 0.0]
                } else {
                    [0.0; 3]
                }
            }
        }
    }
}

/// Cell-centred lattice that generated a monokinetic ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub dims: [usize; 3],
    pub spacing: f64,
    /// Particle index of each lattice node (x-major, z fastest), if occupied.
    pub particle: Vec<Option<usize>>,
}

impl Lattice {
    /// Occupied neighbour pairs `(i, j, axis)` with `j` one node above `i`.
    pub fn neighbour_pairs(&self) -> Vec<(usize, usize, usize)> {
        let [nx, ny, nz] = self.dims;
        let idx = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let Some(p) = self.particle[idx(i, j, k)] else { continue };
                    let next = [(i + 1 < nx).then(|| idx(i + 1, j, k)), (j + 1 < ny).then(|| idx(i, j + 1, k)), (k + 1 < nz).then(|| idx(i, j, k + 1))];
                    for (axis, n) in next.iter().enumerate() {
                        if let Some(q) = n.and_then(|n| self.particle[n]) {
                            out.push((p, q, axis));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Lattice of about `n` nodes over the support's bounding box, keeping the
/// nodes where the density is positive. Weights are `rho(x_i) a^3`, rescaled
/// to `total_mass`; velocities are `v(x_i)`.
pub fn monokinetic_init(
    density: &DensityProfile,
    velocity: &VelocityProfile,
    n: usize,
    total_mass: f64,
    epsilon_sign: f64,
) -> Result<(ParticleEnsemble, Lattice)> {
    density.validate()?;
    velocity.validate()?;
    let half = density.half_extent();
    let volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let spacing = (volume / n.max(1) as f64).cbrt();
    let dims = half.map(|h| ((2.0 * h / spacing).round() as usize).max(1));
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    let mut particle = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let node = [i, j, k];
                let x: Vec3 = [0, 1, 2].map(|a| (node[a] as f64 + 0.5 - 0.5 * dims[a] as f64) * spacing);
                let rho = density.value(x);
                if rho > 0.0 {
                    particle.push(Some(positions.len()));
                    positions.push(x);
                    weights.push(rho);
                } else {
                    particle.push(None);
                }
            }
        }
    }
    if positions.is_empty() {
        return Err(DynamicsError::InvalidParameter("lattice does not meet the density support".into()));
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= total_mass / sum);
    let velocities = positions.iter().map(|x| velocity.value(*x)).collect();
    let e = ParticleEnsemble::new(positions, velocities, weights, epsilon_sign)?;
    Ok((e, Lattice { dims, spacing, particle }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    /// Linearly interpolated crossing time.
    pub t: f64,
    /// First step at which the crossing was seen.
    pub step: usize,
    pub pair: (usize, usize),
    pub axis: usize,
}

/// Watches the ordering of lattice neighbours along each axis.
#[derive(Debug, Clone)]
pub struct CrossingMonitor {
    pairs: Vec<(usize, usize, usize)>,
    gaps: Vec<f64>,
    t: f64,
    pub first: Option<CrossingEvent>,
}

impl CrossingMonitor {
    pub fn new(lattice: &Lattice, ensemble: &ParticleEnsemble) -> Self {
        let pairs = lattice.neighbour_pairs();
        let gaps = pairs.iter().map(|&(p, q, a)| ensemble.positions[q][a] - ensemble.positions[p][a]).collect();
        CrossingMonitor { pairs, gaps, t: ensemble.t, first: None }
    }

    /// Records the state after `step`; returns the first crossing once seen.
    pub fn update(&mut self, ensemble: &ParticleEnsemble, step: usize) -> Option<CrossingEvent> {
        let t_prev = self.t;
        let t_now = ensemble.t;
        let mut best: Option<CrossingEvent> = None;
        for (n, &(p, q, axis)) in self.pairs.iter().enumerate() {
            let gap = ensemble.positions[q][axis] - ensemble.positions[p][axis];
            let prev = self.gaps[n];
            if self.first.is_none() && prev > 0.0 && gap <= 0.0 {
                let t = t_prev + (t_now - t_prev) * prev / (prev - gap);
                if best.is_none_or(|b| t < b.t) {
                    best = Some(CrossingEvent { t, step, pair: (p, q), axis });
                }
            }
            self.gaps[n] = gap;
        }
        self.t = t_now;
        if self.first.is_none() {
            self.first = best;
        }
        self.first
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hubble_velocities_are_exact() {
        let (e, lattice) =
            monokinetic_init(&DensityProfile::UniformBall { radius: 1.0 }, &VelocityProfile::Hubble { rate: 0.7 }, 1000, 1.0, 1.0)
                .unwrap();
        for (x, v) in e.positions.iter().zip(&e.velocities) {
            assert_eq!(*v, vec3::scale(*x, 0.7));
        }
        assert!((e.mass() - 1.0).abs() < 1e-12);
        assert_eq!(lattice.particle.iter().flatten().count(), e.len());
    }

    #[test]
    fn positions_are_distinct_so_velocity_is_single_valued() {
        let (e, _) = monokinetic_init(
            &DensityProfile::TwoBlob { separation: 2.0, sigma: 0.3, truncate: 2.5 },
            &VelocityProfile::Converging { speed: 0.5 },
            2000,
            1.0,
            -1.0,
        )
        .unwrap();
        let mut pts: Vec<_> = e.positions.iter().map(|p| p.map(f64::to_bits)).collect();
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), e.len());
    }

    #[test]
    fn crossing_of_two_converging_particles() {
        let lattice = Lattice { dims: [2, 1, 1], spacing: 1.0, particle: vec![Some(0), Some(1)] };
        let mut e = ParticleEnsemble::new(
            vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
            vec![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let mut mon = CrossingMonitor::new(&lattice, &e);
        let dt = 0.2;
        let mut step = 0;
        let event = loop {
            step += 1;
            for (x, v) in e.positions.iter_mut().zip(&e.velocities) {
                *x = vec3::axpy(*x, dt, *v);
            }
            e.t += dt;
            if let Some(ev) = mon.update(&e, step) {
                break ev;
            }
        };
        assert_eq!(event.step, 3);
        assert!((event.t - 0.5).abs() < 1e-12);
        assert_eq!(event.axis, 0);
    }
}
