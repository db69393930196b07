//! Seeded samples of initial data `f0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::monokinetic::{monokinetic_init, DensityProfile, Lattice, VelocityProfile};
use super::{DynamicsError, ParticleEnsemble, Result};
use crate::vec3::{self, Vec3};

fn default_truncate() -> f64 {
    3.0
}

/// Initial phase-space density. Kinetic specs are sampled with equal
/// weights `M / N`; the monokinetic spec is a weighted lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Isotropic Gaussian in position (cut at `truncate` sigmas) and in velocity.
    GaussianBlob {
        sigma: f64,
        velocity_sigma: f64,
        #[serde(default = "default_truncate")]
        truncate: f64,
        #[serde(default)]
        center: Vec3,
        #[serde(default)]
        drift: Vec3,
    },
    /// Uniform ball in position, Gaussian in velocity.
    UniformBall {
        radius: f64,
        velocity_sigma: f64,
        #[serde(default)]
        center: Vec3,
    },
    /// One Gaussian blob, half the particles drifting at `+stream_speed`
    /// along x and half at `-stream_speed`.
    TwoStream { sigma: f64, stream_speed: f64, velocity_sigma: f64, #[serde(default = "default_truncate")] truncate: f64 },
    /// Two Gaussian blobs centred at `-separation/2` and `+separation/2` on
    /// the x axis, approaching each other at `approach_speed`.
    TwoBlob {
        separation: f64,
        sigma: f64,
        velocity_sigma: f64,
        #[serde(default)]
        approach_speed: f64,
        #[serde(default = "default_truncate")]
        truncate: f64,
    },
    /// `f = rho(x) delta(xi - v(x))` on a lattice of about `N` nodes.
    Monokinetic { density: DensityProfile, velocity: VelocityProfile },
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

fn truncated_gaussian3(rng: &mut ChaCha8Rng, sigma: f64, truncate: f64) -> Vec3 {
    loop {
        let g = gaussian3(rng);
        if vec3::norm2(g) <= truncate * truncate {
            return vec3::scale(g, sigma);
        }
    }
}

fn uniform_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    loop {
        let p: Vec3 = [0, 1, 2].map(|_| 2.0 * rng.random::<f64>() - 1.0);
        if vec3::norm2(p) <= 1.0 {
            return vec3::scale(p, radius);
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(format!("{name} must be nonnegative, got {v}")))
    }
}

impl InitialSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialSpec::GaussianBlob { sigma, velocity_sigma, truncate, .. } => {
                positive("sigma", *sigma)?;
                nonnegative("velocity_sigma", *velocity_sigma)?;
                positive("truncate", *truncate)
            }
            InitialSpec::UniformBall { radius, velocity_sigma, .. } => {
                positive("radius", *radius)?;
                nonnegative("velocity_sigma", *velocity_sigma)
            }
            InitialSpec::TwoStream { sigma, stream_speed, velocity_sigma, truncate } => {
                positive("sigma", *sigma)?;
                nonnegative("stream_speed", *stream_speed)?;
                nonnegative("velocity_sigma", *velocity_sigma)?;
                positive("truncate", *truncate)
            }
            InitialSpec::TwoBlob { separation, sigma, velocity_sigma, approach_speed, truncate } => {
                nonnegative("separation", *separation)?;
                positive("sigma", *sigma)?;
                nonnegative("velocity_sigma", *velocity_sigma)?;
                nonnegative("approach_speed", *approach_speed)?;
                positive("truncate", *truncate)
            }
            InitialSpec::Monokinetic { density, velocity } => {
                density.validate()?;
                velocity.validate()
            }
        }
    }
}

/// Draws `n` particles of total mass `total_mass` from `spec` with a
/// ChaCha8 stream seeded by `seed`. Returns the lattice for monokinetic data.
pub fn sample_initial(
    spec: &InitialSpec,
    n: usize,
    total_mass: f64,
    epsilon_sign: f64,
    seed: u64,
) -> Result<(ParticleEnsemble, Option<Lattice>)> {
    spec.validate()?;
    if n == 0 {
        return Err(DynamicsError::InvalidParameter("particle count must be at least 1".into()));
    }
    positive("total mass", total_mass)?;
    if let InitialSpec::Monokinetic { density, velocity } = spec {
        let (e, lattice) = monokinetic_init(density, velocity, n, total_mass, epsilon_sign)?;
        return Ok((e, Some(lattice)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let (x, v) = match *spec {
            InitialSpec::GaussianBlob { sigma, velocity_sigma, truncate, center, drift } => {
                let x = vec3::add(center, truncated_gaussian3(&mut rng, sigma, truncate));
                let v = vec3::axpy(drift, velocity_sigma, gaussian3(&mut rng));
                (x, v)
            }
            InitialSpec::UniformBall { radius, velocity_sigma, center } => {
                let x = vec3::add(center, uniform_ball(&mut rng, radius));
                (x, vec3::scale(gaussian3(&mut rng), velocity_sigma))
            }
            InitialSpec::TwoStream { sigma, stream_speed, velocity_sigma, truncate } => {
                let x = truncated_gaussian3(&mut rng, sigma, truncate);
                let u = if i % 2 == 0 { stream_speed } else { -stream_speed };
                (x, vec3::axpy([u, 0.0, 0.0], velocity_sigma, gaussian3(&mut rng)))
            }
            InitialSpec::TwoBlob { separation, sigma, velocity_sigma, approach_speed, truncate } => {
                let side = if i < n / 2 { -1.0 } else { 1.0 };
                let x = vec3::add([0.5 * side * separation, 0.0, 0.0], truncated_gaussian3(&mut rng, sigma, truncate));
                let v = vec3::axpy([-0.5 * side * approach_speed, 0.0, 0.0], velocity_sigma, gaussian3(&mut rng));
                (x, v)
            }
            InitialSpec::Monokinetic { .. } => unreachable!("handled above"),
        };
        positions.push(x);
        velocities.push(v);
    }
    let e = ParticleEnsemble::new(positions, velocities, vec![total_mass / n as f64; n], epsilon_sign)?;
    Ok((e, None))
}
