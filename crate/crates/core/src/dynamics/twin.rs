//! Two flows started from one particle sample.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{DynamicsError, FieldModel, FlowState, ParticleEnsemble, Result};
use crate::field::{GridSpec, PoissonSolver};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinLabel {
    A,
    B,
}

impl fmt::Display for TwinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TwinLabel::A => "A",
            TwinLabel::B => "B",
        })
    }
}

/// Change applied to one twin's copy of the sample at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    VelocityShift { delta: Vec3 },
    PositionShift { delta: Vec3 },
    /// Adds `magnitude * u_i` to each velocity, `u_i` uniform on the unit sphere.
    RandomVelocity { magnitude: f64, seed: u64 },
    /// Adds `magnitude * u_i` to each position, `u_i` uniform on the unit sphere.
    RandomPosition { magnitude: f64, seed: u64 },
}

impl Perturbation {
    pub fn apply(&self, e: &mut ParticleEnsemble) {
        let random = |magnitude: f64, seed: u64, target: &mut Vec<Vec3>| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for p in target.iter_mut() {
                let u: [f64; 3] = UnitSphere.sample(&mut rng);
                *p = vec3::axpy(*p, magnitude, u);
            }
        };
        match *self {
            Perturbation::None => {}
            Perturbation::VelocityShift { delta } => e.velocities.iter_mut().for_each(|v| *v = vec3::add(*v, delta)),
            Perturbation::PositionShift { delta } => e.positions.iter_mut().for_each(|x| *x = vec3::add(*x, delta)),
            Perturbation::RandomVelocity { magnitude, seed } => random(magnitude, seed, &mut e.velocities),
            Perturbation::RandomPosition { magnitude, seed } => random(magnitude, seed, &mut e.positions),
        }
    }

    /// Size of the perturbation (norm of the shift or the random magnitude).
    pub fn magnitude(&self) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::VelocityShift { delta } | Perturbation::PositionShift { delta } => vec3::norm(*delta),
            Perturbation::RandomVelocity { magnitude, .. } | Perturbation::RandomPosition { magnitude, .. } => *magnitude,
        }
    }

    /// The same perturbation with its size set to `magnitude`.
    pub fn with_magnitude(&self, magnitude: f64) -> Perturbation {
        let rescale = |d: Vec3| {
            let n = vec3::norm(d);
            if n == 0.0 {
                d
            } else {
                vec3::scale(d, magnitude / n)
            }
        };
        match self.clone() {
            Perturbation::None => Perturbation::None,
            Perturbation::VelocityShift { delta } => Perturbation::VelocityShift { delta: rescale(delta) },
            Perturbation::PositionShift { delta } => Perturbation::PositionShift { delta: rescale(delta) },
            Perturbation::RandomVelocity { seed, .. } => Perturbation::RandomVelocity { magnitude, seed },
            Perturbation::RandomPosition { seed, .. } => Perturbation::RandomPosition { magnitude, seed },
        }
    }
}

/// One side of a twin run.
#[derive(Debug, Clone)]
pub struct TwinVariant {
    pub model: FieldModel,
    /// Monitoring grid for models without their own grid.
    pub monitor: Option<GridSpec>,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinSummary {
    pub steps: usize,
    pub t_end: f64,
}

type ObserverResult = std::result::Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn labeled(label: TwinLabel) -> impl Fn(DynamicsError) -> DynamicsError {
    move |e| DynamicsError::Twin { label, source: Box::new(e) }
}

fn build(sample: &ParticleEnsemble, v: &TwinVariant, shared: Option<&Arc<PoissonSolver>>) -> Result<FlowState> {
    let mut e = sample.clone();
    v.perturbation.apply(&mut e);
    match (&v.model, shared) {
        (FieldModel::Grid(spec), Some(s)) if s.spec() == spec => FlowState::with_solver(e, Arc::clone(s)),
        _ => FlowState::new(e, v.model.clone(), v.monitor),
    }
}

/// Runs both twins for `steps` steps of size `dt` from copies of `sample`
/// (each with its variant's perturbation). `observer` sees the pair after
/// construction and after every step. Identical variants give bitwise
/// identical trajectories.
pub fn run_twin<F>(
    sample: &ParticleEnsemble,
    a: &TwinVariant,
    b: &TwinVariant,
    dt: f64,
    steps: usize,
    enforce_dt_rule: bool,
    mut observer: F,
) -> Result<TwinSummary>
where
    F: FnMut(&FlowState, &FlowState) -> ObserverResult,
{
    let shared = match (&a.model, &b.model) {
        (FieldModel::Grid(sa), FieldModel::Grid(sb)) if sa == sb => Some(Arc::new(PoissonSolver::new(*sa))),
        _ => None,
    };
    let mut fa = build(sample, a, shared.as_ref()).map_err(labeled(TwinLabel::A))?;
    let mut fb = build(sample, b, shared.as_ref()).map_err(labeled(TwinLabel::B))?;
    fa.set_enforce_dt_rule(enforce_dt_rule);
    fb.set_enforce_dt_rule(enforce_dt_rule);
    observer(&fa, &fb).map_err(DynamicsError::Observer)?;
    for _ in 0..steps {
        let (ra, rb) = rayon::join(|| fa.step_leapfrog(dt), || fb.step_leapfrog(dt));
        ra.map_err(labeled(TwinLabel::A))?;
        rb.map_err(labeled(TwinLabel::B))?;
        observer(&fa, &fb).map_err(DynamicsError::Observer)?;
    }
    Ok(TwinSummary { steps, t_end: fa.t() })
}
