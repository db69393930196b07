//! Characteristic flow `X' = xi`, `xi' = grad Psi(t, X)` for a weighted
//! particle sample of `f`.
//!
//! A [`FlowState`] owns an ensemble and a [`FieldModel`]. The default model
//! deposits the particles on a grid (cloud-in-cell), solves the free-space
//! Poisson problem by FFT and interpolates the field back trilinearly; the
//! direct softened sum, a frozen external field and the zero field are the
//! alternatives. Time stepping is kick-drift-kick leapfrog.

mod monokinetic;
mod sampling;
mod twin;

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{
    self, cic_deposit, FieldError, GridDensity, GridField, GridSpec, PoissonSolver, SofteningSpec, VectorField,
};
use crate::ot::{OtError, WeightedCloud};
use crate::vec3::{self, Vec3};

pub use monokinetic::{monokinetic_init, CrossingEvent, CrossingMonitor, DensityProfile, Lattice, VelocityProfile};
pub use sampling::{sample_initial, InitialSpec};
pub use twin::{run_twin, Perturbation, TwinLabel, TwinSummary, TwinVariant};

/// Safety factor in the step-size rule `dt <= DT_SAFETY / sqrt(max |grad grad Psi|)`.
pub const DT_SAFETY: f64 = 0.1;

/// Relative tolerance on the deposited mass against the ensemble mass.
pub const DEPOSIT_MASS_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("non-finite phase-space coordinates after step {step} (particles {indices:?})")]
    Divergence { step: usize, indices: Vec<usize> },

    #[error("step {step}: dt {dt:e} exceeds the stability limit {limit:e}")]
    TimeStep { step: usize, dt: f64, limit: f64 },

    #[error("step {step}: {source}")]
    Field {
        step: usize,
        #[source]
        source: FieldError,
    },

    #[error("twin {label}: {source}")]
    Twin {
        label: TwinLabel,
        #[source]
        source: Box<DynamicsError>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observer failed: {0}")]
    Observer(Box<dyn std::error::Error + Send + Sync>),
}

impl DynamicsError {
    /// True for failures caused by the numerics (divergence, escape, step
    /// size) rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            DynamicsError::Divergence { .. } | DynamicsError::TimeStep { .. } | DynamicsError::Field { .. } => true,
            DynamicsError::Twin { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Weighted sample of `f(t)` in phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub t: f64,
    pub epsilon_sign: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>, weights: Vec<f64>, epsilon_sign: f64) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(DynamicsError::InvalidEnsemble("no particles".into()));
        }
        if velocities.len() != n || weights.len() != n {
            return Err(DynamicsError::InvalidEnsemble(format!(
                "{n} positions, {} velocities, {} weights",
                velocities.len(),
                weights.len()
            )));
        }
        if epsilon_sign != 1.0 && epsilon_sign != -1.0 {
            return Err(DynamicsError::InvalidEnsemble(format!("epsilon sign must be +1 or -1, got {epsilon_sign}")));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(DynamicsError::InvalidEnsemble(format!("weight {i} is not positive")));
        }
        if let Some(i) = (0..n).find(|&i| !vec3::is_finite(positions[i]) || !vec3::is_finite(velocities[i])) {
            return Err(DynamicsError::InvalidEnsemble(format!("particle {i} has non-finite coordinates")));
        }
        Ok(ParticleEnsemble { positions, velocities, weights, t: 0.0, epsilon_sign })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn momentum(&self) -> Vec3 {
        let mut p = [0.0; 3];
        for (v, w) in self.velocities.iter().zip(&self.weights) {
            p = vec3::axpy(p, *w, *v);
        }
        p
    }

    /// `1/2 sum w |xi|^2`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocities.iter().zip(&self.weights).map(|(v, w)| w * vec3::norm2(*v)).sum::<f64>()
    }

    pub fn position_cloud(&self) -> std::result::Result<WeightedCloud, OtError> {
        WeightedCloud::from_points3(&self.positions, self.weights.clone())
    }

    pub fn phase_cloud(&self) -> std::result::Result<WeightedCloud, OtError> {
        WeightedCloud::from_phase_space(&self.positions, &self.velocities, self.weights.clone())
    }

    /// Flips every velocity; stepping forward afterwards retraces the path.
    pub fn reverse_velocities(&mut self) {
        for v in &mut self.velocities {
            *v = vec3::scale(*v, -1.0);
        }
    }
}

/// CIC deposit of the ensemble positions.
pub fn deposit(ensemble: &ParticleEnsemble, spec: &GridSpec) -> std::result::Result<GridDensity, FieldError> {
    cic_deposit(&ensemble.positions, &ensemble.weights, spec, ensemble.epsilon_sign)
}

/// How `grad Psi` is obtained from the particles.
#[derive(Clone)]
pub enum FieldModel {
    /// `grad Psi = 0`: free streaming.
    Free,
    /// Deposit, FFT Poisson solve, trilinear interpolation.
    Grid(GridSpec),
    /// Softened pairwise sum over the other particles.
    Direct(SofteningSpec),
    /// An external field that does not depend on the particles.
    Frozen(Arc<dyn VectorField + Send + Sync>),
}

impl std::fmt::Debug for FieldModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldModel::Free => write!(f, "Free"),
            FieldModel::Grid(s) => f.debug_tuple("Grid").field(s).finish(),
            FieldModel::Direct(s) => f.debug_tuple("Direct").field(s).finish(),
            FieldModel::Frozen(_) => write!(f, "Frozen"),
        }
    }
}

/// Per-step monitored quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// `||rho||_inf` of the deposit (0 without a monitoring grid).
    pub sup_rho: f64,
    pub deposited_mass: f64,
    /// `DT_SAFETY / sqrt(max |grad grad Psi|)`; infinite when the field is zero or unknown.
    pub dt_limit: f64,
    pub boundary_warning: bool,
}

/// Ensemble plus the field it generates at its current time.
pub struct FlowState {
    pub ensemble: ParticleEnsemble,
    model: FieldModel,
    solver: Option<Arc<PoissonSolver>>,
    monitor: Option<GridSpec>,
    density: Option<GridDensity>,
    field: Option<GridField>,
    accel: Vec<Vec3>,
    pub step: usize,
    pub diagnostics: StepDiagnostics,
    enforce_dt_rule: bool,
}

impl FlowState {
    /// Builds the state and evaluates the initial field. `monitor` is the
    /// grid on which the density is deposited for monitoring; the grid model
    /// always uses its own grid.
    pub fn new(ensemble: ParticleEnsemble, model: FieldModel, monitor: Option<GridSpec>) -> Result<Self> {
        let solver = match &model {
            FieldModel::Grid(spec) => Some(Arc::new(PoissonSolver::new(*spec))),
            _ => None,
        };
        let monitor = match &model {
            FieldModel::Grid(spec) => Some(*spec),
            _ => monitor,
        };
        let mut state = FlowState {
            ensemble,
            model,
            solver,
            monitor,
            density: None,
            field: None,
            accel: Vec::new(),
            step: 0,
            diagnostics: StepDiagnostics::default(),
            enforce_dt_rule: true,
        };
        state.refresh()?;
        Ok(state)
    }

    /// Reuses an existing solver (its grid must match the model's).
    pub fn with_solver(ensemble: ParticleEnsemble, solver: Arc<PoissonSolver>) -> Result<Self> {
        let spec = *solver.spec();
        let mut state = FlowState {
            ensemble,
            model: FieldModel::Grid(spec),
            solver: Some(solver),
            monitor: Some(spec),
            density: None,
            field: None,
            accel: Vec::new(),
            step: 0,
            diagnostics: StepDiagnostics::default(),
            enforce_dt_rule: true,
        };
        state.refresh()?;
        Ok(state)
    }

    /// Turns the step-size rule into a recorded diagnostic only.
    pub fn set_enforce_dt_rule(&mut self, enforce: bool) {
        self.enforce_dt_rule = enforce;
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn t(&self) -> f64 {
        self.ensemble.t
    }

    pub fn density(&self) -> Option<&GridDensity> {
        self.density.as_ref()
    }

    pub fn grid_field(&self) -> Option<&GridField> {
        self.field.as_ref()
    }

    pub fn monitor_grid(&self) -> Option<&GridSpec> {
        self.monitor.as_ref()
    }

    pub fn solver(&self) -> Option<&Arc<PoissonSolver>> {
        self.solver.as_ref()
    }

    /// Current accelerations `grad Psi(X_i)`.
    pub fn accelerations(&self) -> &[Vec3] {
        &self.accel
    }

    fn field_error(&self, e: FieldError) -> DynamicsError {
        DynamicsError::Field { step: self.step, source: e }
    }

    /// Deposits, solves and evaluates the field at the particles.
    fn refresh(&mut self) -> Result<()> {
        let step = self.step;
        let wrap = |e: FieldError| DynamicsError::Field { step, source: e };
        self.density = match self.monitor {
            Some(spec) => Some(deposit(&self.ensemble, &spec).map_err(wrap)?),
            None => None,
        };
        let mut dt_limit = f64::INFINITY;
        self.accel = match &self.model {
            FieldModel::Free => vec![[0.0; 3]; self.ensemble.len()],
            FieldModel::Grid(_) => {
                let solver = self.solver.as_ref().expect("grid model has a solver");
                let rho = self.density.as_ref().expect("grid model deposits");
                let f = solver.solve_field(rho).map_err(wrap)?;
                let jac = f.max_jacobian_norm();
                if jac > 0.0 {
                    dt_limit = DT_SAFETY / jac.sqrt();
                }
                let a = f.eval_many(&self.ensemble.positions).map_err(wrap)?;
                self.field = Some(f);
                a
            }
            FieldModel::Direct(soft) => {
                let e = &self.ensemble;
                let tidal = direct_tidal_bound(&e.positions, &e.weights, *soft);
                if tidal > 0.0 {
                    dt_limit = DT_SAFETY / tidal.sqrt();
                }
                field::direct_self_field(&e.positions, &e.weights, *soft, e.epsilon_sign).map_err(wrap)?
            }
            FieldModel::Frozen(f) => f.eval_many(&self.ensemble.positions).map_err(wrap)?,
        };
        let (sup_rho, deposited_mass, boundary_warning) = match &self.density {
            Some(rho) => (rho.sup(), rho.mass(), rho.touches_boundary()),
            None => (0.0, self.ensemble.mass(), false),
        };
        self.diagnostics = StepDiagnostics { sup_rho, deposited_mass, dt_limit, boundary_warning };
        Ok(())
    }

    /// One kick-drift-kick step of size `dt` (negative `dt` integrates
    /// backwards). Fails without modifying the state if `|dt|` exceeds the
    /// current stability limit.
    pub fn step_leapfrog(&mut self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(DynamicsError::InvalidParameter(format!("dt must be finite and nonzero, got {dt}")));
        }
        if self.enforce_dt_rule && dt.abs() > self.diagnostics.dt_limit {
            return Err(DynamicsError::TimeStep { step: self.step, dt: dt.abs(), limit: self.diagnostics.dt_limit });
        }
        let half = 0.5 * dt;
        let accel = std::mem::take(&mut self.accel);
        let e = &mut self.ensemble;
        e.velocities.par_iter_mut().zip(&accel).for_each(|(v, a)| *v = vec3::axpy(*v, half, *a));
        e.positions.par_iter_mut().zip(&e.velocities).for_each(|(x, v)| *x = vec3::axpy(*x, dt, *v));
        e.t += dt;
        self.step += 1;
        self.check_finite()?;
        self.refresh()?;
        let accel = &self.accel;
        self.ensemble.velocities.par_iter_mut().zip(accel).for_each(|(v, a)| *v = vec3::axpy(*v, half, *a));
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        let e = &self.ensemble;
        let bad: Vec<usize> =
            (0..e.len()).filter(|&i| !vec3::is_finite(e.positions[i]) || !vec3::is_finite(e.velocities[i])).collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::Divergence { step: self.step, indices: bad })
        }
    }

    /// `grad Psi` of this state at arbitrary points.
    pub fn field_at(&self, points: &[Vec3]) -> std::result::Result<Vec<Vec3>, FieldError> {
        match &self.model {
            FieldModel::Free => Ok(vec![[0.0; 3]; points.len()]),
            FieldModel::Grid(_) => self.field.as_ref().expect("grid model has a field").eval_many(points),
            FieldModel::Direct(soft) => {
                let e = &self.ensemble;
                field::direct_sum(&e.positions, &e.weights, points, *soft, e.epsilon_sign, None)
            }
            FieldModel::Frozen(f) => f.eval_many(points),
        }
    }

    /// Kinetic and interaction energy `(K, -1/2 sum w Psi(X))`; `None` for a
    /// frozen external field.
    pub fn energy(&self) -> Result<Option<(f64, f64)>> {
        let e = &self.ensemble;
        let kinetic = e.kinetic_energy();
        let potential = match &self.model {
            FieldModel::Free => 0.0,
            FieldModel::Grid(_) => {
                let solver = self.solver.as_ref().expect("grid model has a solver");
                let rho = self.density.as_ref().expect("grid model deposits");
                let psi = solver.solve_potential(rho).map_err(|err| self.field_error(err))?;
                let mut total = 0.0;
                for (x, w) in e.positions.iter().zip(&e.weights) {
                    total += w * psi.eval(*x).map_err(|err| self.field_error(err))?;
                }
                -0.5 * total
            }
            FieldModel::Direct(soft) => field::direct_potential_energy(&e.positions, &e.weights, *soft, e.epsilon_sign),
            FieldModel::Frozen(_) => return Ok(None),
        };
        Ok(Some((kinetic, potential)))
    }
}

impl VectorField for FlowState {
    fn eval(&self, x: Vec3) -> std::result::Result<Vec3, FieldError> {
        Ok(self.field_at(&[x])?[0])
    }

    fn eval_many(&self, xs: &[Vec3]) -> std::result::Result<Vec<Vec3>, FieldError> {
        self.field_at(xs)
    }
}

/// Upper estimate of the Frobenius norm of `grad grad Psi` at the particles
/// for the softened pair kernel: `sqrt(6) / (4 pi (r^2 + s^2)^{3/2})` per pair.
fn direct_tidal_bound(positions: &[Vec3], weights: &[f64], soft: SofteningSpec) -> f64 {
    let s2 = soft.length * soft.length;
    let k = 6f64.sqrt() / (4.0 * std::f64::consts::PI);
    positions
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut acc = 0.0;
            for (j, (&y, &w)) in positions.iter().zip(weights).enumerate() {
                let q2 = vec3::dist2(x, y) + s2;
                if j != i && q2 > 0.0 {
                    acc += w / (q2 * q2.sqrt());
                }
            }
            k * acc
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    fn ensemble(n: usize) -> ParticleEnsemble {
        let pos: Vec<Vec3> = (0..n).map(|i| [0.1 * i as f64, -0.05 * i as f64, 0.02]).collect();
        let vel: Vec<Vec3> = (0..n).map(|i| [0.3, 0.1 * i as f64, -0.2]).collect();
        ParticleEnsemble::new(pos, vel, vec![1.0 / n as f64; n], 1.0).unwrap()
    }

    #[test]
    fn free_streaming_is_exact_per_step() {
        let e0 = ensemble(4);
        let mut s = FlowState::new(e0.clone(), FieldModel::Free, None).unwrap();
        for _ in 0..10 {
            s.step_leapfrog(0.25).unwrap();
        }
        for i in 0..4 {
            for c in 0..3 {
                let exact = e0.positions[i][c] + 2.5 * e0.velocities[i][c];
                assert!((s.ensemble.positions[i][c] - exact).abs() < 1e-14);
            }
        }
        assert_eq!(s.ensemble.velocities, e0.velocities);
        assert_eq!(s.t(), 2.5);
    }

    #[test]
    fn node_deposit_is_single_valued() {
        let spec = GridSpec::centered(1.0, 5).unwrap();
        let e = ParticleEnsemble::new(vec![[0.5, 0.0, 0.0]], vec![[0.0; 3]], vec![1.0], 1.0).unwrap();
        let rho = deposit(&e, &spec).unwrap();
        assert_eq!(rho.values[spec.index(3, 2, 2)], 1.0 / spec.cell_volume());
        assert_eq!(rho.values.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn dt_rule_rejects_large_steps() {
        let spec = GridSpec::centered(1.0, 8).unwrap();
        let field = Arc::new(GridField::from_fn(spec, -1.0, |p| vec3::scale(p, -100.0)));
        let e = ParticleEnsemble::new(vec![[0.1, 0.0, 0.0]], vec![[0.0; 3]], vec![1.0], -1.0).unwrap();
        let mut s = FlowState::new(e, FieldModel::Frozen(field), None).unwrap();
        // A frozen field carries no rule; the Direct model does.
        s.step_leapfrog(0.02).unwrap();
        let pair = ParticleEnsemble::new(vec![[0.0; 3], [0.01, 0.0, 0.0]], vec![[0.0; 3]; 2], vec![1.0; 2], -1.0).unwrap();
        let mut d = FlowState::new(pair, FieldModel::Direct(SofteningSpec::NONE), None).unwrap();
        assert!(matches!(d.step_leapfrog(1.0), Err(DynamicsError::TimeStep { step: 0, .. })));
        d.set_enforce_dt_rule(false);
        d.step_leapfrog(1e-6).unwrap();
    }

    #[test]
    fn escapes_are_reported_with_step() {
        let spec = GridSpec::centered(1.0, 8).unwrap();
        let e = ParticleEnsemble::new(vec![[0.9, 0.0, 0.0]], vec![[1.0, 0.0, 0.0]], vec![1.0], 1.0).unwrap();
        let mut s = FlowState::new(e, FieldModel::Free, Some(spec)).unwrap();
        match s.step_leapfrog(0.5) {
            Err(DynamicsError::Field { step: 1, source: FieldError::Escaped { indices } }) => assert_eq!(indices, vec![0]),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn divergence_is_reported() {
        let field = Arc::new(FnField(|p: Vec3| if p[0] > 0.5 { [f64::INFINITY, 0.0, 0.0] } else { [1.0, 0.0, 0.0] }));
        let e = ParticleEnsemble::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]], vec![1.0], 1.0).unwrap();
        let mut s = FlowState::new(e, FieldModel::Frozen(field), None).unwrap();
        s.step_leapfrog(0.1).unwrap();
        let mut failed = None;
        for _ in 0..10 {
            if let Err(e) = s.step_leapfrog(0.1) {
                failed = Some(e);
                break;
            }
        }
        assert!(matches!(failed, Some(DynamicsError::Divergence { .. })));
    }

    #[test]
    fn direct_sum_conserves_momentum() {
        let pos = vec![[0.0, 0.0, 0.0], [0.5, 0.1, 0.0], [-0.2, 0.4, 0.3], [0.1, -0.3, -0.2]];
        let vel = vec![[0.0; 3]; 4];
        let e = ParticleEnsemble::new(pos, vel, vec![0.25; 4], -1.0).unwrap();
        let mut s = FlowState::new(e, FieldModel::Direct(SofteningSpec::new(0.05)), None).unwrap();
        for _ in 0..50 {
            s.step_leapfrog(0.01).unwrap();
            assert!(vec3::norm(s.ensemble.momentum()) < 1e-15);
        }
    }

    #[test]
    fn invalid_ensembles_rejected() {
        assert!(ParticleEnsemble::new(vec![], vec![], vec![], 1.0).is_err());
        assert!(ParticleEnsemble::new(vec![[0.0; 3]], vec![[0.0; 3]], vec![-1.0], 1.0).is_err());
        assert!(ParticleEnsemble::new(vec![[0.0; 3]], vec![[0.0; 3]], vec![1.0], 0.5).is_err());
        assert!(ParticleEnsemble::new(vec![[f64::NAN, 0.0, 0.0]], vec![[0.0; 3]], vec![1.0], 1.0).is_err());
    }
}
