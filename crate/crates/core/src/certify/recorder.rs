use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checks::{check_lemma_w2, prop31_from_fields, sub_cloud, LemmaReport, Prop31Report, DEFAULT_PROP31_TOLERANCE};
use super::{compute_q, compute_t1_t2, fill_dqdt, position_gap, subsample_indices, Result, StabilityRecord};
use crate::dynamics::{deposit, FlowState};
use crate::field::{loglip_modulus, t2_grid_quadrature, GridDensity, GridField, GridSpec, PoissonSolver};
use crate::ot::{w2_sinkhorn, DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_REGULARIZATION, DEFAULT_SINKHORN_TOL};

/// Sinkhorn iteration cap and marginal tolerance for the entropic estimate.

/// Solver for the `W2` in the field-stability bound. The coupling checks
/// always use the exact solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum W2Solver {
    #[default]
    Exact,
    Sinkhorn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecorderOptions {
    /// Exact `W2`, field-stability and log-Lipschitz evaluations every
    /// `ot_stride` steps (0 disables them).
    pub ot_stride: usize,
    /// Subsample size for the exact `W2` values.
    pub max_points: usize,
    pub loglip_pairs: usize,
    pub seed: u64,
    pub prop31_tolerance: f64,
    pub w2_solver: W2Solver,
    /// Entropic regularization when `w2_solver` is Sinkhorn.
    pub regularization: f64,
}

impl Default for RecorderOptions {
    fn default() -> Self {
        RecorderOptions {
            ot_stride: 10,
            max_points: 512,
            loglip_pairs: 4096,
            seed: 0,
            prop31_tolerance: DEFAULT_PROP31_TOLERANCE,
            w2_solver: W2Solver::Exact,
            regularization: DEFAULT_SINKHORN_REGULARIZATION,
        }
    }
}

/// Observer for [`crate::dynamics::run_twin`] building the stability ledger.
pub struct TwinRecorder {
    opts: RecorderOptions,
    records: Vec<StabilityRecord>,
    lemma: Vec<(usize, LemmaReport)>,
    prop31: Vec<(usize, Prop31Report)>,
    solver: Option<Arc<PoissonSolver>>,
}

/// The state's field on the nodes of `spec`, reusing its own grid field when
/// the grids agree.
fn field_on(state: &FlowState, spec: &GridSpec) -> Result<GridField> {
    if let Some(f) = state.grid_field() {
        if f.spec == *spec {
            return Ok(f.clone());
        }
    }
    let nodes: Vec<_> = (0..spec.len()).map(|i| spec.node_at(i)).collect();
    let values = state.field_at(&nodes)?;
    Ok(GridField { spec: *spec, values, epsilon_sign: state.ensemble.epsilon_sign, boundary_warning: false })
}

fn density_on(state: &FlowState, spec: &GridSpec) -> Result<GridDensity> {
    match state.density() {
        Some(rho) if rho.spec == *spec => Ok(rho.clone()),
        _ => Ok(deposit(&state.ensemble, spec)?),
    }
}

impl TwinRecorder {
    pub fn new(opts: RecorderOptions) -> Self {
        TwinRecorder { opts, records: Vec::new(), lemma: Vec::new(), prop31: Vec::new(), solver: None }
    }

    pub fn options(&self) -> &RecorderOptions {
        &self.opts
    }

    pub fn records(&self) -> &[StabilityRecord] {
        &self.records
    }

    /// Coupling checks on OT steps, keyed by step.
    pub fn lemma_reports(&self) -> &[(usize, LemmaReport)] {
        &self.lemma
    }

    /// Field-stability checks on OT steps, keyed by step.
    pub fn prop31_reports(&self) -> &[(usize, Prop31Report)] {
        &self.prop31
    }

    fn solver_for(&mut self, a: &FlowState, spec: &GridSpec) -> Arc<PoissonSolver> {
        if let Some(s) = a.solver().filter(|s| s.spec() == spec) {
            return Arc::clone(s);
        }
        match &self.solver {
            Some(s) if s.spec() == spec => Arc::clone(s),
            _ => {
                let s = Arc::new(PoissonSolver::new(*spec));
                self.solver = Some(Arc::clone(&s));
                s
            }
        }
    }

    /// Appends the record for the current pair of states.
    pub fn observe(&mut self, a: &FlowState, b: &FlowState) -> Result<()> {
        let (ea, eb) = (&a.ensemble, &b.ensemble);
        let q = compute_q(ea, eb)?;
        let (s, max_gap) = position_gap(ea, eb)?;
        let (t1, t2) = compute_t1_t2(&ea.positions, &eb.positions, &ea.weights, a, b)?;
        let step = a.step;
        let mut rec = StabilityRecord {
            step,
            t: a.t(),
            q,
            t1,
            t2,
            s,
            max_gap,
            sup_rho1: a.diagnostics.sup_rho,
            sup_rho2: b.diagnostics.sup_rho,
            mass1: a.diagnostics.deposited_mass,
            mass2: b.diagnostics.deposited_mass,
            ..Default::default()
        };
        let stride = self.opts.ot_stride;
        if stride > 0 && step % stride == 0 {
            let lemma = check_lemma_w2(ea, eb, self.opts.max_points)?;
            rec.q_sub = Some(lemma.q_sub);
            rec.s_sub = Some(lemma.s_sub);
            rec.w2_rho = Some(lemma.w2_rho);
            rec.w2_phase = Some(lemma.w2_phase);
            if let Some(spec) = a.monitor_grid().copied() {
                let solver = self.solver_for(a, &spec);
                let rho1 = density_on(a, &spec)?;
                let rho2 = density_on(b, &spec)?;
                let f1 = match a.grid_field() {
                    Some(f) if f.spec == spec => f.clone(),
                    _ => solver.solve_field(&rho1)?,
                };
                let f2 = solver.solve_field(&rho2)?;
                let sup = rho1.sup().max(rho2.sup());
                let w2 = match self.opts.w2_solver {
                    W2Solver::Exact => lemma.w2_rho,
                    W2Solver::Sinkhorn => {
                        let idx = subsample_indices(ea.len(), self.opts.max_points);
                        let (ca, cb) = (sub_cloud(ea, &idx, false)?, sub_cloud(eb, &idx, false)?);
                        w2_sinkhorn(&ca, &cb, self.opts.regularization, DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_TOL)?.0
                    }
                };
                let p = prop31_from_fields(&f1, &f2, sup, w2, self.opts.prop31_tolerance)?;
                rec.field_l2_diff = Some(p.lhs);
                rec.field_l2_trunc = Some(p.l2.truncation_estimate);
                rec.prop31_rhs = Some(p.rhs);
                rec.prop31_ratio = p.ratio.is_finite().then_some(p.ratio);
                self.prop31.push((step, p));

                // T2 as a grid quadrature of the twins' own fields.
                let g1 = field_on(a, &spec)?;
                rec.t2_grid = match field_on(b, &spec) {
                    Ok(g2) => Some(t2_grid_quadrature(&rho1, &g1, &g2)?),
                    Err(_) => None,
                };

                if self.opts.loglip_pairs > 0 {
                    if let Some(region) = rho1.support_bounds() {
                        let min_sep = spec.h.min(0.25);
                        let seed = self.opts.seed ^ step as u64;
                        rec.loglip_c = loglip_modulus(&g1, region, min_sep, self.opts.loglip_pairs, seed)
                            .ok()
                            .map(|r| r.constant);
                    }
                }
            }
            self.lemma.push((step, lemma));
        }
        self.records.push(rec);
        Ok(())
    }

    /// Fills the finite-difference `dQ/dt` and returns the ledger.
    pub fn finish(mut self) -> Vec<StabilityRecord> {
        fill_dqdt(&mut self.records);
        self.records
    }

    /// As [`TwinRecorder::finish`], also returning the per-step check reports.
    pub fn finish_with_reports(
        mut self,
    ) -> (Vec<StabilityRecord>, Vec<(usize, LemmaReport)>, Vec<(usize, Prop31Report)>) {
        fill_dqdt(&mut self.records);
        (self.records, self.lemma, self.prop31)
    }
}
