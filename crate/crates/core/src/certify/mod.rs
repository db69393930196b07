//! Step-by-step certification of the stability estimates for two flows
//! started from one sample of `f0`.
//!
//! Notation, for index-aligned twins with weights `w_i`:
//!
//! * `Q  = 1/2 sum w_i |Xi1_i - Xi2_i|^2` (phase-space gap),
//! * `S  = sum w_i |X1_i - X2_i|^2` (position gap),
//! * `T1 = sum w_i |grad Psi2(X1_i) - grad Psi2(X2_i)|^2`,
//! * `T2 = sum w_i |grad Psi2(X1_i) - grad Psi1(X1_i)|^2`.
//!
//! [`TwinRecorder`] fills one [`StabilityRecord`] per step; the check
//! functions then work on the finished series.

mod checks;
mod osgood;
mod recorder;
mod records;
mod study;

use thiserror::Error;

use crate::dynamics::{DynamicsError, ParticleEnsemble};
use crate::field::{FieldError, VectorField};
use crate::ot::OtError;
use crate::vec3::{self, Vec3};

pub use checks::{
    check_gronwall, check_lemma_w2, check_prop31, prop31_from_fields, GronwallOptions, GronwallReport, GronwallRow, LemmaReport,
    Prop31Report, DEFAULT_PROP31_TOLERANCE, LEMMA_TOLERANCE,
};
pub use osgood::{
    osgood_contain, osgood_derivative, osgood_envelope, osgood_rk4, ContainmentReport, EnvelopeValue,
};
pub use recorder::{RecorderOptions, TwinRecorder, W2Solver};
pub use records::{parse_records_csv, read_records_csv, records_to_csv, write_records_csv, RECORD_COLUMNS};
pub use study::{vanishing_perturbation_study, VanishingReport, DEFAULT_VANISHING_FRACTION};

/// `1/e`, the smallness threshold on `S` and on the largest particle gap.
pub const SMALLNESS: f64 = 1.0 / std::f64::consts::E;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("twins are not index-aligned: {0}")]
    Misaligned(String),

    #[error("records are not uniformly spaced in time at step {step}")]
    NonUniformSpacing { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-monotone sup Q over the perturbation sweep:\n{table}")]
    NonMonotone { table: String },

    #[error(transparent)]
    Field(#[from] FieldError),

    #[error(transparent)]
    Ot(#[from] OtError),

    #[error(transparent)]
    Dynamics(#[from] Box<DynamicsError>),

    #[error("records file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CertifyError>;

impl From<DynamicsError> for CertifyError {
    fn from(e: DynamicsError) -> Self {
        CertifyError::Dynamics(Box::new(e))
    }
}

/// One row of the twin ledger. Quantities evaluated only on OT steps are
/// `None` elsewhere; `dqdt` is filled in after the run (centered
/// differences, interior steps only).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StabilityRecord {
    pub step: usize,
    pub t: f64,
    pub q: f64,
    pub dqdt: Option<f64>,
    pub t1: f64,
    pub t2: f64,
    /// Node quadrature of `int rho1 |grad Psi1 - grad Psi2|^2`.
    pub t2_grid: Option<f64>,
    pub s: f64,
    /// `max_i |Xi1_i - Xi2_i|`.
    pub max_gap: f64,
    pub sup_rho1: f64,
    pub sup_rho2: f64,
    pub mass1: f64,
    pub mass2: f64,
    /// `Q` and `S` on the subsample used for the exact `W2` values.
    pub q_sub: Option<f64>,
    pub s_sub: Option<f64>,
    pub w2_rho: Option<f64>,
    pub w2_phase: Option<f64>,
    pub field_l2_diff: Option<f64>,
    pub field_l2_trunc: Option<f64>,
    pub prop31_rhs: Option<f64>,
    pub prop31_ratio: Option<f64>,
    pub loglip_c: Option<f64>,
}

fn check_aligned(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<()> {
    if a.len() != b.len() {
        return Err(CertifyError::Misaligned(format!("{} vs {} particles", a.len(), b.len())));
    }
    if let Some(i) = (0..a.len()).find(|&i| a.weights[i].to_bits() != b.weights[i].to_bits()) {
        return Err(CertifyError::Misaligned(format!("weight {i} differs")));
    }
    Ok(())
}

/// `Q = 1/2 sum w |Xi1 - Xi2|^2`.
pub fn compute_q(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    check_aligned(a, b)?;
    let mut q = 0.0;
    for i in 0..a.len() {
        let d2 = vec3::dist2(a.positions[i], b.positions[i]) + vec3::dist2(a.velocities[i], b.velocities[i]);
        q += a.weights[i] * d2;
    }
    Ok(0.5 * q)
}

/// `S = sum w |X1 - X2|^2` and the largest phase-space gap.
pub fn position_gap(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<(f64, f64)> {
    check_aligned(a, b)?;
    let mut s = 0.0;
    let mut max_gap: f64 = 0.0;
    for i in 0..a.len() {
        let dx = vec3::dist2(a.positions[i], b.positions[i]);
        let dv = vec3::dist2(a.velocities[i], b.velocities[i]);
        s += a.weights[i] * dx;
        max_gap = max_gap.max((dx + dv).sqrt());
    }
    Ok((s, max_gap))
}

/// `(T1, T2)` for positions `x1`, `x2` with weights `w` and the two fields.
pub fn compute_t1_t2(
    x1: &[Vec3],
    x2: &[Vec3],
    w: &[f64],
    field1: &(impl VectorField + ?Sized),
    field2: &(impl VectorField + ?Sized),
) -> Result<(f64, f64)> {
    if x1.len() != x2.len() || x1.len() != w.len() {
        return Err(CertifyError::Misaligned(format!("{} / {} positions, {} weights", x1.len(), x2.len(), w.len())));
    }
    let f2x1 = field2.eval_many(x1)?;
    let f2x2 = field2.eval_many(x2)?;
    let f1x1 = field1.eval_many(x1)?;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for i in 0..w.len() {
        t1 += w[i] * vec3::dist2(f2x1[i], f2x2[i]);
        t2 += w[i] * vec3::dist2(f2x1[i], f1x1[i]);
    }
    Ok((t1, t2))
}

/// Deterministic same-index subsample: indices `floor(k N / n)` for
/// `k < n`, or every index when `N <= n`.
pub fn subsample_indices(total: usize, n: usize) -> Vec<usize> {
    if total <= n {
        (0..total).collect()
    } else {
        (0..n).map(|k| ((k as u128 * total as u128) / n as u128) as usize).collect()
    }
}

/// Fills `dqdt` by centered differences on interior steps.
pub fn fill_dqdt(records: &mut [StabilityRecord]) {
    let n = records.len();
    for r in records.iter_mut() {
        r.dqdt = None;
    }
    for k in 1..n.saturating_sub(1) {
        let dt = records[k + 1].t - records[k - 1].t;
        if dt > 0.0 {
            records[k].dqdt = Some((records[k + 1].q - records[k - 1].q) / dt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    fn one(x: Vec3, v: Vec3) -> ParticleEnsemble {
        ParticleEnsemble::new(vec![x], vec![v], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn q_of_unit_position_gap() {
        let a = one([0.0; 3], [0.0; 3]);
        let b = one([1.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(compute_q(&a, &b).unwrap(), 0.5);
        assert_eq!(compute_q(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn misaligned_twins_rejected() {
        let a = one([0.0; 3], [0.0; 3]);
        let b = ParticleEnsemble::new(vec![[0.0; 3]], vec![[0.0; 3]], vec![0.5], 1.0).unwrap();
        assert!(matches!(compute_q(&a, &b), Err(CertifyError::Misaligned(_))));
    }

    #[test]
    fn t1_t2_definitions() {
        let f = FnField(|p: Vec3| [p[0] * 2.0, 0.0, 0.0]);
        let x1 = [[1.0, 0.0, 0.0]];
        let x2 = [[0.5, 0.0, 0.0]];
        let (t1, t2) = compute_t1_t2(&x1, &x2, &[1.0], &f, &f).unwrap();
        assert_eq!(t1, 1.0);
        assert_eq!(t2, 0.0);
        let (t1, t2) = compute_t1_t2(&x1, &x1, &[1.0], &f, &f).unwrap();
        assert_eq!((t1, t2), (0.0, 0.0));
        let g = FnField(|p: Vec3| [p[0] * 2.0, 1.0, 0.0]);
        let (_, t2) = compute_t1_t2(&x1, &x2, &[0.5], &f, &g).unwrap();
        assert_eq!(t2, 0.5);
    }

    #[test]
    fn subsample_is_spread_and_sorted() {
        assert_eq!(subsample_indices(5, 8), vec![0, 1, 2, 3, 4]);
        assert_eq!(subsample_indices(10, 4), vec![0, 2, 5, 7]);
    }

    #[test]
    fn centered_difference_of_quadratic_is_exact() {
        let mut rs: Vec<StabilityRecord> =
            (0..5).map(|k| StabilityRecord { step: k, t: 0.5 * k as f64, q: (0.5 * k as f64).powi(2), ..Default::default() }).collect();
        fill_dqdt(&mut rs);
        assert_eq!(rs[0].dqdt, None);
        assert_eq!(rs[4].dqdt, None);
        for r in &rs[1..4] {
            assert!((r.dqdt.unwrap() - 2.0 * r.t).abs() < 1e-14);
        }
    }
}
