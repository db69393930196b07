use super::osgood::{osgood_contain, ContainmentReport};
use super::{subsample_indices, CertifyError, Result, StabilityRecord, SMALLNESS};
use crate::dynamics::ParticleEnsemble;
use crate::field::{field_l2_diff, FieldL2, GridDensity, GridField, PoissonSolver};
use crate::ot::{w2_exact, WeightedCloud};

/// Default slack on the field-stability ratio for discretization effects.
pub const DEFAULT_PROP31_TOLERANCE: f64 = 0.05;

/// Absolute slack in the coupling inequalities (exact up to round-off).
pub const LEMMA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop31Report {
    /// `||grad Psi1 - grad Psi2||_L2` over the grid box.
    pub lhs: f64,
    /// `max(||rho1||_inf, ||rho2||_inf)^{1/2} W2(rho1, rho2)`.
    pub rhs: f64,
    /// `lhs / rhs`; 0 when `lhs = 0`.
    pub ratio: f64,
    pub sup_rho: f64,
    pub w2: f64,
    pub l2: FieldL2,
    pub tolerance: f64,
    pub pass: bool,
    /// `rhs = 0` while `lhs` is not.
    pub inconsistent: bool,
}

/// Compares the field difference with the Wasserstein bound, both densities
/// on one grid. `w2` is the distance between the underlying clouds.
pub fn check_prop31(
    rho1: &GridDensity,
    rho2: &GridDensity,
    w2: f64,
    solver: &PoissonSolver,
    tolerance: f64,
) -> Result<Prop31Report> {
    rho1.spec.check_same(&rho2.spec)?;
    let f1 = solver.solve_field(rho1)?;
    let f2 = solver.solve_field(rho2)?;
    prop31_from_fields(&f1, &f2, rho1.sup().max(rho2.sup()), w2, tolerance)
}

/// As [`check_prop31`] with the fields already solved.
pub fn prop31_from_fields(f1: &GridField, f2: &GridField, sup_rho: f64, w2: f64, tolerance: f64) -> Result<Prop31Report> {
    if !(tolerance >= 0.0) || !(w2 >= 0.0) {
        return Err(CertifyError::InvalidParameter(format!("tolerance {tolerance}, w2 {w2}")));
    }
    let l2 = field_l2_diff(f1, f2)?;
    let lhs = l2.value;
    let rhs = sup_rho.sqrt() * w2;
    let (ratio, inconsistent) = if lhs == 0.0 {
        (0.0, false)
    } else if rhs == 0.0 {
        (f64::INFINITY, true)
    } else {
        (lhs / rhs, false)
    };
    Ok(Prop31Report {
        lhs,
        rhs,
        ratio,
        sup_rho,
        w2,
        l2,
        tolerance,
        pass: !inconsistent && ratio <= 1.0 + tolerance,
        inconsistent,
    })
}

/// Coupling bounds on a same-index subsample of the twins.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub n: usize,
    pub s_sub: f64,
    pub q_sub: f64,
    pub w2_rho: f64,
    pub w2_phase: f64,
    /// `W2_rho <= sqrt(S) + tol`.
    pub lemma_pass: bool,
    /// `W2_phase^2 <= 2 Q + tol`.
    pub remark_pass: bool,
    /// `W2_rho^2 <= 2 Q + tol`.
    pub chained_pass: bool,
}

impl LemmaReport {
    pub fn pass(&self) -> bool {
        self.lemma_pass && self.remark_pass && self.chained_pass
    }
}

pub(super) fn sub_cloud(e: &ParticleEnsemble, idx: &[usize], phase: bool) -> Result<WeightedCloud> {
    let total: f64 = idx.iter().map(|&i| e.weights[i]).sum();
    let scale = e.mass() / total;
    let weights: Vec<f64> = idx.iter().map(|&i| e.weights[i] * scale).collect();
    let pos: Vec<_> = idx.iter().map(|&i| e.positions[i]).collect();
    Ok(if phase {
        let vel: Vec<_> = idx.iter().map(|&i| e.velocities[i]).collect();
        WeightedCloud::from_phase_space(&pos, &vel, weights)?
    } else {
        WeightedCloud::from_points3(&pos, weights)?
    })
}

/// Exact `W2` of the position and phase-space clouds of the twins,
/// restricted to at most `max_points` same-index particles (weights rescaled
/// to the full mass), against the gaps of the identity pairing.
pub fn check_lemma_w2(a: &ParticleEnsemble, b: &ParticleEnsemble, max_points: usize) -> Result<LemmaReport> {
    if a.len() != b.len() {
        return Err(CertifyError::Misaligned(format!("{} vs {} particles", a.len(), b.len())));
    }
    if max_points == 0 {
        return Err(CertifyError::InvalidParameter("max_points must be positive".into()));
    }
    let idx = subsample_indices(a.len(), max_points);
    let (ra, rb) = (sub_cloud(a, &idx, false)?, sub_cloud(b, &idx, false)?);
    let (pa, pb) = (sub_cloud(a, &idx, true)?, sub_cloud(b, &idx, true)?);
    let (w2_rho, _) = w2_exact(&ra, &rb)?;
    let (w2_phase, _) = w2_exact(&pa, &pb)?;
    let mut s_sub = 0.0;
    let mut phase_sub = 0.0;
    for (k, w) in ra.weights().iter().enumerate() {
        s_sub += w * crate::ot::sq_dist(ra.point(k), rb.point(k));
        phase_sub += w * crate::ot::sq_dist(pa.point(k), pb.point(k));
    }
    let q_sub = 0.5 * phase_sub;
    Ok(LemmaReport {
        n: idx.len(),
        s_sub,
        q_sub,
        w2_rho,
        w2_phase,
        lemma_pass: w2_rho <= s_sub.sqrt() + LEMMA_TOLERANCE,
        remark_pass: w2_phase * w2_phase <= 2.0 * q_sub + LEMMA_TOLERANCE,
        chained_pass: w2_rho * w2_rho <= 2.0 * q_sub + LEMMA_TOLERANCE,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GronwallOptions {
    /// Restricts the checked window to `[t0, t1]`.
    pub window: Option<(f64, f64)>,
    pub fit_constants: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallRow {
    pub step: usize,
    pub t: f64,
    pub q: f64,
    pub dqdt: f64,
    pub fd_tolerance: f64,
    /// `Q + Q^{1/2} (T1 + T2)^{1/2}`.
    pub rhs: f64,
    /// `Q + (2Q)^{1/2} (T1^{1/2} + T2^{1/2})`, the bound with all constants kept.
    pub rhs_full: f64,
    pub pass: bool,
    pub pass_full: bool,
    pub in_window: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub rows: Vec<GronwallRow>,
    /// Steps skipped because `Q = 0`.
    pub skipped: Vec<usize>,
    /// First and last in-window time.
    pub window: Option<(f64, f64)>,
    pub checked: usize,
    pub passed: usize,
    pub passed_full: usize,
    /// Smallest `C` with `T1 <= C/4 S log^2 S` on the window.
    pub c_t1: Option<f64>,
    /// Smallest `C` with `dQ/dt <= C Q (1 + log 1/Q)` on the window (`Q <= 1/e`).
    pub c_final: Option<f64>,
    pub containment: Option<ContainmentReport>,
}

impl GronwallReport {
    /// Fraction of in-window steps satisfying the inequality (1 if none).
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn pass_fraction_full(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed_full as f64 / self.checked as f64
        }
    }
}

fn third_derivative(q: &[f64], k: usize, dt: f64) -> f64 {
    let n = q.len();
    if n < 4 {
        return 0.0;
    }
    let d3 = if k >= 2 && k + 2 < n {
        (q[k + 2] - 2.0 * q[k + 1] + 2.0 * q[k - 1] - q[k - 2]) / 2.0
    } else if k + 2 < n {
        q[k + 2] - 3.0 * q[k + 1] + 3.0 * q[k] - q[k - 1]
    } else {
        q[k + 1] - 3.0 * q[k] + 3.0 * q[k - 1] - q[k - 2]
    };
    d3 / (dt * dt * dt)
}

/// Checks `dQ/dt <= Q + Q^{1/2} (T1 + T2)^{1/2}` at every interior step,
/// with `dQ/dt` from centered differences and tolerance
/// `2 dt^2 |Q'''| + round-off`, and fits the Jensen and final constants on the
/// smallness window (`S <= 1/e` and largest gap `<= 1/e`).
pub fn check_gronwall(records: &[StabilityRecord], opts: &GronwallOptions) -> Result<GronwallReport> {
    let n = records.len();
    let dt = if n >= 2 { records[1].t - records[0].t } else { 0.0 };
    if n >= 2 && !(dt > 0.0) {
        return Err(CertifyError::NonUniformSpacing { step: records[1].step });
    }
    for k in 1..n {
        let h = records[k].t - records[k - 1].t;
        if (h - dt).abs() > 1e-9 * dt {
            return Err(CertifyError::NonUniformSpacing { step: records[k].step });
        }
    }
    let q: Vec<f64> = records.iter().map(|r| r.q).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for k in 1..n.saturating_sub(1) {
        let r = &records[k];
        if r.q == 0.0 {
            skipped.push(r.step);
            continue;
        }
        let dqdt = (q[k + 1] - q[k - 1]) / (2.0 * dt);
        let roundoff = 1e-12 * (q[k + 1].abs() + q[k - 1].abs()) / dt;
        let fd_tolerance = 2.0 * dt * dt * third_derivative(&q, k, dt).abs() + roundoff;
        let rhs = r.q + r.q.sqrt() * (r.t1 + r.t2).sqrt();
        let rhs_full = r.q + (2.0 * r.q).sqrt() * (r.t1.sqrt() + r.t2.sqrt());
        let user = opts.window.is_none_or(|(t0, t1)| r.t >= t0 && r.t <= t1);
        let in_window = user && r.s <= SMALLNESS && r.max_gap <= SMALLNESS;
        rows.push(GronwallRow {
            step: r.step,
            t: r.t,
            q: r.q,
            dqdt,
            fd_tolerance,
            rhs,
            rhs_full,
            pass: dqdt <= rhs + fd_tolerance,
            pass_full: dqdt <= rhs_full + fd_tolerance,
            in_window,
        });
    }
    let win: Vec<&GronwallRow> = rows.iter().filter(|r| r.in_window).collect();
    let window = match (win.first(), win.last()) {
        (Some(a), Some(b)) => Some((a.t, b.t)),
        _ => None,
    };
    let checked = win.len();
    let passed = win.iter().filter(|r| r.pass).count();
    let passed_full = win.iter().filter(|r| r.pass_full).count();

    let (mut c_t1, mut c_final, mut containment) = (None, None, None);
    if opts.fit_constants && window.is_some() {
        let in_win = |r: &StabilityRecord| win.iter().any(|w| w.step == r.step);
        let mut ct = 0.0f64;
        for r in records.iter().filter(|r| in_win(r) && r.s > 0.0 && r.s < 1.0) {
            let l = r.s.ln();
            ct = ct.max(4.0 * r.t1 / (r.s * l * l));
        }
        c_t1 = Some(ct);
        let mut cf = 0.0f64;
        for r in win.iter().filter(|r| r.q > 0.0 && r.q <= SMALLNESS) {
            cf = cf.max((r.dqdt + r.fd_tolerance) / (r.q * (1.0 + (1.0 / r.q).ln())));
        }
        c_final = Some(cf);
        let (t0, t1) = window.expect("checked above");
        // Containment is checked on every record of the window span,
        // starting from the record preceding the first checked step.
        let start = records.iter().rposition(|r| r.t < t0).unwrap_or(0);
        let series: Vec<(f64, f64)> =
            records[start..].iter().take_while(|r| r.t <= t1).map(|r| (r.t, r.q)).collect();
        containment = Some(osgood_contain(&series, cf)?);
    }
    Ok(GronwallReport { rows, skipped, window, checked, passed, passed_full, c_t1, c_final, containment })
}
