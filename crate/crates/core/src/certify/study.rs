use std::fmt::Write;

use super::{CertifyError, Result};

/// Required ratio `sup Q(delta_min) / sup Q(delta_max)`.
pub const DEFAULT_VANISHING_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingReport {
    /// `(delta, sup_t Q)` in decreasing `delta`.
    pub table: Vec<(f64, f64)>,
    pub monotone: bool,
    /// `sup Q` at the smallest over that at the largest perturbation.
    pub ratio: f64,
    pub fraction: f64,
    pub pass: bool,
}

impl VanishingReport {
    pub fn table_text(&self) -> String {
        let mut s = String::from("delta,sup_q\n");
        for (d, q) in &self.table {
            let _ = writeln!(s, "{d:e},{q:e}");
        }
        s
    }

    /// Turns a non-monotone sweep into [`CertifyError::NonMonotone`] carrying the table.
    pub fn into_result(self) -> Result<VanishingReport> {
        if self.monotone {
            Ok(self)
        } else {
            Err(CertifyError::NonMonotone { table: self.table_text() })
        }
    }
}

/// Runs `run(delta)` (returning `sup_t Q` for perturbation size `delta`) for
/// each `delta`, and checks that the sup decreases with `delta` and falls to
/// at most `fraction` of its value at the largest perturbation. Needs at
/// least four sizes, successive ones a factor of 2 or more apart.
pub fn vanishing_perturbation_study<F>(deltas: &[f64], fraction: f64, mut run: F) -> Result<VanishingReport>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < 4 {
        return Err(CertifyError::InvalidParameter(format!("need at least 4 perturbation sizes, got {}", sorted.len())));
    }
    if sorted.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(CertifyError::InvalidParameter("perturbation sizes must be positive".into()));
    }
    if sorted.windows(2).any(|w| w[0] < 2.0 * w[1]) {
        return Err(CertifyError::InvalidParameter("perturbation sizes must be a factor 2 or more apart".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CertifyError::InvalidParameter(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let mut table = Vec::with_capacity(sorted.len());
    for &d in &sorted {
        table.push((d, run(d)?));
    }
    let monotone = table.windows(2).all(|w| w[1].1 <= w[0].1);
    let first = table[0].1;
    let last = table[table.len() - 1].1;
    let ratio = if first > 0.0 { last / first } else if last == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(VanishingReport { table, monotone, ratio, fraction, pass: monotone && ratio <= fraction })
}
