//! The envelope `y' = C y (1 - log y)`, `y(0) = Q0`.

use super::{CertifyError, Result};

/// Steps per unit time (at least 64 steps) for the numerical envelope.
const RK4_STEPS_PER_UNIT: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeValue {
    pub value: f64,
    /// Evaluated with RK4 instead of the closed form (`Q0 > e`).
    pub numeric: bool,
}

fn check(c: f64, q0: f64, t: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite() && q0 >= 0.0 && q0.is_finite() && t >= 0.0 && t.is_finite()) {
        return Err(CertifyError::InvalidParameter(format!("envelope needs C, Q0, t >= 0; got {c}, {q0}, {t}")));
    }
    Ok(())
}

/// `y(t) = exp(1 - (1 - log Q0) e^{-C t})` for `0 < Q0 <= e`; `Q0 > e` is
/// integrated numerically and flagged.
pub fn osgood_envelope(c: f64, q0: f64, t: f64) -> Result<EnvelopeValue> {
    check(c, q0, t)?;
    if q0 == 0.0 {
        return Ok(EnvelopeValue { value: 0.0, numeric: false });
    }
    if q0 > std::f64::consts::E {
        let steps = (t * RK4_STEPS_PER_UNIT).ceil().max(64.0);
        let value = osgood_rk4(c, q0, t, t / steps)?;
        return Ok(EnvelopeValue { value, numeric: true });
    }
    Ok(EnvelopeValue { value: (1.0 - (1.0 - q0.ln()) * (-c * t).exp()).exp(), numeric: false })
}

/// `C y (1 - log y)`.
pub fn osgood_derivative(c: f64, y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        c * y * (1.0 - y.ln())
    }
}

/// Classical RK4 for the envelope from 0 to `t` with step at most `dt`.
pub fn osgood_rk4(c: f64, q0: f64, t: f64, dt: f64) -> Result<f64> {
    check(c, q0, t)?;
    if !(dt > 0.0) {
        return Err(CertifyError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = (t / dt).ceil() as usize;
    if n == 0 {
        return Ok(q0);
    }
    let h = t / n as f64;
    let f = |y: f64| osgood_derivative(c, y);
    let mut y = q0;
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub c: f64,
    /// Start of the envelope.
    pub t0: f64,
    pub q0: f64,
    pub contained: bool,
    /// Index (into the series) of the first point above the envelope.
    pub first_violation: Option<usize>,
    /// `min (y - Q) / y` over the series.
    pub worst_margin: f64,
    pub numeric: bool,
}

/// Checks `Q(t) <= y(t - t0; C, Q(t0))` along `series = [(t, Q)]`, with a
/// relative slack of `1e-12`.
pub fn osgood_contain(series: &[(f64, f64)], c: f64) -> Result<ContainmentReport> {
    let Some(&(t0, q0)) = series.first() else {
        return Err(CertifyError::InvalidParameter("empty series".into()));
    };
    let mut report =
        ContainmentReport { c, t0, q0, contained: true, first_violation: None, worst_margin: f64::INFINITY, numeric: false };
    for (k, &(t, q)) in series.iter().enumerate() {
        let y = osgood_envelope(c, q0, (t - t0).max(0.0))?;
        report.numeric |= y.numeric;
        let margin = if y.value > 0.0 {
            (y.value - q) / y.value
        } else if q <= 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        report.worst_margin = report.worst_margin.min(margin);
        if q > y.value * (1.0 + 1e-12) && report.first_violation.is_none() {
            report.contained = false;
            report.first_violation = Some(k);
        }
    }
    Ok(report)
}
