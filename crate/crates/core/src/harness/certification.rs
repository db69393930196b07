//! Certification of a finished stability ledger: per-row flags, fitted
//! constants, verdicts and a plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{num, Result, Status, Verdict};
use crate::certify::{
    check_gronwall, osgood_envelope, records_to_csv, GronwallOptions, GronwallReport, GronwallRow, StabilityRecord,
    DEFAULT_PROP31_TOLERANCE, LEMMA_TOLERANCE,
};

/// Columns appended to the record columns in the certification file.
pub const CERTIFICATION_EXTRA_COLUMNS: [&str; 13] = [
    "in_window",
    "fd_tolerance",
    "gronwall_rhs",
    "gronwall_rhs_full",
    "gronwall_pass",
    "gronwall_full_pass",
    "lemma_pass",
    "remark_pass",
    "prop31_pass",
    "envelope",
    "envelope_pass",
    "c_t1",
    "c_final",
];

/// Absolute size below which a field difference counts as zero.
const FIELD_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub fit_constants: bool,
    pub window: Option<(f64, f64)>,
    pub prop31_tolerance: f64,
    /// Required fraction of in-window steps satisfying the gap inequality.
    pub pass_fraction: f64,
    /// Whether envelope containment is meaningful (both twins solve the same
    /// discrete dynamics).
    pub containment: bool,
    /// Relative tolerance on the deposited mass across the run.
    pub mass_tolerance: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            fit_constants: true,
            window: None,
            prop31_tolerance: DEFAULT_PROP31_TOLERANCE,
            pass_fraction: 0.99,
            containment: true,
            mass_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Certification {
    pub gronwall: GronwallReport,
    pub verdicts: Vec<Verdict>,
    pub constants: BTreeMap<String, f64>,
    pub csv: String,
    pub summary: String,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }
}

fn flag(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

fn lemma_ok(r: &StabilityRecord) -> Option<bool> {
    let (w, s, q) = (r.w2_rho?, r.s_sub?, r.q_sub?);
    Some(w <= s.sqrt() + LEMMA_TOLERANCE && w * w <= 2.0 * q + LEMMA_TOLERANCE)
}

fn remark_ok(r: &StabilityRecord) -> Option<bool> {
    let (w, q) = (r.w2_phase?, r.q_sub?);
    Some(w * w <= 2.0 * q + LEMMA_TOLERANCE)
}

fn prop31_ok(r: &StabilityRecord, tol: f64) -> Option<bool> {
    match (r.prop31_ratio, r.field_l2_diff, r.prop31_rhs) {
        (Some(ratio), _, _) => Some(ratio <= 1.0 + tol),
        // A nonzero field difference against a zero bound.
        (None, Some(lhs), Some(rhs)) => Some(lhs <= FIELD_ZERO && rhs == 0.0),
        _ => None,
    }
}

fn tally(check: &str, results: impl Iterator<Item = Option<bool>>, what: &str) -> Verdict {
    let (mut n, mut ok) = (0usize, 0usize);
    for r in results.flatten() {
        n += 1;
        ok += r as usize;
    }
    if n == 0 {
        Verdict::new(check, Status::NotApplicable, format!("no {what}"))
    } else {
        Verdict::new(check, Status::from_bool(ok == n), format!("{ok}/{n} {what} pass"))
    }
}

/// Runs every check over `records` and renders the certification file and summary.
pub fn certify_records(records: &[StabilityRecord], opts: &CertifyOptions) -> Result<Certification> {
    let gronwall = check_gronwall(records, &GronwallOptions { window: opts.window, fit_constants: opts.fit_constants })?;
    let rows: BTreeMap<usize, &GronwallRow> = gronwall.rows.iter().map(|r| (r.step, r)).collect();
    let containment = gronwall.containment.as_ref().filter(|_| opts.containment);

    let mut constants = BTreeMap::new();
    if let Some(c) = gronwall.c_t1 {
        constants.insert("c_t1".to_string(), c);
    }
    if let Some(c) = gronwall.c_final {
        constants.insert("c_final".to_string(), c);
    }
    let max_of = |f: fn(&StabilityRecord) -> Option<f64>| records.iter().filter_map(f).reduce(f64::max);
    if let Some(m) = max_of(|r| r.prop31_ratio) {
        constants.insert("max_prop31_ratio".to_string(), m);
    }
    if let Some(m) = max_of(|r| r.loglip_c) {
        constants.insert("max_loglip_c".to_string(), m);
    }

    // Certification table.
    let base = records_to_csv(records)?;
    let mut lines = base.lines();
    let mut csv = String::new();
    let _ = writeln!(csv, "{},{}", lines.next().unwrap_or_default(), CERTIFICATION_EXTRA_COLUMNS.join(","));
    let span = containment.map(|c| (c.t0, gronwall.window.map_or(c.t0, |w| w.1)));
    let mut envelope_flags = Vec::new();
    for (r, line) in records.iter().zip(lines) {
        let g = rows.get(&r.step);
        let mut cells: Vec<String> = Vec::with_capacity(CERTIFICATION_EXTRA_COLUMNS.len());
        cells.push(flag(g.map(|g| g.in_window)).to_string());
        for v in [g.map(|g| g.fd_tolerance), g.map(|g| g.rhs), g.map(|g| g.rhs_full)] {
            cells.push(v.map(|v| num(v, "certification")).transpose()?.unwrap_or_default());
        }
        cells.push(flag(g.map(|g| g.pass)).to_string());
        cells.push(flag(g.map(|g| g.pass_full)).to_string());
        cells.push(flag(lemma_ok(r)).to_string());
        cells.push(flag(remark_ok(r)).to_string());
        cells.push(flag(prop31_ok(r, opts.prop31_tolerance)).to_string());
        let env = match (containment, span) {
            (Some(c), Some((t0, t1))) if r.t >= t0 && r.t <= t1 => Some(osgood_envelope(c.c, c.q0, r.t - t0)?.value),
            _ => None,
        };
        let env_pass = env.map(|y| r.q <= y * (1.0 + 1e-12));
        envelope_flags.push(env_pass);
        cells.push(env.map(|v| num(v, "envelope")).transpose()?.unwrap_or_default());
        cells.push(flag(env_pass).to_string());
        for c in [gronwall.c_t1, gronwall.c_final] {
            cells.push(c.map(|v| num(v, "constant")).transpose()?.unwrap_or_default());
        }
        let _ = writeln!(csv, "{line},{}", cells.join(","));
    }

    // Verdicts.
    let mut verdicts = Vec::new();
    verdicts.push(if gronwall.checked == 0 {
        Verdict::new("gronwall", Status::NotApplicable, "no in-window steps with Q > 0")
    } else {
        let (a, b) = gronwall.window.expect("checked steps have a window");
        Verdict::new(
            "gronwall",
            Status::from_bool(gronwall.pass_fraction() >= opts.pass_fraction),
            format!("{}/{} in-window steps, window [{a:e}, {b:e}]", gronwall.passed, gronwall.checked),
        )
    });
    verdicts.push(if gronwall.checked == 0 {
        Verdict::new("gronwall-full", Status::NotApplicable, "no in-window steps with Q > 0")
    } else {
        Verdict::new(
            "gronwall-full",
            Status::from_bool(gronwall.pass_fraction_full() >= opts.pass_fraction),
            format!("{}/{} in-window steps with all constants kept", gronwall.passed_full, gronwall.checked),
        )
    });
    verdicts.push(match (opts.fit_constants, opts.containment, containment) {
        (false, _, _) => Verdict::new("envelope", Status::NotApplicable, "constants not fitted"),
        (_, false, _) => Verdict::new("envelope", Status::NotApplicable, "twins use different field models"),
        (_, _, None) => Verdict::new("envelope", Status::NotApplicable, "no window"),
        (_, _, Some(c)) => Verdict::new(
            "envelope",
            Status::from_bool(c.contained),
            match c.first_violation {
                None => format!("Q contained for C = {:e} from t = {:e}", c.c, c.t0),
                Some(k) => format!("Q leaves the envelope {k} records after t = {:e}", c.t0),
            },
        ),
    });
    verdicts.push(tally("lemma", records.iter().map(lemma_ok), "OT steps"));
    verdicts.push(tally("remark", records.iter().map(remark_ok), "OT steps"));
    verdicts.push(tally("prop31", records.iter().map(|r| prop31_ok(r, opts.prop31_tolerance)), "OT steps"));
    let mass_dev = |f: fn(&StabilityRecord) -> f64| {
        let m0 = records.first().map(f).unwrap_or(0.0);
        records.iter().map(|r| if m0 > 0.0 { (f(r) - m0).abs() / m0 } else { 0.0 }).fold(0.0, f64::max)
    };
    let dev = mass_dev(|r| r.mass1).max(mass_dev(|r| r.mass2));
    verdicts.push(Verdict::new(
        "mass",
        Status::from_bool(dev <= opts.mass_tolerance),
        format!("max relative deposited-mass change {dev:e}"),
    ));

    let summary = render_summary(records, &gronwall, &verdicts, &constants, !gronwall.skipped.is_empty());
    Ok(Certification { gronwall, verdicts, constants, csv, summary })
}

fn render_summary(
    records: &[StabilityRecord],
    g: &GronwallReport,
    verdicts: &[Verdict],
    constants: &BTreeMap<String, f64>,
    skipped: bool,
) -> String {
    let mut s = String::new();
    let (t0, t1) = match (records.first(), records.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (0.0, 0.0),
    };
    let _ = writeln!(s, "records: {} rows, t in [{t0:e}, {t1:e}]", records.len());
    if skipped {
        let steps: Vec<String> = g.skipped.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "skipped (Q = 0): {} steps: {}", g.skipped.len(), steps.join(" "));
    }
    for (k, v) in constants {
        let _ = writeln!(s, "{k} = {v:e}");
    }
    for v in verdicts {
        let _ = writeln!(s, "{:<13} {:<4} {}", v.check, v.status.label(), v.detail);
    }
    let pass = verdicts.iter().all(|v| v.status != Status::Fail);
    let _ = writeln!(s, "verdict: {}", if pass { "PASS" } else { "FAIL" });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_streaming(delta: f64) -> Vec<StabilityRecord> {
        (0..=20)
            .map(|k| {
                let t = 0.1 * k as f64;
                StabilityRecord {
                    step: k,
                    t,
                    q: 0.5 * delta * delta * (1.0 + t * t),
                    s: delta * delta * t * t,
                    max_gap: delta * (1.0 + t * t).sqrt(),
                    ..Default::default()
                }
            })
            .collect()
    }

    #[test]
    fn zero_records_pass_trivially() {
        let rs: Vec<StabilityRecord> =
            (0..6).map(|k| StabilityRecord { step: k, t: 0.1 * k as f64, ..Default::default() }).collect();
        let c = certify_records(&rs, &CertifyOptions::default()).unwrap();
        assert!(c.passed(), "{}", c.summary);
        assert_eq!(c.verdicts[0].status, Status::NotApplicable);
        assert!(c.summary.contains("skipped (Q = 0): 4 steps"));
    }

    #[test]
    fn free_streaming_passes() {
        let c = certify_records(&free_streaming(0.01), &CertifyOptions::default()).unwrap();
        assert!(c.passed(), "{}", c.summary);
        assert_eq!(c.verdicts[0].status, Status::Pass);
        assert_eq!(c.verdicts[1].status, Status::Pass);
        assert_eq!(c.verdicts[2].status, Status::Pass);
        let header = c.csv.lines().next().unwrap();
        assert!(header.ends_with("envelope,envelope_pass,c_t1,c_final"));
        assert_eq!(c.csv.lines().count(), 22);
    }

    #[test]
    fn prop31_violation_fails() {
        let mut rs = free_streaming(0.01);
        rs[4].prop31_ratio = Some(1.2);
        rs[8].field_l2_diff = Some(0.5);
        rs[8].prop31_rhs = Some(0.0);
        let c = certify_records(&rs, &CertifyOptions::default()).unwrap();
        let v = c.verdicts.iter().find(|v| v.check == "prop31").unwrap();
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.detail, "0/2 OT steps pass");
    }
}
