use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CertifyError, Result, StabilityRecord};

/// Column order of the records file.
pub const RECORD_COLUMNS: [&str; 22] = [
    "step",
    "t",
    "q",
    "dqdt",
    "t1",
    "t2",
    "t2_grid",
    "s",
    "max_gap",
    "sup_rho1",
    "sup_rho2",
    "mass1",
    "mass2",
    "q_sub",
    "s_sub",
    "w2_rho",
    "w2_phase",
    "field_l2_diff",
    "field_l2_trunc",
    "prop31_rhs",
    "prop31_ratio",
    "loglip_c",
];

fn cell(x: f64) -> Result<String> {
    if x.is_finite() {
        Ok(format!("{x:e}"))
    } else {
        Err(CertifyError::InvalidParameter(format!("non-finite value {x} in records")))
    }
}

fn opt(x: Option<f64>) -> Result<String> {
    x.map_or(Ok(String::new()), cell)
}

fn row(r: &StabilityRecord) -> Result<Vec<String>> {
    let mut v = vec![r.step.to_string()];
    for x in [r.t, r.q] {
        v.push(cell(x)?);
    }
    v.push(opt(r.dqdt)?);
    for x in [r.t1, r.t2] {
        v.push(cell(x)?);
    }
    v.push(opt(r.t2_grid)?);
    for x in [r.s, r.max_gap, r.sup_rho1, r.sup_rho2, r.mass1, r.mass2] {
        v.push(cell(x)?);
    }
    for x in [
        r.q_sub,
        r.s_sub,
        r.w2_rho,
        r.w2_phase,
        r.field_l2_diff,
        r.field_l2_trunc,
        r.prop31_rhs,
        r.prop31_ratio,
        r.loglip_c,
    ] {
        v.push(opt(x)?);
    }
    Ok(v)
}

/// Renders records as CSV (header plus one line per record, `{:e}` floats,
/// empty cells for absent values).
pub fn records_to_csv(records: &[StabilityRecord]) -> Result<String> {
    let mut out = RECORD_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&row(r)?.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records_csv(path: &Path, records: &[StabilityRecord]) -> Result<()> {
    let text = records_to_csv(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<StabilityRecord>> {
    parse_records_csv(&fs::read_to_string(path)?)
}

pub fn parse_records_csv(text: &str) -> Result<Vec<StabilityRecord>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header.split(',').ne(RECORD_COLUMNS) {
        return Err(CertifyError::Parse { line: 1, msg: format!("expected header {}", RECORD_COLUMNS.join(",")) });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CertifyError::Parse { line: line_no, msg };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != RECORD_COLUMNS.len() {
            return Err(err(format!("expected {} cells, found {}", RECORD_COLUMNS.len(), cells.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 =
                cells[k].trim().parse().map_err(|_| err(format!("bad number {:?} in {}", cells[k], RECORD_COLUMNS[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("non-finite {}", RECORD_COLUMNS[k])))
            }
        };
        let opt = |k: usize| -> Result<Option<f64>> {
            if cells[k].trim().is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let step = cells[0].trim().parse().map_err(|_| err(format!("bad step {:?}", cells[0])))?;
        out.push(StabilityRecord {
            step,
            t: num(1)?,
            q: num(2)?,
            dqdt: opt(3)?,
            t1: num(4)?,
            t2: num(5)?,
            t2_grid: opt(6)?,
            s: num(7)?,
            max_gap: num(8)?,
            sup_rho1: num(9)?,
            sup_rho2: num(10)?,
            mass1: num(11)?,
            mass2: num(12)?,
            q_sub: opt(13)?,
            s_sub: opt(14)?,
            w2_rho: opt(15)?,
            w2_phase: opt(16)?,
            field_l2_diff: opt(17)?,
            field_l2_trunc: opt(18)?,
            prop31_rhs: opt(19)?,
            prop31_ratio: opt(20)?,
            loglip_c: opt(21)?,
        });
    }
    Ok(out)
}
