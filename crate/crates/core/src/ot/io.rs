//! Plain-text cloud and plan formats.
//!
//! A cloud file starts with a header line `d count`, followed by `count`
//! rows of `d` coordinates and a weight (`x y z w`, or `x y z vx vy vz w` in
//! phase space). Plans are written one `i j mass` triple per line. Blank lines
//! and lines starting with `#` are ignored on input.

use std::io::{BufRead, Write};

use super::{OtError, PlanEntry, Result, TransportPlan, WeightedCloud};

fn parse_err(line: usize, msg: impl Into<String>) -> OtError {
    OtError::Parse { line, msg: msg.into() }
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true))
}

pub fn read_cloud<R: BufRead>(reader: R) -> Result<WeightedCloud> {
    let mut lines = content_lines(reader);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let header = header?;
    let mut it = header.split_whitespace();
    let dim: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(hl, "header must be `d count`"))?;
    let count: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(hl, "header must be `d count`"))?;
    if it.next().is_some() || dim == 0 {
        return Err(parse_err(hl, "header must be `d count`"));
    }
    let mut coords = Vec::with_capacity(dim * count);
    let mut weights = Vec::with_capacity(count);
    for (ln, line) in lines {
        let line = line?;
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(ln, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if fields.len() != dim + 1 {
            return Err(parse_err(ln, format!("expected {} values, found {}", dim + 1, fields.len())));
        }
        if weights.len() == count {
            return Err(parse_err(ln, format!("more than {count} rows")));
        }
        coords.extend_from_slice(&fields[..dim]);
        weights.push(fields[dim]);
    }
    if weights.len() != count {
        return Err(parse_err(hl, format!("header announces {count} rows, found {}", weights.len())));
    }
    WeightedCloud::new(dim, coords, weights)
}

pub fn write_cloud<W: Write>(mut w: W, cloud: &WeightedCloud) -> Result<()> {
    writeln!(w, "{} {}", cloud.dim(), cloud.len())?;
    let mut row = String::new();
    for (p, m) in cloud.points().zip(cloud.weights()) {
        row.clear();
        for c in p {
            row.push_str(&format!("{c:e} "));
        }
        row.push_str(&format!("{m:e}"));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn write_plan<W: Write>(mut w: W, plan: &TransportPlan) -> Result<()> {
    for e in plan.entries() {
        writeln!(w, "{} {} {:e}", e.source, e.target, e.mass)?;
    }
    Ok(())
}

pub fn read_plan_entries<R: BufRead>(reader: R) -> Result<Vec<PlanEntry>> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(reader) {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(ln, "expected `i j mass`"));
        }
        let source = t[0].parse().map_err(|_| parse_err(ln, "bad source index"))?;
        let target = t[1].parse().map_err(|_| parse_err(ln, "bad target index"))?;
        let mass = t[2].parse().map_err(|_| parse_err(ln, "bad mass"))?;
        out.push(PlanEntry { source, target, mass });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "3 2\n0 0 0 0.5\n# comment\n1 0 x 0.5\n";
        match read_cloud(text.as_bytes()) {
            Err(OtError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let short = "3 3\n0 0 0 0.5\n1 0 0 0.5\n";
        assert!(matches!(read_cloud(short.as_bytes()), Err(OtError::Parse { line: 1, .. })));
    }

    #[test]
    fn plan_roundtrip() {
        let a = WeightedCloud::uniform(3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1.0).unwrap();
        let plan = TransportPlan::identity_pairing(a.clone(), a).unwrap();
        let mut buf = Vec::new();
        write_plan(&mut buf, &plan).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0 0 5e-1\n1 1 5e-1\n");
        assert_eq!(read_plan_entries(&buf[..]).unwrap(), plan.entries());
    }

    proptest! {
        #[test]
        fn cloud_roundtrip(dim in prop::sample::select(vec![3usize, 6]),
                           raw in prop::collection::vec((-1e3f64..1e3, 1e-6f64..10.0), 1..20)) {
            let mut coords = Vec::new();
            let mut weights = Vec::new();
            for (k, (c, w)) in raw.iter().enumerate() {
                for d in 0..dim {
                    coords.push(c * (d as f64 + 1.0) - k as f64 / 7.0);
                }
                weights.push(*w);
            }
            let cloud = WeightedCloud::new(dim, coords, weights).unwrap();
            let mut buf = Vec::new();
            write_cloud(&mut buf, &cloud).unwrap();
            let back = read_cloud(&buf[..]).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
