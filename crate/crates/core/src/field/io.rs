//! Grid dumps: a flat little-endian `f64` file next to a JSON sidecar, and
//! CSV slices for plotting.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FieldError, GridDensity, GridField, GridSpec, Result};

/// Sidecar describing a `.bin` dump. Values are stored x-major with z
/// fastest and the `components` of a node adjacent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub dims: [usize; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub h: f64,
    pub epsilon_sign: f64,
    pub components: usize,
    pub quantity: String,
}

impl DumpHeader {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.lower, self.dims, self.h)
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn write_dump(stem: &Path, header: &DumpHeader, data: impl Iterator<Item = f64>) -> Result<Vec<PathBuf>> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::new();
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin, bytes)?;
    let mut text = serde_json::to_string_pretty(header).map_err(|e| FieldError::Dump(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json, text)?;
    Ok(vec![bin, json])
}

/// Writes `<stem>.bin` and `<stem>.json`; returns both paths.
pub fn write_density_dump(stem: &Path, rho: &GridDensity) -> Result<Vec<PathBuf>> {
    let header = DumpHeader {
        dims: rho.spec.dims,
        lower: rho.spec.lower,
        upper: rho.spec.upper(),
        h: rho.spec.h,
        epsilon_sign: rho.epsilon_sign,
        components: 1,
        quantity: "density".into(),
    };
    write_dump(stem, &header, rho.values.iter().copied())
}

pub fn write_field_dump(stem: &Path, field: &GridField) -> Result<Vec<PathBuf>> {
    let header = DumpHeader {
        dims: field.spec.dims,
        lower: field.spec.lower,
        upper: field.spec.upper(),
        h: field.spec.h,
        epsilon_sign: field.epsilon_sign,
        components: 3,
        quantity: "grad_psi".into(),
    };
    write_dump(stem, &header, field.values.iter().flatten().copied())
}

/// Reads a dump back as its header and flat values.
pub fn read_dump(stem: &Path) -> Result<(DumpHeader, Vec<f64>)> {
    let (bin, json) = paths(stem);
    let header: DumpHeader =
        serde_json::from_str(&std::fs::read_to_string(json)?).map_err(|e| FieldError::Dump(e.to_string()))?;
    let bytes = std::fs::read(bin)?;
    let expected = header.dims.iter().product::<usize>() * header.components * 8;
    if bytes.len() != expected {
        return Err(FieldError::Dump(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

/// CSV of the density on the z-plane `k`: columns `x,y,rho`.
pub fn write_density_slice<W: Write>(mut out: W, rho: &GridDensity, k: usize) -> Result<()> {
    let s = rho.spec;
    if k >= s.dims[2] {
        return Err(FieldError::InvalidGrid(format!("slice {k} outside {} planes", s.dims[2])));
    }
    writeln!(out, "x,y,rho")?;
    for i in 0..s.dims[0] {
        for j in 0..s.dims[1] {
            let p = s.node(i, j, k);
            writeln!(out, "{:e},{:e},{:e}", p[0], p[1], rho.values[s.index(i, j, k)])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new([-1.0, 0.0, 0.5], [3, 2, 4], 0.25).unwrap();
        let rho = GridDensity::from_fn(spec, -1.0, |p| p[0] * p[0] + p[2]);
        let field = GridField::from_fn(spec, -1.0, |p| [p[0], -p[1], 1.0 / 3.0]);
        write_density_dump(&dir.path().join("rho"), &rho).unwrap();
        write_field_dump(&dir.path().join("field"), &field).unwrap();
        let (h, v) = read_dump(&dir.path().join("rho")).unwrap();
        assert_eq!(h.spec().unwrap(), spec);
        assert_eq!(h.epsilon_sign, -1.0);
        assert_eq!(v, rho.values);
        let (h, v) = read_dump(&dir.path().join("field")).unwrap();
        assert_eq!(h.components, 3);
        let flat: Vec<f64> = field.values.iter().flatten().copied().collect();
        assert_eq!(v, flat);
    }

    #[test]
    fn truncated_dump_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::centered(1.0, 2).unwrap();
        let stem = dir.path().join("d");
        write_density_dump(&stem, &GridDensity::zeros(spec, 1.0)).unwrap();
        std::fs::write(stem.with_extension("bin"), [0u8; 12]).unwrap();
        assert!(matches!(read_dump(&stem), Err(FieldError::Dump(_))));
    }

    #[test]
    fn slice_has_header_and_rows() {
        let spec = GridSpec::centered(1.0, 3).unwrap();
        let rho = GridDensity::from_fn(spec, 1.0, |p| p[0] + 2.0);
        let mut buf = Vec::new();
        write_density_slice(&mut buf, &rho, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,rho");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1], "-1e0,-1e0,1e0");
    }
}
