use super::{GridDensity, GridField, Result};
use crate::vec3::{self, Vec3};

/// An `L2` norm over the grid box, with the box it was taken over and a
/// rough estimate of the part of the norm lying outside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldL2 {
    pub value: f64,
    pub lower: Vec3,
    pub upper: Vec3,
    /// `sqrt(4 pi / 3 * R^3 * <|f|^2>_boundary)`: the exterior contribution
    /// of a field decaying like `r^-3` (dipole order, the leading order of a
    /// difference of equal-mass fields) from a sphere of the box volume.
    pub truncation_estimate: f64,
}

fn boundary_mean_sq(spec: &super::GridSpec, sq: &[f64]) -> f64 {
    let [nx, ny, nz] = spec.dims;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 {
                    sum += sq[spec.index(i, j, k)];
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

fn l2_of(spec: &super::GridSpec, sq: Vec<f64>) -> FieldL2 {
    let value = (sq.iter().sum::<f64>() * spec.cell_volume()).sqrt();
    let upper = spec.upper();
    let volume: f64 = (0..3).map(|a| upper[a] - spec.lower[a]).product();
    let radius = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();
    let tail = 4.0 * std::f64::consts::PI / 3.0 * radius.powi(3) * boundary_mean_sq(spec, &sq);
    FieldL2 { value, lower: spec.lower, upper, truncation_estimate: tail.sqrt() }
}

/// `|| f ||_{L2(box)}` by node quadrature.
pub fn field_l2_norm(f: &GridField) -> FieldL2 {
    l2_of(&f.spec, f.values.iter().map(|v| vec3::norm2(*v)).collect())
}

/// `|| f1 - f2 ||_{L2(box)}` by node quadrature; both fields must share a grid.
pub fn field_l2_diff(f1: &GridField, f2: &GridField) -> Result<FieldL2> {
    f1.spec.check_same(&f2.spec)?;
    Ok(l2_of(&f1.spec, f1.values.iter().zip(&f2.values).map(|(a, b)| vec3::dist2(*a, *b)).collect()))
}

/// `int rho |f1 - f2|^2 dx` by node quadrature.
pub fn t2_grid_quadrature(rho: &GridDensity, f1: &GridField, f2: &GridField) -> Result<f64> {
    rho.spec.check_same(&f1.spec)?;
    rho.spec.check_same(&f2.spec)?;
    let sum: f64 = rho
        .values
        .iter()
        .zip(f1.values.iter().zip(&f2.values))
        .map(|(r, (a, b))| r * vec3::dist2(*a, *b))
        .sum();
    Ok(sum * rho.spec.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldError, GridSpec};

    #[test]
    fn constant_field_norm() {
        let spec = GridSpec::centered(1.0, 5).unwrap();
        let f = GridField::from_fn(spec, 1.0, |_| [0.0, 3.0, 4.0]);
        let n = field_l2_norm(&f);
        let nodes = 125.0;
        assert!((n.value - (25.0 * nodes * 0.125f64).sqrt()).abs() < 1e-12);
        assert_eq!(n.lower, [-1.0; 3]);
        assert_eq!(n.upper, [1.0; 3]);
        let zero = field_l2_diff(&f, &f).unwrap();
        assert_eq!(zero.value, 0.0);
        assert_eq!(zero.truncation_estimate, 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = GridField::from_fn(GridSpec::centered(1.0, 5).unwrap(), 1.0, |_| [0.0; 3]);
        let b = GridField::from_fn(GridSpec::centered(1.0, 6).unwrap(), 1.0, |_| [0.0; 3]);
        assert!(matches!(field_l2_diff(&a, &b), Err(FieldError::GeometryMismatch)));
    }
}
