use rayon::prelude::*;

use super::{FieldError, Result, VectorField};
use crate::vec3::{self, Vec3};

/// Axis-aligned node lattice `lower + h * (i, j, k)`, `0 <= i < dims[0]` etc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lower: Vec3,
    pub dims: [usize; 3],
    pub h: f64,
}

/// Relative slack (in cells) when deciding whether a point lies in the box.
const BOX_SLACK: f64 = 1e-9;

impl GridSpec {
    pub fn new(lower: Vec3, dims: [usize; 3], h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(FieldError::InvalidGrid(format!("need at least 2 nodes per axis, got {dims:?}")));
        }
        if !vec3::is_finite(lower) {
            return Err(FieldError::InvalidGrid("non-finite lower corner".into()));
        }
        Ok(GridSpec { lower, dims, h })
    }

    /// Cube `[-half_width, half_width]^3` with `n` nodes per axis.
    pub fn centered(half_width: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(FieldError::InvalidGrid(format!("need at least 2 nodes per axis, got {n}")));
        }
        Self::new([-half_width; 3], [n; 3], 2.0 * half_width / (n - 1) as f64)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.lower[a] + self.h * (self.dims[a] - 1) as f64)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.lower[0] + self.h * i as f64,
            self.lower[1] + self.h * j as f64,
            self.lower[2] + self.h * k as f64,
        ]
    }

    pub fn node_at(&self, idx: usize) -> Vec3 {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        self.node(i, j, k)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.locate(p).is_some()
    }

    /// Same lower corner, doubled spacing, covering at least the same box.
    pub fn coarsened(&self) -> GridSpec {
        let dims = self.dims.map(|d| (d - 1).div_ceil(2) + 1);
        GridSpec { lower: self.lower, dims, h: 2.0 * self.h }
    }

    /// Lower corner index and fractional offsets of the cell containing `p`.
    pub(crate) fn locate(&self, p: Vec3) -> Option<([usize; 3], [f64; 3])> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let u = (p[a] - self.lower[a]) / self.h;
            if !(u >= -BOX_SLACK && u <= (n - 1) as f64 + BOX_SLACK) {
                return None;
            }
            let u = u.clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        Some((base, frac))
    }

    /// The eight (node index, trilinear weight) pairs around a located point.
    #[inline]
    pub(crate) fn stencil(&self, base: [usize; 3], frac: [f64; 3]) -> [(usize, f64); 8] {
        let mut out = [(0usize, 0.0); 8];
        let mut n = 0;
        for di in 0..2 {
            let wx = if di == 0 { 1.0 - frac[0] } else { frac[0] };
            for dj in 0..2 {
                let wy = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                for dk in 0..2 {
                    let wz = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                    out[n] = (self.index(base[0] + di, base[1] + dj, base[2] + dk), wx * wy * wz);
                    n += 1;
                }
            }
        }
        out
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FieldError::GeometryMismatch)
        }
    }
}

/// Node values of a density `rho`, with the sign of the coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub epsilon_sign: f64,
}

impl GridDensity {
    pub fn zeros(spec: GridSpec, epsilon_sign: f64) -> Self {
        GridDensity { spec, values: vec![0.0; spec.len()], epsilon_sign }
    }

    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, epsilon_sign: f64, f: impl Fn(Vec3) -> f64 + Sync) -> Self {
        let values = (0..spec.len()).into_par_iter().map(|idx| f(spec.node_at(idx))).collect();
        GridDensity { spec, values, epsilon_sign }
    }

    /// Node sum times the cell volume.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        GridDensity { spec: self.spec, values: self.values.iter().map(|v| k * v).collect(), epsilon_sign: self.epsilon_sign }
    }

    /// Bounding box of the nodes carrying nonzero density.
    pub fn support_bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for (idx, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                any = true;
                let p = self.spec.node_at(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// Whether any boundary node carries density; the free-space solution
    /// is still computed but mass may have been clipped by the box.
    pub fn touches_boundary(&self) -> bool {
        let [nx, ny, nz] = self.spec.dims;
        self.values.iter().enumerate().any(|(idx, &v)| {
            if v == 0.0 {
                return false;
            }
            let k = idx % nz;
            let j = (idx / nz) % ny;
            let i = idx / (ny * nz);
            i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1
        })
    }
}

/// Node values of a scalar (used for the potential).
#[derive(Debug, Clone, PartialEq)]
pub struct GridScalar {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridScalar {
    pub fn eval(&self, p: Vec3) -> Result<f64> {
        let (base, frac) = self.spec.locate(p).ok_or(FieldError::OutsideBox { points: vec![0] })?;
        Ok(self.spec.stencil(base, frac).iter().map(|&(idx, w)| w * self.values[idx]).sum())
    }
}

/// Node values of `grad Psi`, trilinearly interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<Vec3>,
    pub epsilon_sign: f64,
    /// The source density touched the box boundary.
    pub boundary_warning: bool,
}

impl GridField {
    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, epsilon_sign: f64, f: impl Fn(Vec3) -> Vec3 + Sync) -> Self {
        let values = (0..spec.len()).into_par_iter().map(|idx| f(spec.node_at(idx))).collect();
        GridField { spec, values, epsilon_sign, boundary_warning: false }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(vec3::norm(*v)))
    }

    /// Largest Frobenius norm of the finite-difference Jacobian over the
    /// nodes (central differences inside, one-sided on the faces).
    pub fn max_jacobian_norm(&self) -> f64 {
        let s = self.spec;
        let [nx, ny, nz] = s.dims;
        let at = |i: usize, j: usize, k: usize| self.values[s.index(i, j, k)];
        let diff = |lo: Vec3, hi: Vec3, span: usize| vec3::scale(vec3::sub(hi, lo), 1.0 / (span as f64 * s.h));
        (0..s.len())
            .into_par_iter()
            .map(|idx| {
                let k = idx % nz;
                let j = (idx / nz) % ny;
                let i = idx / (ny * nz);
                let (i0, i1) = (i.saturating_sub(1), (i + 1).min(nx - 1));
                let (j0, j1) = (j.saturating_sub(1), (j + 1).min(ny - 1));
                let (k0, k1) = (k.saturating_sub(1), (k + 1).min(nz - 1));
                let dx = diff(at(i0, j, k), at(i1, j, k), i1 - i0);
                let dy = diff(at(i, j0, k), at(i, j1, k), j1 - j0);
                let dz = diff(at(i, j, k0), at(i, j, k1), k1 - k0);
                (vec3::norm2(dx) + vec3::norm2(dy) + vec3::norm2(dz)).sqrt()
            })
            .reduce(|| 0.0, f64::max)
    }
}

impl VectorField for GridField {
    fn eval(&self, p: Vec3) -> Result<Vec3> {
        let (base, frac) = self.spec.locate(p).ok_or(FieldError::OutsideBox { points: vec![0] })?;
        let mut out = [0.0; 3];
        for (idx, w) in self.spec.stencil(base, frac) {
            out = vec3::axpy(out, w, self.values[idx]);
        }
        Ok(out)
    }
}

/// Cloud-in-cell deposit: each particle spreads `w / h^3` over the eight
/// nodes of its cell with trilinear weights, so the node sum times `h^3`
/// equals the total weight. Particles outside the box are reported together.
///
/// Stencils are computed in parallel and accumulated in particle order, so
/// the result does not depend on the thread count.
pub fn cic_deposit(positions: &[Vec3], weights: &[f64], spec: &GridSpec, epsilon_sign: f64) -> Result<GridDensity> {
    if positions.len() != weights.len() {
        return Err(FieldError::InvalidGrid(format!(
            "{} positions but {} weights",
            positions.len(),
            weights.len()
        )));
    }
    if positions.iter().any(|p| !vec3::is_finite(*p)) || weights.iter().any(|w| !w.is_finite()) {
        return Err(FieldError::NonFinite("particle data".into()));
    }
    let located: Vec<Option<([usize; 3], [f64; 3])>> = positions.par_iter().map(|&p| spec.locate(p)).collect();
    let escaped: Vec<usize> = located.iter().enumerate().filter(|(_, l)| l.is_none()).map(|(i, _)| i).collect();
    if !escaped.is_empty() {
        return Err(FieldError::Escaped { indices: escaped });
    }
    let inv_vol = 1.0 / spec.cell_volume();
    let mut values = vec![0.0; spec.len()];
    for (loc, &w) in located.iter().zip(weights) {
        let (base, frac) = loc.expect("checked above");
        let q = w * inv_vol;
        for (idx, s) in spec.stencil(base, frac) {
            values[idx] += q * s;
        }
    }
    Ok(GridDensity { spec: *spec, values, epsilon_sign })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_particle_lands_on_node() {
        let g = GridSpec::centered(1.0, 5).unwrap();
        let rho = cic_deposit(&[[0.0, 0.5, -0.5]], &[2.0], &g, 1.0).unwrap();
        let idx = g.index(2, 3, 1);
        assert_eq!(rho.values[idx], 2.0 / g.cell_volume());
        assert_eq!(rho.values.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn escapes_are_listed() {
        let g = GridSpec::centered(1.0, 5).unwrap();
        let pts = [[0.0; 3], [1.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.01, 0.0]];
        match cic_deposit(&pts, &[1.0; 4], &g, 1.0) {
            Err(FieldError::Escaped { indices }) => assert_eq!(indices, vec![1, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coarsened_covers_box() {
        let g = GridSpec::new([0.0; 3], [64, 65, 2], 0.1).unwrap();
        let c = g.coarsened();
        assert_eq!(c.h, 0.2);
        for a in 0..3 {
            assert!(c.upper()[a] >= g.upper()[a] - 1e-12);
        }
        assert_eq!(c.dims, [33, 33, 2]);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = GridSpec::centered(1.0, 7).unwrap();
        let f = GridField::from_fn(g, 1.0, |p| [2.0 * p[0] - p[1], p[2] + 0.5, 3.0]);
        let v = f.eval([0.123, -0.456, 0.789]).unwrap();
        assert!((v[0] - (0.246 + 0.456)).abs() < 1e-14);
        assert!((v[1] - 1.289).abs() < 1e-14);
        assert!((v[2] - 3.0).abs() < 1e-14);
        assert!(matches!(f.eval([1.2, 0.0, 0.0]), Err(FieldError::OutsideBox { .. })));
    }

    #[test]
    fn eval_many_lists_outside_points() {
        let g = GridSpec::centered(1.0, 3).unwrap();
        let f = GridField::from_fn(g, 1.0, |_| [1.0, 0.0, 0.0]);
        match f.eval_many(&[[0.0; 3], [2.0, 0.0, 0.0], [0.5; 3], [0.0, 0.0, -3.0]]) {
            Err(FieldError::OutsideBox { points }) => assert_eq!(points, vec![1, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jacobian_of_linear_field() {
        let g = GridSpec::centered(1.0, 6).unwrap();
        let f = GridField::from_fn(g, 1.0, |p| [3.0 * p[0], 0.0, 4.0 * p[0]]);
        assert!((f.max_jacobian_norm() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deposit_conserves_mass(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.01f64..2.0), 1..60),
        ) {
            let g = GridSpec::centered(1.0, 9).unwrap();
            let positions: Vec<Vec3> = pts.iter().map(|t| [t.0, t.1, t.2]).collect();
            let weights: Vec<f64> = pts.iter().map(|t| t.3).collect();
            let rho = cic_deposit(&positions, &weights, &g, 1.0).unwrap();
            let total: f64 = weights.iter().sum();
            prop_assert!((rho.mass() - total).abs() <= 1e-12 * total);
            prop_assert!(rho.values.iter().all(|v| *v >= 0.0));
        }
    }
}
