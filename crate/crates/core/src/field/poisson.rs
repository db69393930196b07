//! Free-space Poisson solver on a node grid by zero-padded FFT convolution
//! (Hockney's method).
//!
//! Node masses `rho * h^3` are convolved with a discrete Green kernel on a
//! grid of twice the size in every direction, which removes all periodic
//! images. The gradient kernel is the centered difference of `1/(4 pi |r|)`,
//! with the node self term replaced by the cell average of `1/|x|`.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{FieldError, GridDensity, GridField, GridScalar, GridSpec, Result, UNIT_CUBE_MEAN_INV_DIST};

/// Cached FFT plans and kernel spectra for one [`GridSpec`].
pub struct PoissonSolver {
    spec: GridSpec,
    padded: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
    /// Spectra of the three gradient kernels for `eps = +1`, scaled by
    /// `1 / padded volume`.
    gradient: [Vec<Complex64>; 3],
    potential: OnceLock<Vec<Complex64>>,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver").field("spec", &self.spec).field("padded", &self.padded).finish()
    }
}

impl PoissonSolver {
    pub fn new(spec: GridSpec) -> Self {
        let padded = spec.dims.map(|d| 2 * d);
        let mut planner = FftPlanner::new();
        let forward = padded.map(|p| planner.plan_fft_forward(p));
        let inverse = padded.map(|p| planner.plan_fft_inverse(p));
        let mut solver = PoissonSolver {
            spec,
            padded,
            forward,
            inverse,
            gradient: [Vec::new(), Vec::new(), Vec::new()],
            potential: OnceLock::new(),
        };
        let g = green_table(spec.h);
        let h = spec.h;
        let scale = 1.0 / solver.padded_len() as f64;
        for axis in 0..3 {
            let mut k = solver.kernel_array(|off| {
                let mut plus = off;
                let mut minus = off;
                plus[axis] += 1;
                minus[axis] -= 1;
                -(g(plus) - g(minus)) / (2.0 * h) * scale
            });
            solver.fft3(&mut k, false, None);
            solver.gradient[axis] = k;
        }
        solver
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn padded_len(&self) -> usize {
        self.padded.iter().product()
    }

    /// Fills the padded array with `f(offset)`; the Nyquist planes (offset
    /// `-n`) are never reached by a convolution of two grids and stay zero.
    fn kernel_array(&self, f: impl Fn([isize; 3]) -> f64 + Sync) -> Vec<Complex64> {
        let [px, py, pz] = self.padded;
        let dims = self.spec.dims;
        let wrap = |p: usize, n: usize| -> Option<isize> {
            if p < n {
                Some(p as isize)
            } else if p == n {
                None
            } else {
                Some(p as isize - 2 * n as isize)
            }
        };
        let mut out = vec![Complex64::new(0.0, 0.0); px * py * pz];
        out.par_chunks_mut(py * pz).enumerate().for_each(|(i, plane)| {
            let Some(oi) = wrap(i, dims[0]) else { return };
            for j in 0..py {
                let Some(oj) = wrap(j, dims[1]) else { continue };
                for k in 0..pz {
                    let Some(ok) = wrap(k, dims[2]) else { continue };
                    plane[j * pz + k] = Complex64::new(f([oi, oj, ok]), 0.0);
                }
            }
        });
        out
    }

    /// In-place 3-D FFT of the padded array. `support`, when given, is the
    /// nonzero block for a forward transform or the block that will be read
    /// after an inverse one; lines outside it are skipped.
    fn fft3(&self, data: &mut [Complex64], inverse: bool, support: Option<[usize; 3]>) {
        let [px, py, pz] = self.padded;
        let [sx, sy, _] = support.unwrap_or(self.padded);
        let plans = if inverse { &self.inverse } else { &self.forward };
        let z_pass = |data: &mut [Complex64], rows_x: usize, rows_y: usize| {
            data.par_chunks_mut(py * pz).take(rows_x).for_each(|plane| {
                let fft = &plans[2];
                let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                fft.process_with_scratch(&mut plane[..rows_y * pz], &mut scratch);
            });
        };
        let y_pass = |data: &mut [Complex64], rows_x: usize| {
            data.par_chunks_mut(py * pz).take(rows_x).for_each(|plane| {
                let fft = &plans[1];
                let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                let mut block = vec![Complex64::new(0.0, 0.0); py * pz];
                transpose(plane, &mut block, py, pz);
                fft.process_with_scratch(&mut block, &mut scratch);
                transpose(&block, plane, pz, py);
            });
        };
        let x_pass = |data: &mut [Complex64]| {
            let fft = &plans[0];
            let blocks: Vec<Vec<Complex64>> = (0..py)
                .into_par_iter()
                .map(|j| {
                    let mut block = vec![Complex64::new(0.0, 0.0); px * pz];
                    for i in 0..px {
                        let row = &data[(i * py + j) * pz..(i * py + j + 1) * pz];
                        for (k, v) in row.iter().enumerate() {
                            block[k * px + i] = *v;
                        }
                    }
                    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                    fft.process_with_scratch(&mut block, &mut scratch);
                    block
                })
                .collect();
            for (j, block) in blocks.iter().enumerate() {
                for i in 0..px {
                    let row = &mut data[(i * py + j) * pz..(i * py + j + 1) * pz];
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = block[k * px + i];
                    }
                }
            }
        };
        if inverse {
            x_pass(data);
            y_pass(data, sx);
            z_pass(data, sx, sy);
        } else {
            z_pass(data, sx, sy);
            y_pass(data, sx);
            x_pass(data);
        }
    }

    fn mass_spectrum(&self, rho: &GridDensity) -> Result<Vec<Complex64>> {
        self.spec.check_same(&rho.spec)?;
        if rho.values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite("density".into()));
        }
        let [nx, ny, nz] = self.spec.dims;
        let [_, py, pz] = self.padded;
        let vol = self.spec.cell_volume();
        let mut data = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for i in 0..nx {
            for j in 0..ny {
                let src = &rho.values[self.spec.index(i, j, 0)..self.spec.index(i, j, 0) + nz];
                let dst = &mut data[(i * py + j) * pz..(i * py + j) * pz + nz];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = Complex64::new(s * vol, 0.0);
                }
            }
        }
        self.fft3(&mut data, false, Some(self.spec.dims));
        Ok(data)
    }

    /// Multiplies the mass spectrum by `kernel_a + i kernel_b`, inverts, and
    /// returns the real and imaginary parts on the physical grid.
    fn convolve_pair(&self, mass: &[Complex64], ka: &[Complex64], kb: Option<&[Complex64]>) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut data: Vec<Complex64> = match kb {
            Some(kb) => mass.par_iter().zip(ka).zip(kb).map(|((m, a), b)| m * (a + i * b)).collect(),
            None => mass.par_iter().zip(ka).map(|(m, a)| m * a).collect(),
        };
        self.fft3(&mut data, true, Some(self.spec.dims));
        let [nx, ny, nz] = self.spec.dims;
        let [_, py, pz] = self.padded;
        let mut re = vec![0.0; self.spec.len()];
        let mut im = vec![0.0; self.spec.len()];
        for x in 0..nx {
            for y in 0..ny {
                let row = &data[(x * py + y) * pz..(x * py + y) * pz + nz];
                let base = self.spec.index(x, y, 0);
                for (k, v) in row.iter().enumerate() {
                    re[base + k] = v.re;
                    im[base + k] = v.im;
                }
            }
        }
        (re, im)
    }

    /// `grad Psi` at every node.
    pub fn solve_field(&self, rho: &GridDensity) -> Result<GridField> {
        let mass = self.mass_spectrum(rho)?;
        let (fx, fy) = self.convolve_pair(&mass, &self.gradient[0], Some(&self.gradient[1]));
        let (fz, _) = self.convolve_pair(&mass, &self.gradient[2], None);
        let eps = rho.epsilon_sign;
        let values = (0..self.spec.len()).map(|n| [eps * fx[n], eps * fy[n], eps * fz[n]]).collect();
        Ok(GridField { spec: self.spec, values, epsilon_sign: eps, boundary_warning: rho.touches_boundary() })
    }

    /// `Psi` at every node.
    pub fn solve_potential(&self, rho: &GridDensity) -> Result<GridScalar> {
        let kernel = self.potential.get_or_init(|| {
            let g = green_table(self.spec.h);
            let scale = 1.0 / self.padded_len() as f64;
            let mut k = self.kernel_array(|off| -g(off) * scale);
            self.fft3(&mut k, false, None);
            k
        });
        let mass = self.mass_spectrum(rho)?;
        let (psi, _) = self.convolve_pair(&mass, kernel, None);
        let eps = rho.epsilon_sign;
        Ok(GridScalar { spec: self.spec, values: psi.into_iter().map(|v| eps * v).collect() })
    }
}

/// `1/(4 pi |r|)` at integer offsets (in cells of size `h`), with the cell
/// average at 0.
fn green_table(h: f64) -> impl Fn([isize; 3]) -> f64 + Sync {
    let four_pi = 4.0 * std::f64::consts::PI;
    move |off: [isize; 3]| {
        if off == [0, 0, 0] {
            UNIT_CUBE_MEAN_INV_DIST / (four_pi * h)
        } else {
            let r2: f64 = off.iter().map(|&o| (o as f64) * (o as f64)).sum();
            1.0 / (four_pi * h * r2.sqrt())
        }
    }
}

/// `dst[c * rows + r] = src[r * cols + c]`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
