use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::{FieldError, Result, VectorField};
use crate::vec3::{self, Vec3};

/// Largest admissible pair separation.
const MAX_SEPARATION: f64 = 0.5;

/// Placement attempts per pair before the pair is dropped.
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LogLipReport {
    /// `sup |f(x) - f(y)| / (|x - y| log(1 / |x - y|))` over the sampled pairs.
    pub constant: f64,
    /// Pair attaining the sup (the first one on ties).
    pub argmax: (Vec3, Vec3),
    pub pairs: usize,
}

/// Empirical log-Lipschitz constant of `field` over pairs drawn in `region`.
///
/// Separations are stratified on a log scale over `[min_separation, 1/2)`:
/// pair `k` of `pairs` draws `log r` uniformly in the `k`-th of `pairs` equal
/// slices. Directions are uniform on the sphere and base points uniform in the
/// region, with the second point required to stay in the region. The sample is
/// a fixed function of `seed`.
pub fn loglip_modulus<F: VectorField + ?Sized>(
    field: &F,
    region: (Vec3, Vec3),
    min_separation: f64,
    pairs: usize,
    seed: u64,
) -> Result<LogLipReport> {
    let (lo, hi) = region;
    if !(min_separation > 0.0 && min_separation < MAX_SEPARATION) || pairs == 0 {
        return Err(FieldError::NoValidPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (log_lo, log_hi) = (min_separation.ln(), MAX_SEPARATION.ln());
    let mut samples: Vec<(Vec3, Vec3, f64)> = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let u: f64 = rng.random();
        let r = (log_lo + (k as f64 + u) / pairs as f64 * (log_hi - log_lo)).exp();
        if !(r > 0.0 && r < MAX_SEPARATION) {
            continue;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let x: Vec3 = [0, 1, 2].map(|a| lo[a] + rng.random::<f64>() * (hi[a] - lo[a]));
            let y = vec3::axpy(x, r, dir);
            if (0..3).all(|a| y[a] >= lo[a] && y[a] <= hi[a]) {
                samples.push((x, y, r));
                break;
            }
        }
    }
    if samples.is_empty() {
        return Err(FieldError::NoValidPairs);
    }
    let xs: Vec<Vec3> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<Vec3> = samples.iter().map(|s| s.1).collect();
    let fx = field.eval_many(&xs)?;
    let fy = field.eval_many(&ys)?;
    let mut best = (0.0, 0usize);
    for (n, (x, y, _)) in samples.iter().enumerate() {
        // Measured separation, so the ratio uses the pair actually evaluated.
        let d = vec3::norm(vec3::sub(*y, *x));
        let ratio = vec3::norm(vec3::sub(fx[n], fy[n])) / (d * (1.0 / d).ln());
        if ratio > best.0 {
            best = (ratio, n);
        }
    }
    Ok(LogLipReport { constant: best.0, argmax: (samples[best.1].0, samples[best.1].1), pairs: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    #[test]
    fn zero_field_has_zero_constant() {
        let f = FnField(|_| [0.0; 3]);
        let r = loglip_modulus(&f, ([-1.0; 3], [1.0; 3]), 0.01, 200, 3).unwrap();
        assert_eq!(r.constant, 0.0);
        assert_eq!(r.pairs, 200);
    }

    #[test]
    fn linear_field_constant_is_near_bound() {
        // |A(x - y)| / (r log 1/r) <= |A| / log 2 with equality as r -> 1/2 along the top eigenvector.
        let f = FnField(|p: Vec3| [2.0 * p[0], 0.0, 0.0]);
        let r = loglip_modulus(&f, ([-1.0; 3], [1.0; 3]), 0.01, 2000, 9).unwrap();
        assert!(r.constant <= 2.0 / 2f64.ln() + 1e-12);
        assert!(r.constant > 0.5 * 2.0 / 2f64.ln());
    }

    #[test]
    fn doubling_the_field_doubles_the_constant() {
        let f1 = FnField(|p: Vec3| [p[1].sin(), (p[0] * p[2]).cos(), p[2].abs().sqrt()]);
        let f2 = FnField(|p: Vec3| [2.0 * p[1].sin(), 2.0 * (p[0] * p[2]).cos(), 2.0 * p[2].abs().sqrt()]);
        let a = loglip_modulus(&f1, ([-1.0; 3], [1.0; 3]), 0.05, 300, 1).unwrap();
        let b = loglip_modulus(&f2, ([-1.0; 3], [1.0; 3]), 0.05, 300, 1).unwrap();
        assert_eq!(b.constant, 2.0 * a.constant);
        assert_eq!(a.argmax, b.argmax);
    }

    #[test]
    fn invalid_separation_range_rejected() {
        let f = FnField(|_| [0.0; 3]);
        assert!(matches!(loglip_modulus(&f, ([0.0; 3], [1.0; 3]), 0.6, 10, 0), Err(FieldError::NoValidPairs)));
        assert!(matches!(loglip_modulus(&f, ([0.0; 3], [0.0; 3]), 0.1, 10, 0), Err(FieldError::NoValidPairs)));
    }
}
