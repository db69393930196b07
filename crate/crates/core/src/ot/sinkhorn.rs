//! Log-domain Sinkhorn iterations for entropic optimal transport.

use super::{check_pair, cost_matrix, OtError, PlanEntry, Result, TransportPlan, WeightedCloud};

/// Default regularization, in units of the squared-distance cost.
pub const DEFAULT_SINKHORN_REGULARIZATION: f64 = 1e-2;
/// Default relative marginal violation at which iteration stops.
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-4;
pub const DEFAULT_SINKHORN_MAX_ITERS: usize = 20_000;

/// Regularization reduction per annealing stage.
const ANNEAL_FACTOR: f64 = 0.5;
/// Sweeps spent at each intermediate regularization.
const ANNEAL_SWEEPS: usize = 10;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Projects a nonnegative `n x m` matrix onto the couplings of `a` and `b`:
/// rows are scaled down to at most `a`, columns to at most `b`, and the
/// remaining deficit is filled with the rank-one product of the residuals.
fn round_to_marginals(p: &mut [f64], a: &[f64], b: &[f64]) {
    let m = b.len();
    for (i, row) in p.chunks_mut(m).enumerate() {
        let r: f64 = row.iter().sum();
        if r > a[i] {
            let x = a[i] / r;
            row.iter_mut().for_each(|v| *v *= x);
        }
    }
    for j in 0..m {
        let c: f64 = p.iter().skip(j).step_by(m).sum();
        if c > b[j] {
            let y = b[j] / c;
            p.iter_mut().skip(j).step_by(m).for_each(|v| *v *= y);
        }
    }
    let ra: Vec<f64> = p.chunks(m).zip(a).map(|(row, &ai)| (ai - row.iter().sum::<f64>()).max(0.0)).collect();
    let rb: Vec<f64> = (0..m).map(|j| (b[j] - p.iter().skip(j).step_by(m).sum::<f64>()).max(0.0)).collect();
    let total: f64 = ra.iter().sum();
    if total > 0.0 {
        for (i, row) in p.chunks_mut(m).enumerate() {
            for (v, &rbj) in row.iter_mut().zip(&rb) {
                *v += ra[i] * rbj / total;
            }
        }
    }
}

/// Entropic approximation of `W2`.
///
/// `regularization` is in the units of the squared-distance cost. The
/// converged plan is rounded onto the exact marginals, so the returned
/// estimate `sqrt(<plan, cost>)` is the cost of a feasible coupling: never
/// below the exact distance, and approaching it as the regularization shrinks.
/// Iteration stops once the relative L1 violation of the source marginal
/// (the target marginal is exact after each column update) falls below `tol`.
pub fn w2_sinkhorn(
    a: &WeightedCloud,
    b: &WeightedCloud,
    regularization: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(f64, TransportPlan)> {
    check_pair(a, b)?;
    if !(regularization > 0.0 && regularization.is_finite()) {
        return Err(OtError::InvalidParameter(format!("regularization must be positive, got {regularization}")));
    }
    if !(tol > 0.0) {
        return Err(OtError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let (n, m) = (a.len(), b.len());
    let mass = a.total_mass();
    let cost = cost_matrix(a, b);
    let log_a: Vec<f64> = a.weights().iter().map(|w| (w / a.total_mass()).ln()).collect();
    let log_b: Vec<f64> = b.weights().iter().map(|w| (w / b.total_mass()).ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    // Anneal the regularization down from the cost scale, warm-starting the
    // potentials, so small targets converge in few sweeps.
    let cost_scale = cost.iter().copied().fold(0.0, f64::max);
    let mut eps = cost_scale.max(regularization);
    let mut stage_iters = 0usize;

    let mut violation = f64::INFINITY;
    for _ in 0..max_iters {
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            f[i] = -eps * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / eps + log_b[j]));
        }
        for j in 0..m {
            g[j] = -eps * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps + log_a[i]));
        }
        violation = 0.0;
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            let log_row = log_sum_exp((0..m).map(|j| (f[i] + g[j] - row[j]) / eps + log_b[j])) + log_a[i];
            violation += (log_row.exp() - log_a[i].exp()).abs();
        }
        if eps > regularization {
            stage_iters += 1;
            if stage_iters == ANNEAL_SWEEPS {
                eps = (eps * ANNEAL_FACTOR).max(regularization);
                stage_iters = 0;
            }
            continue;
        }
        if violation <= tol {
            let mut p = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    p[i * m + j] = ((f[i] + g[j] - cost[i * m + j]) / eps + log_a[i] + log_b[j]).exp();
                }
            }
            let pa: Vec<f64> = log_a.iter().map(|l| l.exp()).collect();
            let pb: Vec<f64> = log_b.iter().map(|l| l.exp()).collect();
            round_to_marginals(&mut p, &pa, &pb);
            let entries = (0..n * m)
                .filter(|&k| p[k] > 0.0)
                .map(|k| PlanEntry { source: k / m, target: k % m, mass: p[k] * mass })
                .collect();
            let plan = TransportPlan::new(a.clone(), b.clone(), entries)?;
            return Ok((plan.cost().max(0.0).sqrt(), plan));
        }
    }
    Err(OtError::SinkhornNotConverged { iterations: max_iters, violation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounded_plan_has_exact_marginals_and_bounds_exact_cost() {
        let a = WeightedCloud::uniform(1, vec![0.0, 1.0, 2.5, 4.0], 2.0).unwrap();
        let b = WeightedCloud::uniform(1, vec![0.3, 0.9, 3.0, 5.0], 2.0).unwrap();
        let (d, plan) = w2_sinkhorn(&a, &b, 1e-2, 20_000, 1e-3).unwrap();
        assert!(plan.marginal_error() < 1e-12);
        // Sorted matching is optimal on the line.
        let exact = (2.0f64 / 4.0 * (0.09 + 0.01 + 0.25 + 1.0)).sqrt();
        assert!(d >= exact - 1e-12 && d <= exact * 1.01, "{d} vs {exact}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let a = WeightedCloud::uniform(1, vec![0.0, 1.0], 1.0).unwrap();
        assert!(matches!(w2_sinkhorn(&a, &a, 0.0, 10, 1e-6), Err(OtError::InvalidParameter(_))));
        assert!(matches!(w2_sinkhorn(&a, &a, 0.1, 10, -1.0), Err(OtError::InvalidParameter(_))));
    }

    #[test]
    fn reports_nonconvergence_with_violation() {
        let a = WeightedCloud::uniform(1, vec![0.0, 1.0, 2.0], 1.0).unwrap();
        let b = WeightedCloud::uniform(1, vec![0.5, 3.0, 4.0], 1.0).unwrap();
        match w2_sinkhorn(&a, &b, 1e-3, 1, 1e-14) {
            Err(OtError::SinkhornNotConverged { iterations, violation }) => {
                assert_eq!(iterations, 1);
                assert!(violation.is_finite() && violation > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
