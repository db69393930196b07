//! Dense Hungarian algorithm (shortest augmenting paths with potentials).
//!
//! Rows are inserted one at a time; each insertion runs a Dijkstra-like sweep
//! over columns using reduced costs `c_ij - u_i - v_j`. Column minima are
//! selected with a strict `<`, so among equal candidates the lowest column
//! index wins.

use super::{cost_matrix, ExactMethod, ExactSolution, PlanEntry, Result, TransportPlan, WeightedCloud};

pub(super) fn solve(a: &WeightedCloud, b: &WeightedCloud) -> Result<ExactSolution> {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let cost = cost_matrix(a, b);
    let (assign, u, v, iterations) = hungarian(&cost, n);

    let mut entries: Vec<PlanEntry> = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| PlanEntry { source: i, target: j, mass: a.weights()[i] })
        .collect();
    entries.sort_by_key(|e| (e.source, e.target));

    // With every weight equal to w the dual objective is w * (sum u + sum v),
    // so the assignment potentials are already the transport potentials.
    let plan = TransportPlan::new(a.clone(), b.clone(), entries)?;
    Ok(ExactSolution {
        plan,
        source_potential: u,
        target_potential: v,
        method: ExactMethod::Assignment,
        iterations,
    })
}

/// Minimum-cost perfect matching on an `n x n` row-major cost matrix.
/// Returns the column assigned to each row and the row/column potentials.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>, usize) {
    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![INF; n + 1];
    let mut used = vec![false; n + 1];
    let mut sweeps = 0usize;

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = INF);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            sweeps += 1;
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec(), sweeps)
}
