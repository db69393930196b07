//! Transportation network simplex on the complete bipartite graph.
//!
//! The basis is a spanning tree of `n + m - 1` cells. Both clouds are first
//! sorted by their projection on the line joining the two means, so that the
//! north-west-corner start is the monotone coupling of those projections;
//! this usually leaves few pivots to do. Pricing is block search over the
//! cells in row-major order. Potentials are rebuilt from the tree after every
//! pivot.

use super::{cost_matrix, ExactMethod, ExactSolution, OtError, PlanEntry, Result, TransportPlan, WeightedCloud};

#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    flow: f64,
}

pub(super) fn solve(a: &WeightedCloud, b: &WeightedCloud) -> Result<ExactSolution> {
    let (n, m) = (a.len(), b.len());
    let dir = direction(a, b);
    let pa = projection_order(a, &dir);
    let pb = projection_order(b, &dir);

    let full = cost_matrix(a, b);
    let mut cost = vec![0.0; n * m];
    for (ii, &i) in pa.iter().enumerate() {
        for (jj, &j) in pb.iter().enumerate() {
            cost[ii * m + jj] = full[i * m + j];
        }
    }
    let supply: Vec<f64> = pa.iter().map(|&i| a.weights()[i]).collect();
    let demand: Vec<f64> = pb.iter().map(|&j| b.weights()[j]).collect();

    let max_pivots = 200 * (n + m) * ((n + m) as f64).sqrt().ceil() as usize + 10_000;
    let sol = transport_simplex(&cost, n, m, &supply, &demand, max_pivots)?;

    let mut entries: Vec<PlanEntry> = sol
        .cells
        .iter()
        .filter(|c| c.flow > 0.0)
        .map(|c| PlanEntry { source: pa[c.i], target: pb[c.j], mass: c.flow })
        .collect();
    entries.sort_by_key(|e| (e.source, e.target));

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    for (ii, &i) in pa.iter().enumerate() {
        u[i] = sol.u[ii];
    }
    for (jj, &j) in pb.iter().enumerate() {
        v[j] = sol.v[jj];
    }
    let plan = TransportPlan::new(a.clone(), b.clone(), entries)?;
    Ok(ExactSolution {
        plan,
        source_potential: u,
        target_potential: v,
        method: ExactMethod::NetworkSimplex,
        iterations: sol.pivots,
    })
}

fn direction(a: &WeightedCloud, b: &WeightedCloud) -> Vec<f64> {
    let (ma, mb) = (a.mean(), b.mean());
    let mut d: Vec<f64> = mb.iter().zip(&ma).map(|(x, y)| x - y).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    let spread = a.points().take(64).map(|p| super::sq_dist(p, &ma)).fold(0.0, f64::max).sqrt();
    if norm <= 1e-9 * spread.max(1e-300) {
        d.iter_mut().for_each(|x| *x = 0.0);
        d[0] = 1.0;
    }
    d
}

/// Indices of `c` sorted by projection on `d` (ties by index).
fn projection_order(c: &WeightedCloud, d: &[f64]) -> Vec<usize> {
    let key: Vec<f64> = c.points().map(|p| p.iter().zip(d).map(|(x, y)| x * y).sum::<f64>()).collect();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&x, &y| key[x].total_cmp(&key[y]).then(x.cmp(&y)));
    order
}

struct SimplexSolution {
    cells: Vec<Cell>,
    u: Vec<f64>,
    v: Vec<f64>,
    pivots: usize,
}

struct Tree {
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    queue: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Tree {
    fn new(nodes: usize) -> Self {
        Tree {
            parent: vec![NONE; nodes],
            parent_cell: vec![NONE; nodes],
            depth: vec![0; nodes],
            pot: vec![0.0; nodes],
            queue: Vec::with_capacity(nodes),
        }
    }

    /// BFS from node 0 (source 0). Sources are nodes `0..n`, sinks `n..n+m`;
    /// `pot` holds `u_i` for sources and `v_j` for sinks with `u_i + v_j = c_ij`
    /// on every basic cell.
    fn rebuild(&mut self, n: usize, m: usize, cells: &[Cell], adj: &[Vec<usize>], cost: &[f64]) {
        self.parent.iter_mut().for_each(|p| *p = NONE);
        self.queue.clear();
        self.queue.push(0);
        self.parent[0] = 0;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for &ci in &adj[node] {
                let c = cells[ci];
                let other = if node < n { n + c.j } else { c.i };
                if self.parent[other] != NONE {
                    continue;
                }
                self.parent[other] = node;
                self.parent_cell[other] = ci;
                self.depth[other] = self.depth[node] + 1;
                self.pot[other] = cost[c.i * m + c.j] - self.pot[node];
                self.queue.push(other);
            }
        }
        debug_assert_eq!(self.queue.len(), n + m, "basis is not a spanning tree");
    }
}

fn transport_simplex(
    cost: &[f64],
    n: usize,
    m: usize,
    supply: &[f64],
    demand: &[f64],
    max_pivots: usize,
) -> Result<SimplexSolution> {
    let nodes = n + m;
    // North-west corner start: exactly n + m - 1 cells forming a tree.
    let mut cells: Vec<Cell> = Vec::with_capacity(nodes - 1);
    {
        let (mut i, mut j) = (0usize, 0usize);
        let (mut ra, mut rb) = (supply[0], demand[0]);
        loop {
            let f = ra.min(rb).max(0.0);
            cells.push(Cell { i, j, flow: f });
            ra -= f;
            rb -= f;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && ra <= rb) {
                i += 1;
                ra = supply[i];
            } else {
                j += 1;
                rb = demand[j];
            }
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (ci, c) in cells.iter().enumerate() {
        adj[c.i].push(ci);
        adj[n + c.j].push(ci);
    }

    let cmax = cost.iter().fold(0.0f64, |acc, &c| acc.max(c));
    let tol = 1e-12 * cmax.max(f64::MIN_POSITIVE);
    let total = n * m;
    let block = ((total as f64).sqrt().ceil() as usize).clamp(32.min(total), total);

    let mut tree = Tree::new(nodes);
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let mut up_a: Vec<(usize, usize)> = Vec::new();
    let mut up_b: Vec<(usize, usize)> = Vec::new();

    loop {
        tree.rebuild(n, m, &cells, &adj, cost);

        // Block-search pricing.
        let mut best = -tol;
        let mut enter = NONE;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < total {
            let k = cursor;
            cursor += 1;
            if cursor == total {
                cursor = 0;
            }
            scanned += 1;
            in_block += 1;
            let (i, j) = (k / m, k % m);
            let r = cost[k] - tree.pot[i] - tree.pot[n + j];
            if r < best {
                best = r;
                enter = k;
            }
            if in_block == block {
                if enter != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if enter == NONE {
            break;
        }
        if pivots >= max_pivots {
            return Err(OtError::NotConverged(pivots));
        }
        pivots += 1;

        let (ie, je) = (enter / m, enter % m);
        // Tree path between source ie and sink je, as (cell, lower node) pairs.
        up_a.clear();
        up_b.clear();
        let (mut x, mut y) = (ie, n + je);
        while x != y {
            if tree.depth[x] >= tree.depth[y] {
                up_a.push((tree.parent_cell[x], x));
                x = tree.parent[x];
            } else {
                up_b.push((tree.parent_cell[y], y));
                y = tree.parent[y];
            }
        }
        // Cycle: ie -> je via the entering cell (+), then je up to the apex,
        // then down to ie. A cell traversed out of a source gains flow.
        let mut theta = f64::INFINITY;
        let mut leave = NONE;
        for &(ci, child) in &up_b {
            if child >= n && cells[ci].flow < theta {
                theta = cells[ci].flow;
                leave = ci;
            }
        }
        for &(ci, child) in up_a.iter().rev() {
            // traversed from the parent down to `child`; out of a sink iff child is a source
            if child < n && cells[ci].flow < theta {
                theta = cells[ci].flow;
                leave = ci;
            }
        }
        debug_assert!(leave != NONE);
        for &(ci, child) in &up_b {
            if child >= n {
                cells[ci].flow -= theta;
            } else {
                cells[ci].flow += theta;
            }
        }
        for &(ci, child) in &up_a {
            if child < n {
                cells[ci].flow -= theta;
            } else {
                cells[ci].flow += theta;
            }
        }
        let old = cells[leave];
        remove_adj(&mut adj[old.i], leave);
        remove_adj(&mut adj[n + old.j], leave);
        cells[leave] = Cell { i: ie, j: je, flow: theta };
        adj[ie].push(leave);
        adj[n + je].push(leave);
    }

    let u = tree.pot[..n].to_vec();
    let v = tree.pot[n..].to_vec();
    Ok(SimplexSolution { cells, u, v, pivots })
}

fn remove_adj(list: &mut Vec<usize>, ci: usize) {
    if let Some(pos) = list.iter().position(|&c| c == ci) {
        list.remove(pos);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_transport_problem() {
        // 2 sources, 3 sinks; the optimum (1.6) has two supporting plans.
        let cost = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0];
        let sol = transport_simplex(&cost, 2, 3, &[0.5, 0.5], &[0.3, 0.3, 0.4], 1000).unwrap();
        let total: f64 = sol.cells.iter().map(|c| c.flow * cost[c.i * 3 + c.j]).sum();
        assert!((total - 1.6).abs() < 1e-12, "total {total}");
        for i in 0..2 {
            for j in 0..3 {
                assert!(sol.u[i] + sol.v[j] <= cost[i * 3 + j] + 1e-12);
            }
        }
    }
}
