//! Transportation simplex on a dense `m x n` cost matrix.
//!
//! The basis is always a spanning tree of the bipartite row/column graph
//! (`m + n - 1` cells, zero flows allowed), so the node potentials are
//! determined by a single anchor `u_0 = 0`.

use crate::error::{Error, Result};
use crate::scalar::{lit, total_cmp, Real};
use std::collections::VecDeque;

/// Starting basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Staircase rule on the given row/column order; optimal for Monge costs.
    NorthWest,
    /// Greedy allocation by increasing cost, completed to a tree with zero cells.
    LeastCost,
}

#[derive(Clone, Debug)]
pub struct LpSolution<T> {
    /// Basic cells `(row, col, flow)`; flows may be zero.
    pub basis: Vec<(usize, usize, T)>,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub pivots: usize,
}

impl<T: Real> LpSolution<T> {
    pub fn cost(&self, cost: &[T], n: usize) -> T {
        self.basis.iter().map(|&(i, j, f)| f * cost[i * n + j]).sum()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

fn north_west<T: Real>(a: &[T], b: &[T]) -> Vec<(usize, usize, T)> {
    let (m, n) = (a.len(), b.len());
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(m + n - 1);
    loop {
        let q = ra[i].min(rb[j]).max(T::zero());
        cells.push((i, j, q));
        if i + 1 == m && j + 1 == n {
            break;
        }
        if i + 1 < m && (ra[i] <= rb[j] || j + 1 == n) {
            rb[j] = rb[j] - q;
            ra[i] = T::zero();
            i += 1;
        } else {
            ra[i] = ra[i] - q;
            rb[j] = T::zero();
            j += 1;
        }
    }
    cells
}

fn least_cost<T: Real>(cost: &[T], a: &[T], b: &[T]) -> Vec<(usize, usize, T)> {
    let (m, n) = (a.len(), b.len());
    let mut order: Vec<usize> = (0..m * n).collect();
    order.sort_by(|&x, &y| total_cmp(&cost[x], &cost[y]).then(x.cmp(&y)));
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut row_done, mut col_done) = (vec![false; m], vec![false; n]);
    let mut uf = UnionFind((0..m + n).collect());
    let mut cells = Vec::with_capacity(m + n - 1);
    for &c in &order {
        let (i, j) = (c / n, c % n);
        if row_done[i] || col_done[j] {
            continue;
        }
        let q = ra[i].min(rb[j]);
        cells.push((i, j, q));
        uf.union(i, m + j);
        if ra[i] <= rb[j] {
            rb[j] = rb[j] - q;
            ra[i] = T::zero();
            row_done[i] = true;
        } else {
            ra[i] = ra[i] - q;
            rb[j] = T::zero();
            col_done[j] = true;
        }
    }
    for &c in &order {
        if cells.len() + 1 >= m + n {
            break;
        }
        let (i, j) = (c / n, c % n);
        if uf.union(i, m + j) {
            cells.push((i, j, T::zero()));
        }
    }
    cells
}

/// Node potentials of a spanning-tree basis, `u_0 = 0`.
fn potentials<T: Real>(basis: &[(usize, usize, T)], cost: &[T], m: usize, n: usize) -> (Vec<T>, Vec<T>) {
    let adj = adjacency(basis, m, n);
    let mut pot = vec![T::nan(); m + n];
    pot[0] = T::zero();
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &(other, cell) in &adj[node] {
            if pot[other].is_nan() {
                let (i, j, _) = basis[cell];
                pot[other] = cost[i * n + j] - pot[node];
                queue.push_back(other);
            }
        }
    }
    let v = pot.split_off(m);
    (pot, v)
}

fn adjacency<T>(basis: &[(usize, usize, T)], m: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); m + n];
    for (c, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((m + j, c));
        adj[m + j].push((i, c));
    }
    adj
}

/// Basis cells on the tree path from column node `m + j` back to row node `i`.
fn tree_path<T>(basis: &[(usize, usize, T)], m: usize, n: usize, i: usize, j: usize) -> Vec<usize> {
    let adj = adjacency(basis, m, n);
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    seen[i] = true;
    let mut queue = VecDeque::from([i]);
    while let Some(node) = queue.pop_front() {
        if node == m + j {
            break;
        }
        for &(other, cell) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                via[other] = cell;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = m + j;
    while node != i {
        let cell = via[node];
        path.push(cell);
        let (r, c, _) = basis[cell];
        node = if node == r { m + c } else { r };
    }
    path
}

/// Solves `min sum c_ij x_ij` subject to row sums `a`, column sums `b`, `x >= 0`.
/// Requires `sum a == sum b` up to rounding.
pub fn solve<T: Real>(cost: &[T], a: &[T], b: &[T], init: Init) -> Result<LpSolution<T>> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::Infeasible("empty or mis-sized transportation problem".into()));
    }
    let mut basis = match init {
        Init::NorthWest => north_west(a, b),
        Init::LeastCost => least_cost(cost, a, b),
    };
    debug_assert_eq!(basis.len(), m + n - 1);
    let cmax = cost.iter().fold(T::zero(), |acc, c| acc.max(c.abs()));
    let eps = lit::<T>(1e-13) * (T::one() + cmax);
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let mut in_basis = vec![false; m * n];
    for &(i, j, _) in &basis {
        in_basis[i * n + j] = true;
    }
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    loop {
        let (u, v) = potentials(&basis, cost, m, n);
        // Dantzig pricing, switching to Bland's rule after a long degenerate run.
        let bland = degenerate_run > 2 * (m + n);
        let mut enter: Option<(usize, T)> = None;
        for i in 0..m {
            for j in 0..n {
                let c = i * n + j;
                if in_basis[c] {
                    continue;
                }
                let r = cost[c] - u[i] - v[j];
                if r < -eps && enter.is_none_or(|(_, best)| r < best) {
                    enter = Some((c, r));
                    if bland {
                        break;
                    }
                }
            }
            if bland && enter.is_some() {
                break;
            }
        }
        let Some((c_in, _)) = enter else {
            return Ok(LpSolution { basis, u, v, pivots });
        };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Infeasible(format!("transport simplex did not converge in {max_pivots} pivots")));
        }
        let (ei, ej) = (c_in / n, c_in % n);
        let path = tree_path(&basis, m, n, ei, ej);
        // Along the path from column ej, signs alternate starting with minus.
        let mut theta = T::infinity();
        let mut leave = usize::MAX;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = basis[cell].2;
                let better = f < theta || (f == theta && leave != usize::MAX && basis[cell].0 * n + basis[cell].1 < basis[leave].0 * n + basis[leave].1);
                if better {
                    theta = f;
                    leave = cell;
                }
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            let f = basis[cell].2;
            basis[cell].2 = if k % 2 == 0 { (f - theta).max(T::zero()) } else { f + theta };
        }
        degenerate_run = if theta > T::zero() { 0 } else { degenerate_run + 1 };
        let (li, lj, _) = basis[leave];
        in_basis[li * n + lj] = false;
        in_basis[c_in] = true;
        basis[leave] = (ei, ej, theta);
    }
}
