//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Nodes `0..n` are sources with supply `a_i`, nodes `n..n+m` are sinks with
//! demand `b_j` and node `n+m` is an artificial root. Every node starts
//! attached to the root by an artificial arc carrying its supply, so the
//! initial tree is strongly feasible. Leaving arcs are chosen with the
//! strongly-feasible-tree rule, which prevents cycling under any entering rule.
//!
//! The tree is rebuilt from its arc set after each pivot. That costs `O(n+m)`
//! per pivot, which is negligible next to pricing for the sizes used here.

use ndarray::Array2;

use crate::{Error, Result};

/// Entering-arc selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Scan arcs in blocks of `sqrt(#arcs)` and take the most negative reduced
    /// cost of the first block containing a candidate.
    #[default]
    BlockSearch,
    /// Bland's rule: the lowest-index arc with negative reduced cost.
    FirstEligible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pivot: PivotRule,
    /// Pivot budget; `None` means `50 * arcs + 1000`.
    pub max_pivots: Option<usize>,
    /// Optimality threshold on reduced costs, relative to `max |C|`.
    pub tolerance: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            pivot: PivotRule::BlockSearch,
            max_pivots: None,
            tolerance: 1e-12,
        }
    }
}

const TREE: u8 = 0;
const LOWER: u8 = 1;

struct Solver {
    n_nodes: usize,
    root: usize,
    n_real: usize,
    m: usize,
    n: usize,
    cost: Vec<f64>,
    source: Vec<usize>,
    target: Vec<usize>,
    flow: Vec<f64>,
    state: Vec<u8>,
    // Spanning tree, stored as its arc set plus derived parent pointers.
    tree_arcs: Vec<usize>,
    slot_of: Vec<usize>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    next_arc: usize,
    block: usize,
    eps: f64,
    // Scratch buffers for the tree rebuild.
    adj_start: Vec<usize>,
    adj: Vec<usize>,
    queue: Vec<usize>,
}

impl Solver {
    fn new(cost: &Array2<f64>, a: &[f64], b: &[f64], opts: &SimplexOptions) -> Self {
        let (n, m) = cost.dim();
        let n_real = n * m;
        let n_nodes = n + m + 1;
        let root = n + m;
        let scale = cost.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let art_cost = 2.0 * (n + m) as f64;
        let total_arcs = n_real + n + m;

        let mut c = Vec::with_capacity(total_arcs);
        let mut source = Vec::with_capacity(total_arcs);
        let mut target = Vec::with_capacity(total_arcs);
        for i in 0..n {
            for j in 0..m {
                c.push(cost[[i, j]] / scale);
                source.push(i);
                target.push(n + j);
            }
        }
        let mut flow = vec![0.0; total_arcs];
        let mut state = vec![LOWER; total_arcs];
        let mut tree_arcs = Vec::with_capacity(n + m);
        let mut slot_of = vec![usize::MAX; total_arcs];
        for u in 0..(n + m) {
            let e = n_real + u;
            c.push(art_cost);
            if u < n {
                source.push(u);
                target.push(root);
                flow[e] = a[u];
            } else {
                source.push(root);
                target.push(u);
                flow[e] = b[u - n];
            }
            state[e] = TREE;
            slot_of[e] = tree_arcs.len();
            tree_arcs.push(e);
        }
        let block = ((n_real as f64).sqrt().ceil() as usize).max(10);
        let mut solver = Self {
            n_nodes,
            root,
            n_real,
            m,
            n,
            cost: c,
            source,
            target,
            flow,
            state,
            tree_arcs,
            slot_of,
            parent: vec![usize::MAX; n_nodes],
            pred: vec![usize::MAX; n_nodes],
            up: vec![false; n_nodes],
            depth: vec![0; n_nodes],
            pi: vec![0.0; n_nodes],
            next_arc: 0,
            block,
            eps: opts.tolerance.max(8.0 * art_cost * f64::EPSILON),
            adj_start: vec![0; n_nodes + 1],
            adj: vec![0; 2 * (n + m)],
            queue: Vec::with_capacity(n_nodes),
        };
        solver.rebuild_tree();
        solver
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
    }

    /// Recomputes parents, depths and potentials from `tree_arcs`.
    fn rebuild_tree(&mut self) {
        self.adj_start.iter_mut().for_each(|v| *v = 0);
        for &e in &self.tree_arcs {
            self.adj_start[self.source[e] + 1] += 1;
            self.adj_start[self.target[e] + 1] += 1;
        }
        for v in 0..self.n_nodes {
            self.adj_start[v + 1] += self.adj_start[v];
        }
        let mut fill = self.adj_start.clone();
        for &e in &self.tree_arcs {
            let (s, t) = (self.source[e], self.target[e]);
            self.adj[fill[s]] = e;
            fill[s] += 1;
            self.adj[fill[t]] = e;
            fill[t] += 1;
        }

        self.queue.clear();
        self.queue.push(self.root);
        self.parent[self.root] = usize::MAX;
        self.pred[self.root] = usize::MAX;
        self.depth[self.root] = 0;
        self.pi[self.root] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let v = self.queue[head];
            head += 1;
            for k in self.adj_start[v]..self.adj_start[v + 1] {
                let e = self.adj[k];
                if e == self.pred[v] {
                    continue;
                }
                let (s, t) = (self.source[e], self.target[e]);
                let (w, w_up) = if s == v { (t, false) } else { (s, true) };
                self.parent[w] = v;
                self.pred[w] = e;
                self.up[w] = w_up;
                self.depth[w] = self.depth[v] + 1;
                // Tree arcs have zero reduced cost: c_e + pi_s - pi_t = 0.
                self.pi[w] = if w_up {
                    self.pi[v] - self.cost[e]
                } else {
                    self.pi[v] + self.cost[e]
                };
                self.queue.push(w);
            }
        }
        debug_assert_eq!(self.queue.len(), self.n_nodes);
    }

    fn find_entering(&mut self, rule: PivotRule) -> Option<usize> {
        let eps = self.eps;
        match rule {
            PivotRule::FirstEligible => {
                (0..self.n_real).find(|&e| self.state[e] == LOWER && self.reduced_cost(e) < -eps)
            }
            PivotRule::BlockSearch => {
                let mut best = -eps;
                let mut chosen = None;
                let mut count = self.block;
                let mut e = self.next_arc;
                for _ in 0..self.n_real {
                    if self.state[e] == LOWER {
                        let rc = self.reduced_cost(e);
                        if rc < best {
                            best = rc;
                            chosen = Some(e);
                        }
                    }
                    e += 1;
                    if e == self.n_real {
                        e = 0;
                    }
                    count -= 1;
                    if count == 0 {
                        if chosen.is_some() {
                            break;
                        }
                        count = self.block;
                    }
                }
                if chosen.is_some() {
                    self.next_arc = e;
                }
                chosen
            }
        }
    }

    fn join_node(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    /// Pushes flow around the cycle closed by `entering` and swaps the tree arcs.
    fn pivot(&mut self, entering: usize) -> Result<()> {
        let first = self.source[entering];
        let second = self.target[entering];
        let join = self.join_node(first, second);

        // Flow travels join -> ... -> first -> second -> ... -> join. Only
        // arcs traversed backwards can block, since every arc is uncapacitated.
        let mut delta = f64::INFINITY;
        let mut leaving_node = usize::MAX;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    leaving_node = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    leaving_node = u;
                }
            }
            u = self.parent[u];
        }
        if leaving_node == usize::MAX {
            return Err(Error::Solver("unbounded transportation problem".into()));
        }

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }

        let leaving = self.pred[leaving_node];
        self.flow[leaving] = 0.0;
        self.state[leaving] = LOWER;
        self.state[entering] = TREE;
        let slot = self.slot_of[leaving];
        self.slot_of[leaving] = usize::MAX;
        self.tree_arcs[slot] = entering;
        self.slot_of[entering] = slot;
        self.rebuild_tree();
        Ok(())
    }

    fn run(&mut self, opts: &SimplexOptions) -> Result<usize> {
        let budget = opts
            .max_pivots
            .unwrap_or(50 * (self.n_real + self.n_nodes) + 1000);
        let mut pivots = 0;
        while let Some(e) = self.find_entering(opts.pivot) {
            if pivots >= budget {
                return Err(Error::Solver(format!(
                    "pivot budget of {budget} exhausted"
                )));
            }
            self.pivot(e)?;
            pivots += 1;
        }
        Ok(pivots)
    }
}

/// Statistics of a finished solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexStats {
    pub pivots: usize,
    /// Mass left on artificial arcs (marginal imbalance).
    pub artificial_flow: f64,
}

/// Solves `min <C, P>` over nonnegative `P` with row sums `a` and column sums `b`.
///
/// Returns a vertex of the transport polytope. Inputs are assumed validated
/// (matching shapes, finite costs, nonnegative marginals of equal mass).
pub fn solve_transport(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    opts: &SimplexOptions,
) -> Result<(Array2<f64>, SimplexStats)> {
    let (n, m) = cost.dim();
    let mut solver = Solver::new(cost, a, b, opts);
    let pivots = solver.run(opts)?;
    let artificial_flow: f64 = solver.flow[solver.n_real..].iter().sum();
    let mass: f64 = a.iter().sum::<f64>().max(b.iter().sum());
    if artificial_flow > 1e-9 * mass.max(1.0) {
        return Err(Error::Solver(format!(
            "infeasible marginals: {artificial_flow:e} mass left on artificial arcs"
        )));
    }
    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[[i, j]] = solver.flow[i * solver.m + j].max(0.0);
        }
    }
    debug_assert_eq!(solver.n, n);
    Ok((
        plan,
        SimplexStats {
            pivots,
            artificial_flow,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn objective(c: &Array2<f64>, p: &Array2<f64>) -> f64 {
        (c * p).sum()
    }

    #[test]
    fn forced_single_cell() {
        let c = array![[3.5]];
        let (p, _) = solve_transport(&c, &[1.0], &[1.0], &SimplexOptions::default()).unwrap();
        assert_eq!(p[[0, 0]], 1.0);
    }

    #[test]
    fn both_rules_agree_on_a_small_instance() {
        let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = [0.3, 0.3, 0.4];
        let b = [0.2, 0.5, 0.3];
        let (p1, _) = solve_transport(&c, &a, &b, &SimplexOptions::default()).unwrap();
        let opts = SimplexOptions {
            pivot: PivotRule::FirstEligible,
            ..Default::default()
        };
        let (p2, _) = solve_transport(&c, &a, &b, &opts).unwrap();
        assert!((objective(&c, &p1) - objective(&c, &p2)).abs() < 1e-14);
        for i in 0..3 {
            assert!((p1.row(i).sum() - a[i]).abs() < 1e-15);
        }
        for j in 0..3 {
            assert!((p1.column(j).sum() - b[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn vertex_support_is_a_forest() {
        let n = 6;
        let c = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let u = vec![1.0 / n as f64; n];
        let (p, _) = solve_transport(&c, &u, &u, &SimplexOptions::default()).unwrap();
        let nnz = p.iter().filter(|&&v| v > 0.0).count();
        assert!(nnz < 2 * n);
    }

    #[test]
    fn pivot_budget_is_enforced() {
        let c = array![[1.0, 0.0], [0.0, 1.0]];
        let opts = SimplexOptions {
            max_pivots: Some(0),
            ..Default::default()
        };
        assert!(matches!(
            solve_transport(&c, &[0.5, 0.5], &[0.5, 0.5], &opts),
            Err(Error::Solver(_))
        ));
    }
}
