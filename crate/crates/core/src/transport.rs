//! Exact optimal transport between finite distributions.
//!
//! The transportation problem is solved with the primal transportation
//! simplex (MODI / u-v method) on a spanning-tree basis, started from the
//! north-west corner rule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{empirical_distribution, DiscreteDistribution, DistError, SupportSet};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("need at least 4 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("transportation simplex did not converge within {0} pivots")]
    NoConvergence(usize),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Ground cost between support points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCost {
    /// `c(x, z) = ||x - z||_2^2`
    #[default]
    SquaredEuclidean,
}

impl GroundCost {
    #[inline]
    pub fn eval<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        match self {
            GroundCost::SquaredEuclidean => {
                let mut acc = T::zero();
                for (x, y) in a.iter().zip(b) {
                    let d = *x - *y;
                    acc += d * d;
                }
                acc
            }
        }
    }

    /// Row-major `|from| x |to|` cost matrix.
    pub fn matrix<T: Scalar>(&self, from: &SupportSet<T>, to: &SupportSet<T>) -> Vec<Vec<T>> {
        from.points()
            .iter()
            .map(|p| to.points().iter().map(|q| self.eval(p, q)).collect())
            .collect()
    }
}

/// Coupling between two distributions; rows follow the first marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan<T> {
    pub matrix: Vec<Vec<T>>,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.matrix.iter().map(|r| r.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols()];
        for r in &self.matrix {
            for (o, v) in out.iter_mut().zip(r) {
                *o += *v;
            }
        }
        out
    }

    pub fn cost(&self, costs: &[Vec<T>]) -> T {
        let mut acc = T::zero();
        for (r, c) in self.matrix.iter().zip(costs) {
            for (v, k) in r.iter().zip(c) {
                acc += *v * *k;
            }
        }
        acc
    }
}

/// Minimal expected ground cost over couplings of `p` and `q`, with an optimal plan.
pub fn wasserstein_distance<T: Scalar>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
    cost: GroundCost,
) -> Result<(T, TransportPlan<T>), TransportError> {
    if p.is_empty() || q.is_empty() {
        return Err(TransportError::DegenerateInput("empty support"));
    }
    if p.support().dim() != q.support().dim() {
        return Err(TransportError::DegenerateInput("supports have different dimensions"));
    }
    let costs = cost.matrix(p.support(), q.support());
    let plan = solve_transportation(p.weights(), q.weights(), &costs)?;
    let value = plan.cost(&costs).max(T::zero());
    Ok((value, plan))
}

/// Primal transportation simplex on a supply/demand pair with equal totals.
pub fn solve_transportation<T: Scalar>(
    supply: &[T],
    demand: &[T],
    costs: &[Vec<T>],
) -> Result<TransportPlan<T>, TransportError> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 {
        return Err(TransportError::DegenerateInput("empty support"));
    }
    let mut solver = TransportSimplex::new(supply, demand, costs);
    solver.run()?;
    Ok(solver.into_plan())
}

struct TransportSimplex<'a, T> {
    costs: &'a [Vec<T>],
    n: usize,
    m: usize,
    flow: Vec<Vec<T>>,
    basic: Vec<Vec<bool>>,
    /// Basic cells as (row, col).
    cells: Vec<(usize, usize)>,
    tol: T,
}

impl<'a, T: Scalar> TransportSimplex<'a, T> {
    fn new(supply: &[T], demand: &[T], costs: &'a [Vec<T>]) -> Self {
        let (n, m) = (supply.len(), demand.len());
        let mut flow = vec![vec![T::zero(); m]; n];
        let mut basic = vec![vec![false; m]; n];
        let mut cells = Vec::with_capacity(n + m - 1);
        // Balance demand against supply so both sides carry the same total.
        let total_s: T = supply.iter().copied().sum();
        let total_d: T = demand.iter().copied().sum();
        let mut s: Vec<T> = supply.to_vec();
        let mut d: Vec<T> = demand.iter().map(|&v| v * total_s / total_d).collect();

        // North-west corner; exactly n + m - 1 basic cells forming a tree.
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            flow[i][j] = x;
            basic[i][j] = true;
            cells.push((i, j));
            s[i] -= x;
            d[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 {
                i += 1;
            } else if s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }

        let scale = costs
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |a, &c| a.max(c.abs()))
            .max(T::one());
        let tol = T::epsilon() * T::of(64.0) * scale;
        Self { costs, n, m, flow, basic, cells, tol }
    }

    /// Potentials with `u_i + v_j = c_ij` on every basic cell, `u_0 = 0`.
    fn potentials(&self) -> (Vec<T>, Vec<T>) {
        let (n, m) = (self.n, self.m);
        let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(i, j) in &self.cells {
            row_adj[i].push(j);
            col_adj[j].push(i);
        }
        let mut u = vec![T::nan(); n];
        let mut v = vec![T::nan(); m];
        u[0] = T::zero();
        // Nodes: rows are 0..n, columns n..n+m.
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if node < n {
                for &j in &row_adj[node] {
                    if v[j].is_nan() {
                        v[j] = self.costs[node][j] - u[node];
                        stack.push(n + j);
                    }
                }
            } else {
                let j = node - n;
                for &i in &col_adj[j] {
                    if u[i].is_nan() {
                        u[i] = self.costs[i][j] - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Alternating cycle through the basis tree closing at the entering cell.
    fn cycle(&self, enter: (usize, usize)) -> Vec<(usize, usize)> {
        let (n, m) = (self.n, self.m);
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
        for &(i, j) in &self.cells {
            adj[i].push(n + j);
            adj[n + j].push(i);
        }
        // Path in the tree from column node of `enter` to its row node.
        let start = n + enter.1;
        let goal = enter.0;
        let mut parent = vec![usize::MAX; n + m];
        parent[start] = start;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![goal];
        let mut node = goal;
        while node != start {
            node = parent[node];
            path.push(node);
        }
        // path: row(goal) -> ... -> col(start); consecutive nodes form cells.
        let mut out = vec![enter];
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cell = if a < n { (a, b - n) } else { (b, a - n) };
            out.push(cell);
        }
        out
    }

    fn run(&mut self) -> Result<(), TransportError> {
        let limit = 50 * (self.n + self.m) * (self.n + self.m) + 1000;
        let mut degenerate_streak = 0usize;
        for _ in 0..limit {
            let (u, v) = self.potentials();
            // Dantzig's rule normally; Bland-style first-found after a long
            // run of degenerate pivots to rule out cycling.
            let bland = degenerate_streak > self.n + self.m;
            let mut enter = None;
            let mut best = -self.tol;
            'scan: for i in 0..self.n {
                for j in 0..self.m {
                    if self.basic[i][j] {
                        continue;
                    }
                    let rc = self.costs[i][j] - u[i] - v[j];
                    if rc < best {
                        enter = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = rc;
                    }
                }
            }
            let Some(enter) = enter else {
                return Ok(());
            };
            let cycle = self.cycle(enter);
            // Odd positions lose flow.
            let mut leave = 1;
            for k in (1..cycle.len()).step_by(2) {
                let (i, j) = cycle[k];
                let (li, lj) = cycle[leave];
                if self.flow[i][j] < self.flow[li][lj] {
                    leave = k;
                }
            }
            let theta = {
                let (i, j) = cycle[leave];
                self.flow[i][j]
            };
            if theta <= T::zero() {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            for (k, &(i, j)) in cycle.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[i][j] += theta;
                } else {
                    self.flow[i][j] -= theta;
                }
            }
            let out = cycle[leave];
            self.flow[out.0][out.1] = T::zero();
            self.basic[out.0][out.1] = false;
            self.basic[enter.0][enter.1] = true;
            let pos = self.cells.iter().position(|&c| c == out).expect("leaving cell is basic");
            self.cells[pos] = enter;
        }
        Err(TransportError::NoConvergence(limit))
    }

    fn into_plan(self) -> TransportPlan<T> {
        let matrix = self
            .flow
            .into_iter()
            .map(|r| r.into_iter().map(|v| if v < T::zero() { T::zero() } else { v }).collect())
            .collect();
        TransportPlan { matrix }
    }
}

/// Distance between the empirical distributions of two sample sets, built on
/// the union of the points either set contains.
pub fn halves_distance<T: Scalar>(
    first: &[Vec<T>],
    second: &[Vec<T>],
    cost: GroundCost,
) -> Result<T, TransportError> {
    if first.is_empty() || second.is_empty() {
        return Err(TransportError::DegenerateInput("empty sample half"));
    }
    let mut points: Vec<Vec<T>> = Vec::new();
    for p in first.iter().chain(second) {
        if !points.iter().any(|q| crate::dist::points_equal(q, p)) {
            points.push(p.clone());
        }
    }
    let support = SupportSet::new(points)?;
    let p = empirical_distribution(first, &support)?;
    let q = empirical_distribution(second, &support)?;
    Ok(wasserstein_distance(&p, &q, cost)?.0)
}

/// Seeded random split of the contexts into two halves (the first half takes
/// the odd sample) and the transport distance between them.
pub fn split_radius_estimate<T: Scalar>(
    contexts: &[Vec<T>],
    seed: u64,
    cost: GroundCost,
) -> Result<T, TransportError> {
    if contexts.len() < 4 {
        return Err(TransportError::TooFewSamples(contexts.len()));
    }
    let mut order: Vec<usize> = (0..contexts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = contexts.len().div_ceil(2);
    let first: Vec<Vec<T>> = order[..cut].iter().map(|&i| contexts[i].clone()).collect();
    let second: Vec<Vec<T>> = order[cut..].iter().map(|&i| contexts[i].clone()).collect();
    halves_distance(&first, &second, cost)
}
