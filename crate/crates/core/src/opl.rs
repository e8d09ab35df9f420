//! Robust off-policy learning: grid search over small policy classes and
//! biased stochastic gradient descent on the entropy-smoothed objective.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DiscreteDistribution;
use crate::dual::DualError;
use crate::ope::{evaluate_policy, Method, OpeError, Policy, RobustCostTable};
use crate::scalar::Scalar;
use crate::transport::GroundCost;

/// Largest parameter dimension [`exact_opl`] will grid.
pub const MAX_GRID_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OplError {
    #[error("context {0} has no group")]
    UnknownContext(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
    #[error("parameter dimension {0} exceeds the grid-search limit of {MAX_GRID_DIM}")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Ope(#[from] OpeError),
    #[error(transparent)]
    Dual(#[from] DualError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Per group, the probabilities of all actions but the last; the last
    /// action takes the remainder.
    GroupProbClamp,
    /// Per group, logits of all actions but the last, whose logit is 0.
    GroupSoftmax,
}

/// Grouped policy parameters. `theta` holds `n_actions - 1` entries per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct PolicyParams<T> {
    theta: Vec<T>,
    grouping: Vec<usize>,
    n_groups: usize,
    n_actions: usize,
    parameterization: Parameterization,
}

impl<T: Scalar> PolicyParams<T> {
    pub fn new(
        theta: Vec<T>,
        grouping: Vec<usize>,
        n_actions: usize,
        parameterization: Parameterization,
    ) -> Result<Self, OplError> {
        if n_actions < 2 {
            return Err(OplError::InvalidParams("need at least two actions".into()));
        }
        let n_groups = grouping.iter().max().map_or(0, |g| g + 1);
        if theta.len() != n_groups * (n_actions - 1) {
            return Err(OplError::InvalidParams(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                n_groups * (n_actions - 1)
            )));
        }
        let p = Self { theta, grouping, n_groups, n_actions, parameterization };
        if p.theta.iter().any(|t| !t.is_finite()) {
            return Err(OplError::InvalidParams("non-finite theta".into()));
        }
        if parameterization == Parameterization::GroupProbClamp {
            let tol = T::of(1e-12);
            for g in 0..n_groups {
                let block = p.block(g);
                let s: T = block.iter().copied().sum();
                if block.iter().any(|&v| v < -tol || v > T::one() + tol) || s > T::one() + tol {
                    return Err(OplError::InvalidParams(format!("group {g} is not a sub-probability vector")));
                }
            }
        }
        Ok(p)
    }

    /// Uniform policy with one group per context.
    pub fn uniform(n_contexts: usize, n_actions: usize, parameterization: Parameterization) -> Self {
        Self::uniform_grouped((0..n_contexts).collect(), n_actions, parameterization)
    }

    pub fn uniform_grouped(grouping: Vec<usize>, n_actions: usize, parameterization: Parameterization) -> Self {
        let n_groups = grouping.iter().max().map_or(0, |g| g + 1);
        let v = match parameterization {
            Parameterization::GroupProbClamp => T::one() / T::of_usize(n_actions),
            Parameterization::GroupSoftmax => T::zero(),
        };
        Self { theta: vec![v; n_groups * (n_actions - 1)], grouping, n_groups, n_actions, parameterization }
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn grouping(&self) -> &[usize] {
        &self.grouping
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_contexts(&self) -> usize {
        self.grouping.len()
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    fn block(&self, g: usize) -> &[T] {
        let k = self.n_actions - 1;
        &self.theta[g * k..(g + 1) * k]
    }

    /// Same structure, new parameter vector (projected onto the feasible set).
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self, OplError> {
        let mut p = Self { theta, ..self.clone() };
        if p.theta.len() != self.theta.len() {
            return Err(OplError::InvalidParams("theta length".into()));
        }
        p.project();
        Ok(p)
    }

    fn with_theta_raw(&self, theta: Vec<T>) -> Self {
        Self { theta, ..self.clone() }
    }

    fn group_of(&self, context: usize) -> Result<usize, OplError> {
        self.grouping.get(context).copied().ok_or(OplError::UnknownContext(context))
    }

    /// Projects `theta` onto the parameter set: capped simplex per group for
    /// `GroupProbClamp` (a clamp to `[0, 1]` with two actions), identity for softmax.
    pub fn project(&mut self) {
        if self.parameterization == Parameterization::GroupSoftmax {
            return;
        }
        let k = self.n_actions - 1;
        for g in 0..self.n_groups {
            project_capped_simplex(&mut self.theta[g * k..(g + 1) * k]);
        }
    }

    pub fn to_policy(&self) -> Policy<T> {
        let rows = (0..self.n_contexts()).map(|x| self.probs_unchecked(x)).collect();
        Policy::new(rows).expect("parameters induce valid probabilities")
    }

    fn probs_unchecked(&self, context: usize) -> Vec<T> {
        let block = self.block(self.grouping[context]);
        match self.parameterization {
            Parameterization::GroupProbClamp => {
                let mut p = block.to_vec();
                let rest: T = block.iter().copied().sum();
                p.push((T::one() - rest).max(T::zero()));
                p
            }
            Parameterization::GroupSoftmax => {
                let top = block.iter().copied().fold(T::zero(), T::max);
                let mut p: Vec<T> = block.iter().map(|&z| (z - top).exp()).collect();
                p.push((-top).exp());
                let s: T = p.iter().copied().sum();
                p.iter_mut().for_each(|v| *v /= s);
                p
            }
        }
    }
}

/// Euclidean projection onto `{v >= 0, sum v <= 1}`.
fn project_capped_simplex<T: Scalar>(v: &mut [T]) {
    let clipped: Vec<T> = v.iter().map(|&x| x.max(T::zero())).collect();
    if clipped.iter().copied().sum::<T>() <= T::one() {
        v.copy_from_slice(&clipped);
        return;
    }
    // Projection onto the probability simplex (sort-and-threshold).
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = T::zero();
    let mut tau = T::zero();
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - T::one()) / T::of_usize(i + 1);
        if ui - t > T::zero() {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(T::zero());
    }
}

/// Action probabilities at `context`.
pub fn policy_probs<T: Scalar>(params: &PolicyParams<T>, context: usize) -> Result<Vec<T>, OplError> {
    params.group_of(context)?;
    Ok(params.probs_unchecked(context))
}

/// `l(theta, z) = sum_a pi_theta(a|z) m_hat(z, a)` and its gradient in theta.
pub fn robust_policy_cost<T: Scalar>(
    params: &PolicyParams<T>,
    table: &RobustCostTable<T>,
    context: usize,
) -> Result<(T, Vec<T>), OplError> {
    let g = params.group_of(context)?;
    if context >= table.n_contexts() || table.n_actions() != params.n_actions {
        return Err(OpeError::IncompleteTable {
            table_contexts: table.n_contexts(),
            table_actions: table.n_actions(),
            contexts: params.n_contexts(),
            actions: params.n_actions,
        }
        .into());
    }
    let mut grad = vec![T::zero(); params.dim()];
    let (value, block_grad) = cost_and_block_grad(params, &table.m_hat[context], context);
    let k = params.n_actions - 1;
    grad[g * k..(g + 1) * k].copy_from_slice(&block_grad);
    Ok((value, grad))
}

fn cost_and_block_grad<T: Scalar>(params: &PolicyParams<T>, m: &[T], context: usize) -> (T, Vec<T>) {
    let p = params.probs_unchecked(context);
    let mut value = T::zero();
    for (pi, mi) in p.iter().zip(m) {
        value += *pi * *mi;
    }
    let k = params.n_actions - 1;
    let last = m[k];
    let grad = match params.parameterization {
        Parameterization::GroupProbClamp => (0..k).map(|i| m[i] - last).collect(),
        Parameterization::GroupSoftmax => (0..k).map(|i| p[i] * (m[i] - value)).collect(),
    };
    (value, grad)
}

fn check_table<T: Scalar>(
    params: &PolicyParams<T>,
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
) -> Result<(), OplError> {
    table.check_shape(context_dist.len(), params.n_actions)?;
    if params.n_contexts() != context_dist.len() {
        return Err(OplError::InvalidParams(format!(
            "grouping covers {} contexts, distribution has {}",
            params.n_contexts(),
            context_dist.len()
        )));
    }
    Ok(())
}

/// Smoothed objective at a fixed `(theta, lambda)` and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEval<T> {
    pub value: T,
    pub grad_theta: Vec<T>,
    pub grad_lambda: T,
}

/// Per-context part of the smoothed objective: with `g(z) = exp(eta (l(z) - lambda c(x, z)))`,
/// returns `(1/eta) ln mean g`, `sum g grad l / sum g` and `-sum g c / sum g`
/// over the given `zetas` (indices into the support, repeats allowed).
fn inner_terms<T: Scalar>(
    params: &PolicyParams<T>,
    costs: &[(T, Vec<T>)],
    c_row: &[T],
    zetas: &mut dyn Iterator<Item = usize>,
    lambda: T,
    eta: T,
) -> (T, Vec<T>, T) {
    let zs: Vec<usize> = zetas.collect();
    let expo: Vec<T> = zs.iter().map(|&z| eta * (costs[z].0 - lambda * c_row[z])).collect();
    let top = expo.iter().copied().fold(T::neg_infinity(), T::max);
    let k = params.n_actions - 1;
    let mut s = T::zero();
    let mut gc = T::zero();
    let mut gt = vec![T::zero(); params.dim()];
    for (&z, &e) in zs.iter().zip(&expo) {
        let g = (e - top).exp();
        s += g;
        gc += g * c_row[z];
        let grp = params.grouping[z];
        for (j, d) in costs[z].1.iter().enumerate() {
            gt[grp * k + j] += g * *d;
        }
    }
    gt.iter_mut().for_each(|v| *v /= s);
    let lse = (top + (s / T::of_usize(zs.len())).ln()) / eta;
    (lse, gt, -gc / s)
}

fn all_costs<T: Scalar>(params: &PolicyParams<T>, table: &RobustCostTable<T>) -> Vec<(T, Vec<T>)> {
    (0..params.n_contexts()).map(|z| cost_and_block_grad(params, &table.m_hat[z], z)).collect()
}

/// `eps lambda + sum_x P(x) (1/eta) ln((1/n) sum_z exp(eta (l(theta, z) - lambda c(x, z))))`
/// with its exact gradient (full enumeration over the context support).
pub fn smoothed_objective<T: Scalar>(
    params: &PolicyParams<T>,
    lambda: T,
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
    epsilon_x: T,
    eta: T,
) -> Result<SmoothedEval<T>, OplError> {
    check_table(params, table, context_dist)?;
    let support = context_dist.support();
    let cmat = GroundCost::SquaredEuclidean.matrix(support, support);
    let costs = all_costs(params, table);
    let n = support.len();
    let mut value = epsilon_x * lambda;
    let mut grad_theta = vec![T::zero(); params.dim()];
    let mut grad_lambda = epsilon_x;
    for x in 0..n {
        let w = context_dist.weight(x);
        if w <= T::zero() {
            continue;
        }
        let (v, gt, gl) = inner_terms(params, &costs, &cmat[x], &mut (0..n), lambda, eta);
        value += w * v;
        grad_lambda += w * gl;
        for (a, b) in grad_theta.iter_mut().zip(gt) {
            *a += w * b;
        }
    }
    Ok(SmoothedEval { value, grad_theta, grad_lambda })
}

/// Gradient estimate for one sampled context `x` and inner points `zetas`.
/// With `zetas` enumerating the support this is the exact gradient of the
/// `x`-term of [`smoothed_objective`].
#[allow(clippy::too_many_arguments)]
pub fn context_gradient<T: Scalar>(
    params: &PolicyParams<T>,
    lambda: T,
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
    x: usize,
    zetas: &[usize],
    epsilon_x: T,
    eta: T,
) -> Result<SmoothedEval<T>, OplError> {
    check_table(params, table, context_dist)?;
    let support = context_dist.support();
    let c_row: Vec<T> = support.points().iter().map(|z| GroundCost::SquaredEuclidean.eval(support.point(x), z)).collect();
    let costs = all_costs(params, table);
    let (v, gt, gl) = inner_terms(params, &costs, &c_row, &mut zetas.iter().copied(), lambda, eta);
    Ok(SmoothedEval { value: epsilon_x * lambda + v, grad_theta: gt, grad_lambda: epsilon_x + gl })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepSize<T> {
    Constant { gamma: T },
    /// `gamma = c / sqrt(T)` for the whole run.
    InvSqrtT { c: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct BsgdConfig<T> {
    pub iterations: usize,
    pub inner_batch: usize,
    pub step: StepSize<T>,
    pub eta: T,
    pub epsilon_x: T,
    pub lambda0: T,
    /// Starting parameters; the uniform policy when absent.
    pub theta0: Option<Vec<T>>,
    pub seed: u64,
    /// Upper end of the lambda box; `y_max / epsilon_x` when absent.
    pub lambda_cap: Option<T>,
}

impl<T: Scalar> BsgdConfig<T> {
    pub fn new(iterations: usize, inner_batch: usize, eta: T, epsilon_x: T, seed: u64) -> Self {
        Self {
            iterations,
            inner_batch,
            step: StepSize::InvSqrtT { c: T::of(0.5) },
            eta,
            epsilon_x,
            lambda0: T::zero(),
            theta0: None,
            seed,
            lambda_cap: None,
        }
    }

    pub fn gamma(&self) -> T {
        match self.step {
            StepSize::Constant { gamma } => gamma,
            StepSize::InvSqrtT { c } => c / T::of_usize(self.iterations).sqrt(),
        }
    }

    fn validate(&self) -> Result<(), OplError> {
        let bad = |m: &str| Err(OplError::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.inner_batch == 0 {
            return bad("inner batch must be at least 1");
        }
        if !(self.gamma() > T::zero() && self.gamma().is_finite()) {
            return bad("step size must be positive");
        }
        if !(self.eta > T::zero() && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.epsilon_x > T::zero() && self.epsilon_x.is_finite()) {
            return bad("epsilon_x must be positive");
        }
        if !(self.lambda0 >= T::zero()) {
            return bad("lambda0 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct TraceRow<T> {
    pub t: usize,
    pub theta: Vec<T>,
    pub lambda: T,
    pub context: usize,
    /// Sampled estimate of the smoothed objective before the update.
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct LearnTrace<T> {
    pub rows: Vec<TraceRow<T>>,
}

impl<T: Scalar> LearnTrace<T> {
    /// CSV with columns `t, theta_0.., lambda, context, objective`.
    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.theta.len());
        let mut out = String::from("t");
        for i in 0..dim {
            out.push_str(&format!(",theta_{i}"));
        }
        out.push_str(",lambda,context,objective\n");
        for r in &self.rows {
            out.push_str(&r.t.to_string());
            for v in &r.theta {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{},{}\n", r.lambda, r.context, r.objective));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutput<T> {
    pub params: PolicyParams<T>,
    pub lambda: T,
    pub trace: LearnTrace<T>,
}

/// Biased stochastic gradient descent on the smoothed robust objective.
///
/// Each iteration draws a context from `context_dist`, then `inner_batch`
/// points uniformly with replacement from its support, forms the ratio
/// gradient estimates in max-shifted form, projects `theta` and clamps
/// `lambda` into `[0, lambda_cap]`. Returns the last iterate.
pub fn bsgd_learn<T: Scalar>(
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
    start: &PolicyParams<T>,
    config: &BsgdConfig<T>,
) -> Result<LearnOutput<T>, OplError> {
    config.validate()?;
    check_table(start, table, context_dist)?;
    let mut params = match &config.theta0 {
        Some(t) => start.with_theta(t.clone())?,
        None => start.clone(),
    };
    let cap = config.lambda_cap.unwrap_or(table.y_max / config.epsilon_x);
    if !(cap >= T::zero()) {
        return Err(OplError::InvalidConfig("lambda cap must be non-negative".into()));
    }
    let mut lambda = config.lambda0.min(cap);
    let gamma = config.gamma();
    let support = context_dist.support();
    let n = support.len();
    let cmat = GroundCost::SquaredEuclidean.matrix(support, support);
    let weights: Vec<f64> = context_dist.weights().iter().map(|w| w.as_f64()).collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| OplError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::with_capacity(config.iterations);
    let mut zetas = vec![0usize; config.inner_batch];
    for t in 0..config.iterations {
        let x = sampler.sample(&mut rng);
        for z in zetas.iter_mut() {
            *z = rng.gen_range(0..n);
        }
        let costs = all_costs(&params, table);
        let (v, gt, gl) = inner_terms(&params, &costs, &cmat[x], &mut zetas.iter().copied(), lambda, config.eta);
        rows.push(TraceRow {
            t,
            theta: params.theta.clone(),
            lambda,
            context: x,
            objective: config.epsilon_x * lambda + v,
        });
        let theta: Vec<T> = params.theta.iter().zip(&gt).map(|(a, g)| *a - gamma * *g).collect();
        params = params.with_theta_raw(theta);
        params.project();
        lambda = (lambda - gamma * (config.epsilon_x + gl)).max(T::zero()).min(cap);
    }
    Ok(LearnOutput { params, lambda, trace: LearnTrace { rows } })
}

/// Grid used by [`exact_opl`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    /// Logit range searched for `GroupSoftmax`.
    pub logit_range: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { resolution: 101, logit_range: (-10.0, 10.0) }
    }
}

/// Exhaustive search over a uniform grid of the parameter set. Ties go to
/// the grid point with the lowest index (first coordinate slowest); values
/// within `tol` of the incumbent are ties.
pub fn exact_opl<T: Scalar>(
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
    template: &PolicyParams<T>,
    epsilon_x: T,
    method: Method<T>,
    grid: GridSpec,
    tol: T,
) -> Result<(PolicyParams<T>, T), OplError> {
    let dim = template.dim();
    if dim > MAX_GRID_DIM {
        return Err(OplError::DimensionTooLarge(dim));
    }
    if grid.resolution < 2 {
        return Err(OplError::InvalidConfig("grid resolution must be at least 2".into()));
    }
    check_table(template, table, context_dist)?;
    let r = grid.resolution;
    let (lo, hi) = match template.parameterization {
        Parameterization::GroupProbClamp => (0.0, 1.0),
        Parameterization::GroupSoftmax => grid.logit_range,
    };
    let level = |i: usize| T::of(lo + (hi - lo) * i as f64 / (r - 1) as f64);
    let total = r.pow(dim as u32);
    let results: Vec<Option<Result<T, OplError>>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let theta = grid_point(idx, dim, r, &level);
            let params = template.with_theta_raw(theta);
            if template.parameterization == Parameterization::GroupProbClamp && !feasible(&params) {
                return None;
            }
            Some(
                evaluate_policy(&params.to_policy(), table, context_dist, epsilon_x, method, tol)
                    .map(|s| s.value)
                    .map_err(OplError::from),
            )
        })
        .collect();
    let mut best: Option<(usize, T)> = None;
    for (idx, res) in results.into_iter().enumerate() {
        let Some(res) = res else { continue };
        let v = res?;
        // Values within the solver tolerance count as ties.
        let tie = |b: T| tol.max(T::of(64.0) * T::epsilon() * b.abs());
        if best.is_none_or(|(_, b)| v < b - tie(b)) {
            best = Some((idx, v));
        }
    }
    let (idx, value) = best.ok_or_else(|| OplError::InvalidConfig("empty grid".into()))?;
    Ok((template.with_theta_raw(grid_point(idx, dim, r, &level)), value))
}

fn grid_point<T: Scalar>(mut idx: usize, dim: usize, r: usize, level: &dyn Fn(usize) -> T) -> Vec<T> {
    let mut theta = vec![T::zero(); dim];
    for d in (0..dim).rev() {
        theta[d] = level(idx % r);
        idx /= r;
    }
    theta
}

fn feasible<T: Scalar>(p: &PolicyParams<T>) -> bool {
    (0..p.n_groups).all(|g| p.block(g).iter().copied().sum::<T>() <= T::one() + T::of(1e-12))
}
