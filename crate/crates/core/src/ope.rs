//! Two-level robust off-policy evaluation.
//!
//! The inner level computes, independently for every (context, action) pair,
//! the worst-case expected cost over a ball around the pair's empirical
//! outcome distribution. The outer level mixes those robust costs under the
//! evaluated policy and takes the worst case over a ball around the empirical
//! context distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BanditDataset;
use crate::dist::{empirical_from_counts, DiscreteDistribution, DistError, SupportSet};
use crate::dual::{self, CostVector, DualError, DualSolution, SolveStatus};
use crate::scalar::Scalar;
use crate::transport::GroundCost;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpeError {
    #[error("no samples for (context, action) pairs {0:?}")]
    MissingPair(Vec<(usize, usize)>),
    #[error("robust cost table covers {table_contexts}x{table_actions}, expected {contexts}x{actions}")]
    IncompleteTable { table_contexts: usize, table_actions: usize, contexts: usize, actions: usize },
    #[error("policy covers {policy} contexts with {policy_actions} actions, expected {contexts} and {actions}")]
    PolicyContextMismatch { policy: usize, policy_actions: usize, contexts: usize, actions: usize },
    #[error("invalid policy row {context}: {reason}")]
    InvalidPolicy { context: usize, reason: String },
    #[error("cost model value at ({x}, {a}, {xi}) is {value}, outside [0, {y_max}]")]
    CostOutOfRange { x: usize, a: usize, xi: usize, value: f64, y_max: f64 },
    #[error("cost model shape does not match dataset: {0}")]
    CostModelShape(String),
    #[error("rate experiment needs at least one trial and one sample size")]
    EmptyExperiment,
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Which one-dimensional problem to solve at each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method<T> {
    /// Non-robust empirical expectation (radius ignored).
    Plugin,
    Exact,
    Regularized { eta: T },
    Kl,
}

impl<T: Scalar> Method<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::Exact => "exact",
            Method::Regularized { .. } => "regularized",
            Method::Kl => "kl",
        }
    }

    pub fn eta(&self) -> Option<T> {
        match self {
            Method::Regularized { eta } => Some(*eta),
            _ => None,
        }
    }

    /// Solves `sup_{P in ball(p0, eps)} E_P[f]` with this method.
    pub fn solve(
        &self,
        p0: &DiscreteDistribution<T>,
        f: &CostVector<T>,
        epsilon: T,
        cost: GroundCost,
        tol: T,
    ) -> Result<DualSolution<T>, DualError> {
        match *self {
            Method::Plugin => dual::wasserstein_dual_solve(p0, f, T::zero(), cost, tol),
            Method::Exact => dual::wasserstein_dual_solve(p0, f, epsilon, cost, tol),
            Method::Regularized { eta } => {
                dual::regularized_dual_solve(p0, f, epsilon, cost, dual::SmoothingConfig::new(eta)?, tol)
            }
            Method::Kl => dual::kl_dual_solve(p0, f, epsilon, tol),
        }
    }
}

/// Known outcome support and per-pair cost functions `y_{x,a}(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct CostModel<T> {
    xi_support: SupportSet<T>,
    n_contexts: usize,
    n_actions: usize,
    /// Flattened `[x][a][xi]`.
    y: Vec<T>,
    y_max: T,
}

impl<T: Scalar> CostModel<T> {
    pub fn from_fn<F: FnMut(usize, usize, usize) -> T>(
        xi_support: SupportSet<T>,
        n_contexts: usize,
        n_actions: usize,
        y_max: T,
        mut y: F,
    ) -> Result<Self, OpeError> {
        let k = xi_support.len();
        let mut values = Vec::with_capacity(n_contexts * n_actions * k);
        for x in 0..n_contexts {
            for a in 0..n_actions {
                for xi in 0..k {
                    let value = y(x, a, xi);
                    if !(value >= T::zero() && value <= y_max) {
                        return Err(OpeError::CostOutOfRange {
                            x,
                            a,
                            xi,
                            value: value.as_f64(),
                            y_max: y_max.as_f64(),
                        });
                    }
                    values.push(value);
                }
            }
        }
        Ok(Self { xi_support, n_contexts, n_actions, y: values, y_max })
    }

    /// The same cost function of the outcome for every pair.
    pub fn shared(
        xi_support: SupportSet<T>,
        values: &[T],
        n_contexts: usize,
        n_actions: usize,
        y_max: T,
    ) -> Result<Self, OpeError> {
        if values.len() != xi_support.len() {
            return Err(OpeError::CostModelShape(format!(
                "{} cost values for {} outcomes",
                values.len(),
                xi_support.len()
            )));
        }
        Self::from_fn(xi_support, n_contexts, n_actions, y_max, |_, _, xi| values[xi])
    }

    /// `y(xi) = xi` for scalar outcomes that are the costs themselves.
    pub fn identity(xi_support: SupportSet<T>, n_contexts: usize, n_actions: usize, y_max: T) -> Result<Self, OpeError> {
        if xi_support.dim() != 1 {
            return Err(OpeError::CostModelShape("identity cost needs scalar outcomes".into()));
        }
        let values: Vec<T> = xi_support.points().iter().map(|p| p[0]).collect();
        Self::shared(xi_support, &values, n_contexts, n_actions, y_max)
    }

    pub fn xi_support(&self) -> &SupportSet<T> {
        &self.xi_support
    }

    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn pair_costs(&self, x: usize, a: usize) -> &[T] {
        let k = self.xi_support.len();
        let start = (x * self.n_actions + a) * k;
        &self.y[start..start + k]
    }

    pub fn y(&self, x: usize, a: usize, xi: usize) -> T {
        self.pair_costs(x, a)[xi]
    }
}

/// Action distribution per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct Policy<T> {
    probs: Vec<Vec<T>>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(probs: Vec<Vec<T>>) -> Result<Self, OpeError> {
        let k = probs.first().map_or(0, Vec::len);
        for (context, row) in probs.iter().enumerate() {
            if row.len() != k || k == 0 {
                return Err(OpeError::InvalidPolicy { context, reason: "ragged or empty row".into() });
            }
            if row.iter().any(|p| !(*p >= T::zero())) {
                return Err(OpeError::InvalidPolicy { context, reason: "negative probability".into() });
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs().as_f64() > 1e-12_f64.max(4.0 * T::epsilon().as_f64() * k as f64) {
                return Err(OpeError::InvalidPolicy { context, reason: format!("probabilities sum to {s}") });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_contexts: usize, n_actions: usize) -> Self {
        let p = T::one() / T::of_usize(n_actions);
        Self { probs: vec![vec![p; n_actions]; n_contexts] }
    }

    pub fn probs(&self, x: usize) -> &[T] {
        &self.probs[x]
    }

    pub fn n_contexts(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.probs
    }
}

/// What to do with (context, action) pairs that have no samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPairs {
    #[default]
    Error,
    /// Assign the cost upper bound `y_max` to unobserved pairs.
    ImputeYmax,
}

/// Robust per-pair costs `m_hat(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct RobustCostTable<T> {
    pub m_hat: Vec<Vec<T>>,
    pub method: Method<T>,
    pub epsilon_c: T,
    pub y_max: T,
    /// Pairs filled with `y_max` rather than solved.
    pub imputed: Vec<(usize, usize)>,
}

impl<T: Scalar> RobustCostTable<T> {
    pub fn n_contexts(&self) -> usize {
        self.m_hat.len()
    }

    pub fn n_actions(&self) -> usize {
        self.m_hat.first().map_or(0, Vec::len)
    }

    pub fn get(&self, x: usize, a: usize) -> T {
        self.m_hat[x][a]
    }

    /// Table from explicit values, e.g. for learning on a known cost table.
    pub fn from_values(m_hat: Vec<Vec<T>>, y_max: T) -> Self {
        Self { m_hat, method: Method::Plugin, epsilon_c: T::zero(), y_max, imputed: Vec::new() }
    }

    pub(crate) fn check_shape(&self, n_contexts: usize, n_actions: usize) -> Result<(), OpeError> {
        let complete = self.n_contexts() == n_contexts && self.m_hat.iter().all(|r| r.len() == n_actions);
        if !complete {
            return Err(OpeError::IncompleteTable {
                table_contexts: self.n_contexts(),
                table_actions: self.n_actions(),
                contexts: n_contexts,
                actions: n_actions,
            });
        }
        Ok(())
    }

    /// `l_hat(z) = sum_a pi(a|z) m_hat(z, a)` for every context.
    pub fn policy_costs(&self, policy: &Policy<T>) -> Result<Vec<T>, OpeError> {
        if policy.n_contexts() != self.n_contexts() || policy.n_actions() != self.n_actions() {
            return Err(OpeError::PolicyContextMismatch {
                policy: policy.n_contexts(),
                policy_actions: policy.n_actions(),
                contexts: self.n_contexts(),
                actions: self.n_actions(),
            });
        }
        Ok(self
            .m_hat
            .iter()
            .zip(policy.rows())
            .map(|(m, p)| {
                let mut acc = T::zero();
                for (mi, pi) in m.iter().zip(p) {
                    acc += *mi * *pi;
                }
                acc
            })
            .collect())
    }
}

/// Solves the inner robust problem for every (context, action) pair.
pub fn robust_cost_table<T: Scalar>(
    dataset: &BanditDataset<T>,
    model: &CostModel<T>,
    epsilon_c: T,
    method: Method<T>,
    tol: T,
) -> Result<RobustCostTable<T>, OpeError> {
    robust_cost_table_with(dataset, model, epsilon_c, method, tol, MissingPairs::Error)
}

pub fn robust_cost_table_with<T: Scalar>(
    dataset: &BanditDataset<T>,
    model: &CostModel<T>,
    epsilon_c: T,
    method: Method<T>,
    tol: T,
    missing: MissingPairs,
) -> Result<RobustCostTable<T>, OpeError> {
    let (nx, na) = (dataset.contexts().len(), dataset.n_actions());
    if model.n_contexts() != nx || model.n_actions() != na {
        return Err(OpeError::CostModelShape(format!(
            "model is {}x{}, dataset is {nx}x{na}",
            model.n_contexts(),
            model.n_actions()
        )));
    }
    if !model.xi_support().same_as(dataset.xi_support()) {
        return Err(OpeError::CostModelShape("outcome supports differ".into()));
    }
    let counts = dataset.xi_counts();
    let missing_pairs: Vec<(usize, usize)> = dataset.diagnostics().missing_pairs();
    if !missing_pairs.is_empty() && missing == MissingPairs::Error {
        return Err(OpeError::MissingPair(missing_pairs));
    }
    let xi = model.xi_support();
    let pairs: Vec<(usize, usize)> = (0..nx).flat_map(|x| (0..na).map(move |a| (x, a))).collect();
    let solved: Vec<Result<T, OpeError>> = pairs
        .par_iter()
        .map(|&(x, a)| {
            let c = &counts[x * na + a];
            if c.iter().all(|&k| k == 0) {
                return Ok(model.y_max());
            }
            let p0 = empirical_from_counts(c, xi)?;
            let f = CostVector::new(xi.clone(), model.pair_costs(x, a).to_vec())?;
            let s = method.solve(&p0, &f, epsilon_c, GroundCost::SquaredEuclidean, tol)?;
            Ok(s.value)
        })
        .collect();
    let mut m_hat = vec![vec![T::zero(); na]; nx];
    for ((x, a), v) in pairs.into_iter().zip(solved) {
        m_hat[x][a] = v?;
    }
    Ok(RobustCostTable { m_hat, method, epsilon_c, y_max: model.y_max(), imputed: missing_pairs })
}

/// Outer robust aggregation: the worst-case policy value over a ball around
/// `context_dist`, with the inner sup ranging over every context of its support.
pub fn evaluate_policy<T: Scalar>(
    policy: &Policy<T>,
    table: &RobustCostTable<T>,
    context_dist: &DiscreteDistribution<T>,
    epsilon_x: T,
    method: Method<T>,
    tol: T,
) -> Result<DualSolution<T>, OpeError> {
    table.check_shape(context_dist.len(), policy.n_actions())?;
    let l_hat = table.policy_costs(policy)?;
    let f = CostVector::new(context_dist.support().clone(), l_hat)?;
    Ok(method.solve(context_dist, &f, epsilon_x, GroundCost::SquaredEuclidean, tol)?)
}

/// Full two-level estimate from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct OpeEstimate<T> {
    pub table: RobustCostTable<T>,
    pub outer: DualSolution<T>,
}

impl<T: Scalar> OpeEstimate<T> {
    pub fn value(&self) -> T {
        self.outer.value
    }

    pub fn is_shortcut(&self) -> bool {
        self.outer.status == SolveStatus::NonRobustShortcut
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate<T: Scalar>(
    dataset: &BanditDataset<T>,
    model: &CostModel<T>,
    policy: &Policy<T>,
    epsilon_x: T,
    epsilon_c: T,
    method: Method<T>,
    tol: T,
    missing: MissingPairs,
) -> Result<OpeEstimate<T>, OpeError> {
    let table = robust_cost_table_with(dataset, model, epsilon_c, method, tol, missing)?;
    let context_dist = dataset.context_distribution()?;
    let outer = evaluate_policy(policy, &table, &context_dist, epsilon_x, method, tol)?;
    Ok(OpeEstimate { table, outer })
}

/// Two-level value computed from known distributions instead of samples.
pub fn true_value<T: Scalar>(
    contexts: &DiscreteDistribution<T>,
    xi: &[Vec<DiscreteDistribution<T>>],
    model: &CostModel<T>,
    policy: &Policy<T>,
    epsilon_x: T,
    epsilon_c: T,
    method: Method<T>,
    tol: T,
) -> Result<T, OpeError> {
    let mut m_hat = Vec::with_capacity(xi.len());
    for (x, row) in xi.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (a, p0) in row.iter().enumerate() {
            let f = CostVector::new(model.xi_support().clone(), model.pair_costs(x, a).to_vec())?;
            out.push(method.solve(p0, &f, epsilon_c, GroundCost::SquaredEuclidean, tol)?.value);
        }
        m_hat.push(out);
    }
    let table = RobustCostTable { m_hat, method, epsilon_c, y_max: model.y_max(), imputed: Vec::new() };
    Ok(evaluate_policy(policy, &table, contexts, epsilon_x, method, tol)?.value)
}

/// Median absolute estimation error per sample size, with the log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub median_abs_error: f64,
    pub redraws: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Monte-Carlo check of the estimator's convergence rate. For each `n`,
/// `trials` training sets are drawn from the generator's nominal (training)
/// distributions and the absolute gap to the value on those distributions is
/// recorded. Datasets that miss a (context, action) pair are redrawn.
pub fn rate_experiment(
    generator: &crate::synth::SyntheticConfig,
    settings: &RateSettings,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateReport, crate::synth::SynthError> {
    use crate::synth::{sample_dataset, SynthError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    if trials == 0 || n_grid.is_empty() {
        return Err(SynthError::Ope(OpeError::EmptyExperiment));
    }
    let truth = generator.truth()?;
    let nominal = truth.train();
    let policy = settings.policy(truth.n_contexts(), truth.n_actions())?;
    let v_true = true_value(
        &nominal.contexts,
        &nominal.xi,
        &truth.cost_model,
        &policy,
        settings.epsilon_x,
        settings.epsilon_c,
        settings.method,
        settings.tol,
    )?;

    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        // One stream per (n, trial) so results do not depend on evaluation order.
        let errors: Vec<Result<(f64, usize), SynthError>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let stream = seed ^ ((gi as u64) << 40) ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let mut redraws = 0;
                loop {
                    let ds = sample_dataset(&truth, nominal, n, &mut rng)?;
                    if !ds.diagnostics().missing_pairs().is_empty() {
                        redraws += 1;
                        if redraws > 1000 {
                            return Err(SynthError::Ope(OpeError::MissingPair(ds.diagnostics().missing_pairs())));
                        }
                        continue;
                    }
                    let est = estimate(
                        &ds,
                        &truth.cost_model,
                        &policy,
                        settings.epsilon_x,
                        settings.epsilon_c,
                        settings.method,
                        settings.tol,
                        MissingPairs::Error,
                    )?;
                    return Ok(((est.value() - v_true).abs(), redraws));
                }
            })
            .collect();
        let mut errs = Vec::with_capacity(trials);
        let mut redraws = 0;
        for e in errors {
            let (err, r) = e?;
            errs.push(err);
            redraws += r;
        }
        rows.push(RateRow { n, median_abs_error: median(&mut errs), redraws });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_abs_error.max(f64::MIN_POSITIVE)).collect();
    Ok(RateReport { slope: log_log_slope(&xs, &ys), rows, true_value: v_true })
}

/// Estimator settings for [`rate_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSettings {
    pub epsilon_x: f64,
    pub epsilon_c: f64,
    pub method: Method<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Evaluated policy; uniform when absent.
    #[serde(default)]
    pub policy: Option<Vec<Vec<f64>>>,
}

fn default_tol() -> f64 {
    1e-9
}

impl RateSettings {
    fn policy(&self, nx: usize, na: usize) -> Result<Policy<f64>, OpeError> {
        match &self.policy {
            Some(p) => Policy::new(p.clone()),
            None => Ok(Policy::uniform(nx, na)),
        }
    }
}
