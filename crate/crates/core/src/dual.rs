//! One-dimensional dual solvers for robust expectations over a finite support.
//!
//! For a nominal distribution `P0`, a cost `f` on a finite candidate support
//! and a radius `eps`, the Wasserstein worst case
//! `sup { E_P[f] : W(P0, P) <= eps }` equals
//!
//! ```text
//! min_{lambda >= 0}  eps * lambda + E_{x ~ P0} [ max_z ( f(z) - lambda * c(x, z) ) ]
//! ```
//!
//! The objective is convex in `lambda`, and for `f >= 0` the minimizer lies in
//! `[0, f_max / eps]`, so a golden-section search on that bracket is exact up
//! to the requested tolerance. The smoothed variant replaces the inner max by
//! a log-sum-exp with uniform reference weights; the KL variant minimizes
//! `eps * lambda + lambda * ln E_{P0}[exp(f / lambda)]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DiscreteDistribution, SupportSet};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::scalar::{LpField, Scalar};
use crate::transport::GroundCost;

/// Largest `|P0| * |support|` the primal LP oracle accepts.
pub const PRIMAL_ORACLE_MAX_VARS: usize = 1_000_000;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("dual variable must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("radius must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("smoothing parameter must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("cost vector has {values} values for {points} points")]
    LengthMismatch { values: usize, points: usize },
    #[error("cost value {0} is not finite")]
    NonFiniteCost(usize),
    #[error("nominal point {0} is not a point of the cost support")]
    SupportNotContained(usize),
    #[error("primal oracle instance has {0} variables, limit is {PRIMAL_ORACLE_MAX_VARS}")]
    InstanceTooLarge(usize),
    #[error("primal oracle: {0}")]
    Lp(#[from] LpError),
}

/// Cost values on a finite candidate support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct CostVector<T> {
    support: SupportSet<T>,
    values: Vec<T>,
    f_max: T,
    f_min: T,
}

impl<T: Scalar> CostVector<T> {
    pub fn new(support: SupportSet<T>, values: Vec<T>) -> Result<Self, DualError> {
        if values.len() != support.len() {
            return Err(DualError::LengthMismatch { values: values.len(), points: support.len() });
        }
        if values.is_empty() {
            return Err(DualError::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DualError::NonFiniteCost(i));
        }
        let f_max = values.iter().copied().fold(T::neg_infinity(), T::max);
        let f_min = values.iter().copied().fold(T::infinity(), T::min);
        Ok(Self { support, values, f_max, f_min })
    }

    pub fn support(&self) -> &SupportSet<T> {
        &self.support
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn f_max(&self) -> T {
        self.f_max
    }

    pub fn f_min(&self) -> T {
        self.f_min
    }

    /// Upper end of the search bracket for the Wasserstein dual variable.
    pub fn lambda_upper(&self, epsilon: T) -> T {
        (self.f_max - self.f_min.min(T::zero())) / epsilon
    }
}

/// How a [`DualSolution`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// `eps = 0`: the value is the plain expectation under `P0`.
    NonRobustShortcut,
    /// The cost is constant on the relevant support.
    ConstantCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct DualSolution<T> {
    pub lambda_star: T,
    pub value: T,
    pub iterations: usize,
    pub bracket: (T, T),
    pub status: SolveStatus,
}

/// Reference measure of the smoothed inner maximum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMeasure {
    #[default]
    UniformOverSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig<T> {
    pub eta: T,
    #[serde(default)]
    pub reference: ReferenceMeasure,
}

impl<T: Scalar> SmoothingConfig<T> {
    pub fn new(eta: T) -> Result<Self, DualError> {
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(DualError::NonPositiveEta(eta.as_f64()));
        }
        Ok(Self { eta, reference: ReferenceMeasure::UniformOverSupport })
    }
}

/// `(1/eta) * ln( (1/n) * sum_i exp(eta * v_i) )`, evaluated max-shifted.
///
/// Always lies in `[max - ln(n)/eta, max]`.
pub fn lse<T: Scalar>(values: &[T], eta: T) -> Result<T, DualError> {
    if values.is_empty() {
        return Err(DualError::EmptyInput);
    }
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(DualError::NonPositiveEta(eta.as_f64()));
    }
    Ok(lse_unchecked(values.iter().copied(), values.len(), eta))
}

#[inline]
pub(crate) fn lse_unchecked<T: Scalar, I: Iterator<Item = T> + Clone>(values: I, n: usize, eta: T) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in values {
        s += (eta * (v - max)).exp();
    }
    let out = max + (s.ln() - T::of_usize(n).ln()) / eta;
    out.min(max).max(max - T::of_usize(n).ln() / eta)
}

/// Nominal rows with positive weight, paired with their cost rows towards
/// every candidate point. Shared setup of all Wasserstein-type duals.
#[derive(Debug, Clone)]
pub(crate) struct DualRows<T> {
    weights: Vec<T>,
    /// `costs[r][z] = c(x_r, z)`
    costs: Vec<Vec<T>>,
    /// Index of `x_r` in the candidate support, when present.
    self_index: Vec<Option<usize>>,
    c_max: T,
}

impl<T: Scalar> DualRows<T> {
    pub(crate) fn new(p0: &DiscreteDistribution<T>, candidates: &SupportSet<T>, cost: GroundCost) -> Self {
        let mut weights = Vec::new();
        let mut costs = Vec::new();
        let mut self_index = Vec::new();
        let mut c_max = T::zero();
        for (i, x) in p0.support().points().iter().enumerate() {
            let w = p0.weight(i);
            if w <= T::zero() {
                continue;
            }
            let row: Vec<T> = candidates.points().iter().map(|z| cost.eval(x, z)).collect();
            c_max = row.iter().copied().fold(c_max, T::max);
            weights.push(w);
            costs.push(row);
            self_index.push(candidates.index_of(x));
        }
        Self { weights, costs, self_index, c_max }
    }

    fn require_contained(&self, p0: &DiscreteDistribution<T>) -> Result<(), DualError> {
        if let Some(r) = self.self_index.iter().position(Option::is_none) {
            // Map back to the original index for the message.
            let original = (0..p0.len()).filter(|&i| p0.weight(i) > T::zero()).nth(r).unwrap_or(r);
            return Err(DualError::SupportNotContained(original));
        }
        Ok(())
    }

    /// `E_{P0}[f]`, summed in the same order as the objectives below.
    fn expectation(&self, f: &[T]) -> T {
        let mut acc = T::zero();
        for (w, idx) in self.weights.iter().zip(&self.self_index) {
            acc += *w * f[idx.expect("containment checked")];
        }
        acc
    }

    fn hard_objective(&self, f: &[T], lambda: T, epsilon: T) -> T {
        let mut acc = T::zero();
        for (w, row) in self.weights.iter().zip(&self.costs) {
            let mut best = T::neg_infinity();
            for (fz, c) in f.iter().zip(row) {
                let v = *fz - lambda * *c;
                if v > best {
                    best = v;
                }
            }
            acc += *w * best;
        }
        acc + epsilon * lambda
    }

    /// Computed as the hard objective minus a smoothing deficit in
    /// `[0, ln(n)/eta]`, so the sandwich against [`Self::hard_objective`]
    /// holds for the floating-point values too.
    fn smooth_objective(&self, f: &[T], lambda: T, epsilon: T, eta: T) -> T {
        let bound = T::of_usize(f.len()).ln() / eta;
        let mut deficit = T::zero();
        for (w, row) in self.weights.iter().zip(&self.costs) {
            let vals = f.iter().zip(row).map(|(fz, c)| *fz - lambda * *c);
            let max = vals.clone().fold(T::neg_infinity(), T::max);
            deficit += *w * (max - lse_unchecked(vals, f.len(), eta));
        }
        let hard = self.hard_objective(f, lambda, epsilon);
        let mut v = hard - deficit.max(T::zero()).min(bound);
        while hard - v > bound {
            v += (v.abs() * T::epsilon()).max(T::min_positive_value());
        }
        v.min(hard)
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns the best evaluated point (endpoints included) and the iteration count.
pub(crate) fn golden_section<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    lo: T,
    hi: T,
    width_tol: T,
    max_iter: usize,
) -> (T, T, usize) {
    let mut best = (lo, f(lo));
    let fh = f(hi);
    if fh < best.1 {
        best = (hi, fh);
    }
    let g = T::of(GOLDEN);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iters = 0;
    while b - a > width_tol && iters < max_iter {
        iters += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    for (x, fx) in [(c, fc), (d, fd)] {
        if fx < best.1 {
            best = (x, fx);
        }
    }
    (best.0, best.1, iters)
}

fn check_common<T: Scalar>(epsilon: T, tol: T) -> Result<(), DualError> {
    if epsilon < T::zero() || !epsilon.is_finite() {
        return Err(DualError::NegativeEpsilon(epsilon.as_f64()));
    }
    if !(tol > T::zero()) || !tol.is_finite() {
        return Err(DualError::InvalidTolerance(tol.as_f64()));
    }
    Ok(())
}

const MAX_GOLDEN_ITERS: usize = 400;

/// Wasserstein dual objective at a fixed `lambda`.
pub fn dual_objective<T: Scalar>(
    lambda: T,
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    cost: GroundCost,
) -> Result<T, DualError> {
    if lambda < T::zero() {
        return Err(DualError::NegativeLambda(lambda.as_f64()));
    }
    if epsilon < T::zero() {
        return Err(DualError::NegativeEpsilon(epsilon.as_f64()));
    }
    Ok(DualRows::new(p0, f.support(), cost).hard_objective(f.values(), lambda, epsilon))
}

fn shortcut<T: Scalar>(value: T, status: SolveStatus) -> DualSolution<T> {
    let lambda_star = if status == SolveStatus::NonRobustShortcut { T::infinity() } else { T::zero() };
    DualSolution { lambda_star, value, iterations: 0, bracket: (T::zero(), T::zero()), status }
}

/// Minimizes the Wasserstein dual objective over `lambda`.
///
/// `p0`'s support (its positive-weight points) must be contained in the
/// cost support. With `epsilon = 0` the plain expectation is returned.
pub fn wasserstein_dual_solve<T: Scalar>(
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    cost: GroundCost,
    tol: T,
) -> Result<DualSolution<T>, DualError> {
    check_common(epsilon, tol)?;
    let rows = DualRows::new(p0, f.support(), cost);
    rows.require_contained(p0)?;
    solve_hard(&rows, f, epsilon, tol)
}

pub(crate) fn solve_hard<T: Scalar>(
    rows: &DualRows<T>,
    f: &CostVector<T>,
    epsilon: T,
    tol: T,
) -> Result<DualSolution<T>, DualError> {
    let expectation = rows.expectation(f.values());
    if epsilon == T::zero() {
        return Ok(shortcut(expectation, SolveStatus::NonRobustShortcut));
    }
    let hi = f.lambda_upper(epsilon);
    if hi == T::zero() {
        return Ok(shortcut(rows.hard_objective(f.values(), T::zero(), epsilon), SolveStatus::ConstantCost));
    }
    // |d objective / d lambda| <= eps + c_max, so a bracket of this width pins
    // the value to within `tol`.
    let width = tol / (epsilon + rows.c_max);
    let (lambda, value, iterations) = golden_section(
        |l| rows.hard_objective(f.values(), l, epsilon),
        T::zero(),
        hi,
        width,
        MAX_GOLDEN_ITERS,
    );
    Ok(DualSolution {
        lambda_star: lambda,
        value: value.min(f.f_max()).max(expectation),
        iterations,
        bracket: (T::zero(), hi),
        status: SolveStatus::Converged,
    })
}

/// Entropy-smoothed Wasserstein dual: the inner max becomes a log-sum-exp at
/// sharpness `eta` with uniform reference weights over the cost support.
/// Minimized over the same bracket as [`wasserstein_dual_solve`]; the result
/// lies within `ln(|support|)/eta` below it.
pub fn regularized_dual_solve<T: Scalar>(
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    cost: GroundCost,
    smoothing: SmoothingConfig<T>,
    tol: T,
) -> Result<DualSolution<T>, DualError> {
    check_common(epsilon, tol)?;
    SmoothingConfig::new(smoothing.eta)?;
    let rows = DualRows::new(p0, f.support(), cost);
    rows.require_contained(p0)?;
    solve_smooth(&rows, f, epsilon, smoothing.eta, tol)
}

pub(crate) fn solve_smooth<T: Scalar>(
    rows: &DualRows<T>,
    f: &CostVector<T>,
    epsilon: T,
    eta: T,
    tol: T,
) -> Result<DualSolution<T>, DualError> {
    if epsilon == T::zero() {
        return Ok(shortcut(rows.expectation(f.values()), SolveStatus::NonRobustShortcut));
    }
    let hi = f.lambda_upper(epsilon);
    if hi == T::zero() {
        let v = rows.smooth_objective(f.values(), T::zero(), epsilon, eta);
        return Ok(shortcut(v, SolveStatus::ConstantCost));
    }
    let width = tol / (epsilon + rows.c_max);
    let (lambda, value, iterations) = golden_section(
        |l| rows.smooth_objective(f.values(), l, epsilon, eta),
        T::zero(),
        hi,
        width,
        MAX_GOLDEN_ITERS,
    );
    Ok(DualSolution {
        lambda_star: lambda,
        value,
        iterations,
        bracket: (T::zero(), hi),
        status: SolveStatus::Converged,
    })
}

/// KL-ball worst case via its one-dimensional dual, searched in `ln(lambda)`
/// over `[1e-6, 1e3] * spread` where `spread = f_max - f_min` on the support of `p0`.
pub fn kl_dual_solve<T: Scalar>(
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    tol: T,
) -> Result<DualSolution<T>, DualError> {
    check_common(epsilon, tol)?;
    let mut weights = Vec::new();
    let mut vals = Vec::new();
    for (i, x) in p0.support().points().iter().enumerate() {
        if p0.weight(i) <= T::zero() {
            continue;
        }
        let j = f.support().index_of(x).ok_or(DualError::SupportNotContained(i))?;
        weights.push(p0.weight(i));
        vals.push(f.values()[j]);
    }
    solve_kl(&weights, &vals, epsilon, tol)
}

pub(crate) fn solve_kl<T: Scalar>(weights: &[T], vals: &[T], epsilon: T, tol: T) -> Result<DualSolution<T>, DualError> {
    let mut expectation = T::zero();
    for (w, v) in weights.iter().zip(vals) {
        expectation += *w * *v;
    }
    if epsilon == T::zero() {
        return Ok(shortcut(expectation, SolveStatus::NonRobustShortcut));
    }
    let top = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let bottom = vals.iter().copied().fold(T::infinity(), T::min);
    let spread = top - bottom;
    if spread <= T::zero() {
        return Ok(shortcut(top, SolveStatus::ConstantCost));
    }
    let objective = |lambda: T| {
        let mut s = T::zero();
        for (w, v) in weights.iter().zip(vals) {
            s += *w * ((*v - top) / lambda).exp();
        }
        epsilon * lambda + top + lambda * s.ln()
    };
    let lo = (T::of(1e-6) * spread).ln();
    let hi = (T::of(1e3) * spread).ln();
    // Log-domain bracket width; the objective's derivative in ln(lambda) is
    // bounded by (eps + ln(1/p_min)) * lambda_hi, so scale accordingly.
    let p_min = weights.iter().copied().fold(T::one(), T::min);
    let slope = (epsilon - p_min.ln()) * T::of(1e3) * spread + spread;
    let width = (tol / slope).max(T::epsilon() * T::of(4.0));
    let (log_lambda, value, iterations) =
        golden_section(|u| objective(u.exp()), lo, hi, width, MAX_GOLDEN_ITERS);
    Ok(DualSolution {
        lambda_star: log_lambda.exp(),
        // lambda -> 0 recovers the largest cost on the support of p0.
        value: value.min(top).max(expectation),
        iterations,
        bracket: (lo.exp(), hi.exp()),
        status: SolveStatus::Converged,
    })
}

/// Worst-case expectation by solving the primal LP over couplings directly.
/// Used to certify the dual solvers.
pub fn primal_oracle<T: Scalar>(
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    cost: GroundCost,
) -> Result<T, DualError> {
    let v: f64 = primal_oracle_in::<T, f64>(p0, f, epsilon, cost)?;
    Ok(T::of(v))
}

/// [`primal_oracle`] with the LP carried out in the field `F`; with
/// `BigRational` the optimum is exact for the given (binary) inputs.
pub fn primal_oracle_in<T: Scalar, F: LpField>(
    p0: &DiscreteDistribution<T>,
    f: &CostVector<T>,
    epsilon: T,
    cost: GroundCost,
) -> Result<F, DualError> {
    if epsilon < T::zero() {
        return Err(DualError::NegativeEpsilon(epsilon.as_f64()));
    }
    let rows: Vec<usize> = (0..p0.len()).filter(|&i| p0.weight(i) > T::zero()).collect();
    let m = f.support().len();
    let n_vars = rows.len() * m;
    if n_vars > PRIMAL_ORACLE_MAX_VARS {
        return Err(DualError::InstanceTooLarge(n_vars));
    }
    let conv = |x: T| F::from_f64(x.as_f64());
    let mut objective = Vec::with_capacity(n_vars);
    for _ in &rows {
        objective.extend(f.values().iter().map(|&v| conv(v)));
    }
    let mut lp = LinearProgram::maximize(objective);
    let mut budget = vec![F::zero(); n_vars];
    for (r, &i) in rows.iter().enumerate() {
        let mut row = vec![F::zero(); n_vars];
        for j in 0..m {
            row[r * m + j] = F::one();
            budget[r * m + j] = conv(cost.eval(p0.support().point(i), f.support().point(j)));
        }
        lp.constraint(row, Relation::Eq, conv(p0.weight(i)))?;
    }
    lp.constraint(budget, Relation::Le, conv(epsilon))?;
    Ok(lp.solve()?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const C: GroundCost = GroundCost::SquaredEuclidean;

    fn line(v: &[f64]) -> SupportSet<f64> {
        SupportSet::from_scalars(v).unwrap()
    }

    fn unit_instance() -> (DiscreteDistribution<f64>, CostVector<f64>) {
        let s = line(&[0.0, 1.0]);
        (DiscreteDistribution::uniform(s.clone()), CostVector::new(s, vec![0.0, 1.0]).unwrap())
    }

    #[test]
    fn dual_objective_examples() {
        let (p, f) = unit_instance();
        assert_eq!(dual_objective(0.0, &p, &f, 0.3, C).unwrap(), 1.0);
        // x=0: max(0, 1-1)=0 ; x=1: max(0-1, 1)=1 -> 0.25 + 0.5*0 + 0.5*1
        assert_abs_diff_eq!(dual_objective(1.0, &p, &f, 0.25, C).unwrap(), 0.75, epsilon = 1e-15);
        let g = CostVector::new(line(&[0.0, 1.0]), vec![2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(dual_objective(3.0, &p, &g, 0.1, C).unwrap(), 2.3, epsilon = 1e-15);
        assert!(matches!(dual_objective(-1.0, &p, &f, 0.1, C), Err(DualError::NegativeLambda(_))));
    }

    #[test]
    fn wasserstein_examples() {
        let (p, f) = unit_instance();
        let s = wasserstein_dual_solve(&p, &f, 0.25, C, 1e-12).unwrap();
        assert_abs_diff_eq!(s.value, 0.75, epsilon = 1e-10);
        assert!(s.lambda_star >= 0.0 && s.lambda_star <= 1.0 / 0.25);

        let g = CostVector::new(line(&[0.0, 1.0]), vec![0.7, 0.7]).unwrap();
        let s = wasserstein_dual_solve(&p, &g, 0.4, C, 1e-12).unwrap();
        assert_eq!(s.value, 0.7);
        assert_eq!(s.lambda_star, 0.0);

        // eps >= E_P0[c(x, argmax f)] = 0.5 -> everything can move to the top point.
        let s = wasserstein_dual_solve(&p, &f, 0.5, C, 1e-12).unwrap();
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-10);

        let s = wasserstein_dual_solve(&p, &f, 0.0, C, 1e-12).unwrap();
        assert_eq!(s.status, SolveStatus::NonRobustShortcut);
        assert_eq!(s.value, 0.5);
    }

    #[test]
    fn argument_errors() {
        let (p, f) = unit_instance();
        assert!(matches!(wasserstein_dual_solve(&p, &f, -0.1, C, 1e-9), Err(DualError::NegativeEpsilon(_))));
        assert!(matches!(wasserstein_dual_solve(&p, &f, 0.1, C, 0.0), Err(DualError::InvalidTolerance(_))));
        let sm = SmoothingConfig { eta: -1.0, reference: ReferenceMeasure::UniformOverSupport };
        assert!(matches!(regularized_dual_solve(&p, &f, 0.1, C, sm, 1e-9), Err(DualError::NonPositiveEta(_))));
        let off = DiscreteDistribution::uniform(line(&[0.5]));
        assert!(matches!(wasserstein_dual_solve(&off, &f, 0.1, C, 1e-9), Err(DualError::SupportNotContained(0))));
    }

    #[test]
    fn primal_oracle_examples() {
        let (p, f) = unit_instance();
        assert_abs_diff_eq!(primal_oracle(&p, &f, 0.0, C).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(primal_oracle(&p, &f, 0.25, C).unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(primal_oracle(&p, &f, 1e6, C).unwrap(), 1.0, epsilon = 1e-12);
        let exact: BigRational = primal_oracle_in(&p, &f, 0.25, C).unwrap();
        assert_eq!(exact, BigRational::new(3.into(), 4.into()));
    }

    #[test]
    fn lse_examples() {
        assert_eq!(lse(&[0.3, 0.3, 0.3], 5.0).unwrap(), 0.3);
        assert_abs_diff_eq!(lse(&[0.0, 1.0], 1.0).unwrap(), 0.620_114_506_958_277_5, epsilon = 1e-14);
        let v = lse(&[0.0, 1.0], 100.0).unwrap();
        assert!(v <= 1.0 && v >= 1.0 - 2f64.ln() / 100.0);
        assert_eq!(lse::<f64>(&[], 1.0), Err(DualError::EmptyInput));
        assert!(matches!(lse(&[1.0], 0.0), Err(DualError::NonPositiveEta(_))));
        // No overflow for large eta * v.
        assert_abs_diff_eq!(lse(&[1000.0, 0.0], 10.0).unwrap(), 1000.0 - 2f64.ln() / 10.0, epsilon = 1e-9);
    }

    #[test]
    fn regularized_examples() {
        let (p, f) = unit_instance();
        let sm = SmoothingConfig::new(1e4).unwrap();
        let s = regularized_dual_solve(&p, &f, 0.25, C, sm, 1e-12).unwrap();
        assert!(s.value <= 0.75 + 1e-10 && s.value >= 0.75 - 2f64.ln() / 1e4);

        let single = line(&[3.0]);
        let g = CostVector::new(single.clone(), vec![0.4]).unwrap();
        let s = regularized_dual_solve(&DiscreteDistribution::uniform(single), &g, 0.2, C, sm, 1e-12).unwrap();
        assert_eq!(s.value, 0.4);
        assert_eq!(s.lambda_star, 0.0);
    }

    #[test]
    fn regularized_constant_cost_stays_in_lse_band() {
        // With several candidates the smoothed value of a constant cost is
        // c0 minus at most ln(n)/eta, not c0 itself.
        let s = line(&[0.0, 1.0, 2.0]);
        let g = CostVector::new(s.clone(), vec![0.6; 3]).unwrap();
        let p = DiscreteDistribution::uniform(s);
        for eta in [0.5, 1.0, 10.0, 1e3] {
            let r = regularized_dual_solve(&p, &g, 0.05, C, SmoothingConfig::new(eta).unwrap(), 1e-12).unwrap();
            assert!(r.value <= 0.6 + 1e-12);
            assert!(r.value >= 0.6 - 3f64.ln() / eta - 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let (p, f) = unit_instance();
        let g = CostVector::new(line(&[0.0, 1.0]), vec![0.9, 0.9]).unwrap();
        assert_eq!(kl_dual_solve(&p, &g, 0.3, 1e-12).unwrap().value, 0.9);
        assert_eq!(kl_dual_solve(&p, &f, 0.0, 1e-12).unwrap().value, 0.5);
        // Dense-grid oracle (1e6 log-spaced lambdas) refined to 0.71979462616141.
        let s = kl_dual_solve(&p, &f, 0.1, 1e-12).unwrap();
        assert_abs_diff_eq!(s.value, 0.719794626161, epsilon = 1e-9);
        assert_abs_diff_eq!(s.lambda_star, 1.0599473, epsilon = 1e-4);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (DiscreteDistribution<f64>, CostVector<f64>) {
        let n = rng.gen_range(1..=12);
        let mut pts: Vec<f64> = Vec::new();
        while pts.len() < n {
            let x = (rng.gen_range(0.0..1.0f64) * 1000.0).round() / 1000.0;
            if !pts.contains(&x) {
                pts.push(x);
            }
        }
        let s = line(&pts);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = DiscreteDistribution::from_masses(s.clone(), w).unwrap();
        let f = CostVector::new(s, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        (p, f)
    }

    #[test]
    fn strong_duality_and_bracket_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let (p, f) = random_instance(&mut rng);
            for eps in [0.01, 0.1, 1.0, 10.0] {
                let d = wasserstein_dual_solve(&p, &f, eps, C, 1e-12).unwrap();
                let primal = primal_oracle(&p, &f, eps, C).unwrap();
                assert!((d.value - primal).abs() <= 1e-6, "dual {} primal {}", d.value, primal);
                assert!(d.lambda_star >= 0.0 && d.lambda_star <= f.f_max() / eps);
                let e = p.expect(|i| f.values()[i]);
                assert!(e <= d.value && d.value <= f.f_max());
            }
        }
    }

    #[test]
    fn dual_objective_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, f) = random_instance(&mut rng);
        for _ in 0..1000 {
            let (a, b) = (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0));
            let mid = dual_objective((a + b) / 2.0, &p, &f, 0.1, C).unwrap();
            let avg = (dual_objective(a, &p, &f, 0.1, C).unwrap() + dual_objective(b, &p, &f, 0.1, C).unwrap()) / 2.0;
            assert!(mid <= avg + 1e-12);
        }
    }

    #[test]
    fn values_grow_with_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sm = SmoothingConfig::new(20.0).unwrap();
        for _ in 0..20 {
            let (p, f) = random_instance(&mut rng);
            let grid = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0];
            let mut prev = [f64::NEG_INFINITY; 3];
            for &eps in &grid {
                let w = wasserstein_dual_solve(&p, &f, eps, C, 1e-12).unwrap().value;
                let r = regularized_dual_solve(&p, &f, eps, C, sm, 1e-12).unwrap().value;
                let k = kl_dual_solve(&p, &f, eps, 1e-12).unwrap().value;
                // The smoothed dual jumps at eps = 0: the plug-in convention
                // sits above its eps -> 0+ limit E[f] - ln(n)/eta.
                for (slot, v) in prev.iter_mut().zip([w, r, k]) {
                    assert!(v >= *slot - 1e-9, "value {v} after {slot} at eps {eps}");
                    *slot = v;
                }
                if eps == 0.0 {
                    prev[1] = f64::NEG_INFINITY;
                }
                let e = p.expect(|i| f.values()[i]);
                assert!(k >= e && k <= f.f_max());
                if eps > 0.0 {
                    assert!((w - r).abs() <= (f.values().len() as f64).ln() / 20.0);
                }
            }
        }
    }

    #[test]
    fn single_precision_solver() {
        let s = SupportSet::from_scalars(&[0.0f32, 1.0]).unwrap();
        let p = DiscreteDistribution::uniform(s.clone());
        let f = CostVector::new(s, vec![0.0f32, 1.0]).unwrap();
        let d = wasserstein_dual_solve(&p, &f, 0.25, C, 1e-6).unwrap();
        assert!((d.value - 0.75).abs() < 1e-5);
    }
}
