//! KL versus Wasserstein robust bounds on a one-dimensional example, with an
//! optional outlier move of the top support point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{kl_divergence, DiscreteDistribution, DistError, SupportSet};
use crate::dual::{kl_dual_solve, wasserstein_dual_solve, CostVector, DualError};
use crate::transport::{wasserstein_distance, GroundCost, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("invalid comparison spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Moves the support point at `index` to `point`, keeping its probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub index: usize,
    pub point: f64,
}

/// Scalar support, nominal `p_hat`, true `q` and cost `f` (defaults to `x^2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSpec {
    pub support: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub q: Vec<f64>,
    #[serde(default)]
    pub f: Option<Vec<f64>>,
    pub outlier: Outlier,
}

impl CompareSpec {
    /// 51 points evenly spaced on `[0, 10]` with `f(x) = x^2`. `p_hat` is a
    /// discretized normal (mean 4.5, sd 2) plus a small floor, so it charges
    /// every point; `q` is a narrower normal (mean 5.5, sd 1.5) with no mass
    /// at 10. The outlier move sends 10 to 12.
    pub fn analog() -> Self {
        let support: Vec<f64> = (0..51).map(|i| 0.2 * i as f64).collect();
        let normal = |x: f64, m: f64, s: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp();
        let p: Vec<f64> = support.iter().map(|&x| normal(x, 4.5, 2.0) + 0.002).collect();
        let mut q: Vec<f64> = support.iter().map(|&x| normal(x, 5.5, 1.5)).collect();
        q[50] = 0.0;
        let (ps, qs): (f64, f64) = (p.iter().sum(), q.iter().sum());
        Self {
            support,
            p_hat: p.into_iter().map(|v| v / ps).collect(),
            q: q.into_iter().map(|v| v / qs).collect(),
            f: None,
            outlier: Outlier { index: 50, point: 12.0 },
        }
    }

    fn f_values(&self, support: &[f64]) -> Vec<f64> {
        match &self.f {
            Some(f) => f.clone(),
            None => support.iter().map(|x| x * x).collect(),
        }
    }

    fn shifted_support(&self) -> Vec<f64> {
        let mut s = self.support.clone();
        s[self.outlier.index] = self.outlier.point;
        s
    }

    fn check(&self) -> Result<(), CompareError> {
        let n = self.support.len();
        if self.p_hat.len() != n || self.q.len() != n || self.f.as_ref().is_some_and(|f| f.len() != n) {
            return Err(CompareError::InvalidSpec("support, p_hat, q and f must have equal length".into()));
        }
        if self.outlier.index >= n {
            return Err(CompareError::InvalidSpec("outlier index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ball {
    Kl,
    Wasserstein,
}

impl Ball {
    pub fn name(self) -> &'static str {
        match self {
            Ball::Kl => "kl",
            Ball::Wasserstein => "wasserstein",
        }
    }
}

/// Distances, expectations and robust values for one support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    /// `KL(q || p_hat)`.
    pub kl: f64,
    /// `W(p_hat, q)` under squared Euclidean cost.
    pub wasserstein: f64,
    pub e_q: f64,
    pub e_p_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub ball: Ball,
    pub multiplier: f64,
    pub radius: f64,
    pub value: f64,
    /// Same radius multiplier after the outlier move, when requested.
    pub shifted: Option<(f64, f64)>,
}

impl CompareRow {
    pub fn delta(&self) -> Option<f64> {
        self.shifted.map(|(_, v)| v - self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub base: Scenario,
    pub shifted: Option<Scenario>,
    pub rows: Vec<CompareRow>,
}

struct Prepared {
    p: DiscreteDistribution<f64>,
    f: CostVector<f64>,
    scenario: Scenario,
}

fn prepare(spec: &CompareSpec, support: &[f64]) -> Result<Prepared, CompareError> {
    let s = SupportSet::from_scalars(support)?;
    let p = DiscreteDistribution::from_masses(s.clone(), spec.p_hat.clone())?;
    let q = DiscreteDistribution::from_masses(s.clone(), spec.q.clone())?;
    let fv = spec.f_values(support);
    let f = CostVector::new(s, fv.clone())?;
    let (wasserstein, _) = wasserstein_distance(&p, &q, GroundCost::SquaredEuclidean)?;
    let scenario = Scenario {
        kl: kl_divergence(&q, &p)?,
        wasserstein,
        e_q: q.expect(|i| fv[i]),
        e_p_hat: p.expect(|i| fv[i]),
    };
    Ok(Prepared { p, f, scenario })
}

fn robust(prep: &Prepared, ball: Ball, radius: f64, tol: f64) -> Result<f64, CompareError> {
    if !radius.is_finite() {
        return Ok(prep.f.f_max());
    }
    Ok(match ball {
        Ball::Kl => kl_dual_solve(&prep.p, &prep.f, radius, tol)?.value,
        Ball::Wasserstein => wasserstein_dual_solve(&prep.p, &prep.f, radius, GroundCost::SquaredEuclidean, tol)?.value,
    })
}

/// For each ball and multiplier `m`, the robust value at radius `m` times
/// that ball's measured distance between `p_hat` and `q`. With
/// `outlier_shift`, distances are re-measured after the move and the values
/// recomputed at the same multipliers.
pub fn run_compare(
    spec: &CompareSpec,
    multipliers: &[f64],
    outlier_shift: bool,
    tol: f64,
) -> Result<CompareReport, CompareError> {
    spec.check()?;
    if multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(CompareError::InvalidSpec("radius multipliers must be non-negative".into()));
    }
    let base = prepare(spec, &spec.support)?;
    let shifted = if outlier_shift { Some(prepare(spec, &spec.shifted_support())?) } else { None };
    let radius = |prep: &Prepared, ball: Ball, m: f64| match ball {
        Ball::Kl => m * prep.scenario.kl,
        Ball::Wasserstein => m * prep.scenario.wasserstein,
    };
    let mut rows = Vec::new();
    for ball in [Ball::Kl, Ball::Wasserstein] {
        for &m in multipliers {
            let r = radius(&base, ball, m);
            let value = robust(&base, ball, r, tol)?;
            let shifted = match &shifted {
                Some(s) => {
                    let rs = radius(s, ball, m);
                    Some((rs, robust(s, ball, rs, tol)?))
                }
                None => None,
            };
            rows.push(CompareRow { ball, multiplier: m, radius: r, value, shifted });
        }
    }
    Ok(CompareReport { base: base.scenario, shifted: shifted.map(|s| s.scenario), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analog_has_valid_bounds_and_outlier_ordering() {
        let r = run_compare(&CompareSpec::analog(), &[0.8, 1.0, 1.2], true, 1e-9).unwrap();
        let shifted = r.shifted.as_ref().unwrap();
        assert_eq!(shifted.kl, r.base.kl);
        assert!(shifted.wasserstein > r.base.wasserstein);
        for row in r.rows.iter().filter(|row| row.multiplier >= 1.0) {
            assert!(row.value >= r.base.e_q, "{row:?}");
            assert!(row.shifted.unwrap().1 >= shifted.e_q);
        }
        let delta = |b: Ball| r.rows.iter().find(|x| x.ball == b && x.multiplier == 1.0).unwrap().delta().unwrap();
        assert!(delta(Ball::Kl) >= 2.0 * delta(Ball::Wasserstein));
    }

    #[test]
    fn zero_radius_gives_plugin() {
        let r = run_compare(&CompareSpec::analog(), &[0.0], false, 1e-9).unwrap();
        for row in &r.rows {
            assert_eq!(row.value, r.base.e_p_hat);
        }
    }
}
