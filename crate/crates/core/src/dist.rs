//! Finite discrete distributions and the divergences used to compare them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("support is empty")]
    EmptySupport,
    #[error("support dimension must be positive")]
    ZeroDimension,
    #[error("point {index} has {got} coordinates, expected {dim}")]
    DimensionMismatch { index: usize, got: usize, dim: usize },
    #[error("points {first} and {second} coincide")]
    DuplicatePoint { first: usize, second: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("{weights} weights for {points} support points")]
    LengthMismatch { weights: usize, points: usize },
    #[error("weights sum to {sum}, cannot normalize")]
    NotNormalizable { sum: f64 },
    #[error("sample {index} matches no support point")]
    SampleOffSupport { index: usize },
    #[error("distributions live on different supports")]
    SupportMismatch,
}

/// Ordered, duplicate-free set of points in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct SupportSet<T> {
    points: Vec<Vec<T>>,
    dim: usize,
}

pub(crate) fn points_equal<T: Scalar>(a: &[T], b: &[T]) -> bool {
    let tol = T::of(T::POINT_TOL);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x - *y).abs() <= tol)
}

impl<T: Scalar> SupportSet<T> {
    pub fn new(points: Vec<Vec<T>>) -> Result<Self, DistError> {
        let dim = points.first().ok_or(DistError::EmptySupport)?.len();
        if dim == 0 {
            return Err(DistError::ZeroDimension);
        }
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(DistError::DimensionMismatch { index, got: p.len(), dim });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(DistError::NonFinitePoint { index });
            }
        }
        // Sort a permutation lexicographically so duplicates end up adjacent.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| a.partial_cmp(b).unwrap())
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if points_equal(&points[w[0]], &points[w[1]]) {
                let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
                return Err(DistError::DuplicatePoint { first, second });
            }
        }
        Ok(Self { points, dim })
    }

    /// One-dimensional support from scalar values.
    pub fn from_scalars(values: &[T]) -> Result<Self, DistError> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, point: &[T]) -> Option<usize> {
        self.points.iter().position(|p| points_equal(p, point))
    }

    /// Same points in the same order.
    pub fn same_as(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| points_equal(a, b))
    }

    /// Every point of `self` is also a point of `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.points.iter().all(|p| other.index_of(p).is_some())
    }

    /// Points of `self` followed by the points of `other` not already present.
    pub fn union(&self, other: &Self) -> Result<Self, DistError> {
        if self.dim != other.dim {
            return Err(DistError::DimensionMismatch { index: 0, got: other.dim, dim: self.dim });
        }
        let mut points = self.points.clone();
        for p in &other.points {
            if self.index_of(p).is_none() {
                points.push(p.clone());
            }
        }
        Ok(Self { points, dim: self.dim })
    }
}

/// Weighted point masses on a [`SupportSet`]. Zero-weight points are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Scalar + Serialize"))]
pub struct DiscreteDistribution<T> {
    support: SupportSet<T>,
    weights: Vec<T>,
}

fn check_weights<T: Scalar>(support: &SupportSet<T>, weights: &[T]) -> Result<T, DistError> {
    if weights.len() != support.len() {
        return Err(DistError::LengthMismatch { weights: weights.len(), points: support.len() });
    }
    for (index, w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(DistError::NonFiniteWeight { index });
        }
        if *w < T::zero() {
            return Err(DistError::NegativeWeight { index, value: w.as_f64() });
        }
    }
    Ok(weights.iter().copied().sum())
}

impl<T: Scalar> DiscreteDistribution<T> {
    /// Validates `weights` against `support`. Sums within the scalar's
    /// normalization tolerance of one are renormalized; anything further off
    /// is rejected.
    pub fn new(support: SupportSet<T>, weights: Vec<T>) -> Result<Self, DistError> {
        let sum = check_weights(&support, &weights)?;
        if sum <= T::zero() || (sum - T::one()).abs().as_f64() > T::NORMALIZE_TOL {
            return Err(DistError::NotNormalizable { sum: sum.as_f64() });
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { support, weights })
    }

    /// Divides arbitrary non-negative masses (e.g. counts) by their total.
    pub fn from_masses(support: SupportSet<T>, masses: Vec<T>) -> Result<Self, DistError> {
        let sum = check_weights(&support, &masses)?;
        if sum <= T::zero() {
            return Err(DistError::NotNormalizable { sum: sum.as_f64() });
        }
        let weights = masses.into_iter().map(|w| w / sum).collect();
        Ok(Self { support, weights })
    }

    pub fn uniform(support: SupportSet<T>) -> Self {
        let n = T::of_usize(support.len());
        let weights = vec![T::one() / n; support.len()];
        Self { support, weights }
    }

    pub fn point_mass(support: SupportSet<T>, index: usize) -> Self {
        let mut weights = vec![T::zero(); support.len()];
        weights[index] = T::one();
        Self { support, weights }
    }

    pub fn support(&self) -> &SupportSet<T> {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `sum_i w_i f(x_i)` in index order.
    pub fn expect<F: Fn(usize) -> T>(&self, f: F) -> T {
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w * f(i);
        }
        acc
    }

    /// Re-expresses the distribution on a superset support, padding with zeros.
    pub fn extend_to(&self, support: &SupportSet<T>) -> Result<Self, DistError> {
        let mut weights = vec![T::zero(); support.len()];
        for (i, p) in self.support.points().iter().enumerate() {
            let j = support.index_of(p).ok_or(DistError::SampleOffSupport { index: i })?;
            weights[j] += self.weights[i];
        }
        Ok(Self { support: support.clone(), weights })
    }
}

/// Empirical distribution of `samples`; unobserved support points keep weight zero.
pub fn empirical_distribution<T: Scalar>(
    samples: &[Vec<T>],
    support: &SupportSet<T>,
) -> Result<DiscreteDistribution<T>, DistError> {
    let mut counts = vec![0usize; support.len()];
    for (index, s) in samples.iter().enumerate() {
        let j = support.index_of(s).ok_or(DistError::SampleOffSupport { index })?;
        counts[j] += 1;
    }
    empirical_from_counts(&counts, support)
}

/// Empirical distribution from per-point counts.
pub fn empirical_from_counts<T: Scalar>(
    counts: &[usize],
    support: &SupportSet<T>,
) -> Result<DiscreteDistribution<T>, DistError> {
    let masses = counts.iter().map(|&c| T::of_usize(c)).collect();
    DiscreteDistribution::from_masses(support.clone(), masses)
}

fn require_shared<T: Scalar>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
) -> Result<(), DistError> {
    if p.support.same_as(&q.support) {
        Ok(())
    } else {
        Err(DistError::SupportMismatch)
    }
}

/// `sum_i |p_i - q_i|`, i.e. twice the usual total-variation distance.
pub fn total_variation<T: Scalar>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
) -> Result<T, DistError> {
    require_shared(p, q)?;
    Ok(p.weights.iter().zip(&q.weights).map(|(a, b)| (*a - *b).abs()).sum())
}

/// `KL(q || p) = sum_x q(x) ln(q(x)/p(x))`, `+inf` when `q` is not absolutely
/// continuous with respect to `p`.
pub fn kl_divergence<T: Scalar>(
    q: &DiscreteDistribution<T>,
    p: &DiscreteDistribution<T>,
) -> Result<T, DistError> {
    require_shared(p, q)?;
    let mut acc = T::zero();
    for (&qi, &pi) in q.weights.iter().zip(&p.weights) {
        if qi <= T::zero() {
            continue;
        }
        if pi <= T::zero() {
            return Ok(T::infinity());
        }
        acc += qi * (qi / pi).ln();
    }
    // Rounding can push the sum of a near-zero divergence below zero.
    Ok(acc.max(T::zero()))
}

/// Coverage summary of logged (context, action) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDiagnostics {
    pub n: usize,
    pub n_contexts: usize,
    pub n_actions: usize,
    /// Only observed pairs are stored.
    pub pair_counts: BTreeMap<(usize, usize), usize>,
    /// Smallest `count / n` over the full context-by-action grid; zero when
    /// some pair is unobserved.
    pub min_pair_frequency: f64,
}

impl DatasetDiagnostics {
    pub fn from_pairs<I>(pairs: I, n_contexts: usize, n_actions: usize) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pair_counts = BTreeMap::new();
        let mut n = 0;
        for p in pairs {
            *pair_counts.entry(p).or_insert(0) += 1;
            n += 1;
        }
        let grid = n_contexts * n_actions;
        let min_count = if pair_counts.len() < grid {
            0
        } else {
            pair_counts.values().copied().min().unwrap_or(0)
        };
        let min_pair_frequency = if n == 0 { 0.0 } else { min_count as f64 / n as f64 };
        Self { n, n_contexts, n_actions, pair_counts, min_pair_frequency }
    }

    pub fn count(&self, x: usize, a: usize) -> usize {
        self.pair_counts.get(&(x, a)).copied().unwrap_or(0)
    }

    /// Pairs of the grid with no samples, in (context, action) order.
    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for x in 0..self.n_contexts {
            for a in 0..self.n_actions {
                if self.count(x, a) == 0 {
                    out.push((x, a));
                }
            }
        }
        out
    }
}
