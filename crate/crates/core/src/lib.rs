//! Wasserstein distributionally robust off-policy evaluation and learning.
//!
//! Numerical code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the I/O layer produces.
// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod compare;
pub mod data;
pub mod dist;
pub mod dual;
pub mod lp;
pub mod ope;
pub mod opl;
pub mod scalar;
pub mod synth;
pub mod transport;

pub use data::{BanditDataset, Record};
pub use dist::{kl_divergence, total_variation, DiscreteDistribution, SupportSet};
pub use dual::{kl_dual_solve, primal_oracle, regularized_dual_solve, wasserstein_dual_solve, CostVector, DualSolution};
pub use ope::{evaluate_policy, robust_cost_table, CostModel, Method, Policy, RobustCostTable};
pub use opl::{bsgd_learn, exact_opl, BsgdConfig, Parameterization, PolicyParams};
pub use scalar::Scalar;
pub use transport::{wasserstein_distance, GroundCost};

pub type Support = SupportSet<f64>;
pub type Distribution = DiscreteDistribution<f64>;
pub type Costs = CostVector<f64>;
pub type Solution = DualSolution<f64>;
pub type Dataset = BanditDataset<f64>;
pub type Model = CostModel<f64>;
pub type CostTable = RobustCostTable<f64>;
pub type TargetPolicy = Policy<f64>;
pub type Params = PolicyParams<f64>;
