//! Synthetic logged-bandit data with known distributions and injected shift.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BanditDataset, DataError, Record};
use crate::dist::{DiscreteDistribution, DistError, SupportSet};
use crate::ope::{CostModel, OpeError, Policy};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("shift produces an invalid distribution: {0}")]
    InvalidShift(String),
    #[error("invalid generator: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Ope(#[from] OpeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Outcome cost function shared by the generator's pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    /// `y(xi) = xi` for scalar outcomes.
    Identity,
    /// Explicit `cost[x][a][xi]`.
    Table(Vec<Vec<Vec<f64>>>),
}

/// Which split is drawn from the shifted distributions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    #[default]
    Train,
    Test,
}

/// Mix every pair's outcome distribution toward a common target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiMix {
    pub alpha: f64,
    pub target: Vec<f64>,
}

/// Perturbations applied, in field order, to obtain the shifted distributions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Multiplies each context weight, then renormalizes.
    #[serde(default)]
    pub context_scale: Option<Vec<f64>>,
    /// Added to each context weight, then renormalizes.
    #[serde(default)]
    pub context_add: Option<Vec<f64>>,
    /// Contexts given zero weight, so the other split has support the shifted one lacks.
    #[serde(default)]
    pub drop_contexts: Vec<usize>,
    #[serde(default)]
    pub xi_mix: Option<XiMix>,
    #[serde(default)]
    pub direction: ShiftDirection,
}

impl ShiftSpec {
    pub fn is_zero(&self) -> bool {
        self.context_scale.is_none() && self.context_add.is_none() && self.drop_contexts.is_empty() && self.xi_mix.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub contexts: Vec<Vec<f64>>,
    pub context_weights: Vec<f64>,
    pub actions: Vec<String>,
    pub xi_support: Vec<Vec<f64>>,
    /// True outcome distribution per pair, `[x][a][xi]`.
    pub xi_weights: Vec<Vec<Vec<f64>>>,
    pub cost: CostSpec,
    pub y_max: f64,
    /// Logging policy, `[x][a]`.
    pub behavior_policy: Vec<Vec<f64>>,
    #[serde(default)]
    pub shift: ShiftSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Context and outcome distributions of one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub contexts: DiscreteDistribution<f64>,
    pub xi: Vec<Vec<DiscreteDistribution<f64>>>,
}

/// Everything needed to compute true policy values.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub actions: Vec<String>,
    pub cost_model: CostModel<f64>,
    pub behavior: Policy<f64>,
    pub nominal: Regime,
    pub shifted: Regime,
    pub direction: ShiftDirection,
}

impl GroundTruth {
    pub fn train(&self) -> &Regime {
        match self.direction {
            ShiftDirection::Train => &self.shifted,
            ShiftDirection::Test => &self.nominal,
        }
    }

    pub fn test(&self) -> &Regime {
        match self.direction {
            ShiftDirection::Train => &self.nominal,
            ShiftDirection::Test => &self.shifted,
        }
    }

    pub fn contexts(&self) -> &SupportSet<f64> {
        self.nominal.contexts.support()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts().len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: BanditDataset<f64>,
    pub test: BanditDataset<f64>,
    pub truth: GroundTruth,
}

fn renormalize(w: Vec<f64>, what: &str) -> Result<Vec<f64>, SynthError> {
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(SynthError::InvalidShift(format!("{what}: weight {i} becomes {v}")));
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(SynthError::InvalidShift(format!("{what}: all weights vanish")));
    }
    Ok(w.into_iter().map(|v| v / s).collect())
}

impl SyntheticConfig {
    fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let (nx, na, nk) = (self.contexts.len(), self.actions.len(), self.xi_support.len());
        if nx == 0 || na == 0 || nk == 0 {
            return bad("empty contexts, actions or outcomes".into());
        }
        if self.context_weights.len() != nx {
            return bad("context_weights length".into());
        }
        if self.xi_weights.len() != nx || self.xi_weights.iter().any(|r| r.len() != na || r.iter().any(|w| w.len() != nk)) {
            return bad("xi_weights must be [contexts][actions][outcomes]".into());
        }
        if self.behavior_policy.len() != nx {
            return bad("behavior_policy must have one row per context".into());
        }
        if self.shift.drop_contexts.iter().any(|&i| i >= nx) {
            return bad("drop_contexts index out of range".into());
        }
        if let Some(m) = &self.shift.xi_mix {
            if !(0.0..=1.0).contains(&m.alpha) || m.target.len() != nk {
                return bad("xi_mix needs alpha in [0, 1] and one target weight per outcome".into());
            }
        }
        Ok(())
    }

    fn cost_model(&self, xi: &SupportSet<f64>) -> Result<CostModel<f64>, SynthError> {
        let (nx, na) = (self.contexts.len(), self.actions.len());
        Ok(match &self.cost {
            CostSpec::Identity => CostModel::identity(xi.clone(), nx, na, self.y_max)?,
            CostSpec::Table(t) => {
                if t.len() != nx || t.iter().any(|r| r.len() != na || r.iter().any(|c| c.len() != xi.len())) {
                    return Err(SynthError::InvalidConfig("cost table shape".into()));
                }
                CostModel::from_fn(xi.clone(), nx, na, self.y_max, |x, a, k| t[x][a][k])?
            }
        })
    }

    /// Nominal and shifted distributions, without sampling.
    pub fn truth(&self) -> Result<GroundTruth, SynthError> {
        self.check()?;
        let contexts = SupportSet::new(self.contexts.clone())?;
        let xi_support = SupportSet::new(self.xi_support.clone())?;
        let cost_model = self.cost_model(&xi_support)?;
        let behavior = Policy::new(self.behavior_policy.clone())?;

        let pairs = |weights: &dyn Fn(usize, usize) -> Vec<f64>| -> Result<Vec<Vec<DiscreteDistribution<f64>>>, SynthError> {
            (0..self.contexts.len())
                .map(|x| {
                    (0..self.actions.len())
                        .map(|a| Ok(DiscreteDistribution::new(xi_support.clone(), weights(x, a))?))
                        .collect()
                })
                .collect()
        };

        let nominal = Regime {
            contexts: DiscreteDistribution::new(contexts.clone(), self.context_weights.clone())?,
            xi: pairs(&|x, a| self.xi_weights[x][a].clone())?,
        };

        let s = &self.shift;
        let mut w = self.context_weights.clone();
        if let Some(scale) = &s.context_scale {
            if scale.len() != w.len() {
                return Err(SynthError::InvalidShift("context_scale length".into()));
            }
            w = renormalize(w.iter().zip(scale).map(|(a, b)| a * b).collect(), "context_scale")?;
        }
        if let Some(add) = &s.context_add {
            if add.len() != w.len() {
                return Err(SynthError::InvalidShift("context_add length".into()));
            }
            w = renormalize(w.iter().zip(add).map(|(a, b)| a + b).collect(), "context_add")?;
        }
        if !s.drop_contexts.is_empty() {
            for &i in &s.drop_contexts {
                w[i] = 0.0;
            }
            w = renormalize(w, "drop_contexts")?;
        }
        let xi_shift = |x: usize, a: usize| -> Vec<f64> {
            let base = &self.xi_weights[x][a];
            match &s.xi_mix {
                Some(m) => {
                    let ts: f64 = m.target.iter().sum();
                    let bs: f64 = base.iter().sum();
                    base.iter().zip(&m.target).map(|(b, t)| (1.0 - m.alpha) * b / bs + m.alpha * t / ts).collect()
                }
                None => base.clone(),
            }
        };
        if let Some(m) = &s.xi_mix {
            renormalize(m.target.clone(), "xi_mix target")?;
        }
        let shifted = Regime { contexts: DiscreteDistribution::new(contexts, w)?, xi: pairs(&xi_shift)? };

        Ok(GroundTruth {
            actions: self.actions.clone(),
            cost_model,
            behavior,
            nominal,
            shifted,
            direction: s.direction,
        })
    }

    /// Six scalar contexts, two actions and five scalar outcomes whose value
    /// is the cost. No shift; uniform logging policy.
    pub fn rate_fixture() -> Self {
        let contexts: Vec<Vec<f64>> = (0..6).map(|i| vec![0.4 * i as f64]).collect();
        let xi: Vec<Vec<f64>> = (0..5).map(|k| vec![0.25 * k as f64]).collect();
        let base = [
            [0.35, 0.25, 0.2, 0.12, 0.08],
            [0.1, 0.3, 0.3, 0.2, 0.1],
            [0.4, 0.3, 0.15, 0.1, 0.05],
            [0.2, 0.2, 0.2, 0.2, 0.2],
        ];
        let xi_weights = (0..6)
            .map(|x| (0..2).map(|a| base[(x + 2 * a) % 4].to_vec()).collect())
            .collect();
        Self {
            contexts,
            context_weights: vec![0.1, 0.15, 0.2, 0.25, 0.18, 0.12],
            actions: vec!["a0".into(), "a1".into()],
            xi_support: xi,
            xi_weights,
            cost: CostSpec::Identity,
            y_max: 1.0,
            behavior_policy: vec![vec![0.5, 0.5]; 6],
            shift: ShiftSpec::default(),
            n_train: 1000,
            n_test: 1000,
            seed: 0,
        }
    }
}

/// Draws `n` records from `regime` under the logging policy. Each record
/// consumes, in order, the context, the action and the outcome draw.
pub fn sample_dataset<R: Rng>(
    truth: &GroundTruth,
    regime: &Regime,
    n: usize,
    rng: &mut R,
) -> Result<BanditDataset<f64>, SynthError> {
    let index = |w: &[f64]| WeightedIndex::new(w).map_err(|e| SynthError::InvalidConfig(e.to_string()));
    let ctx = index(regime.contexts.weights())?;
    let act: Vec<WeightedIndex<f64>> =
        truth.behavior.rows().iter().map(|r| index(r)).collect::<Result<_, _>>()?;
    let xi: Vec<Vec<WeightedIndex<f64>>> = regime
        .xi
        .iter()
        .map(|row| row.iter().map(|d| index(d.weights())).collect())
        .collect::<Result<_, _>>()?;
    let model = &truth.cost_model;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let x = ctx.sample(rng);
        let a = act[x].sample(rng);
        let k = xi[x][a].sample(rng);
        records.push(Record { context: x, action: a, xi: k, cost: model.y(x, a, k) });
    }
    Ok(BanditDataset::new(
        records,
        regime.contexts.support().clone(),
        truth.actions.clone(),
        model.xi_support().clone(),
        model.y_max(),
        Some(truth.behavior.clone()),
    )?)
}

/// Draws the training split, then the test split, from one seeded stream.
pub fn synth_generate(config: &SyntheticConfig) -> Result<SynthOutput, SynthError> {
    let truth = config.truth()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train = sample_dataset(&truth, truth.train(), config.n_train, &mut rng)?;
    let test = sample_dataset(&truth, truth.test(), config.n_test, &mut rng)?;
    Ok(SynthOutput { train, test, truth })
}

/// A random small evaluation problem: scalar contexts and outcomes at
/// distinct random positions in `[0, 2)`, random costs in `[0, 1]`, and
/// enough records that every (context, action) pair is observed.
pub fn random_ope_instance<R: Rng>(
    rng: &mut R,
    n_contexts: usize,
    n_actions: usize,
    n_outcomes: usize,
    records_per_pair: usize,
) -> Result<(BanditDataset<f64>, CostModel<f64>), SynthError> {
    let points = |rng: &mut R, n: usize| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen_range(0.05..0.95)) * 2.0 / n as f64).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let contexts = SupportSet::from_scalars(&points(rng, n_contexts))?;
    let xi = SupportSet::from_scalars(&points(rng, n_outcomes))?;
    let y: Vec<f64> = (0..n_contexts * n_actions * n_outcomes).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let model = CostModel::from_fn(xi.clone(), n_contexts, n_actions, 1.0, |x, a, k| {
        y[(x * n_actions + a) * n_outcomes + k]
    })?;
    let mut records = Vec::new();
    for x in 0..n_contexts {
        // Uneven context frequencies make the empirical context law non-uniform.
        let reps = rng.gen_range(1..=records_per_pair.max(1));
        for a in 0..n_actions {
            for _ in 0..reps {
                let k = rng.gen_range(0..n_outcomes);
                records.push(Record { context: x, action: a, xi: k, cost: model.y(x, a, k) });
            }
        }
    }
    let actions = (0..n_actions).map(|a| format!("a{a}")).collect();
    Ok((BanditDataset::new(records, contexts, actions, xi, 1.0, None)?, model))
}
