//! Logged bandit datasets: validation, CSV ingestion with binning, and the
//! canonical on-disk format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{empirical_from_counts, DatasetDiagnostics, DiscreteDistribution, DistError, SupportSet};
use crate::ope::{CostModel, OpeError, Policy};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("line {line}: {reason}")]
    UnparsableRow { line: u64, reason: String },
    #[error("line {line}: column {column} has non-boolean outcome {value:?}")]
    UnparsableOutcome { line: u64, column: String, value: String },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid binning for {column}: {reason}")]
    InvalidBinning { column: String, reason: String },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Ope(#[from] OpeError),
}

impl DataError {
    /// True for failures of the filesystem or of the file formats themselves.
    pub fn is_io(&self) -> bool {
        matches!(self, DataError::Io { .. } | DataError::Csv(_) | DataError::Json(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One logged interaction, by index into the dataset's supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub context: usize,
    pub action: usize,
    pub xi: usize,
    pub cost: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditDataset<T> {
    records: Vec<Record<T>>,
    contexts: SupportSet<T>,
    actions: Vec<String>,
    xi_support: SupportSet<T>,
    y_max: T,
    behavior_policy: Option<Policy<T>>,
    diagnostics: DatasetDiagnostics,
}

impl<T: Scalar> BanditDataset<T> {
    pub fn new(
        records: Vec<Record<T>>,
        contexts: SupportSet<T>,
        actions: Vec<String>,
        xi_support: SupportSet<T>,
        y_max: T,
        behavior_policy: Option<Policy<T>>,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if actions.is_empty() {
            return Err(DataError::SchemaMismatch("no actions".into()));
        }
        for (index, r) in records.iter().enumerate() {
            let bad = |reason: String| DataError::InvalidRecord { index, reason };
            if r.context >= contexts.len() {
                return Err(bad(format!("context index {} out of range", r.context)));
            }
            if r.action >= actions.len() {
                return Err(bad(format!("action index {} out of range", r.action)));
            }
            if r.xi >= xi_support.len() {
                return Err(bad(format!("outcome index {} out of range", r.xi)));
            }
            if !(r.cost >= T::zero() && r.cost <= y_max) {
                return Err(bad(format!("cost {} outside [0, {y_max}]", r.cost)));
            }
        }
        if let Some(p) = &behavior_policy {
            if p.n_contexts() != contexts.len() || p.n_actions() != actions.len() {
                return Err(DataError::SchemaMismatch("behavior policy shape".into()));
            }
        }
        let diagnostics =
            DatasetDiagnostics::from_pairs(records.iter().map(|r| (r.context, r.action)), contexts.len(), actions.len());
        Ok(Self { records, contexts, actions, xi_support, y_max, behavior_policy, diagnostics })
    }

    pub fn records(&self) -> &[Record<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contexts(&self) -> &SupportSet<T> {
        &self.contexts
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn xi_support(&self) -> &SupportSet<T> {
        &self.xi_support
    }

    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn behavior_policy(&self) -> Option<&Policy<T>> {
        self.behavior_policy.as_ref()
    }

    pub fn diagnostics(&self) -> &DatasetDiagnostics {
        &self.diagnostics
    }

    pub fn context_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.contexts.len()];
        for r in &self.records {
            c[r.context] += 1;
        }
        c
    }

    /// Empirical context distribution over the full context support.
    pub fn context_distribution(&self) -> Result<DiscreteDistribution<T>, DistError> {
        empirical_from_counts(&self.context_counts(), &self.contexts)
    }

    /// Outcome counts per pair, flattened as `[x * n_actions + a][xi]`.
    pub fn xi_counts(&self) -> Vec<Vec<usize>> {
        let na = self.n_actions();
        let mut c = vec![vec![0; self.xi_support.len()]; self.contexts.len() * na];
        for r in &self.records {
            c[r.context * na + r.action][r.xi] += 1;
        }
        c
    }

    /// Context coordinates of every record, in record order.
    pub fn context_samples(&self) -> Vec<Vec<T>> {
        self.records.iter().map(|r| self.contexts.point(r.context).to_vec()).collect()
    }
}

/// Per-column binning rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningRule {
    Identity,
    /// `floor(v / width) * width`.
    FixedWidth(f64),
    /// Labels map to their position in the level list; an empty list means
    /// the sorted observed labels.
    Categorical(Vec<String>),
}

impl BinningRule {
    fn validate(&self, column: &str) -> Result<(), DataError> {
        if let BinningRule::FixedWidth(w) = self {
            if !(w.is_finite() && *w > 0.0) {
                return Err(DataError::InvalidBinning { column: column.into(), reason: format!("width {w}") });
            }
        }
        Ok(())
    }

    /// Bins a numeric value; categorical columns go through [`Schema`] level lookup.
    pub fn bin(&self, v: f64) -> f64 {
        match self {
            BinningRule::FixedWidth(w) => (v / w).floor() * w,
            _ => v,
        }
    }
}

/// Which points make up the context and outcome supports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Cross-product of per-column levels, observed plus declared.
    #[default]
    Declared,
    /// Only the points that occur in the data.
    Observed,
}

/// Column mapping and cost construction for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub context_columns: Vec<String>,
    pub action_column: String,
    /// Action labels in index order; defaults to the sorted observed labels.
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    /// Boolean event columns whose weighted sum is the cost.
    #[serde(default)]
    pub outcome_columns: Vec<String>,
    /// Weight per outcome column; missing columns weigh 1.
    #[serde(default)]
    pub cost_weights: BTreeMap<String, f64>,
    /// A numeric cost column used directly as the outcome (`y(xi) = xi`).
    #[serde(default)]
    pub cost_column: Option<String>,
    #[serde(default)]
    pub y_max: Option<f64>,
    #[serde(default)]
    pub binning: BTreeMap<String, BinningRule>,
    /// Extra levels per numeric context column, already binned.
    #[serde(default)]
    pub declared_levels: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub support: SupportMode,
}

/// A dataset with the cost model its outcomes imply.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: BanditDataset<f64>,
    pub cost_model: CostModel<f64>,
}

pub fn parse_bool(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "1" | "true" | "t" => Some(true),
        "n" | "no" | "0" | "false" | "f" => Some(false),
        _ => None,
    }
}

/// Weighted count of true events among `(column, raw value)` pairs.
pub fn indicator_cost(outcomes: &[(&str, &str)], weights: &BTreeMap<String, f64>) -> Result<f64, DataError> {
    let mut total = 0.0;
    for &(column, value) in outcomes {
        let hit = parse_bool(value).ok_or_else(|| DataError::UnparsableOutcome {
            line: 0,
            column: column.into(),
            value: value.into(),
        })?;
        if hit {
            total += weights.get(column).copied().unwrap_or(1.0);
        }
    }
    Ok(total)
}

impl Schema {
    fn validate(&self) -> Result<(), DataError> {
        if self.context_columns.is_empty() {
            return Err(DataError::SchemaMismatch("no context columns".into()));
        }
        match (&self.cost_column, self.outcome_columns.is_empty()) {
            (Some(_), false) => {
                return Err(DataError::SchemaMismatch("give either cost_column or outcome_columns".into()))
            }
            (None, true) => return Err(DataError::SchemaMismatch("no cost or outcome columns".into())),
            _ => {}
        }
        for (col, w) in &self.cost_weights {
            if !self.outcome_columns.contains(col) {
                return Err(DataError::SchemaMismatch(format!("weight for unknown outcome column {col}")));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(DataError::SchemaMismatch(format!("weight {w} for {col}")));
            }
        }
        for (col, rule) in &self.binning {
            if !self.context_columns.contains(col) {
                return Err(DataError::SchemaMismatch(format!("binning for unknown context column {col}")));
            }
            rule.validate(col)?;
        }
        if self.outcome_columns.len() > 16 && self.support == SupportMode::Declared {
            return Err(DataError::SchemaMismatch(
                "more than 16 outcome columns; use \"support\": \"observed\"".into(),
            ));
        }
        Ok(())
    }

    fn weight(&self, column: &str) -> f64 {
        self.cost_weights.get(column).copied().unwrap_or(1.0)
    }

    fn rule(&self, column: &str) -> &BinningRule {
        self.binning.get(column).unwrap_or(&BinningRule::Identity)
    }
}

struct RawRow {
    line: u64,
    context: Vec<String>,
    action: String,
    outcome: Vec<f64>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::SchemaMismatch(format!("column {name:?} not in header")))
}

fn sorted_points(set: BTreeSet<Vec<OrdF64>>) -> Vec<Vec<f64>> {
    set.into_iter().map(|p| p.into_iter().map(|v| v.0).collect()).collect()
}

/// Total order on finite floats for set building.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn cross_product(levels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for col in levels {
        let mut next = Vec::with_capacity(out.len() * col.len());
        for prefix in &out {
            for &v in col {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Reads a raw CSV and builds the binned dataset and its cost model.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Loaded, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(file), schema)
}

pub fn read_dataset<R: std::io::Read>(input: R, schema: &Schema) -> Result<Loaded, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let ctx_idx: Vec<usize> =
        schema.context_columns.iter().map(|c| column_index(&headers, c)).collect::<Result<_, _>>()?;
    let act_idx = column_index(&headers, &schema.action_column)?;
    let out_cols: Vec<&String> = match &schema.cost_column {
        Some(c) => vec![c],
        None => schema.outcome_columns.iter().collect(),
    };
    let out_idx: Vec<usize> = out_cols.iter().map(|c| column_index(&headers, c)).collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let mut outcome = Vec::with_capacity(out_idx.len());
        for (&i, col) in out_idx.iter().zip(&out_cols) {
            let raw = field(i);
            let v = if schema.cost_column.is_some() {
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::UnparsableRow { line, reason: format!("cost {raw:?}") })?
            } else {
                let b = parse_bool(raw).ok_or_else(|| DataError::UnparsableOutcome {
                    line,
                    column: (*col).clone(),
                    value: raw.into(),
                })?;
                if b {
                    1.0
                } else {
                    0.0
                }
            };
            outcome.push(v);
        }
        rows.push(RawRow {
            line,
            context: ctx_idx.iter().map(|&i| field(i).to_string()).collect(),
            action: field(act_idx).to_string(),
            outcome,
        });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let actions: Vec<String> = match &schema.actions {
        Some(a) => a.clone(),
        None => rows.iter().map(|r| r.action.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };

    // Categorical levels are fixed before any row is coded.
    let mut cat_levels: Vec<Option<Vec<String>>> = Vec::new();
    for (k, col) in schema.context_columns.iter().enumerate() {
        cat_levels.push(match schema.rule(col) {
            BinningRule::Categorical(levels) if levels.is_empty() => {
                Some(rows.iter().map(|r| r.context[k].clone()).collect::<BTreeSet<_>>().into_iter().collect())
            }
            BinningRule::Categorical(levels) => Some(levels.clone()),
            _ => None,
        });
    }

    let mut coded = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut x = Vec::with_capacity(r.context.len());
        for (k, raw) in r.context.iter().enumerate() {
            let col = &schema.context_columns[k];
            let v = match &cat_levels[k] {
                Some(levels) => levels.iter().position(|l| l == raw).ok_or_else(|| DataError::UnparsableRow {
                    line: r.line,
                    reason: format!("{col} level {raw:?} not declared"),
                })? as f64,
                None => {
                    let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                        DataError::UnparsableRow { line: r.line, reason: format!("{col} value {raw:?}") }
                    })?;
                    schema.rule(col).bin(v)
                }
            };
            x.push(v);
        }
        let a = actions.iter().position(|l| *l == r.action).ok_or_else(|| DataError::UnparsableRow {
            line: r.line,
            reason: format!("action {:?} not in schema", r.action),
        })?;
        coded.push((x, a));
    }

    let contexts = match schema.support {
        SupportMode::Observed => {
            sorted_points(coded.iter().map(|(x, _)| x.iter().map(|&v| OrdF64(v)).collect()).collect())
        }
        SupportMode::Declared => {
            let mut levels = Vec::new();
            for (k, col) in schema.context_columns.iter().enumerate() {
                let col_levels: Vec<f64> = match &cat_levels[k] {
                    Some(l) => (0..l.len()).map(|i| i as f64).collect(),
                    None => {
                        let mut s: BTreeSet<OrdF64> = coded.iter().map(|(x, _)| OrdF64(x[k])).collect();
                        for &v in schema.declared_levels.get(col).into_iter().flatten() {
                            s.insert(OrdF64(schema.rule(col).bin(v)));
                        }
                        s.into_iter().map(|v| v.0).collect()
                    }
                };
                levels.push(col_levels);
            }
            cross_product(&levels)
        }
    };
    let contexts = SupportSet::new(contexts)?;

    let (xi_points, shared_costs, y_max) = match &schema.cost_column {
        Some(_) => {
            let pts = sorted_points(rows.iter().map(|r| vec![OrdF64(r.outcome[0])]).collect());
            let costs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            let top = costs.iter().copied().fold(0.0, f64::max);
            (pts, costs, schema.y_max.unwrap_or(top))
        }
        None => {
            let pts = match schema.support {
                SupportMode::Observed => {
                    sorted_points(rows.iter().map(|r| r.outcome.iter().map(|&v| OrdF64(v)).collect()).collect())
                }
                SupportMode::Declared => cross_product(&vec![vec![0.0, 1.0]; schema.outcome_columns.len()]),
            };
            let weights: Vec<f64> = schema.outcome_columns.iter().map(|c| schema.weight(c)).collect();
            let costs = pts.iter().map(|p| p.iter().zip(&weights).map(|(v, w)| v * w).sum()).collect();
            (pts, costs, schema.y_max.unwrap_or(weights.iter().sum()))
        }
    };
    let xi_support = SupportSet::new(xi_points)?;
    let cost_model = CostModel::shared(xi_support.clone(), &shared_costs, contexts.len(), actions.len(), y_max)?;

    let mut records = Vec::with_capacity(rows.len());
    for (r, (x, a)) in rows.iter().zip(&coded) {
        let context = contexts.index_of(x).expect("binned context lies in the support");
        let xi = xi_support.index_of(&r.outcome).expect("outcome lies in the support");
        records.push(Record { context, action: *a, xi, cost: shared_costs[xi] });
    }
    let dataset = BanditDataset::new(records, contexts, actions, xi_support, y_max, None)?;
    Ok(Loaded { dataset, cost_model })
}

/// Sidecar of the canonical format: supports, labels and the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub contexts: Vec<Vec<f64>>,
    pub actions: Vec<String>,
    pub xi_support: Vec<Vec<f64>>,
    pub y_max: f64,
    /// `cost[x][a][xi]`.
    pub cost: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_policy: Option<Vec<Vec<f64>>>,
}

/// `data.csv` pairs with `data.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

#[derive(Serialize, Deserialize)]
struct CanonicalRow {
    context: usize,
    action: usize,
    xi: usize,
    cost: f64,
}

/// Writes the canonical CSV and its JSON sidecar.
pub fn save_dataset(path: &Path, dataset: &BanditDataset<f64>, model: &CostModel<f64>) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in dataset.records() {
        w.serialize(CanonicalRow { context: r.context, action: r.action, xi: r.xi, cost: r.cost })?;
    }
    w.flush().map_err(io_err(path))?;

    let (nx, na, nk) = (dataset.contexts().len(), dataset.n_actions(), dataset.xi_support().len());
    let cost = (0..nx).map(|x| (0..na).map(|a| (0..nk).map(|k| model.y(x, a, k)).collect()).collect()).collect();
    let sidecar = Sidecar {
        contexts: dataset.contexts().points().to_vec(),
        actions: dataset.actions().to_vec(),
        xi_support: dataset.xi_support().points().to_vec(),
        y_max: dataset.y_max(),
        cost,
        behavior_policy: dataset.behavior_policy().map(|p| p.rows().to_vec()),
    };
    let side = sidecar_path(path);
    let mut f = BufWriter::new(File::create(&side).map_err(io_err(&side))?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n").map_err(io_err(&side))?;
    f.flush().map_err(io_err(&side))?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_canonical(path: &Path) -> Result<Loaded, DataError> {
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(&side).map_err(io_err(&side))?))?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let r: CanonicalRow = row?;
        records.push(Record { context: r.context, action: r.action, xi: r.xi, cost: r.cost });
    }
    from_sidecar(records, sidecar)
}

pub fn from_sidecar(records: Vec<Record<f64>>, sidecar: Sidecar) -> Result<Loaded, DataError> {
    let contexts = SupportSet::new(sidecar.contexts)?;
    let xi_support = SupportSet::new(sidecar.xi_support)?;
    let (nx, na) = (contexts.len(), sidecar.actions.len());
    let shape_ok = sidecar.cost.len() == nx
        && sidecar.cost.iter().all(|r| r.len() == na && r.iter().all(|c| c.len() == xi_support.len()));
    if !shape_ok {
        return Err(DataError::SchemaMismatch("cost table shape does not match supports".into()));
    }
    let cost = &sidecar.cost;
    let cost_model = CostModel::from_fn(xi_support.clone(), nx, na, sidecar.y_max, |x, a, k| cost[x][a][k])?;
    let behavior = sidecar.behavior_policy.map(Policy::new).transpose()?;
    let dataset = BanditDataset::new(records, contexts, sidecar.actions, xi_support, sidecar.y_max, behavior)?;
    Ok(Loaded { dataset, cost_model })
}
