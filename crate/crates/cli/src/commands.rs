use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use wdro::compare::{run_compare, CompareSpec};
use wdro::data::{load_canonical, load_dataset, save_dataset, sidecar_path, Loaded, Schema};
use wdro::ope::{estimate, robust_cost_table_with, MissingPairs, RateSettings};
use wdro::opl::{smoothed_objective, GridSpec, StepSize};
use wdro::synth::{synth_generate, Regime, SyntheticConfig};
use wdro::transport::split_radius_estimate;
use wdro::{
    bsgd_learn, evaluate_policy, exact_opl, kl_divergence, wasserstein_distance,
    BsgdConfig, DiscreteDistribution, GroundCost, Method, Parameterization, Policy, PolicyParams, SupportSet,
};

use crate::error::CliError;
use crate::RunLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Plugin,
    Exact,
    Regularized,
    Kl,
}

impl MethodArg {
    fn method(self, eta: Option<f64>) -> Result<Method<f64>, CliError> {
        Ok(match self {
            MethodArg::Plugin => Method::Plugin,
            MethodArg::Exact => Method::Exact,
            MethodArg::Kl => Method::Kl,
            MethodArg::Regularized => {
                let eta = eta.ok_or_else(|| CliError::validation("--method regularized needs --eta"))?;
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(CliError::validation("--eta must be positive"));
                }
                Method::Regularized { eta }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoArg {
    Bsgd,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamArg {
    ProbClamp,
    Softmax,
}

impl ParamArg {
    fn get(self) -> Parameterization {
        match self {
            ParamArg::ProbClamp => Parameterization::GroupProbClamp,
            ParamArg::Softmax => Parameterization::GroupSoftmax,
        }
    }
}

/// A dataset: canonical CSV with its `.meta.json` sidecar, or a raw CSV
/// described by a schema file.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Schema for a raw CSV; without it `--data` must be canonical.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self, log: &mut RunLog) -> Result<Loaded, CliError> {
        log.input(&self.data);
        match &self.config {
            Some(c) => {
                log.input(c);
                let schema: Schema = read_json(c)?;
                Ok(load_dataset(&self.data, &schema)?)
            }
            None => {
                log.input(&sidecar_path(&self.data));
                Ok(load_canonical(&self.data)?)
            }
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn positive_or_zero(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(CliError::validation(format!("{name} must be a non-negative number")))
    }
}

/// `--policy`: inline JSON rows, a JSON file, or the uniform policy when absent.
fn load_policy(arg: &Option<String>, nx: usize, na: usize, log: &mut RunLog) -> Result<Policy<f64>, CliError> {
    let rows: Vec<Vec<f64>> = match arg {
        None => return Ok(Policy::uniform(nx, na)),
        Some(s) if s.trim_start().starts_with('[') => {
            serde_json::from_str(s).map_err(|e| CliError::validation(format!("--policy: {e}")))?
        }
        Some(s) => {
            let p = Path::new(s);
            log.input(p);
            read_json(p)?
        }
    };
    Ok(Policy::new(rows)?)
}

fn parse_list<T: std::str::FromStr>(name: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::validation(format!("{name}: cannot parse {t:?}"))))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

// distance

#[derive(Debug, Args, Serialize)]
pub struct DistanceArgs {
    /// Distribution CSV (coordinate columns and a `weight` column) or canonical dataset.
    #[arg(long)]
    pub p: PathBuf,
    #[arg(long)]
    pub q: PathBuf,
    /// Also report KL(p || q).
    #[arg(long)]
    pub kl: bool,
    /// Write the optimal transport plan as `from,to,mass`.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
}

fn load_distribution(path: &Path, log: &mut RunLog) -> Result<DiscreteDistribution<f64>, CliError> {
    log.input(path);
    let side = sidecar_path(path);
    if side.exists() {
        log.input(&side);
        return Ok(load_canonical(path)?.dataset.context_distribution()?);
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let wcol = headers
        .iter()
        .position(|h| h.trim() == "weight")
        .ok_or_else(|| CliError::validation(format!("{}: no `weight` column", path.display())))?;
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let mut point = Vec::new();
        for (j, v) in row.iter().enumerate() {
            let v: f64 = v.trim().parse().map_err(|_| {
                CliError::validation(format!("{}: row {} column {j}: not a number", path.display(), i + 2))
            })?;
            if j == wcol {
                masses.push(v);
            } else {
                point.push(v);
            }
        }
        points.push(point);
    }
    Ok(DiscreteDistribution::from_masses(SupportSet::new(points)?, masses)?)
}

pub fn distance(args: &DistanceArgs, log: &mut RunLog) -> Result<String, CliError> {
    let p = load_distribution(&args.p, log)?;
    let q = load_distribution(&args.q, log)?;
    let support = p.support().union(q.support())?;
    let (p, q) = (p.extend_to(&support)?, q.extend_to(&support)?);
    let (w, plan) = wasserstein_distance(&p, &q, GroundCost::SquaredEuclidean)?;
    if let Some(path) = &args.plan_out {
        let mut s = String::from("from,to,mass\n");
        for (i, row) in plan.matrix.iter().enumerate() {
            for (j, m) in row.iter().enumerate() {
                if *m > 0.0 {
                    writeln!(s, "{i},{j},{m}").unwrap();
                }
            }
        }
        log.write(path, &s)?;
    }
    Ok(if args.kl {
        format!("wasserstein,kl\n{w},{}\n", kl_divergence(&p, &q)?)
    } else {
        format!("wasserstein\n{w}\n")
    })
}

// radius

#[derive(Debug, Args, Serialize)]
pub struct RadiusArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

pub fn radius(args: &RadiusArgs, seed: Option<u64>, log: &mut RunLog) -> Result<String, CliError> {
    let seed = seed.unwrap_or(0);
    log.seed = Some(seed);
    let loaded = args.data.load(log)?;
    let samples = loaded.dataset.context_samples();
    let r = split_radius_estimate(&samples, seed, GroundCost::SquaredEuclidean)?;
    Ok(format!("n,radius\n{},{r}\n", samples.len()))
}

// ope

#[derive(Debug, Args, Serialize)]
pub struct OpeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_x: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_c: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Target policy as inline JSON rows or a JSON file; uniform when absent.
    #[arg(long)]
    pub policy: Option<String>,
    /// Treat unobserved (context, action) pairs as costing `y_max`.
    #[arg(long)]
    pub impute_missing_ymax: bool,
    /// Solver tolerance; `1e-9 * y_max` when absent.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Write the robust cost table as `context,action,m_hat,imputed`.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

pub fn ope(args: &OpeArgs, log: &mut RunLog) -> Result<String, CliError> {
    let method = args.method.method(args.eta)?;
    let ex = positive_or_zero("--epsilon-x", args.epsilon_x)?;
    let ec = positive_or_zero("--epsilon-c", args.epsilon_c)?;
    let Loaded { dataset, cost_model } = args.data.load(log)?;
    let policy = load_policy(&args.policy, dataset.contexts().len(), dataset.n_actions(), log)?;
    let tol = args.tol.unwrap_or(1e-9 * dataset.y_max());
    let missing = if args.impute_missing_ymax { MissingPairs::ImputeYmax } else { MissingPairs::Error };
    let est = estimate(&dataset, &cost_model, &policy, ex, ec, method, tol, missing)?;
    if !est.table.imputed.is_empty() {
        eprintln!("imputed y_max for unobserved pairs {:?}", est.table.imputed);
    }
    if let Some(path) = &args.table_out {
        let mut s = String::from("context,action,m_hat,imputed\n");
        for (x, row) in est.table.m_hat.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                let imputed = est.table.imputed.contains(&(x, a));
                writeln!(s, "{x},{a},{v},{imputed}").unwrap();
            }
        }
        log.write(path, &s)?;
    }
    let status = serde_json::to_value(est.outer.status)?;
    Ok(format!(
        "method,epsilon_x,epsilon_c,eta,value,lambda_star,status\n{},{ex},{ec},{},{},{},{}\n",
        method.name(),
        fmt_opt(method.eta()),
        est.value(),
        est.outer.lambda_star,
        status.as_str().unwrap_or_default()
    ))
}

// opl

#[derive(Debug, Args, Serialize)]
pub struct OplArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = AlgoArg::Grid)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_x: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_c: f64,
    /// Solver for the robust cost table and, for grid search, the outer value.
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    /// Smoothing strength; required by bsgd and by `--method regularized`.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_enum, default_value_t = ParamArg::ProbClamp)]
    pub parameterization: ParamArg,
    /// Comma-separated group index per context; one group per context when absent.
    #[arg(long)]
    pub groups: Option<String>,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub inner_batch: usize,
    /// Step size is `step_c / sqrt(iterations)`.
    #[arg(long, default_value_t = 0.5)]
    pub step_c: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda0: f64,
    /// Grid points per coordinate.
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    #[arg(long)]
    pub impute_missing_ymax: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    /// BSGD iterate trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Learned parameters as JSON.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

pub fn opl(args: &OplArgs, seed: Option<u64>, log: &mut RunLog) -> Result<String, CliError> {
    let method = args.method.method(args.eta)?;
    let ex = positive_or_zero("--epsilon-x", args.epsilon_x)?;
    let ec = positive_or_zero("--epsilon-c", args.epsilon_c)?;
    let Loaded { dataset, cost_model } = args.data.load(log)?;
    let (nx, na) = (dataset.contexts().len(), dataset.n_actions());
    let tol = args.tol.unwrap_or(1e-9 * dataset.y_max());
    let missing = if args.impute_missing_ymax { MissingPairs::ImputeYmax } else { MissingPairs::Error };
    let table = robust_cost_table_with(&dataset, &cost_model, ec, method, tol, missing)?;
    let dist = dataset.context_distribution()?;
    let grouping: Vec<usize> = match &args.groups {
        Some(g) => parse_list("--groups", g)?,
        None => (0..nx).collect(),
    };
    if grouping.len() != nx {
        return Err(CliError::validation(format!("--groups lists {} contexts, data has {nx}", grouping.len())));
    }
    let template = PolicyParams::uniform_grouped(grouping, na, args.parameterization.get());
    let (params, objective, lambda, eta) = match args.algo {
        AlgoArg::Grid => {
            let grid = GridSpec { resolution: args.resolution, ..GridSpec::default() };
            let (params, value) = exact_opl(&table, &dist, &template, ex, method, grid, tol)?;
            let lambda = evaluate_policy(&params.to_policy(), &table, &dist, ex, method, tol)?.lambda_star;
            (params, value, lambda, method.eta())
        }
        AlgoArg::Bsgd => {
            let eta = args.eta.ok_or_else(|| CliError::validation("--algo bsgd needs --eta"))?;
            let seed = seed.unwrap_or(0);
            log.seed = Some(seed);
            let mut cfg = BsgdConfig::new(args.iterations, args.inner_batch, eta, ex, seed);
            cfg.step = StepSize::InvSqrtT { c: args.step_c };
            cfg.lambda0 = args.lambda0;
            let out = bsgd_learn(&table, &dist, &template, &cfg)?;
            if let Some(path) = &args.trace_out {
                log.write(path, &out.trace.to_csv())?;
            }
            let obj = smoothed_objective(&out.params, out.lambda, &table, &dist, ex, eta)?.value;
            (out.params, obj, out.lambda, Some(eta))
        }
    };
    let value = evaluate_policy(&params.to_policy(), &table, &dist, ex, Method::Exact, tol)?.value;
    if let Some(path) = &args.params_out {
        log.write(path, &(serde_json::to_string_pretty(&params)? + "\n"))?;
    }
    let algo = serde_json::to_value(args.algo)?;
    let param = serde_json::to_value(args.parameterization)?;
    let mut s = String::from("algo,parameterization,epsilon_x,epsilon_c,eta,value,objective,lambda");
    for i in 0..params.dim() {
        write!(s, ",theta_{i}").unwrap();
    }
    write!(
        s,
        "\n{},{},{ex},{ec},{},{value},{objective},{lambda}",
        algo.as_str().unwrap_or_default(),
        param.as_str().unwrap_or_default(),
        fmt_opt(eta)
    )
    .unwrap();
    for t in params.theta() {
        write!(s, ",{t}").unwrap();
    }
    s.push('\n');
    Ok(s)
}

// compare

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// JSON spec with `support`, `p_hat`, `q`, optional `f` and `outlier`;
    /// the built-in 51-point example when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Radii as multiples of each ball's measured distance from `p_hat` to `q`.
    #[arg(long, default_value = "0.8,1,1.2")]
    pub radii: String,
    /// Also move the outlier point and report value changes.
    #[arg(long)]
    pub outlier_shift: bool,
    /// Solver tolerance; `1e-9 * max f` when absent.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn compare(args: &CompareArgs, log: &mut RunLog) -> Result<String, CliError> {
    let spec = match &args.spec {
        Some(p) => {
            log.input(p);
            read_json(p)?
        }
        None => CompareSpec::analog(),
    };
    let multipliers: Vec<f64> = parse_list("--radii", &args.radii)?;
    let f_max = match &spec.f {
        Some(f) => f.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        None => spec.support.iter().chain([&spec.outlier.point]).fold(0.0f64, |m, x| m.max(x * x)),
    };
    let tol = args.tol.unwrap_or(1e-9 * f_max.max(1.0));
    let r = run_compare(&spec, &multipliers, args.outlier_shift, tol)?;
    let mut s = String::from("ball,multiplier,radius,value,e_q,e_p_hat,distance");
    if r.shifted.is_some() {
        s.push_str(",shifted_radius,shifted_value,shifted_e_q,shifted_distance,delta");
    }
    s.push('\n');
    for row in &r.rows {
        let dist = |sc: &wdro::compare::Scenario| match row.ball {
            wdro::compare::Ball::Kl => sc.kl,
            wdro::compare::Ball::Wasserstein => sc.wasserstein,
        };
        write!(
            s,
            "{},{},{},{},{},{},{}",
            row.ball.name(),
            row.multiplier,
            row.radius,
            row.value,
            r.base.e_q,
            r.base.e_p_hat,
            dist(&r.base)
        )
        .unwrap();
        if let (Some(sh), Some((rad, val))) = (&r.shifted, row.shifted) {
            write!(s, ",{rad},{val},{},{},{}", sh.e_q, dist(sh), val - row.value).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

// rate

#[derive(Debug, Args, Serialize)]
pub struct RateArgs {
    /// Synthetic generator JSON; the built-in 6-context fixture when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "128,256,512,1024,2048,4096,8192,16384")]
    pub n_grid: String,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_x: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_c: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn rate(args: &RateArgs, seed: Option<u64>, log: &mut RunLog) -> Result<String, CliError> {
    let generator: SyntheticConfig = match &args.config {
        Some(p) => {
            log.input(p);
            read_json(p)?
        }
        None => SyntheticConfig::rate_fixture(),
    };
    let truth = generator.truth()?;
    let policy = load_policy(&args.policy, truth.n_contexts(), truth.n_actions(), log)?;
    let settings = RateSettings {
        epsilon_x: positive_or_zero("--epsilon-x", args.epsilon_x)?,
        epsilon_c: positive_or_zero("--epsilon-c", args.epsilon_c)?,
        method: args.method.method(args.eta)?,
        tol: args.tol.unwrap_or(1e-9 * generator.y_max),
        policy: Some(policy.rows().to_vec()),
    };
    let n_grid: Vec<usize> = parse_list("--n-grid", &args.n_grid)?;
    let seed = seed.unwrap_or(0);
    log.seed = Some(seed);
    let report = wdro::ope::rate_experiment(&generator, &settings, &n_grid, args.trials, seed)?;
    let mut s = String::from("n,median_abs_error,redraws,slope,true_value\n");
    for row in &report.rows {
        writeln!(s, "{},{},{},{},{}", row.n, row.median_abs_error, row.redraws, report.slope, report.true_value)
            .unwrap();
    }
    Ok(s)
}

// synth

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Synthetic generator JSON; the built-in 6-context fixture when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receives `train.csv`, `test.csv`, their sidecars and `truth.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn regime_json(r: &Regime) -> serde_json::Value {
    serde_json::json!({
        "context_weights": r.contexts.weights(),
        "xi_weights": r.xi.iter().map(|row| row.iter().map(|d| d.weights().to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

pub fn synth(args: &SynthArgs, seed: Option<u64>, log: &mut RunLog) -> Result<String, CliError> {
    let mut config: SyntheticConfig = match &args.config {
        Some(p) => {
            log.input(p);
            read_json(p)?
        }
        None => SyntheticConfig::rate_fixture(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    log.seed = Some(config.seed);
    let out = synth_generate(&config)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::file(&args.out_dir, e))?;
    let mut s = String::from("split,path,records\n");
    for (name, ds) in [("train", &out.train), ("test", &out.test)] {
        let path = args.out_dir.join(format!("{name}.csv"));
        save_dataset(&path, ds, &out.truth.cost_model)?;
        log.outputs.push(path.clone());
        log.outputs.push(sidecar_path(&path));
        writeln!(s, "{name},{},{}", path.display(), ds.len()).unwrap();
    }
    let truth = serde_json::json!({
        "seed": config.seed,
        "train": regime_json(out.truth.train()),
        "test": regime_json(out.truth.test()),
    });
    log.write(&args.out_dir.join("truth.json"), &(serde_json::to_string_pretty(&truth)? + "\n"))?;
    Ok(s)
}

// replay

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Re-run without comparing output digests.
    #[arg(long)]
    pub no_verify: bool,
}
