use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdro::opl::{
    bsgd_learn, context_gradient, exact_opl, smoothed_objective, BsgdConfig, GridSpec, Parameterization, PolicyParams,
};
use wdro::{evaluate_policy, DiscreteDistribution, Method, RobustCostTable, SupportSet};

fn random_setup(rng: &mut ChaCha8Rng, nx: usize, na: usize) -> (RobustCostTable<f64>, DiscreteDistribution<f64>) {
    let m: Vec<Vec<f64>> = (0..nx).map(|_| (0..na).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let pts: Vec<f64> = (0..nx).map(|i| i as f64 * 0.5 + rng.gen_range(0.0..0.4)).collect();
    let w: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let dist = DiscreteDistribution::new(
        SupportSet::from_scalars(&pts).unwrap(),
        w.into_iter().map(|v| v / s).collect(),
    )
    .unwrap();
    (RobustCostTable::from_values(m, 1.0), dist)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    num / den
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-6;
    for trial in 0..40 {
        let (nx, na) = (rng.gen_range(2..6), rng.gen_range(2..4));
        let (table, dist) = random_setup(&mut rng, nx, na);
        let param = if trial % 2 == 0 { Parameterization::GroupSoftmax } else { Parameterization::GroupProbClamp };
        let base = PolicyParams::uniform(nx, na, param);
        let theta: Vec<f64> = match param {
            Parameterization::GroupSoftmax => (0..base.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            // Interior points so the perturbed parameters stay feasible.
            Parameterization::GroupProbClamp => {
                (0..base.dim()).map(|_| rng.gen_range(0.05..0.9) / (na - 1) as f64).collect()
            }
        };
        let p = base.with_theta(theta.clone()).unwrap();
        let lambda = rng.gen_range(0.05..3.0);
        let eta = [1.0, 5.0, 20.0][trial % 3];
        let eps = 0.2;
        let f = |th: &[f64], l: f64| {
            smoothed_objective(&p.with_theta(th.to_vec()).unwrap(), l, &table, &dist, eps, eta).unwrap().value
        };
        let g = smoothed_objective(&p, lambda, &table, &dist, eps, eta).unwrap();
        let mut fd = Vec::new();
        for i in 0..theta.len() {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += h;
            dn[i] -= h;
            fd.push((f(&up, lambda) - f(&dn, lambda)) / (2.0 * h));
        }
        fd.push((f(&theta, lambda + h) - f(&theta, lambda - h)) / (2.0 * h));
        let mut analytic = g.grad_theta.clone();
        analytic.push(g.grad_lambda);
        assert!(rel_err(&analytic, &fd) <= 1e-5, "trial {trial}: {analytic:?} vs {fd:?}");
    }
}

#[test]
fn full_enumeration_per_context_sums_to_objective_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (table, dist) = random_setup(&mut rng, 4, 3);
    let p = PolicyParams::uniform(4, 3, Parameterization::GroupSoftmax).with_theta(vec![0.3, -0.2, 1.0, 0.0, 0.5, 0.5, -1.0, 2.0]).unwrap();
    let all: Vec<usize> = (0..4).collect();
    let whole = smoothed_objective(&p, 0.7, &table, &dist, 0.1, 8.0).unwrap();
    let mut gl = 0.0;
    let mut gt = vec![0.0; p.dim()];
    for x in 0..4 {
        let c = context_gradient(&p, 0.7, &table, &dist, x, &all, 0.1, 8.0).unwrap();
        gl += dist.weight(x) * c.grad_lambda;
        for (a, b) in gt.iter_mut().zip(&c.grad_theta) {
            *a += dist.weight(x) * b;
        }
    }
    assert!((gl - whole.grad_lambda).abs() < 1e-12);
    assert!(rel_err(&gt, &whole.grad_theta) < 1e-12);
}

#[test]
fn grid_optimum_beats_uniform_and_tracks_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let (table, dist) = random_setup(&mut rng, 2, 2);
        let t = PolicyParams::uniform(2, 2, Parameterization::GroupProbClamp);
        let grid = GridSpec { resolution: 41, ..GridSpec::default() };
        let (_, v) = exact_opl(&table, &dist, &t, 0.2, Method::Exact, grid, 1e-12).unwrap();
        let u = evaluate_policy(&t.to_policy(), &table, &dist, 0.2, Method::Exact, 1e-12).unwrap();
        assert!(v <= u.value + 1e-12);
        for eta in [10.0, 100.0] {
            let (_, vs) = exact_opl(&table, &dist, &t, 0.2, Method::Regularized { eta }, grid, 1e-12).unwrap();
            // The cost table is given, so only the context level contributes.
            assert!((vs - v).abs() <= 2f64.ln() / eta, "{vs} {v} {eta} {table:?} {dist:?}");
        }
    }
}

#[test]
fn bsgd_reaches_grid_optimum_on_convex_fixture() {
    let table = RobustCostTable::from_values(vec![vec![0.2, 0.7], vec![0.6, 0.3]], 1.0);
    let dist = DiscreteDistribution::new(SupportSet::from_scalars(&[0.0, 1.0]).unwrap(), vec![0.6, 0.4]).unwrap();
    let t = PolicyParams::uniform(2, 2, Parameterization::GroupProbClamp);
    let eta = 20.0f64;
    let (_, best) = exact_opl(&table, &dist, &t, 0.1, Method::Regularized { eta }, GridSpec::default(), 1e-10).unwrap();
    let cfg = BsgdConfig::new(5000, 32, eta, 0.1, 3);
    let out = bsgd_learn(&table, &dist, &t, &cfg).unwrap();
    let f = smoothed_objective(&out.params, out.lambda, &table, &dist, 0.1, eta).unwrap();
    assert!((f.value - best).abs() <= 1e-2);
    assert!(out.trace.rows.iter().all(|r| r.lambda >= 0.0 && r.lambda <= 10.0));
}
