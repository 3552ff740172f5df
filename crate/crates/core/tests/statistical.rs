use balpol_core::balance::{objective, solve_weights, BalanceConfig, ImbalanceScale, QpOptions};
use balpol_core::data::{mean_outcome_matrix, propensity_matrix};
use balpol_core::estimators::{tau_dr, tau_weighted, weights_ipw};
use balpol_core::kernels::KernelSpec;
use balpol_core::simulation::{redraw_given_x, sample_dataset, sape, stream, Example1Env};
use balpol_core::{LoggedDataset, Matrix, PolicyAssignment, TrueEnvironment};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let r = v.len() as f64;
    let mean = v.iter().sum::<f64>() / r;
    let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

fn rbf(a: &Matrix, b: &Matrix, bw: f64) -> Matrix {
    Matrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2: f64 = (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum();
        (-d2 / (bw * bw)).exp()
    })
}

fn random_policy(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PolicyAssignment {
    let raw = Matrix::from_fn(n, m, |_, _| rng.random_range(0.05..1.0));
    PolicyAssignment::new(Matrix::from_fn(n, m, |i, t| raw[(i, t)] / raw.row(i).sum())).unwrap()
}

/// Logged draw from the Gaussian mixture environment with every arm present.
fn logged(n: usize, m: usize, sigma: f64, seed: u64) -> (LoggedDataset, Example1Env) {
    let env = Example1Env::new(m, sigma);
    let mut rng = stream(seed, 0);
    loop {
        let ds = sample_dataset(&env, n, &mut rng);
        if (0..m).all(|t| ds.t.contains(&t)) {
            return (ds, env);
        }
    }
}

fn with_outcomes(ds: &LoggedDataset, y: Vec<f64>) -> LoggedDataset {
    LoggedDataset::new(ds.x.clone(), ds.t.clone(), y, ds.m)
}

#[test]
fn ipw_with_true_propensities_is_unbiased_given_covariates() {
    let (ds, env) = logged(100, 5, 0.5, 3);
    let mu = mean_outcome_matrix(&env, &ds.x);
    let phi = propensity_matrix(&env, &ds.x);
    let mut rng = stream(3, 1);
    let p = random_policy(&mut rng, ds.n(), ds.m);
    let target = sape(&p, &mu);
    let estimates: Vec<f64> = (0..2000)
        .map(|_| {
            let d = redraw_given_x(&env, &ds.x, &mut rng);
            tau_weighted(&weights_ipw(&p, &d.t, &phi).unwrap(), &d.y)
        })
        .collect();
    let (mean, se) = mean_and_se(&estimates);
    assert!((mean - target).abs() <= 3.0 * se, "mean {mean} vs {target}, se {se}");
}

#[test]
fn doubly_robust_cmse_is_model_bias_squared_plus_variance() {
    let sigma = 0.5;
    let (ds, env) = logged(60, 3, sigma, 4);
    let n = ds.n();
    let mu = mean_outcome_matrix(&env, &ds.x);
    let mut rng = stream(4, 1);
    let p = random_policy(&mut rng, n, ds.m);
    let mu_hat = Matrix::from_fn(n, ds.m, |i, t| mu[(i, t)] + 0.3 * normal(&mut rng));
    let cfg = BalanceConfig::default();
    let grams = cfg.grams(&ds.x, ds.m).unwrap();
    let w = solve_weights(&p, &ds.t, &cfg, &grams, &QpOptions::default()).unwrap().w;

    let nf = n as f64;
    let target = sape(&p, &mu);
    let model_error: f64 = (0..n).map(|i| w[i] * (mu[(i, ds.t[i])] - mu_hat[(i, ds.t[i])])).sum::<f64>() / nf;
    let plug_in: f64 = (0..n).map(|i| (0..ds.m).map(|t| p.get(i, t) * mu_hat[(i, t)]).sum::<f64>()).sum::<f64>() / nf;
    let bias = model_error + plug_in - target;
    let variance = sigma * sigma * w.iter().map(|v| v * v).sum::<f64>() / (nf * nf);
    let expected = bias * bias + variance;

    let sq: Vec<f64> = (0..4000)
        .map(|_| {
            let y = (0..n).map(|i| mu[(i, ds.t[i])] + sigma * normal(&mut rng)).collect();
            (tau_dr(&w, &p, &mu_hat, &with_outcomes(&ds, y)) - target).powi(2)
        })
        .collect();
    let (mean, se) = mean_and_se(&sq);
    assert!((mean - expected).abs() <= 3.0 * se, "mc {mean} vs {expected}, se {se}");
}

/// Average squared error over outcome functions drawn from a Gaussian process
/// with covariance `prior_scale^2 K` and noise `sigma^2 I`.
fn posterior_mse(scale: ImbalanceScale, prior_scale: impl Fn(usize) -> f64) -> (f64, f64, f64) {
    let (n, m, bw, gamma, sigma) = (40, 3, 1.0, 0.8, 0.5);
    let (ds, _) = logged(n, m, 0.0, 5);
    let mut rng = stream(5, 1);
    let p = random_policy(&mut rng, n, m);
    let cfg = BalanceConfig::default()
        .with_kernel(KernelSpec::with_scale(bw, Matrix::identity(2, 2)))
        .with_gammas(vec![gamma])
        .with_lambda(sigma * sigma)
        .with_imbalance(scale);
    let grams = cfg.grams(&ds.x, m).unwrap();
    let sol = solve_weights(&p, &ds.t, &cfg, &grams, &QpOptions::default()).unwrap();
    let e2 = objective(&sol.w, &p, &ds.t, &cfg, &grams).unwrap().total;

    let k = rbf(&ds.x, &ds.x, bw) + Matrix::identity(n, n) * 1e-10;
    let l = k.cholesky().unwrap().l();
    let c = prior_scale(n);
    let sq: Vec<f64> = (0..20000)
        .map(|_| {
            let mu = Matrix::from_columns(
                &(0..m)
                    .map(|_| &l * balpol_core::Vector::from_fn(n, |_, _| c * normal(&mut rng)))
                    .collect::<Vec<_>>(),
            );
            let y: Vec<f64> = (0..n).map(|i| mu[(i, ds.t[i])] + sigma * normal(&mut rng)).collect();
            (tau_weighted(&sol.w, &y) - sape(&p, &mu)).powi(2)
        })
        .collect();
    let (mean, se) = mean_and_se(&sq);
    (mean, se, e2)
}

#[test]
fn posterior_mse_matches_objective_under_sum_scaling() {
    let (mean, se, e2) = posterior_mse(ImbalanceScale::Sum, |n| n as f64 * 0.8);
    assert!((mean - e2).abs() <= 4.0 * se, "mc {mean} vs {e2}, se {se}");
}

#[test]
fn posterior_mse_matches_objective_under_mean_scaling() {
    let (mean, se, e2) = posterior_mse(ImbalanceScale::Mean, |_| 0.8);
    assert!((mean - e2).abs() <= 4.0 * se, "mc {mean} vs {e2}, se {se}");
}

#[test]
fn cmse_is_bounded_by_norm_times_objective() {
    let (n, m, bw, sigma) = (50, 3, 1.2, 0.4);
    for (seed, lambda, scale) in [
        (10u64, 0.05, ImbalanceScale::Mean),
        (11, 1.0, ImbalanceScale::Mean),
        (12, 0.3, ImbalanceScale::Sum),
    ] {
        let (ds, _) = logged(n, m, 0.0, seed);
        let mut rng = stream(seed, 1);
        let centers = Matrix::from_fn(6, 2, |_, _| 1.5 * normal(&mut rng));
        let alpha = Matrix::from_fn(6, m, |_, _| normal(&mut rng));
        let gammas = vec![0.5, 1.0, 2.0];
        let mu = rbf(&ds.x, &centers, bw) * &alpha;
        let kcc = rbf(&centers, &centers, bw);
        let norm_sq: f64 = (0..m)
            .map(|t| {
                let a = alpha.column(t);
                a.dot(&(&kcc * a)) / (gammas[t] * gammas[t])
            })
            .sum();
        let noise_ratio = sigma * sigma / lambda;

        let p = random_policy(&mut rng, n, m);
        let cfg = BalanceConfig::default()
            .with_kernel(KernelSpec::with_scale(bw, Matrix::identity(2, 2)))
            .with_gammas(gammas)
            .with_lambda(lambda)
            .with_imbalance(scale);
        let grams = cfg.grams(&ds.x, m).unwrap();
        let w = solve_weights(&p, &ds.t, &cfg, &grams, &QpOptions::default()).unwrap().w;
        let e2 = objective(&w, &p, &ds.t, &cfg, &grams).unwrap().total;
        let bound = norm_sq.max(noise_ratio) * e2;

        let nf = n as f64;
        let target = sape(&p, &mu);
        let mean_y: Vec<f64> = (0..n).map(|i| mu[(i, ds.t[i])]).collect();
        let bias = tau_weighted(&w, &mean_y) - target;
        let exact = bias * bias + sigma * sigma * w.iter().map(|v| v * v).sum::<f64>() / (nf * nf);
        assert!(exact <= bound * (1.0 + 1e-9), "seed {seed}: {exact} > {bound}");

        let sq: Vec<f64> = (0..2000)
            .map(|_| {
                let y: Vec<f64> = mean_y.iter().map(|v| v + sigma * normal(&mut rng)).collect();
                (tau_weighted(&w, &y) - target).powi(2)
            })
            .collect();
        let (mc, se) = mean_and_se(&sq);
        assert!(mc <= bound + 3.0 * se, "seed {seed}: mc {mc} > {bound}");
    }
}

/// Upper 0.1% point of chi-square via the Wilson-Hilferty cube approximation.
fn chi_square_upper(df: f64) -> f64 {
    let z = 3.090_232;
    let h = 2.0 / (9.0 * df);
    df * (1.0 - h + z * h.sqrt()).powi(3)
}

#[test]
fn logged_arms_follow_bayes_propensities_in_bins() {
    let m = 5;
    let env = Example1Env::new(m, 0.0);
    let mut rng = stream(6, 0);
    let ds = sample_dataset(&env, 60_000, &mut rng);
    let phi = propensity_matrix(&env, &ds.x);
    let deciles = 5;
    let cells = m * deciles;
    let mut observed = vec![vec![0.0; m]; cells];
    let mut expected = vec![vec![0.0; m]; cells];
    for i in 0..ds.n() {
        let row: Vec<f64> = (0..m).map(|t| phi[(i, t)]).collect();
        let (top, pmax) = row
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let band = (((pmax - 1.0 / m as f64) / (1.0 - 1.0 / m as f64)) * deciles as f64).min(deciles as f64 - 1.0);
        let cell = top * deciles + band as usize;
        observed[cell][ds.t[i]] += 1.0;
        for t in 0..m {
            expected[cell][t] += row[t];
        }
    }
    let mut stat = 0.0;
    let mut used = 0;
    for c in 0..cells {
        if expected[c].iter().all(|&e| e >= 5.0) {
            stat += (0..m).map(|t| (observed[c][t] - expected[c][t]).powi(2) / expected[c][t]).sum::<f64>();
            used += 1;
        }
    }
    assert!(used >= cells / 2, "only {used} usable cells");
    let df = (used * (m - 1)) as f64;
    assert!(stat <= chi_square_upper(df), "chi-square {stat} on {df} df");
}

#[test]
fn environment_propensities_are_a_distribution() {
    let env = Example1Env::new(4, 0.0);
    let mut rng = stream(7, 0);
    for _ in 0..500 {
        let x = [3.0 * normal(&mut rng), 3.0 * normal(&mut rng)];
        let p = env.propensities(&x);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
