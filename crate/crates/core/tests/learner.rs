use balpol_core::balance::{BalanceConfig, BalanceProblem, ImbalanceScale, QpOptions};
use balpol_core::data::{mean_outcome_matrix, propensity_matrix};
use balpol_core::estimators::{tau_direct, tau_weighted};
use balpol_core::learner::{
    implicit_gradients, learn_balanced, learn_balanced_dr, learn_ipw_logit, softmax_assignment, BalancedObjective,
    ImplicitGradient, LearnerConfig,
};
use balpol_core::simulation::{gen_example1, sape, stream, Example1Spec};
use balpol_core::{LoggedDataset, Matrix, PolicyAssignment};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn instance(seed: u64, n: usize, m: usize) -> (LoggedDataset, PolicyAssignment) {
    let mut rng = stream(seed, 0);
    let x = Matrix::from_fn(n, 2, |_, _| normal(&mut rng));
    let t: Vec<usize> = (0..n).map(|i| i % m).collect();
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let raw = Matrix::from_fn(n, m, |_, _| rng.random_range(0.1..1.0));
    let p = Matrix::from_fn(n, m, |i, a| raw[(i, a)] / raw.row(i).sum());
    (LoggedDataset::new(x, t, y, m), PolicyAssignment::new(p).unwrap())
}

fn small_config() -> LearnerConfig {
    LearnerConfig {
        restarts: 3,
        max_iters: 60,
        ..LearnerConfig::default()
    }
}

/// Estimate and `E` at an arbitrary (not necessarily stochastic) assignment.
struct Evaluator {
    problem: BalanceProblem,
    cfg: BalanceConfig,
    residual: Vec<f64>,
    mu_hat: Option<Matrix>,
}

impl Evaluator {
    fn new(ds: &LoggedDataset, cfg: &BalanceConfig, mu_hat: Option<Matrix>) -> Self {
        let grams = cfg.grams(&ds.x, ds.m).unwrap();
        let residual = match &mu_hat {
            Some(mu) => (0..ds.n()).map(|i| ds.y[i] - mu[(i, ds.t[i])]).collect(),
            None => ds.y.clone(),
        };
        Self {
            problem: BalanceProblem::new(&ds.t, cfg, &grams).unwrap(),
            cfg: cfg.clone(),
            residual,
            mu_hat,
        }
    }

    fn at(&self, p: &Matrix) -> (f64, f64, Vec<bool>) {
        let p = PolicyAssignment::from_matrix_unchecked(p.clone());
        let opts = QpOptions {
            tol: 1e-11,
            ..QpOptions::default()
        };
        let sol = self.problem.solve(&p, &self.cfg, &opts).unwrap();
        let mut tau = tau_weighted(&sol.w, &self.residual);
        if let Some(mu) = &self.mu_hat {
            tau += tau_direct(&p, mu);
        }
        (tau, sol.objective.sqrt(), sol.active_set)
    }
}

fn check_entrywise(ev: &Evaluator, p: &PolicyAssignment) {
    let ws = ImplicitGradient::new(&ev.problem).unwrap();
    let opts = QpOptions {
        tol: 1e-11,
        ..QpOptions::default()
    };
    let sol = ev.problem.solve(p, &ev.cfg, &opts).unwrap();
    let g = implicit_gradients(&sol, &ev.residual, p, &ev.problem, &ws, ev.mu_hat.as_ref()).unwrap();
    let (n, m) = (p.n(), p.m());
    let h = 1e-6;
    let mut checked = 0;
    for i in 0..n {
        for t in 0..m {
            let mut up = p.matrix().clone();
            up[(i, t)] += h;
            let mut down = p.matrix().clone();
            down[(i, t)] -= h;
            let (tau_u, e_u, a_u) = ev.at(&up);
            let (tau_d, e_d, a_d) = ev.at(&down);
            if a_u != sol.active_set || a_d != sol.active_set {
                continue;
            }
            checked += 1;
            for (fd, an, what) in [
                ((tau_u - tau_d) / (2.0 * h), g.d_tau[(i, t)], "tau"),
                ((e_u - e_d) / (2.0 * h), g.d_reg[(i, t)], "E"),
            ] {
                if an.abs() > 1e-6 {
                    assert!((fd - an).abs() <= 1e-3 * an.abs(), "d{what}/dP[{i}][{t}]: fd {fd} vs {an}");
                } else {
                    assert!(fd.abs() <= 1e-5, "d{what}/dP[{i}][{t}]: fd {fd} vs {an}");
                }
            }
        }
    }
    assert!(checked * 5 >= 4 * n * m, "only {checked} stable entries");
}

#[test]
fn assignment_gradients_match_finite_differences_entrywise() {
    for seed in 0..4 {
        let (ds, p) = instance(seed, 12, 3);
        let cfg = BalanceConfig::default().with_lambda(0.5);
        check_entrywise(&Evaluator::new(&ds, &cfg, None), &p);
        let mut rng = stream(seed, 1);
        let mu_hat = Matrix::from_fn(12, 3, |_, _| normal(&mut rng));
        check_entrywise(&Evaluator::new(&ds, &cfg, Some(mu_hat)), &p);
    }
}

#[test]
fn raising_target_mass_where_weights_overshoot_lowers_imbalance() {
    let (ds, p) = instance(5, 12, 3);
    let cfg = BalanceConfig::default().with_lambda(0.5);
    let ev = Evaluator::new(&ds, &cfg, None);
    let ws = ImplicitGradient::new(&ev.problem).unwrap();
    let sol = ev.problem.solve(&p, &cfg, &QpOptions::default()).unwrap();
    let g = implicit_gradients(&sol, &ds.y, &p, &ev.problem, &ws, None).unwrap();
    // the treated entry whose weight most exceeds the target mass around it
    let (i, t) = (0..ds.n())
        .map(|i| (i, ds.t[i]))
        .min_by(|a, b| g.d_reg[*a].total_cmp(&g.d_reg[*b]))
        .unwrap();
    assert!(g.d_reg[(i, t)] < 0.0);
    let h = 1e-6;
    let mut up = p.matrix().clone();
    up[(i, t)] += h;
    let (_, e0, _) = ev.at(p.matrix());
    let (_, e1, _) = ev.at(&up);
    assert!(e1 < e0);
    assert!(((e1 - e0) / h - g.d_reg[(i, t)]).abs() <= 1e-3 * g.d_reg[(i, t)].abs());
}

#[test]
fn heavy_imbalance_penalty_beats_uniform_imbalance() {
    let (ds, _) = instance(6, 30, 3);
    let cfg = BalanceConfig::default().with_imbalance(ImbalanceScale::Mean);
    let lcfg = LearnerConfig {
        lambda_reg: 1e4,
        ..small_config()
    };
    let out = learn_balanced(&ds, &cfg, &lcfg).unwrap();
    let mut obj = BalancedObjective::new(&ds, &cfg, 0.0, None, 1e-9).unwrap();
    let learned = obj.evaluate(&out.policy.beta).unwrap().1.objective.sqrt();
    obj.reset();
    let uniform = obj.evaluate(&Matrix::zeros(3, 3)).unwrap().1.objective.sqrt();
    assert!(learned <= uniform + 1e-6, "learned {learned} vs uniform {uniform}");
}

#[test]
fn ipw_learner_avoids_logged_arms_when_outcomes_are_positive() {
    let (n, m) = (60, 3);
    let mut rng = stream(7, 0);
    let centers = [[-3.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let t: Vec<usize> = (0..n).map(|i| i % m).collect();
    let x = Matrix::from_fn(n, 2, |i, c| centers[t[i]][c] + 0.5 * normal(&mut rng));
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..2.0)).collect();
    let ds = LoggedDataset::new(x, t, y, m);
    let phi = Matrix::from_fn(n, m, |i, a| if a == ds.t[i] { 0.8 } else { 0.1 });
    let out = learn_ipw_logit(&ds, &phi, &small_config()).unwrap();
    let p = out.policy.assignment(&ds.x).unwrap();
    let on_logged = (0..n).map(|i| p.get(i, ds.t[i])).sum::<f64>() / n as f64;
    assert!(on_logged < 0.05, "mean probability on logged arm {on_logged}");
}

#[test]
fn zero_outcome_model_reproduces_vanilla_trajectory() {
    let (ds, _) = instance(8, 20, 3);
    let cfg = BalanceConfig::default();
    let lcfg = small_config();
    let vanilla = learn_balanced(&ds, &cfg, &lcfg).unwrap();
    let dr = learn_balanced_dr(&ds, &cfg, &lcfg, &Matrix::zeros(20, 3)).unwrap();
    assert_eq!(vanilla.policy.to_flat(), dr.policy.to_flat());
    for (a, b) in vanilla.restarts.iter().zip(&dr.restarts) {
        let va: Vec<f64> = a.trace.iter().map(|s| s.objective).collect();
        let vb: Vec<f64> = b.trace.iter().map(|s| s.objective).collect();
        assert_eq!(va, vb);
    }
}

#[test]
fn exact_outcome_model_without_noise_gives_sape_plus_penalty() {
    let (ds, env) = gen_example1(&Example1Spec {
        m: 3,
        n: 40,
        sigma: 0.0,
        seed: 9,
    });
    let mu = mean_outcome_matrix(&env, &ds.x);
    let lambda_reg = 0.7;
    let cfg = BalanceConfig::default();
    let mut obj = BalancedObjective::new(&ds, &cfg, lambda_reg, Some(&mu), 1e-9).unwrap();
    let mut rng = stream(9, 1);
    for _ in 0..10 {
        let beta = Matrix::from_fn(3, 3, |_, _| normal(&mut rng));
        let (value, sol, _, p) = obj.evaluate(&beta).unwrap();
        let expected = sape(&p, &mu) + lambda_reg * sol.objective.sqrt();
        assert!((value - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{value} vs {expected}");
    }
}

#[test]
fn single_arm_learning_is_trivial() {
    let (ds, _) = instance(10, 15, 1);
    let out = learn_balanced(&ds, &BalanceConfig::default(), &small_config()).unwrap();
    let p = out.policy.assignment(&ds.x).unwrap();
    assert!((0..15).all(|i| p.get(i, 0) == 1.0));
}

#[test]
fn constant_outcomes_with_true_propensities_give_a_finite_policy() {
    let (mut ds, env) = gen_example1(&Example1Spec {
        m: 3,
        n: 50,
        sigma: 0.0,
        seed: 11,
    });
    ds.y = vec![2.5; ds.n()];
    let phi = propensity_matrix(&env, &ds.x);
    let out = learn_ipw_logit(&ds, &phi, &small_config()).unwrap();
    assert!(out.policy.to_flat().iter().all(|v| v.is_finite()));
    assert!(out.objective.is_finite());
}

#[test]
fn learning_is_deterministic_and_keeps_the_best_restart() {
    let (ds, _) = instance(12, 25, 3);
    let cfg = BalanceConfig::default();
    let lcfg = LearnerConfig {
        lambda_reg: 0.5,
        ..small_config()
    };
    let a = learn_balanced(&ds, &cfg, &lcfg).unwrap();
    let b = learn_balanced(&ds, &cfg, &lcfg).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(a.policy.to_flat()), bits(b.policy.to_flat()));
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert!(a.restarts.iter().all(|r| a.objective <= r.objective));
    for r in &a.restarts {
        assert!(r.trace.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-12));
    }
}

#[test]
fn learned_assignment_is_a_softmax_of_the_parameters() {
    let (ds, _) = instance(13, 20, 3);
    let out = learn_balanced(&ds, &BalanceConfig::default(), &small_config()).unwrap();
    let direct = softmax_assignment(&out.policy.beta, &ds.x).unwrap();
    assert_eq!(out.policy.assignment(&ds.x).unwrap(), direct);
}
