use wienervar::functionals::{FunctionalSpec, TerminalFn};
use wienervar::girsanov::{DriftPolicy, Feature, ParametricBasis};
use wienervar::sde::left_inverse_residual;
use wienervar::solvers::{
    fixed_point_residual, foellmer_drift_value, foellmer_for, grad_descent_optimize, picard_solve, picard_solve_from, picard_step,
    policy_distance_sq, QuadratureRule, RegressionSpec,
};
use wienervar::variational::{gap_diagnostic, j_difference, j_estimate};
use wienervar::wiener::{sample_brownian, CMElement, TimeGrid};

const HALF_LOG_2: f64 = 0.346_573_590_279_972_6;

#[test]
fn quadrature_drift_matches_closed_form_on_a_grid() {
    let g = TimeGrid::new(64).unwrap();
    let rule = QuadratureRule::gauss_hermite(40).unwrap();
    for beta in [1.0, 0.5, 2.0] {
        let q = TerminalFn::Quadratic { beta };
        let mut worst = 0.0f64;
        for k in 0..g.n_steps() {
            let t = g.t(k);
            for j in 0..=60 {
                let x = -3.0 + 0.1 * j as f64;
                let closed = beta * x / (1.0 + beta * (1.0 - t));
                worst = worst.max((foellmer_drift_value(&q, &rule, t, x).unwrap() - closed).abs());
            }
        }
        assert!(worst <= 1e-6, "beta = {beta}: {worst}");
    }
}

#[test]
fn picard_recovers_the_linear_optimum_in_one_step() {
    let g = TimeGrid::new(32).unwrap();
    let b = sample_brownian(g, 2000, 1, 41).unwrap();
    let h = CMElement::from_fn(g, |t| 1.0 + t).unwrap();
    let f = FunctionalSpec::linear(h.clone());
    let reg = RegressionSpec::default();
    let u1 = picard_step(&f, &DriftPolicy::zero(g, 1), &b, &reg).unwrap();
    let d = policy_distance_sq(&u1, &DriftPolicy::Deterministic(h.scaled(-1.0)), &b).unwrap();
    assert!(d.value < 1e-20, "{d:?}");

    let (_, state) = picard_solve(&f, &b, &reg, 1e-6, 10).unwrap();
    assert!(state.converged);
    assert_eq!(state.iteration, 2);
    assert!(state.residuals[1] < 1e-20);
}

#[test]
fn picard_contracts_for_small_cosine() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 10_000, 1, 42).unwrap();
    let f = FunctionalSpec::scaled_cosine(0.1, CMElement::constant(g, 1, 1.0));
    let reg = RegressionSpec::default();
    let tol = 1e-3;
    let (u, state) = picard_solve(&f, &b, &reg, 0.0, 6).unwrap();
    let r = &state.residuals;
    for n in 0..4 {
        assert!(r[n + 1] / r[n] <= 0.3, "r = {r:?}");
    }
    let fp = fixed_point_residual(&f, &u, &b, &reg).unwrap();
    assert!(fp.value <= 2.0 * tol * tol, "{fp:?}");

    // Picard iterates descend in J (common random numbers).
    let mut prev = j_estimate(&f, &DriftPolicy::zero(g, 1), &b).unwrap();
    let mut cur = DriftPolicy::zero(g, 1);
    for _ in 0..4 {
        let next = picard_step(&f, &cur, &b, &reg).unwrap();
        let j = j_estimate(&f, &next, &b).unwrap();
        assert!(j.value <= prev.value + 3.0 * (j.std_error.powi(2) + prev.std_error.powi(2)).sqrt());
        prev = j;
        cur = next;
    }

    // Uniqueness: a second start reaches the same policy.
    let start = DriftPolicy::ParametricBasis(ParametricBasis::new(vec![Feature::One, Feature::X], false, g, vec![0.4, -0.8]).unwrap());
    let (u2, s2) = picard_solve_from(&f, start, &b, &reg, tol, 20).unwrap();
    assert!(s2.converged);
    let d = policy_distance_sq(&u, &u2, &b).unwrap();
    assert!(d.value <= 4.0 * tol * tol, "{d:?}");

    // The fixed point improves on the null policy, measured on fresh paths.
    let fresh = sample_brownian(g, 10_000, 1, 43).unwrap();
    let diff = j_difference(&f, &u, &DriftPolicy::zero(g, 1), &fresh).unwrap();
    assert!(diff.value <= -5.0 * diff.std_error, "{diff:?}");
    let g_u = gap_diagnostic(&f, &u, &fresh).unwrap();
    let g_0 = gap_diagnostic(&f, &DriftPolicy::zero(g, 1), &fresh).unwrap();
    assert!(g_u.gap < g_0.gap);
}

#[test]
fn picard_fixed_point_tracks_foellmer_drift() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 10_000, 1, 44).unwrap();
    let f = FunctionalSpec::terminal_quadratic(1.0);
    let reg = RegressionSpec::with_features(vec![Feature::One, Feature::X]);
    let (u, _) = picard_solve(&f, &b, &reg, 1e-3, 30).unwrap();
    let v = foellmer_for(&f, g, 20).unwrap();
    let r = left_inverse_residual(&u, &v, &b).unwrap();
    assert!(r.value <= 0.05, "{r:?}");
}

#[test]
fn descent_reaches_the_linear_optimum() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 10_000, 1, 45).unwrap();
    let h = CMElement::constant(g, 1, 1.0);
    let f = FunctionalSpec::linear(h);
    let init = ParametricBasis::zeros(vec![Feature::One], true, g);
    let out = grad_descent_optimize(&f, init, &b, 5, 0.5).unwrap();
    assert!(out.basis.theta.iter().all(|t| (t + 1.0).abs() < 0.05));
    let j = j_estimate(&f, &DriftPolicy::ParametricBasis(out.basis.clone()), &b).unwrap();
    assert!((j.value + 0.5).abs() <= (3.0 * j.std_error).max(1e-3), "{j:?}");
    assert_eq!(out.trace.len(), 6);
    assert!(!out.aborted);
}

#[test]
fn descent_reaches_the_quadratic_optimum_with_global_feedback() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 10_000, 1, 46).unwrap();
    let f = FunctionalSpec::terminal_quadratic(1.0);
    let init = ParametricBasis::zeros(vec![Feature::One, Feature::X], false, g);
    let out = grad_descent_optimize(&f, init, &b, 60, 1.0).unwrap();
    let j = *out.trace.last().unwrap();
    let se = j_estimate(&f, &DriftPolicy::ParametricBasis(out.basis.clone()), &b).unwrap().std_error;
    assert!((j - HALF_LOG_2).abs() <= (3.0 * se).max(0.02), "J = {j}, θ = {:?}", out.basis.theta);
    assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9) || out.halvings > 0);
}

#[test]
fn descent_lowers_j_for_cosine() {
    let g = TimeGrid::new(16).unwrap();
    let b = sample_brownian(g, 2000, 1, 47).unwrap();
    let f = FunctionalSpec::scaled_cosine(0.5, CMElement::constant(g, 1, 1.0));
    let init = ParametricBasis::zeros(vec![Feature::One, Feature::X], false, g);
    let out = grad_descent_optimize(&f, init, &b, 20, 0.5).unwrap();
    assert!(out.trace.last().unwrap() < &out.trace[0]);
}
