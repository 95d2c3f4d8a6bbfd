use wienervar::functionals::FunctionalSpec;
use wienervar::girsanov::{importance_estimate, DriftPolicy, FeedbackDescriptor, Feature, MarkovFeedback, ParametricBasis};
use wienervar::sde::{conditioned_interval_experiment, invertibility_probe, left_inverse_residual, solve_strong_sde};
use wienervar::solvers::{foellmer_for, grad_descent_optimize};
use wienervar::stats::sample_sd;
use wienervar::wiener::{sample_brownian, CMElement, TimeGrid};

#[test]
fn linear_sde_matches_variance_recursion() {
    let n = 256;
    let g = TimeGrid::new(n).unwrap();
    let b = sample_brownian(g, 100_000, 1, 51).unwrap();
    let v = DriftPolicy::MarkovFeedback(MarkovFeedback::scalar(FeedbackDescriptor::Opaque { label: "x/(2-t)".into() }, |t, x| {
        x / (2.0 - t)
    }));
    let s = solve_strong_sde(&v, &b).unwrap();
    let x1: Vec<f64> = (0..b.m_paths()).map(|i| s.terminal(i)[0]).collect();
    let var = sample_sd(&x1).powi(2);
    let exact = (0..n).fold(0.0, |acc, k| (1.0 - g.dt() / (2.0 - g.t(k))).powi(2) * acc + g.dt());
    assert!((var / exact - 1.0).abs() < 0.05, "{var} vs {exact}");
    assert_eq!(s.clamped(), 0);
}

/// Variance of the log importance weight left over when the tilted law of
/// each increment, `N(m_k, r_k dt)` with `1/r_k = 1 + dt/(1 + β(1 − t_{k+1}))`,
/// is matched by a mean shift alone: `Σ_k (1 − r_k)² / 2`.
fn mean_shift_log_weight_variance(beta: f64, g: TimeGrid) -> f64 {
    (0..g.n_steps())
        .map(|k| {
            let r = 1.0 / (1.0 + g.dt() * beta / (1.0 + beta * (1.0 - g.t(k + 1))));
            0.5 * (1.0 - r).powi(2)
        })
        .sum()
}

#[test]
fn foellmer_importance_sampling_reaches_the_mean_shift_floor() {
    let f = FunctionalSpec::terminal_quadratic(1.0);
    for n in [64, 256] {
        let g = TimeGrid::new(n).unwrap();
        let b = sample_brownian(g, 10_000, 1, 52).unwrap();
        let v = foellmer_for(&f, g, 20).unwrap();
        let tuned = importance_estimate(&f, &v.negated(), &b).unwrap();
        let floor = mean_shift_log_weight_variance(1.0, g).sqrt();
        assert!((tuned.relative_sd() / floor - 1.0).abs() < 0.1, "N = {n}: {} vs {floor}", tuned.relative_sd());
        assert!((tuned.value - 0.5f64.sqrt()).abs() < 5e-3);
        let crude = importance_estimate(&f, &DriftPolicy::zero(g, 1), &b).unwrap();
        assert!(crude.relative_sd() >= 0.3, "{}", crude.relative_sd());
    }
}

#[test]
fn left_inverse_residuals_at_optima() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 10_000, 1, 53).unwrap();
    let h = CMElement::constant(g, 1, 1.0);
    let f = FunctionalSpec::linear(h.clone());
    let out = grad_descent_optimize(&f, ParametricBasis::zeros(vec![Feature::One], true, g), &b, 8, 0.5).unwrap();
    let u = DriftPolicy::ParametricBasis(out.basis);
    let r = left_inverse_residual(&u, &DriftPolicy::Deterministic(h), &b).unwrap();
    assert!(r.value <= (3.0 * r.std_error).max(1e-3), "{r:?}");

    let g = TimeGrid::new(256).unwrap();
    let b = sample_brownian(g, 2000, 1, 54).unwrap();
    let v = foellmer_for(&FunctionalSpec::terminal_quadratic(1.0), g, 20).unwrap();
    let r = left_inverse_residual(&v.negated(), &v, &b).unwrap();
    assert!(r.value <= 0.02, "{r:?}");
}

#[test]
fn probe_bundles_consistent_diagnostics() {
    let g = TimeGrid::new(64).unwrap();
    let b = sample_brownian(g, 50_000, 1, 55).unwrap();
    let h = CMElement::constant(g, 1, 1.0);
    let f = FunctionalSpec::linear(h.clone());
    let opt = DriftPolicy::Deterministic(h.scaled(-1.0));
    let rep = invertibility_probe(&f, &opt, &b, None, Some(&DriftPolicy::Deterministic(h))).unwrap();
    assert!(rep.gap.gap.abs() <= 3.0 * rep.gap.gap_se);
    let (d, se) = rep.entropy_minus_energy().unwrap();
    assert!(d.abs() <= 3.0 * se);
    assert_eq!(rep.left_inverse_residual.as_ref().unwrap().value, 0.0);
    assert_eq!(rep.terminal_membership, 1.0);
    let json = serde_json::to_value(&rep).unwrap();
    for key in ["energy", "entropy_proxy", "gap", "left_inverse_residual", "terminal_membership"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }

    let null = invertibility_probe(&f, &DriftPolicy::zero(g, 1), &b, None, None).unwrap();
    assert!((null.gap.gap - 0.5).abs() <= 3.0 * null.gap.gap_se);
    assert_eq!(null.energy.value, 0.0);

    let g = TimeGrid::new(256).unwrap();
    let b = sample_brownian(g, 10_000, 1, 56).unwrap();
    let fq = FunctionalSpec::terminal_quadratic(1.0);
    let u = foellmer_for(&fq, g, 20).unwrap().negated();
    let rep = invertibility_probe(&fq, &u, &b, None, None).unwrap();
    let (d, se) = rep.entropy_minus_energy().unwrap();
    assert!(d.abs() <= (3.0 * se).max(0.02), "{d} ± {se}");
    assert!(rep.gap.lower_bound_holds(3.0));
}

#[test]
fn wide_interval_is_nearly_trivial() {
    let g = TimeGrid::new(64).unwrap();
    let ex = conditioned_interval_experiment(10.0, g, 2000, 57).unwrap();
    assert_eq!(ex.report.terminal_membership, 1.0);
    assert!(ex.report.energy.value < 1e-6);
    assert!(ex.neg_log_mass < 1e-15);
    assert_eq!(ex.by_cap.len(), 3);
}

#[test]
fn interval_experiment_reports_measurements() {
    let g = TimeGrid::new(64).unwrap();
    let ex = conditioned_interval_experiment(0.5, g, 4000, 58).unwrap();
    assert!((ex.neg_log_mass - 0.95997).abs() < 5e-4);
    let caps: Vec<f64> = ex.by_cap.iter().map(|c| c.t_max).collect();
    assert_eq!(caps, vec![1.0 - g.dt(), 1.0 - 4.0 * g.dt(), 1.0 - 16.0 * g.dt()]);
    // a longer active drift spends more energy and keeps more paths inside
    assert!(ex.by_cap[0].energy.value > ex.by_cap[2].energy.value);
    assert!(ex.by_cap[0].terminal_membership >= ex.by_cap[2].terminal_membership);
    assert!(ex.report.terminal_membership > 0.8);
    assert!(ex.narrative.get("energy_by_time_cap").is_some());
    let again = conditioned_interval_experiment(0.5, g, 4000, 58).unwrap();
    assert_eq!(serde_json::to_string(&ex).unwrap(), serde_json::to_string(&again).unwrap());
}
