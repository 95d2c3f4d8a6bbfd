//! Acceptance battery. Each criterion runs at its stated scale and reports
//! every sub-check with the measured value and the requirement.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wienervar::functionals::FunctionalSpec;
use wienervar::girsanov::{apply_shift, importance_estimate, importance_log_samples, DriftPolicy, Feature, MarkovFeedback, ParametricBasis};
use wienervar::sde::{conditioned_interval_experiment, invertibility_probe};
use wienervar::solvers::{
    fixed_point_residual, foellmer_drift_value, foellmer_for, picard_solve, picard_solve_from, policy_distance_sq, QuadratureRule,
    RegressionSpec, DEFAULT_QUAD_ORDER,
};
use wienervar::stats::{combined_se, mean_and_se};
use wienervar::variational::{
    entropy_energy_report, finite_fenchel_bruteforce, finite_log_laplace, gap_diagnostic, j_estimate, mc_neg_log_laplace, FiniteSpace,
};
use wienervar::wiener::{sample_brownian, BrownianBatch, CMElement, TimeGrid};
use wienervar::TerminalFn;

const HALF_LOG_2: f64 = 0.346_573_590_279_972_6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub requirement: String,
    pub passed: bool,
}

fn le(name: &str, measured: f64, bound: f64) -> Check {
    Check {
        name: name.into(),
        measured,
        requirement: format!("<= {bound:.3e}"),
        passed: measured <= bound,
    }
}

fn ge(name: &str, measured: f64, bound: f64) -> Check {
    Check {
        name: name.into(),
        measured,
        requirement: format!(">= {bound:.3e}"),
        passed: measured >= bound,
    }
}

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub checks: Vec<Check>,
}

impl Criterion {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{verdict}] {}:", self.id, self.title)?;
        for (i, c) in self.checks.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            let mark = if c.passed { "ok" } else { "FAILED" };
            write!(f, "{sep}{} = {:.6e} ({}) {mark}", c.name, c.measured, c.requirement)?;
        }
        Ok(())
    }
}

fn failure(id: u8, title: &'static str, err: impl fmt::Display) -> Criterion {
    Criterion {
        id,
        title,
        checks: vec![Check {
            name: format!("error: {err}"),
            measured: f64::NAN,
            requirement: "runs".into(),
            passed: false,
        }],
    }
}

macro_rules! guarded {
    ($id:expr, $title:expr, $body:expr) => {{
        let run = || -> anyhow::Result<Vec<Check>> { $body };
        match run() {
            Ok(checks) => Criterion {
                id: $id,
                title: $title,
                checks,
            },
            Err(e) => failure($id, $title, e),
        }
    }};
}

/// Finite-space Fenchel identity.
pub fn criterion_1() -> Criterion {
    guarded!(1, "Fenchel identity", {
        let fs = FiniteSpace::new(vec![0.5, 0.5], vec![0.0, 3f64.ln()])?;
        let (v, nu) = finite_log_laplace(&fs);
        let brute = finite_fenchel_bruteforce(&fs, 10_000)?;
        Ok(vec![
            le("|log_laplace - log 2|", (v - 2f64.ln()).abs(), 1e-12),
            le("|bruteforce - log 2|", (brute - 2f64.ln()).abs(), 1e-7),
            le("|plug_in(nu*) - log_laplace|", (fs.fenchel_objective(&nu) - v).abs(), 1e-12),
        ])
    })
}

/// Linear optimum `f = δh`, `|h|² = 1`.
pub fn criterion_2() -> Criterion {
    guarded!(2, "linear optimum", {
        let g = TimeGrid::new(64)?;
        let b = sample_brownian(g, 100_000, 1, 1)?;
        let h = CMElement::constant(g, 1, 1.0);
        let f = FunctionalSpec::linear(h.clone());
        let opt = DriftPolicy::Deterministic(h.scaled(-1.0));
        let nll = mc_neg_log_laplace(&f, &b)?;
        let j = j_estimate(&f, &opt, &b)?;
        let logs = importance_log_samples(&f, &opt, &b)?;
        let samples: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![
            le("|nll + 0.5| / se", (nll.value + 0.5).abs() / nll.std_error, 3.0),
            le("|J(-h) + 0.5| / se", (j.value + 0.5).abs() / j.std_error, 3.0),
            le("importance relative spread", (hi - lo) / lo, 1e-12),
        ])
    })
}

/// Quadratic optimum through the Föllmer drift.
pub fn criterion_3() -> Criterion {
    guarded!(3, "quadratic optimum via Foellmer drift", {
        let g = TimeGrid::new(256)?;
        let rule = QuadratureRule::gauss_hermite(DEFAULT_QUAD_ORDER)?;
        let q = TerminalFn::Quadratic { beta: 1.0 };
        let mut worst = 0.0f64;
        for k in 0..g.n_steps() {
            let t = g.t(k);
            for j in 0..=60 {
                let x = -3.0 + 0.1 * j as f64;
                worst = worst.max((foellmer_drift_value(&q, &rule, t, x)? - x / (2.0 - t)).abs());
            }
        }
        let b = sample_brownian(g, 10_000, 1, 3)?;
        let f = FunctionalSpec::terminal_quadratic(1.0);
        let u = foellmer_for(&f, g, DEFAULT_QUAD_ORDER)?.negated();
        let j = j_estimate(&f, &u, &b)?;
        let tuned = importance_estimate(&f, &u, &b)?;
        let crude = importance_estimate(&f, &DriftPolicy::zero(g, 1), &b)?;
        Ok(vec![
            le("max |b_quad - x/(2-t)|", worst, 1e-6),
            le("|J - log(2)/2|", (j.value - HALF_LOG_2).abs(), (3.0 * j.std_error).max(0.01)),
            le("importance relative SD", tuned.relative_sd(), 0.01),
            ge("crude relative SD", crude.relative_sd(), 0.3),
        ])
    })
}

/// Entropy equals energy at the linear and quadratic optima.
pub fn criterion_4() -> Criterion {
    guarded!(4, "entropy equals energy at the optimum", {
        let g = TimeGrid::new(64)?;
        let b = sample_brownian(g, 100_000, 1, 1)?;
        let h = CMElement::constant(g, 1, 1.0);
        let f = FunctionalSpec::linear(h.clone());
        let lin = invertibility_probe(&f, &DriftPolicy::Deterministic(h.scaled(-1.0)), &b, None, None)?;
        let proxy = lin.entropy_proxy.clone().ok_or_else(|| anyhow::anyhow!("no entropy proxy"))?;
        let (d_lin, se_lin) = lin.entropy_minus_energy().expect("analytic target");

        let g = TimeGrid::new(256)?;
        let b = sample_brownian(g, 10_000, 1, 4)?;
        let fq = FunctionalSpec::terminal_quadratic(1.0);
        let u = foellmer_for(&fq, g, DEFAULT_QUAD_ORDER)?.negated();
        let quad = invertibility_probe(&fq, &u, &b, None, None)?;
        let (d_q, se_q) = quad.entropy_minus_energy().expect("analytic target");
        Ok(vec![
            le("linear |proxy - energy|", d_lin.abs(), (3.0 * se_lin).max(0.02)),
            le("linear |proxy - 0.5| / se", (proxy.value - 0.5).abs() / proxy.std_error, 3.0),
            le("linear |energy - 0.5|", (lin.energy.value - 0.5).abs(), (3.0 * lin.energy.std_error).max(1e-12)),
            le("quadratic |proxy - energy|", d_q.abs(), (3.0 * se_q).max(0.02)),
        ])
    })
}

const PROPERTY_CATALOG: [&str; 10] = [
    "linear:unit",
    "linear:ramp",
    "linear:c=0.5",
    "terminal:quadratic:beta=1",
    "terminal:quadratic:beta=0.5",
    "terminal:quadratic:beta=2",
    "terminal:linear:c=1",
    "terminal:linear:c=-0.5",
    "cosine:eps=0.5",
    "running:identity",
];

/// Entropy bound and variational lower bound over random pairs.
pub fn criterion_5() -> Criterion {
    guarded!(5, "entropy bound and variational lower bound", {
        let g = TimeGrid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst_gap = f64::INFINITY;
        let mut worst_entropy = f64::INFINITY;
        let mut gap_violations = 0;
        let mut entropy_violations = 0;
        let mut entropy_checked = 0;
        for trial in 0..25u64 {
            let f = FunctionalSpec::from_catalog(PROPERTY_CATALOG[trial as usize % PROPERTY_CATALOG.len()], g)?;
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = DriftPolicy::ParametricBasis(ParametricBasis::new(vec![Feature::One, Feature::X, Feature::T], false, g, theta)?);
            let b = BrownianBatch::streaming(g, 20_000, 1, 1000 + trial)?;
            let gap = gap_diagnostic(&f, &u, &b)?;
            let z = gap.gap / gap.gap_se;
            worst_gap = worst_gap.min(z);
            if !gap.lower_bound_holds(3.0) {
                gap_violations += 1;
            }
            if let Some(target) = f.analytic_log_target() {
                entropy_checked += 1;
                let ee = entropy_energy_report(&target, &u, &b)?;
                let se = combined_se(&ee.entropy_proxy, &ee.energy);
                let z = (ee.energy.value - ee.entropy_proxy.value) / se;
                worst_entropy = worst_entropy.min(z);
                if ee.entropy_proxy.value > ee.energy.value + 3.0 * se {
                    entropy_violations += 1;
                }
            }
        }
        Ok(vec![
            le("lower-bound violations (of 25)", gap_violations as f64, 0.0),
            ge("min gap / combined SE", worst_gap, -3.0),
            le(&format!("entropy-bound violations (of {entropy_checked})"), entropy_violations as f64, 0.0),
            ge("min (energy - proxy) / combined SE", worst_entropy, -3.0),
        ])
    })
}

/// Picard contraction and uniqueness for a small cosine functional.
pub fn criterion_6() -> Criterion {
    guarded!(6, "Picard contraction", {
        let g = TimeGrid::new(64)?;
        let b = sample_brownian(g, 10_000, 1, 6)?;
        let f = FunctionalSpec::scaled_cosine(0.1, CMElement::constant(g, 1, 1.0));
        let reg = RegressionSpec::default();
        let tol = 1e-3;
        let (_, state) = picard_solve(&f, &b, &reg, 0.0, 7)?;
        let r = &state.residuals;
        let worst_ratio = (0..4).map(|n| r[n + 1] / r[n]).fold(0.0, f64::max);

        let (u0, s0) = picard_solve(&f, &b, &reg, tol, 50)?;
        let start = DriftPolicy::ParametricBasis(ParametricBasis::new(vec![Feature::One, Feature::X], false, g, vec![0.4, -0.8])?);
        let (u1, s1) = picard_solve_from(&f, start, &b, &reg, tol, 50)?;
        let dist = policy_distance_sq(&u0, &u1, &b)?;
        let fixed = fixed_point_residual(&f, &u0, &b, &reg)?;
        Ok(vec![
            le("max r_{n+1}/r_n, n = 1..4", worst_ratio, 0.3),
            ge("both starts converged", f64::from(u8::from(s0.converged && s1.converged)), 1.0),
            le("mean-square distance between starts", dist.value, 4.0 * tol * tol),
            le("fixed-point residual", fixed.value, 1e-3),
        ])
    })
}

type TestFn = fn(&[f64]) -> f64;

fn terminal(p: &[f64]) -> f64 {
    p.iter().sum()
}

fn terminal_sq(p: &[f64]) -> f64 {
    terminal(p).powi(2)
}

fn clipped_max(p: &[f64]) -> f64 {
    let mut w = 0.0f64;
    let mut best = 0.0f64;
    for x in p {
        w += x;
        best = best.max(w);
    }
    best.min(2.0)
}

/// Discrete Girsanov identity over policies and test functions.
pub fn criterion_7() -> Criterion {
    guarded!(7, "Girsanov identity suite", {
        let g = TimeGrid::new(32)?;
        let m = 100_000;
        let b = sample_brownian(g, m, 1, 7)?;
        let policies = vec![
            DriftPolicy::zero(g, 1),
            DriftPolicy::Deterministic(CMElement::from_fn(g, |t| 1.0 - 2.0 * t)?),
            DriftPolicy::MarkovFeedback(MarkovFeedback::linear(-1.0, 0.0)),
            DriftPolicy::MarkovFeedback(MarkovFeedback::linear(-0.5, 0.3)),
            DriftPolicy::ParametricBasis(ParametricBasis::new(vec![Feature::One, Feature::X, Feature::TX], false, g, vec![0.3, -0.4, 0.2])?),
        ];
        let tests: [TestFn; 3] = [terminal, terminal_sq, clipped_max];
        let plain: Vec<Vec<f64>> = tests.iter().map(|t| (0..m).map(|i| t(&b.path(i))).collect()).collect();
        let mut worst = 0.0f64;
        let mut violations = 0;
        let mut zero_weights_exact = true;
        for (pi, policy) in policies.iter().enumerate() {
            let s = apply_shift(&b, policy)?;
            let w: Vec<f64> = (0..m).map(|i| s.log_weight(i).exp()).collect();
            if pi == 0 {
                zero_weights_exact = w.iter().all(|x| *x == 1.0);
            }
            for (ti, t) in tests.iter().enumerate() {
                let diff: Vec<f64> = (0..m).map(|i| t(s.shifted_path(i)) * w[i] - plain[ti][i]).collect();
                let (d, se) = mean_and_se(&diff);
                let z = if se > 0.0 { d.abs() / se } else { d.abs() };
                worst = worst.max(z);
                if d.abs() > 3.0 * se {
                    violations += 1;
                }
            }
        }
        Ok(vec![
            le("violations (of 15)", violations as f64, 0.0),
            le("max |difference| / paired SE", worst, 3.0),
            ge("zero-policy weights equal 1 bitwise", f64::from(u8::from(zero_weights_exact)), 1.0),
        ])
    })
}

/// Conditioned-interval experiment.
pub fn criterion_8() -> Criterion {
    guarded!(8, "conditioned-interval experiment", {
        let g = TimeGrid::new(512)?;
        let ex = conditioned_interval_experiment(0.5, g, 100_000, 8)?;
        let table_complete = ex.by_cap.len() == 3 && ex.by_cap.iter().all(|c| c.energy.std_error.is_finite() && c.energy.std_error > 0.0);
        let mut checks = vec![
            ge("terminal membership", ex.report.terminal_membership, 0.995),
            le("|-log mu(A) - 0.95997|", (ex.neg_log_mass - 0.95997).abs(), 5e-4),
            le("KS distance to rejection sample", ex.ks_statistic, 0.02),
            ge("energy table emitted with SEs", f64::from(u8::from(table_complete)), 1.0),
        ];
        for c in &ex.by_cap {
            checks.push(Check {
                name: format!("energy at t_max = {:.6}", c.t_max),
                measured: c.energy.value,
                requirement: format!("measured, se {:.2e}, membership {:.4}", c.energy.std_error, c.terminal_membership),
                passed: true,
            });
        }
        Ok(checks)
    })
}

pub const SUITES: [&str; 4] = ["identities", "optima", "picard", "interval"];

/// Criteria run by `wienervar verify <suite>`.
pub fn suite(name: &str) -> Option<Vec<fn() -> Criterion>> {
    Some(match name {
        "identities" => vec![criterion_1, criterion_5, criterion_7],
        "optima" => vec![criterion_2, criterion_3, criterion_4],
        "picard" => vec![criterion_6],
        "interval" => vec![criterion_8],
        _ => return None,
    })
}
