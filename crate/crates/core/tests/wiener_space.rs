use proptest::prelude::*;
use wienervar::stats::{mean_and_se, sample_sd};
use wienervar::wiener::{h_norm_sq, sample_brownian, terminal_value, wick_exp, wiener_integral, BrownianBatch, CMElement, TimeGrid};

#[test]
fn increments_have_brownian_moments() {
    let g = TimeGrid::new(64).unwrap();
    let m = 100_000;
    let b = sample_brownian(g, m, 1, 11).unwrap();
    let mut all = Vec::with_capacity(m * 64);
    let mut terminal = Vec::with_capacity(m);
    for i in 0..m {
        let p = b.path(i);
        all.extend_from_slice(&p);
        terminal.push(p.iter().sum::<f64>());
    }
    let (mean, _) = mean_and_se(&all);
    assert!(mean.abs() <= 4.0 * (g.dt() / m as f64).sqrt());
    let var = sample_sd(&all).powi(2);
    assert!((var / g.dt() - 1.0).abs() < 0.05);
    let var1 = sample_sd(&terminal).powi(2);
    assert!((var1 - 1.0).abs() < 0.05);
}

#[test]
fn ito_isometry_and_wick_mean() {
    let g = TimeGrid::new(64).unwrap();
    let m = 100_000;
    let b = sample_brownian(g, m, 1, 12).unwrap();
    for h in [CMElement::constant(g, 1, 1.0), CMElement::from_fn(g, |t| 2.0 * (3.0 * t).sin()).unwrap()] {
        let norm = h_norm_sq(&h);
        let dh: Vec<f64> = (0..m).map(|i| wiener_integral(&h, g, &b.path(i)).unwrap()).collect();
        let (mean, _) = mean_and_se(&dh);
        assert!(mean.abs() <= 4.0 * (norm / m as f64).sqrt());
        assert!((sample_sd(&dh).powi(2) / norm - 1.0).abs() < 0.05);
        let rho: Vec<f64> = (0..m).map(|i| wick_exp(&h, g, &b.path(i)).unwrap()).collect();
        let (mr, se) = mean_and_se(&rho);
        assert!((mr - 1.0).abs() <= 3.0 * se, "{mr} ± {se}");
    }
}

#[test]
fn cameron_martin_shift_identity() {
    let g = TimeGrid::new(32).unwrap();
    let m = 100_000;
    let b = sample_brownian(g, m, 1, 13).unwrap();
    let h = CMElement::constant(g, 1, 0.7);
    let shifted: Vec<f64> = (0..m).map(|i| b.terminal(i)[0] + 0.7).collect();
    let weighted: Vec<f64> = (0..m)
        .map(|i| {
            let p = b.path(i);
            p.iter().sum::<f64>() * wick_exp(&h, g, &p).unwrap()
        })
        .collect();
    let (a, sa) = mean_and_se(&shifted);
    let (c, sc) = mean_and_se(&weighted);
    assert!((a - c).abs() <= 3.0 * (sa * sa + sc * sc).sqrt());
}

#[test]
fn riemann_norm_of_ramp() {
    let g = TimeGrid::new(256).unwrap();
    let h = CMElement::from_fn(g, |t| t).unwrap();
    assert!((h_norm_sq(&h) - 1.0 / 3.0).abs() < 1.0 / 256.0);
    assert_eq!(h_norm_sq(&CMElement::constant(g, 1, 1.0)), 1.0);
    assert_eq!(h_norm_sq(&CMElement::zero(g, 1)), 0.0);
}

#[test]
fn synthetic_path_integral() {
    let g = TimeGrid::new(16).unwrap();
    let path = vec![g.dt(); 16];
    let h = CMElement::constant(g, 1, 1.0);
    assert!((wiener_integral(&h, g, &path).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(wiener_integral(&CMElement::zero(g, 1), g, &path).unwrap(), 0.0);
    assert_eq!(wick_exp(&CMElement::zero(g, 1), g, &path).unwrap(), 1.0);
}

#[test]
fn sampling_is_a_pure_function_of_its_key() {
    let g = TimeGrid::new(8).unwrap();
    let a = sample_brownian(g, 4, 1, 7).unwrap();
    let b = sample_brownian(g, 4, 1, 7).unwrap();
    for i in 0..4 {
        assert_eq!(a.path(i), b.path(i));
    }
    let c = sample_brownian(g, 4, 1, 8).unwrap();
    assert_ne!(a.path(0), c.path(0));
    // a larger batch shares its prefix
    let d = sample_brownian(g, 10, 1, 7).unwrap();
    assert_eq!(a.path(3), d.path(3));
}

proptest! {
    #[test]
    fn norm_is_nonnegative_and_vanishes_only_at_zero(vals in prop::collection::vec(-5.0f64..5.0, 8)) {
        let g = TimeGrid::new(8).unwrap();
        let h = CMElement::new(g, 1, vals.clone()).unwrap();
        let n = h_norm_sq(&h);
        prop_assert!(n >= 0.0);
        prop_assert_eq!(n == 0.0, vals.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wiener_integral_is_linear(a in -3.0f64..3.0, seed in 0u64..1000) {
        let g = TimeGrid::new(16).unwrap();
        let b = sample_brownian(g, 1, 1, seed).unwrap();
        let p = b.path(0);
        let h = CMElement::from_fn(g, |t| 1.0 - t).unwrap();
        let lhs = wiener_integral(&h.scaled(a), g, &p).unwrap();
        let rhs = a * wiener_integral(&h, g, &p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn streaming_equals_materialized(seed in 0u64..10_000, m in 1usize..20, dims in 1usize..3) {
        let g = TimeGrid::new(8).unwrap();
        let a = sample_brownian(g, m, dims, seed).unwrap();
        let s = BrownianBatch::streaming(g, m, dims, seed).unwrap();
        for i in 0..m {
            prop_assert_eq!(a.path(i), s.path(i));
            prop_assert_eq!(a.terminal(i), terminal_value(&s.path(i), dims));
        }
    }
}
