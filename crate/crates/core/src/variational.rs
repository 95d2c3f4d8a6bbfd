//! Variational identities: the finite-space Fenchel duality, Monte Carlo
//! estimators of `−log E[e^{−f}]` and of `J(u) = E[f∘U + ½|u|²_H]`, the
//! variational gap and entropy-versus-energy reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::functionals::FunctionalSpec;
use crate::girsanov::{map_shifted, DriftPolicy};
use crate::stats::{combined_se, par_map_paths, EstimateMethod, EstimateReport};
use crate::wiener::{BrownianBatch, TimeGrid};

const MAX_FINITE_POINTS: usize = 12;
const MAX_GRID_POINTS: usize = 4;

/// Probability vector `γ` on at most 12 points with values `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    gamma: Vec<f64>,
    values: Vec<f64>,
}

impl FiniteSpace {
    pub fn new(gamma: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.len() > MAX_FINITE_POINTS {
            return invalid(format!("finite space needs 1..={MAX_FINITE_POINTS} points, got {}", gamma.len()));
        }
        if gamma.len() != values.len() {
            return invalid("gamma and f must have the same length");
        }
        if gamma.iter().any(|g| !(*g > 0.0)) {
            return invalid("all weights must be strictly positive");
        }
        let total: f64 = gamma.iter().sum();
        if (total - 1.0).abs() > 1e-15 {
            return invalid(format!("weights sum to {total}, not 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("values must be finite");
        }
        Ok(Self { gamma, values })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.gamma.len()
    }
    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// `∫f dν − H(ν|γ)` with `0·log 0 = 0`.
    pub fn fenchel_objective(&self, nu: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((n, g), f) in nu.iter().zip(&self.gamma).zip(&self.values) {
            if *n > 0.0 {
                acc += n * f - n * (n / g).ln();
            }
        }
        acc
    }
}

/// `log Σ γ_i e^{f_i}` and the maximizing measure `ν*_i ∝ γ_i e^{f_i}`.
pub fn finite_log_laplace(fs: &FiniteSpace) -> (f64, Vec<f64>) {
    let logs: Vec<f64> = fs.gamma.iter().zip(&fs.values).map(|(g, f)| g.ln() + f).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let nu = logs.iter().map(|l| (l - lse).exp()).collect();
    (lse, nu)
}

fn compositions(n: usize, total: usize, prefix: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if n == 1 {
        prefix.push(total);
        visit(prefix);
        prefix.pop();
        return;
    }
    for k in 0..=total {
        prefix.push(k);
        compositions(n - 1, total - k, prefix, visit);
        prefix.pop();
    }
}

/// Brute-force supremum of `∫f dν − H(ν|γ)` over candidate measures.
///
/// For `n ≤ 4` the candidates are the simplex grid with the given resolution
/// (cost grows like `resolution^(n−1)`). Beyond that only `ν*` and
/// `resolution` seeded log-normal perturbations of it are scored.
pub fn finite_fenchel_bruteforce(fs: &FiniteSpace, grid_resolution: usize) -> Result<f64> {
    if grid_resolution < 2 {
        return invalid(format!("grid resolution must be at least 2, got {grid_resolution}"));
    }
    let n = fs.len();
    let mut best = f64::NEG_INFINITY;
    if n <= MAX_GRID_POINTS {
        let r = grid_resolution as f64;
        let mut nu = vec![0.0; n];
        compositions(n, grid_resolution, &mut Vec::with_capacity(n), &mut |c| {
            for (slot, k) in nu.iter_mut().zip(c) {
                *slot = *k as f64 / r;
            }
            best = best.max(fs.fenchel_objective(&nu));
        });
        return Ok(best);
    }
    let (_, star) = finite_log_laplace(fs);
    best = best.max(fs.fenchel_objective(&star));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..grid_resolution {
        let mut cand: Vec<f64> = star.iter().map(|s| s * (0.5 * (rng.random::<f64>() - 0.5)).exp()).collect();
        let z: f64 = cand.iter().sum();
        cand.iter_mut().for_each(|c| *c /= z);
        best = best.max(fs.fenchel_objective(&cand));
    }
    Ok(best)
}

/// `−log Ê[e^{−f(W)}]` over the base paths; `+∞` values contribute zeros.
pub fn mc_neg_log_laplace(f: &FunctionalSpec, batch: &BrownianBatch) -> Result<EstimateReport> {
    let logs = neg_f_samples(f, batch)?;
    Ok(EstimateReport::neg_log_mean_of_logs(&logs))
}

fn neg_f_samples(f: &FunctionalSpec, batch: &BrownianBatch) -> Result<Vec<f64>> {
    let grid = batch.grid();
    let dims = batch.dims();
    par_map_paths(batch.m_paths(), |i| f.eval(grid, dims, &batch.path(i)).map(|v| -v))
        .into_iter()
        .collect()
}

/// `Ĵ(u) = Ê[f(U) + ½|u|²_H]`.
pub fn j_estimate(f: &FunctionalSpec, policy: &DriftPolicy, batch: &BrownianBatch) -> Result<EstimateReport> {
    let samples = j_samples(f, policy, batch)?;
    Ok(EstimateReport::from_samples(&samples, EstimateMethod::JFunctional))
}

pub(crate) fn j_samples(f: &FunctionalSpec, policy: &DriftPolicy, batch: &BrownianBatch) -> Result<Vec<f64>> {
    let grid = batch.grid();
    let dims = batch.dims();
    map_shifted(policy, batch, None, |_, _, s| Ok(f.eval(grid, dims, &s.shifted)? + 0.5 * s.norm_sq))
}

/// Paired estimate of `J(a) − J(b)` on one batch.
pub fn j_difference(f: &FunctionalSpec, a: &DriftPolicy, b: &DriftPolicy, batch: &BrownianBatch) -> Result<EstimateReport> {
    let ja = j_samples(f, a, batch)?;
    let jb = j_samples(f, b, batch)?;
    let d: Vec<f64> = ja.iter().zip(&jb).map(|(x, y)| x - y).collect();
    Ok(EstimateReport::from_samples(&d, EstimateMethod::PairedDifference))
}

/// Empirical mean of `e^{−f}·|∇f⁻|²_H`, reported as a descriptive tamedness
/// indicator (it cannot certify finiteness).
pub fn log_sobolev_indicator(f: &FunctionalSpec, batch: &BrownianBatch) -> Result<EstimateReport> {
    let grid = batch.grid();
    let dims = batch.dims();
    let samples: Result<Vec<f64>> = par_map_paths(batch.m_paths(), |i| {
        let path = batch.path(i);
        let v = f.eval(grid, dims, &path)?;
        if v >= 0.0 {
            return Ok(0.0);
        }
        let d = f.malliavin_density(grid, dims, &path)?;
        let sq: f64 = d.values.iter().map(|x| x * x).sum::<f64>() * grid.dt();
        Ok((-v).exp() * sq)
    })
    .into_iter()
    .collect();
    Ok(EstimateReport::from_samples(&samples?, EstimateMethod::CrudeMean))
}

/// Estimates behind the variational lower bound `−log E[e^{−f}] ≤ J(u)`.
#[derive(Debug, Clone, Serialize)]
#[serde(into = "GapReportJson")]
pub struct GapReport {
    pub j_value: EstimateReport,
    pub neg_log_laplace: EstimateReport,
    pub gap: f64,
    /// `sqrt(se_j² + se_nll²)`.
    pub gap_se: f64,
    /// `½Ê|u|²_H`.
    pub energy: EstimateReport,
    /// `Ê[log L(U)]`, when `L` is known in closed form.
    pub entropy_proxy: Option<EstimateReport>,
    pub n_inf_samples: usize,
}

#[derive(Serialize)]
struct GapReportJson {
    j: f64,
    j_se: f64,
    nll: f64,
    nll_se: f64,
    gap: f64,
    energy: f64,
    entropy_proxy: Option<f64>,
    n_inf_samples: usize,
}

impl From<GapReport> for GapReportJson {
    fn from(r: GapReport) -> Self {
        Self {
            j: r.j_value.value,
            j_se: r.j_value.std_error,
            nll: r.neg_log_laplace.value,
            nll_se: r.neg_log_laplace.std_error,
            gap: r.gap,
            energy: r.energy.value,
            entropy_proxy: r.entropy_proxy.map(|e| e.value),
            n_inf_samples: r.n_inf_samples,
        }
    }
}

impl GapReport {
    /// Lower bound holds up to `k` combined standard errors.
    pub fn lower_bound_holds(&self, k: f64) -> bool {
        self.gap >= -k * self.gap_se
    }
}

#[derive(Clone, Copy)]
struct PathTerms {
    j: f64,
    energy: f64,
    log_target: f64,
}

/// Assemble the gap between `Ĵ(u)` and `−log Ê[e^{−f}]`.
pub fn gap_diagnostic(f: &FunctionalSpec, policy: &DriftPolicy, batch: &BrownianBatch) -> Result<GapReport> {
    let nll = mc_neg_log_laplace(f, batch)?;
    let grid = batch.grid();
    let dims = batch.dims();
    let target = f.analytic_log_target();
    let terms = map_shifted(policy, batch, None, |_, _, s| {
        let fu = f.eval(grid, dims, &s.shifted)?;
        let log_target = target.as_ref().map_or(f64::NAN, |t| t(grid, dims, &s.shifted));
        Ok(PathTerms {
            j: fu + 0.5 * s.norm_sq,
            energy: 0.5 * s.norm_sq,
            log_target,
        })
    })?;
    let j: Vec<f64> = terms.iter().map(|t| t.j).collect();
    let e: Vec<f64> = terms.iter().map(|t| t.energy).collect();
    let j_value = EstimateReport::from_samples(&j, EstimateMethod::JFunctional);
    let energy = EstimateReport::from_samples(&e, EstimateMethod::Energy);
    let entropy_proxy = target.is_some().then(|| {
        let l: Vec<f64> = terms.iter().map(|t| t.log_target).collect();
        let n_neg_inf = l.iter().filter(|x| **x == f64::NEG_INFINITY).count();
        if n_neg_inf > 0 {
            EstimateReport {
                value: f64::NEG_INFINITY,
                std_error: f64::INFINITY,
                n_samples: l.len(),
                method: EstimateMethod::EntropyProxy,
                n_infinite: n_neg_inf,
                degenerate: false,
            }
        } else {
            EstimateReport::from_samples(&l, EstimateMethod::EntropyProxy)
        }
    });
    Ok(GapReport {
        gap: j_value.value - nll.value,
        gap_se: combined_se(&j_value, &nll),
        n_inf_samples: j_value.n_infinite,
        j_value,
        neg_log_laplace: nll,
        energy,
        entropy_proxy,
    })
}

/// Entropy proxy `Ê[log L(U)]` against the energy `½Ê|u|²_H`.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyEnergyReport {
    pub entropy_proxy: EstimateReport,
    pub energy: EstimateReport,
    /// Paired per-path `log L(U) − ½|u|²_H`.
    pub difference: EstimateReport,
}

impl EntropyEnergyReport {
    /// Entropy bound `proxy ≤ energy` up to `k` paired standard errors.
    pub fn entropy_bound_holds(&self, k: f64) -> bool {
        self.difference.value <= k * self.difference.std_error + 1e-12
    }
}

pub fn entropy_energy_report(
    target_log_density: &(dyn Fn(TimeGrid, usize, &[f64]) -> f64 + Sync),
    policy: &DriftPolicy,
    batch: &BrownianBatch,
) -> Result<EntropyEnergyReport> {
    let grid = batch.grid();
    let dims = batch.dims();
    let pairs = map_shifted(policy, batch, None, |_, _, s| {
        Ok((target_log_density(grid, dims, &s.shifted), 0.5 * s.norm_sq))
    })?;
    let l: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let e: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(EntropyEnergyReport {
        entropy_proxy: EstimateReport::from_samples(&l, EstimateMethod::EntropyProxy),
        energy: EstimateReport::from_samples(&e, EstimateMethod::Energy),
        difference: EstimateReport::from_samples(&d, EstimateMethod::PairedDifference),
    })
}

/// `μ(A)` and `−log μ(A)` for `A = {w : |w(1)| ≤ a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicatorMass {
    pub mass: f64,
    pub neg_log_mass: f64,
}

pub fn indicator_normalizer(a: f64) -> Result<IndicatorMass> {
    if !(a > 0.0) {
        return invalid(format!("interval half-width must be positive, got {a}"));
    }
    let mass = libm::erf(a / std::f64::consts::SQRT_2);
    // −log μ(A) via erfc keeps precision when μ(A) is close to 1.
    let tail = libm::erfc(a / std::f64::consts::SQRT_2);
    Ok(IndicatorMass {
        mass,
        neg_log_mass: -(-tail).ln_1p(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiener::{sample_brownian, CMElement};

    #[test]
    fn finite_examples() {
        let fs = FiniteSpace::new(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let (v, nu) = finite_log_laplace(&fs);
        assert_eq!(v, 0.0);
        assert_eq!(nu, vec![0.5, 0.5]);

        let fs = FiniteSpace::new(vec![0.5, 0.5], vec![0.0, 3f64.ln()]).unwrap();
        let (v, nu) = finite_log_laplace(&fs);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!((nu[0] - 0.25).abs() < 1e-15 && (nu[1] - 0.75).abs() < 1e-15);

        let fs = FiniteSpace::new(vec![0.2, 0.3, 0.5], vec![1.0, -1.0, 0.0]).unwrap();
        let direct = (0.2 * 1f64.exp() + 0.3 * (-1f64).exp() + 0.5).ln();
        assert!((finite_log_laplace(&fs).0 - direct).abs() < 1e-15);
        assert!((direct.exp() - 1.154_020_198).abs() < 1e-9);
    }

    #[test]
    fn finite_space_validation() {
        assert!(FiniteSpace::new(vec![0.5, 0.6], vec![0.0, 0.0]).is_err());
        assert!(FiniteSpace::new(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(FiniteSpace::new(vec![1.0 / 13.0; 13], vec![0.0; 13]).is_err());
        let fs = FiniteSpace::new(vec![0.5, 0.5], vec![0.0, 1.0]).unwrap();
        assert!(finite_fenchel_bruteforce(&fs, 1).is_err());
    }

    #[test]
    fn jensen_at_gamma_and_plug_in_at_optimum() {
        let fs = FiniteSpace::new(vec![0.2, 0.3, 0.5], vec![1.0, -1.0, 0.0]).unwrap();
        let (v, nu) = finite_log_laplace(&fs);
        let mean_f: f64 = fs.gamma().iter().zip(fs.values()).map(|(g, f)| g * f).sum();
        assert!((fs.fenchel_objective(fs.gamma()) - mean_f).abs() < 1e-15);
        assert!(mean_f <= v);
        assert!((fs.fenchel_objective(&nu) - v).abs() < 1e-12);
    }

    #[test]
    fn large_space_uses_perturbations() {
        let gamma = vec![1.0 / 8.0; 8];
        let values: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let fs = FiniteSpace::new(gamma, values).unwrap();
        let (v, _) = finite_log_laplace(&fs);
        let b = finite_fenchel_bruteforce(&fs, 200).unwrap();
        assert!(b <= v + 1e-12);
        assert!((b - v).abs() < 1e-12);
    }

    #[test]
    fn constant_functional_is_exact() {
        let g = TimeGrid::new(8).unwrap();
        let b = sample_brownian(g, 50, 1, 1).unwrap();
        for c in [0.0, 1.5, -2.25, 7.1] {
            let r = mc_neg_log_laplace(&FunctionalSpec::constant(c), &b).unwrap();
            assert_eq!(r.value, c);
        }
    }

    #[test]
    fn indicator_normalizer_values() {
        assert!((indicator_normalizer(10.0).unwrap().mass - 1.0).abs() < 1e-15);
        assert!((indicator_normalizer(1.96).unwrap().mass - 0.95).abs() < 5e-4);
        assert!(indicator_normalizer(0.0).is_err());
        assert!(indicator_normalizer(-1.0).is_err());
    }

    #[test]
    fn zero_policy_unit_density_is_all_zero() {
        let g = TimeGrid::new(16).unwrap();
        let b = sample_brownian(g, 100, 1, 4).unwrap();
        let r = entropy_energy_report(&|_, _, _| 0.0, &DriftPolicy::zero(g, 1), &b).unwrap();
        assert_eq!(r.entropy_proxy.value, 0.0);
        assert_eq!(r.energy.value, 0.0);
        assert_eq!(r.difference.value, 0.0);
    }

    #[test]
    fn j_with_infinite_samples_is_infinite() {
        let g = TimeGrid::new(16).unwrap();
        let b = sample_brownian(g, 200, 1, 4).unwrap();
        let f = FunctionalSpec::indicator_terminal(0.5).unwrap();
        let r = j_estimate(&f, &DriftPolicy::zero(g, 1), &b).unwrap();
        assert_eq!(r.value, f64::INFINITY);
        assert!(r.n_infinite > 0);
    }

    #[test]
    fn gap_report_json_fields() {
        let g = TimeGrid::new(16).unwrap();
        let b = sample_brownian(g, 200, 1, 4).unwrap();
        let f = FunctionalSpec::linear(CMElement::constant(g, 1, 1.0));
        let r = gap_diagnostic(&f, &DriftPolicy::zero(g, 1), &b).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["energy", "entropy_proxy", "gap", "j", "j_se", "n_inf_samples", "nll", "nll_se"]);
    }
}
