//! Optimal and near-optimal adapted drifts.
//!
//! * [`foellmer_terminal_drift`]: the drift `E[g′ e^{−g}]/E[e^{−g}]` of the
//!   heat semigroup for terminal functionals, by Gauss–Hermite quadrature.
//! * [`htransform_interval_drift`]: the Doob h-transform drift conditioning
//!   `W(1)` to `[−a, a]`.
//! * [`picard_step`] / [`picard_solve`]: the fixed point `u̇_t = −E[D_t f∘U | F_t]`
//!   with the conditional expectation replaced by per-step least squares on
//!   features of `W(t_k)`.
//! * [`grad_descent_optimize`]: descent on `θ ↦ Ĵ(θ)` for a parametric basis.
//!
//! Sign convention: `foellmer_terminal_drift` returns `v̇`; the optimally
//! shifted process solves `dU = −v̇(U) dt + dW`, i.e. its drift is `−v̇`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::{FunctionalKind, FunctionalSpec, TerminalFn};
use crate::girsanov::{map_shifted, shift_one, DriftPolicy, FeedbackDescriptor, Feature, MarkovFeedback, ParametricBasis, RegressionTable};
use crate::stats::{pairwise_sum, EstimateMethod, EstimateReport};
use crate::variational::j_estimate;
use crate::wiener::{cumulative, BrownianBatch, CMElement, TimeGrid};

/// Clamp applied to exploding drifts.
pub const B_CLAMP: f64 = 1e3;

pub const DEFAULT_QUAD_ORDER: usize = 20;

/// Gauss–Hermite rule for `∫ φ(z) N(dz)` (probabilists' weight, total mass 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
    /// probabilists' Hermite recurrence, weights the squared first components
    /// of the eigenvectors.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return invalid("quadrature order must be positive");
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize: the rule is exactly symmetric about 0.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let node = 0.5 * (pairs[j].0 - pairs[i].0);
            let weight = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-node, weight);
            pairs[j] = (node, weight);
        }
        if order % 2 == 1 {
            pairs[order / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(z, w)| w * f(*z)).sum()
    }
}

/// `v̇(t, x) = E[g′(Y) e^{−g(Y)}] / E[e^{−g(Y)}]` with `Y = x + √(1−t) Z`,
/// accumulated in log space.
pub fn foellmer_drift_value(g: &TerminalFn, quad: &QuadratureRule, t: f64, x: f64) -> Result<f64> {
    if !(t < 1.0) {
        return invalid(format!("Föllmer drift needs t < 1, got {t}"));
    }
    Ok(foellmer_unchecked(g, quad, t, x))
}

fn foellmer_unchecked(g: &TerminalFn, quad: &QuadratureRule, t: f64, x: f64) -> f64 {
    let sigma = (1.0 - t).sqrt();
    let mut logs = Vec::with_capacity(quad.order());
    let mut max = f64::NEG_INFINITY;
    for (z, w) in quad.nodes.iter().zip(&quad.weights) {
        let l = w.ln() - g.value(x + sigma * z);
        max = max.max(l);
        logs.push(l);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, z) in logs.iter().zip(&quad.nodes) {
        let e = (l - max).exp();
        num += g.derivative(x + sigma * z) * e;
        den += e;
    }
    num / den
}

/// Föllmer drift `v̇` for `f = g(W(1))` as a Markov feedback, time-capped at
/// `1 − dt`.
pub fn foellmer_terminal_drift(g: &TerminalFn, grid: TimeGrid, quad: &QuadratureRule) -> Result<DriftPolicy> {
    let g2 = g.clone();
    let q2 = quad.clone();
    let name = FunctionalSpec::terminal(g.clone()).name();
    let fb = MarkovFeedback::scalar(
        FeedbackDescriptor::Foellmer {
            functional: name,
            quad_order: quad.order(),
        },
        move |t, x| foellmer_unchecked(&g2, &q2, t, x),
    )
    .with_time_cap(1.0 - grid.dt());
    Ok(DriftPolicy::MarkovFeedback(fb))
}

/// Föllmer drift for a catalog functional of terminal kind.
pub fn foellmer_for(f: &FunctionalSpec, grid: TimeGrid, quad_order: usize) -> Result<DriftPolicy> {
    match (f.kind(), f.offsets()) {
        (FunctionalKind::Terminal(g), []) => foellmer_terminal_drift(g, grid, &QuadratureRule::gauss_hermite(quad_order)?),
        _ => invalid(format!("Föllmer drift needs an offset-free terminal functional, got `{}`", f.name())),
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_phi(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `log Φ(z)`, accurate deep into the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    use libm::erfc;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if z > 0.0 {
        (-0.5 * erfc(z * r)).ln_1p()
    } else if z > -30.0 {
        (0.5 * erfc(-z * r)).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) + 105.0 / (z2 * z2 * z2 * z2);
        log_phi(z) - (-z).ln() + series.ln()
    }
}

/// `∂ₓ log P(|W(1)| ≤ a | W(t) = x)`, unclamped. Odd in `x`.
pub fn interval_log_h_gradient(a: f64, t: f64, x: f64) -> f64 {
    let sigma = (1.0 - t).sqrt();
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let upper = (a - x) / sigma;
    let lower = (-a - x) / sigma;
    let lu = log_ndtr(upper);
    let ll = log_ndtr(lower);
    let log_den = lu + (-(ll - lu).exp()).ln_1p();
    let ratio = (log_phi(upper) - log_den).exp() - (log_phi(lower) - log_den).exp();
    -sign * ratio / sigma
}

/// h-transform drift for `A = {|W(1)| ≤ a}`: the process `dX = b(t, X) dt + dW`
/// has the conditioned law. Clamped at [`B_CLAMP`], time-capped at `1 − dt`.
pub fn htransform_interval_drift(a: f64, grid: TimeGrid) -> Result<DriftPolicy> {
    if !(a > 0.0) {
        return invalid(format!("interval half-width must be positive, got {a}"));
    }
    let fb = MarkovFeedback::scalar(FeedbackDescriptor::IntervalHTransform { a, clamp: B_CLAMP }, move |t, x| {
        let b = interval_log_h_gradient(a, t, x);
        if b.is_nan() {
            0.0
        } else {
            b.clamp(-B_CLAMP, B_CLAMP)
        }
    })
    .with_time_cap(1.0 - grid.dt());
    Ok(DriftPolicy::MarkovFeedback(fb))
}

/// Features and ridge strength for the per-step projections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSpec {
    pub features: Vec<Feature>,
    /// Per-sample ridge penalty on every non-constant feature.
    pub ridge: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            features: vec![Feature::One, Feature::X, Feature::X2, Feature::X3],
            ridge: 1e-10,
        }
    }
}

impl RegressionSpec {
    pub fn with_features(features: Vec<Feature>) -> Self {
        Self {
            features,
            ..Self::default()
        }
    }
}

const CHUNK: usize = 256;

struct NormalEquations {
    xtx: Vec<f64>,
    xty: Vec<f64>,
}

/// Fit `Y_k ≈ Σ_j c_{k,j} φ_j(t_k, x_k)` for every step from per-path
/// `(x_k, y_k)` rows, reducing chunks in a fixed order.
fn fit_per_step(
    grid: TimeGrid,
    reg: &RegressionSpec,
    m: usize,
    rows: impl Fn(usize) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    let nf = reg.features.len();
    let chunks: Result<Vec<NormalEquations>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut ne = NormalEquations {
                xtx: vec![0.0; n * nf * nf],
                xty: vec![0.0; n * nf],
            };
            let mut phi = vec![0.0; nf];
            for i in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let (xs, ys) = rows(i)?;
                for k in 0..n {
                    let t = grid.t(k);
                    for (p, f) in phi.iter_mut().zip(&reg.features) {
                        *p = f.value(t, xs[k]);
                    }
                    let a = &mut ne.xtx[k * nf * nf..(k + 1) * nf * nf];
                    for r in 0..nf {
                        for s in 0..nf {
                            a[r * nf + s] += phi[r] * phi[s];
                        }
                    }
                    for r in 0..nf {
                        ne.xty[k * nf + r] += phi[r] * ys[k];
                    }
                }
            }
            Ok(ne)
        })
        .collect();
    let chunks = chunks?;
    let mut xtx = vec![0.0; n * nf * nf];
    let mut xty = vec![0.0; n * nf];
    for ne in &chunks {
        xtx.iter_mut().zip(&ne.xtx).for_each(|(a, b)| *a += b);
        xty.iter_mut().zip(&ne.xty).for_each(|(a, b)| *a += b);
    }
    let inv_m = 1.0 / m as f64;
    let mut coefficients = vec![0.0; n * nf];
    for k in 0..n {
        let mut a = DMatrix::from_row_slice(nf, nf, &xtx[k * nf * nf..(k + 1) * nf * nf]) * inv_m;
        for (j, f) in reg.features.iter().enumerate() {
            if *f != Feature::One {
                a[(j, j)] += reg.ridge;
            }
        }
        let rhs = DVector::from_column_slice(&xty[k * nf..(k + 1) * nf]) * inv_m;
        let chol = a.cholesky().ok_or(Error::RankDeficient { step: k })?;
        let sol = chol.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::RankDeficient { step: k });
        }
        coefficients[k * nf..(k + 1) * nf].copy_from_slice(sol.as_slice());
    }
    Ok(coefficients)
}

/// One Picard step: shift with `u_n`, regress `D_{t_k} f(U_n)` on features of
/// the base `W(t_k)`, and return `u̇_{n+1,k} = −fitted(t_k, W(t_k))`.
pub fn picard_step(f: &FunctionalSpec, u_n: &DriftPolicy, batch: &BrownianBatch, reg: &RegressionSpec) -> Result<DriftPolicy> {
    if !f.has_density() {
        return Err(Error::NoDensity(f.name()));
    }
    if batch.dims() != 1 {
        return invalid("Picard iteration is implemented for scalar paths");
    }
    let grid = batch.grid();
    u_n.check_compatible(grid, 1)?;
    let coefficients = fit_per_step(grid, reg, batch.m_paths(), |i| {
        let base = batch.path(i);
        let s = shift_one(u_n, grid, 1, &base, None)?;
        let d = f.malliavin_density(grid, 1, &s.shifted)?;
        let w = cumulative(&base);
        Ok((w[..grid.n_steps()].to_vec(), d.values))
    })?;
    let neg: Vec<f64> = coefficients.iter().map(|c| -c).collect();
    Ok(DriftPolicy::RegressionTable(RegressionTable::new(reg.features.clone(), grid, neg)?))
}

/// `Ê‖u̇_a − u̇_b‖²_H`, each policy's realized drift along its own shift of
/// the same base paths.
pub fn policy_distance_sq(a: &DriftPolicy, b: &DriftPolicy, batch: &BrownianBatch) -> Result<EstimateReport> {
    let grid = batch.grid();
    let dims = batch.dims();
    a.check_compatible(grid, dims)?;
    b.check_compatible(grid, dims)?;
    let samples: Result<Vec<f64>> = crate::stats::par_map_paths(batch.m_paths(), |i| {
        let base = batch.path(i);
        let sa = shift_one(a, grid, dims, &base, None)?;
        let sb = shift_one(b, grid, dims, &base, None)?;
        let sq: Vec<f64> = sa.drift.iter().zip(&sb.drift).map(|(x, y)| (x - y) * (x - y)).collect();
        Ok(pairwise_sum(&sq) * grid.dt())
    })
    .into_iter()
    .collect();
    Ok(EstimateReport::from_samples(&samples?, EstimateMethod::PairedDifference))
}

/// `Ê‖u̇ + fitted(D f∘U)‖²_H`: distance from `u` to its own Picard image.
pub fn fixed_point_residual(f: &FunctionalSpec, u: &DriftPolicy, batch: &BrownianBatch, reg: &RegressionSpec) -> Result<EstimateReport> {
    let next = picard_step(f, u, batch, reg)?;
    policy_distance_sq(&next, u, batch)
}

#[derive(Debug, Clone)]
pub struct PicardState {
    /// Number of Picard steps taken.
    pub iteration: usize,
    pub policy: DriftPolicy,
    /// `r_n = Ê‖u_{n+1} − u_n‖²_H`.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Index into `residuals` of the returned iterate.
    pub best_index: usize,
}

pub fn picard_solve(
    f: &FunctionalSpec,
    batch: &BrownianBatch,
    reg: &RegressionSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(DriftPolicy, PicardState)> {
    picard_solve_from(f, DriftPolicy::zero(batch.grid(), batch.dims()), batch, reg, tol, max_iter)
}

/// Iterate [`picard_step`] on a fixed batch until `r_n ≤ tol²`. Without
/// convergence the iterate with the smallest residual is returned and the
/// state is flagged.
pub fn picard_solve_from(
    f: &FunctionalSpec,
    init: DriftPolicy,
    batch: &BrownianBatch,
    reg: &RegressionSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(DriftPolicy, PicardState)> {
    if max_iter == 0 {
        return invalid("max_iter must be at least 1");
    }
    let mut current = init;
    let mut residuals = Vec::new();
    let mut best: Option<(f64, usize, DriftPolicy)> = None;
    let mut converged = false;
    for n in 0..max_iter {
        let next = picard_step(f, &current, batch, reg)?;
        let r = policy_distance_sq(&next, &current, batch)?.value;
        residuals.push(r);
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, n, next.clone()));
        }
        current = next;
        if r <= tol * tol {
            converged = true;
            break;
        }
    }
    let (policy, best_index) = if converged {
        (current, residuals.len() - 1)
    } else {
        let (_, idx, p) = best.expect("at least one iteration");
        (p, idx)
    };
    let state = PicardState {
        iteration: residuals.len(),
        policy: policy.clone(),
        residuals,
        converged,
        best_index,
    };
    Ok((policy, state))
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub basis: ParametricBasis,
    /// `Ĵ` before the first step and after every step.
    pub trace: Vec<f64>,
    pub step_size: f64,
    pub halvings: usize,
    pub aborted: bool,
}

const FD_STEP: f64 = 1e-4;
const MAX_HALVINGS: usize = 5;
const PATIENCE: usize = 5;

fn j_of(f: &FunctionalSpec, basis: &ParametricBasis, batch: &BrownianBatch) -> Result<f64> {
    Ok(j_estimate(f, &DriftPolicy::ParametricBasis(basis.clone()), batch)?.value)
}

/// Pathwise gradient of `Ĵ(θ)` by the adjoint of the Euler recursion.
fn adjoint_gradient(f: &FunctionalSpec, basis: &ParametricBasis, batch: &BrownianBatch) -> Result<Vec<f64>> {
    let grid = batch.grid();
    let dt = grid.dt();
    let n = grid.n_steps();
    let nf = basis.features.len();
    let policy = DriftPolicy::ParametricBasis(basis.clone());
    let per_path = map_shifted(&policy, batch, None, |_, _, s| {
        let d = f.malliavin_density(grid, 1, &s.shifted)?;
        let x = cumulative(&s.shifted);
        let mut grad = vec![0.0; basis.theta.len()];
        let mut sens = 0.0;
        for k in (0..n).rev() {
            let t = grid.t(k);
            let c = (s.drift[k] + d.values[k] + sens) * dt;
            let o = basis.offset(k);
            for j in 0..nf {
                grad[o + j] += c * basis.features[j].value(t, x[k]);
            }
            sens += c * basis.eval_dx(k, t, x[k]);
        }
        Ok(grad)
    })?;
    let m = per_path.len() as f64;
    Ok((0..basis.theta.len())
        .map(|j| {
            let col: Vec<f64> = per_path.iter().map(|g| g[j]).collect();
            pairwise_sum(&col) / m
        })
        .collect())
}

fn fd_gradient(f: &FunctionalSpec, basis: &ParametricBasis, batch: &BrownianBatch) -> Result<Vec<f64>> {
    (0..basis.theta.len())
        .map(|j| {
            let mut plus = basis.clone();
            let mut minus = basis.clone();
            plus.theta[j] += FD_STEP;
            minus.theta[j] -= FD_STEP;
            Ok((j_of(f, &plus, batch)? - j_of(f, &minus, batch)?) / (2.0 * FD_STEP))
        })
        .collect()
}

/// Minimize `θ ↦ Ĵ(θ)` on a fixed batch.
///
/// Gradients are pathwise (adjoint) when `f` has a derivative density and
/// central differences otherwise. Steps are taken in the Cameron–Martin
/// metric: per-step coefficients move by `∇/dt`. After five consecutive
/// increases of `Ĵ` the step size is halved; the fifth halving aborts.
pub fn grad_descent_optimize(
    f: &FunctionalSpec,
    init: ParametricBasis,
    batch: &BrownianBatch,
    steps: usize,
    step_size: f64,
) -> Result<OptimizeOutcome> {
    if batch.dims() != 1 {
        return invalid("parametric drifts are scalar");
    }
    if !(step_size > 0.0) {
        return invalid("step size must be positive");
    }
    DriftPolicy::ParametricBasis(init.clone()).check_compatible(batch.grid(), 1)?;
    let metric = if init.per_step { 1.0 / batch.grid().dt() } else { 1.0 };
    let mut basis = init;
    let mut eta = step_size;
    let mut trace = vec![j_of(f, &basis, batch)?];
    let mut increases = 0;
    let mut halvings = 0;
    let mut aborted = false;
    for _ in 0..steps {
        let grad = if f.has_density() {
            adjoint_gradient(f, &basis, batch)?
        } else {
            fd_gradient(f, &basis, batch)?
        };
        for (th, g) in basis.theta.iter_mut().zip(&grad) {
            *th -= eta * metric * g;
        }
        let j = j_of(f, &basis, batch)?;
        if !j.is_finite() {
            return Err(Error::NonFinite("Ĵ diverged".into()));
        }
        increases = if j > *trace.last().unwrap() { increases + 1 } else { 0 };
        trace.push(j);
        if increases >= PATIENCE {
            halvings += 1;
            increases = 0;
            if halvings >= MAX_HALVINGS {
                aborted = true;
                break;
            }
            eta *= 0.5;
        }
    }
    Ok(OptimizeOutcome {
        basis,
        trace,
        step_size: eta,
        halvings,
        aborted,
    })
}

/// JSON form of a policy, for reuse across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub kind: String,
    pub grid_hash: String,
    pub n_steps: usize,
    pub dims: usize,
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

impl PolicyRecord {
    pub fn from_policy(policy: &DriftPolicy, grid: TimeGrid) -> Result<Self> {
        policy.check_compatible(grid, policy.dims())?;
        let names = |fs: &[Feature]| fs.iter().map(|f| f.name().to_string()).collect();
        let mut rec = Self {
            kind: policy.kind_name().to_string(),
            grid_hash: grid.hash(),
            n_steps: grid.n_steps(),
            dims: policy.dims(),
            feature_names: Vec::new(),
            coefficients: Vec::new(),
            per_step: None,
            feedback: None,
            scale: None,
            t_max: None,
        };
        match policy {
            DriftPolicy::Deterministic(h) => rec.coefficients = h.derivative().to_vec(),
            DriftPolicy::ParametricBasis(p) => {
                rec.feature_names = names(&p.features);
                rec.coefficients = p.theta.clone();
                rec.per_step = Some(p.per_step);
            }
            DriftPolicy::RegressionTable(r) => {
                rec.feature_names = names(&r.features);
                rec.coefficients = r.coefficients.clone();
            }
            DriftPolicy::MarkovFeedback(m) => {
                if let FeedbackDescriptor::Opaque { label } = m.descriptor() {
                    return Err(Error::NotSerializable(label.clone()));
                }
                rec.feedback = Some(m.descriptor().clone());
                rec.scale = Some(m.scale());
                rec.t_max = m.t_max();
            }
        }
        Ok(rec)
    }

    /// Rebuild the policy; the record's grid hash must match `grid`.
    pub fn to_policy(&self, grid: TimeGrid) -> Result<DriftPolicy> {
        if self.grid_hash != grid.hash() || self.n_steps != grid.n_steps() {
            return Err(Error::GridMismatch {
                expected: grid.hash(),
                found: self.grid_hash.clone(),
            });
        }
        let features = || -> Result<Vec<Feature>> { self.feature_names.iter().map(|s| Feature::parse(s)).collect() };
        match self.kind.as_str() {
            "deterministic" => Ok(DriftPolicy::Deterministic(CMElement::new(grid, self.dims, self.coefficients.clone())?)),
            "parametric_basis" => Ok(DriftPolicy::ParametricBasis(ParametricBasis::new(
                features()?,
                self.per_step.unwrap_or(false),
                grid,
                self.coefficients.clone(),
            )?)),
            "regression_table" => Ok(DriftPolicy::RegressionTable(RegressionTable::new(features()?, grid, self.coefficients.clone())?)),
            "markov_feedback" => {
                let desc = self
                    .feedback
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("markov_feedback record without a descriptor".into()))?;
                let base = match desc {
                    FeedbackDescriptor::Linear { slope, intercept } => DriftPolicy::MarkovFeedback(MarkovFeedback::linear(*slope, *intercept)),
                    FeedbackDescriptor::Foellmer { functional, quad_order } => {
                        foellmer_for(&FunctionalSpec::from_catalog(functional, grid)?, grid, *quad_order)?
                    }
                    FeedbackDescriptor::IntervalHTransform { a, .. } => htransform_interval_drift(*a, grid)?,
                    FeedbackDescriptor::Opaque { label } => return Err(Error::NotSerializable(label.clone())),
                };
                let DriftPolicy::MarkovFeedback(mut fb) = base else { unreachable!() };
                if let Some(t) = self.t_max {
                    fb = fb.with_time_cap(t);
                }
                let policy = DriftPolicy::MarkovFeedback(fb);
                Ok(if self.scale.unwrap_or(1.0) < 0.0 { policy.negated() } else { policy })
            }
            other => invalid(format!("unknown policy kind `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiener::sample_brownian;

    #[test]
    fn gauss_hermite_moments() {
        for q in [1, 2, 5, 20, 40] {
            let rule = QuadratureRule::gauss_hermite(q).unwrap();
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if q >= 5 {
                assert!((rule.integrate(|z| z * z) - 1.0).abs() < 1e-10);
                assert!((rule.integrate(|z| z.powi(4)) - 3.0).abs() < 1e-9);
            }
        }
        assert!(QuadratureRule::gauss_hermite(0).is_err());
    }

    #[test]
    fn foellmer_quadratic_matches_closed_form() {
        let rule = QuadratureRule::gauss_hermite(20).unwrap();
        let g = TerminalFn::Quadratic { beta: 1.0 };
        let b = foellmer_drift_value(&g, &rule, 0.0, 1.0).unwrap();
        assert!((b - 0.5).abs() < 1e-8);
        assert!(foellmer_drift_value(&g, &rule, 1.0, 0.0).is_err());
    }

    #[test]
    fn foellmer_zero_and_linear() {
        let rule = QuadratureRule::gauss_hermite(20).unwrap();
        let zero = TerminalFn::Linear { slope: 0.0 };
        let lin = TerminalFn::Linear { slope: 1.0 };
        for (t, x) in [(0.0, 0.0), (0.5, -2.0), (0.9, 3.0)] {
            assert_eq!(foellmer_drift_value(&zero, &rule, t, x).unwrap(), 0.0);
            assert!((foellmer_drift_value(&lin, &rule, t, x).unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn interval_drift_sign_and_symmetry() {
        assert_eq!(interval_log_h_gradient(0.5, 0.3, 0.0), 0.0);
        assert!(interval_log_h_gradient(0.5, 0.0, 0.5) < 0.0);
        for x in [0.1, 0.4, 1.3, 5.0] {
            let a = interval_log_h_gradient(0.5, 0.7, x);
            let b = interval_log_h_gradient(0.5, 0.7, -x);
            assert_eq!(a, -b);
        }
        // far outside: drift points back and is finite before clamping
        let far = interval_log_h_gradient(0.5, 1.0 - 1.0 / 512.0, 3.0);
        assert!(far.is_finite() && far < -100.0);
    }

    #[test]
    fn log_ndtr_is_continuous_across_branches() {
        for z in [-30.0f64, 0.0] {
            let lo = log_ndtr(z - 1e-9);
            let hi = log_ndtr(z + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1.0), "{z}: {lo} vs {hi}");
        }
        assert!((log_ndtr(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let g = TimeGrid::new(8).unwrap();
        let b = sample_brownian(g, 64, 1, 3).unwrap();
        let f = FunctionalSpec::terminal_quadratic(1.0);
        let reg = RegressionSpec {
            features: vec![Feature::One, Feature::X],
            ridge: 0.0,
        };
        let err = picard_step(&f, &DriftPolicy::zero(g, 1), &b, &reg).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { step: 0 }));
    }

    #[test]
    fn picard_needs_density() {
        let g = TimeGrid::new(8).unwrap();
        let b = sample_brownian(g, 16, 1, 3).unwrap();
        let f = FunctionalSpec::indicator_terminal(0.5).unwrap();
        assert!(picard_step(&f, &DriftPolicy::zero(g, 1), &b, &RegressionSpec::default()).is_err());
    }

    #[test]
    fn zero_steps_returns_init() {
        let g = TimeGrid::new(8).unwrap();
        let b = sample_brownian(g, 32, 1, 3).unwrap();
        let f = FunctionalSpec::linear(CMElement::constant(g, 1, 1.0));
        let init = ParametricBasis::new(vec![Feature::One], false, g, vec![0.3]).unwrap();
        let out = grad_descent_optimize(&f, init.clone(), &b, 0, 0.5).unwrap();
        assert_eq!(out.basis, init);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let g = TimeGrid::new(16).unwrap();
        let b = sample_brownian(g, 200, 1, 5).unwrap();
        let basis = ParametricBasis::new(vec![Feature::One, Feature::X, Feature::X2], false, g, vec![0.1, -0.6, 0.05]).unwrap();
        for f in [
            FunctionalSpec::terminal_quadratic(1.0),
            FunctionalSpec::scaled_cosine(0.3, CMElement::constant(g, 1, 1.0)),
            FunctionalSpec::running(crate::functionals::RunningFn::Quadratic { c: 0.5 }),
        ] {
            let a = adjoint_gradient(&f, &basis, &b).unwrap();
            let d = fd_gradient(&f, &basis, &b).unwrap();
            for (x, y) in a.iter().zip(&d) {
                assert!((x - y).abs() < 1e-7, "{f:?}: {x} vs {y}");
            }
        }
    }
}
