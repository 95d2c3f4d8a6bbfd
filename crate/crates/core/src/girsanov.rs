//! Adapted shifts `U = I_W + u`, Girsanov weights and drift importance
//! sampling.
//!
//! Drifts are piecewise constant on grid cells and evaluated at the left
//! endpoint, so for every admissible policy
//! `E[g(U)·ρ(−δu)] = E[g(W)]` holds exactly in the discrete Gaussian model.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::FunctionalSpec;
use crate::stats::{par_map_paths, EstimateMethod, EstimateReport};
use crate::wiener::{BrownianBatch, CMElement, TimeGrid};

/// What a policy may look at when choosing `u̇_k`.
///
/// Only increments strictly before step `k` are visible; there is no way to
/// reach `ΔW_k` from here.
pub struct StepView<'a> {
    step: usize,
    t: f64,
    increments: &'a [f64],
    driving: &'a [f64],
    position: &'a [f64],
}

impl<'a> StepView<'a> {
    pub fn step(&self) -> usize {
        self.step
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    /// Driving increments `ΔW_0 .. ΔW_{k−1}`, row-major by dim.
    pub fn past_increments(&self) -> &'a [f64] {
        self.increments
    }
    /// Driving path value `W(t_k)`.
    pub fn driving_state(&self) -> &'a [f64] {
        self.driving
    }
    /// State `X(t_k)` of the controlled process.
    pub fn position(&self) -> &'a [f64] {
        self.position
    }
}

/// Scalar basis functions of `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    One,
    X,
    X2,
    X3,
    T,
    TX,
}

impl Feature {
    pub fn value(self, t: f64, x: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::X => x,
            Self::X2 => x * x,
            Self::X3 => x * x * x,
            Self::T => t,
            Self::TX => t * x,
        }
    }

    pub fn dx(self, t: f64, x: f64) -> f64 {
        match self {
            Self::One | Self::T => 0.0,
            Self::X => 1.0,
            Self::X2 => 2.0 * x,
            Self::X3 => 3.0 * x * x,
            Self::TX => t,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::One => "1",
            Self::X => "x",
            Self::X2 => "x2",
            Self::X3 => "x3",
            Self::T => "t",
            Self::TX => "tx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "1" => Self::One,
            "x" => Self::X,
            "x2" => Self::X2,
            "x3" => Self::X3,
            "t" => Self::T,
            "tx" => Self::TX,
            other => return invalid(format!("unknown feature `{other}`")),
        })
    }

    /// Comma-separated list such as `1,x,x2`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(Self::parse).collect()
    }
}

type FeedbackFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Serializable description of how a feedback drift was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedbackDescriptor {
    /// `b(t, x) = slope·x + intercept`.
    Linear { slope: f64, intercept: f64 },
    Foellmer { functional: String, quad_order: usize },
    IntervalHTransform { a: f64, clamp: f64 },
    Opaque { label: String },
}

/// Markov feedback drift `b(t, x)` read at the controlled state.
#[derive(Clone)]
pub struct MarkovFeedback {
    descriptor: FeedbackDescriptor,
    b: FeedbackFn,
    dims: usize,
    t_max: Option<f64>,
    scale: f64,
}

impl fmt::Debug for MarkovFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarkovFeedback")
            .field("descriptor", &self.descriptor)
            .field("dims", &self.dims)
            .field("t_max", &self.t_max)
            .field("scale", &self.scale)
            .finish()
    }
}

impl MarkovFeedback {
    pub fn new(descriptor: FeedbackDescriptor, dims: usize, b: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            descriptor,
            b: Arc::new(b),
            dims,
            t_max: None,
            scale: 1.0,
        }
    }

    /// Scalar feedback from a plain function of `(t, x)`.
    pub fn scalar(descriptor: FeedbackDescriptor, b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(descriptor, 1, move |t, x, out| out[0] = b(t, x[0]))
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::scalar(FeedbackDescriptor::Linear { slope, intercept }, move |_, x| slope * x + intercept)
    }

    /// Evaluate at `min(t, t_max)` for `t > t_max`.
    pub fn with_time_cap(mut self, t_max: f64) -> Self {
        self.t_max = Some(t_max);
        self
    }

    pub fn descriptor(&self) -> &FeedbackDescriptor {
        &self.descriptor
    }
    pub fn t_max(&self) -> Option<f64> {
        self.t_max
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `scale·b(min(t, t_max), x)`.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let t = match self.t_max {
            Some(cap) if t > cap => cap,
            _ => t,
        };
        (self.b)(t, x, out);
        if self.scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    pub fn eval_scalar(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.eval(t, &[x], &mut out);
        out[0]
    }
}

/// `u̇_k = Σ_j θ_j φ_j(t_k, X_k)` with global or per-step coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricBasis {
    pub features: Vec<Feature>,
    pub per_step: bool,
    pub theta: Vec<f64>,
    n_steps: usize,
}

impl ParametricBasis {
    pub fn new(features: Vec<Feature>, per_step: bool, grid: TimeGrid, theta: Vec<f64>) -> Result<Self> {
        let nf = features.len();
        let expected = if per_step { nf * grid.n_steps() } else { nf };
        if nf == 0 || theta.len() != expected {
            return invalid(format!("expected {expected} coefficients, got {}", theta.len()));
        }
        Ok(Self {
            features,
            per_step,
            theta,
            n_steps: grid.n_steps(),
        })
    }

    pub fn zeros(features: Vec<Feature>, per_step: bool, grid: TimeGrid) -> Self {
        let n = if per_step { features.len() * grid.n_steps() } else { features.len() };
        Self {
            features,
            per_step,
            theta: vec![0.0; n],
            n_steps: grid.n_steps(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Index of the first coefficient used at `step`.
    pub fn offset(&self, step: usize) -> usize {
        if self.per_step {
            step * self.features.len()
        } else {
            0
        }
    }

    pub fn eval(&self, step: usize, t: f64, x: f64) -> f64 {
        let o = self.offset(step);
        self.features
            .iter()
            .enumerate()
            .map(|(j, f)| self.theta[o + j] * f.value(t, x))
            .sum()
    }

    pub fn eval_dx(&self, step: usize, t: f64, x: f64) -> f64 {
        let o = self.offset(step);
        self.features
            .iter()
            .enumerate()
            .map(|(j, f)| self.theta[o + j] * f.dx(t, x))
            .sum()
    }
}

/// Per-step linear coefficients over features of the driving state `W(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTable {
    pub features: Vec<Feature>,
    /// `[step][feature]`, row-major.
    pub coefficients: Vec<f64>,
    n_steps: usize,
}

impl RegressionTable {
    pub fn new(features: Vec<Feature>, grid: TimeGrid, coefficients: Vec<f64>) -> Result<Self> {
        if features.is_empty() || coefficients.len() != features.len() * grid.n_steps() {
            return invalid("regression table shape does not match features × n_steps");
        }
        Ok(Self {
            features,
            coefficients,
            n_steps: grid.n_steps(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn eval(&self, step: usize, t: f64, x: f64) -> f64 {
        let nf = self.features.len();
        let row = &self.coefficients[step * nf..(step + 1) * nf];
        self.features.iter().zip(row).map(|(f, c)| c * f.value(t, x)).sum()
    }
}

/// An adapted drift `u̇(t_k, path prefix)`.
#[derive(Debug, Clone)]
pub enum DriftPolicy {
    Deterministic(CMElement),
    MarkovFeedback(MarkovFeedback),
    ParametricBasis(ParametricBasis),
    RegressionTable(RegressionTable),
}

impl DriftPolicy {
    pub fn zero(grid: TimeGrid, dims: usize) -> Self {
        Self::Deterministic(CMElement::zero(grid, dims))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Deterministic(_) => "deterministic",
            Self::MarkovFeedback(_) => "markov_feedback",
            Self::ParametricBasis(_) => "parametric_basis",
            Self::RegressionTable(_) => "regression_table",
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Self::Deterministic(h) => h.dims(),
            Self::MarkovFeedback(m) => m.dims,
            Self::ParametricBasis(_) | Self::RegressionTable(_) => 1,
        }
    }

    /// True for the identically-zero deterministic policy.
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Deterministic(h) if h.derivative().iter().all(|x| *x == 0.0))
    }

    pub fn check_compatible(&self, grid: TimeGrid, dims: usize) -> Result<()> {
        let steps = match self {
            Self::Deterministic(h) => {
                h.grid().ensure_same(&grid)?;
                None
            }
            Self::ParametricBasis(p) if p.per_step => Some(p.n_steps),
            Self::RegressionTable(r) => Some(r.n_steps),
            _ => None,
        };
        if let Some(n) = steps {
            grid.ensure_same(&TimeGrid::new(n)?)?;
        }
        if self.dims() != dims {
            return invalid(format!("policy has {} dims, batch has {dims}", self.dims()));
        }
        Ok(())
    }

    /// Write `u̇_k` for the situation described by `view` into `out`.
    pub fn drift(&self, view: &StepView<'_>, out: &mut [f64]) {
        match self {
            Self::Deterministic(h) => out.copy_from_slice(h.at(view.step)),
            Self::MarkovFeedback(m) => m.eval(view.t, view.position, out),
            Self::ParametricBasis(p) => out[0] = p.eval(view.step, view.t, view.position[0]),
            Self::RegressionTable(r) => out[0] = r.eval(view.step, view.t, view.driving[0]),
        }
    }

    /// The policy with every drift value negated.
    pub fn negated(&self) -> Self {
        match self {
            Self::Deterministic(h) => Self::Deterministic(h.scaled(-1.0)),
            Self::MarkovFeedback(m) => {
                let mut m = m.clone();
                m.scale = -m.scale;
                Self::MarkovFeedback(m)
            }
            Self::ParametricBasis(p) => {
                let mut p = p.clone();
                p.theta.iter_mut().for_each(|x| *x = -*x);
                Self::ParametricBasis(p)
            }
            Self::RegressionTable(r) => {
                let mut r = r.clone();
                r.coefficients.iter_mut().for_each(|x| *x = -*x);
                Self::RegressionTable(r)
            }
        }
    }

    /// `u̇_k(w)` along a given path `w`, read open loop (the path serves as
    /// both driving path and state). This is the composition `u∘w`.
    pub fn evaluate_on_path(&self, grid: TimeGrid, dims: usize, path: &[f64]) -> Result<Vec<f64>> {
        self.check_compatible(grid, dims)?;
        let n = grid.n_steps();
        let mut state = vec![0.0; dims];
        let mut out = vec![0.0; n * dims];
        for k in 0..n {
            let view = StepView {
                step: k,
                t: grid.t(k),
                increments: &path[..k * dims],
                driving: &state,
                position: &state,
            };
            let slot = &mut out[k * dims..(k + 1) * dims];
            self.drift(&view, slot);
            if slot.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("drift at step {k}")));
            }
            for d in 0..dims {
                state[d] += path[k * dims + d];
            }
        }
        Ok(out)
    }
}

/// One path pushed through a policy.
#[derive(Debug, Clone)]
pub struct PathShift {
    pub shifted: Vec<f64>,
    pub drift: Vec<f64>,
    /// `δu = Σ u̇_k·ΔW_k`.
    pub delta_u: f64,
    /// `|u|²_H = Σ |u̇_k|² dt`.
    pub norm_sq: f64,
    pub clamped: usize,
}

impl PathShift {
    /// `log ρ(−δu) = −δu − ½|u|²_H`.
    pub fn log_weight(&self) -> f64 {
        -self.delta_u - 0.5 * self.norm_sq
    }
}

/// Closed-loop shift of one base path: `ΔU_k = ΔW_k + u̇_k dt` with `u̇_k`
/// chosen from the prefix and the current `U(t_k)`. Drift components beyond
/// `clamp` in absolute value are clamped and counted.
pub fn shift_one(policy: &DriftPolicy, grid: TimeGrid, dims: usize, base: &[f64], clamp: Option<f64>) -> Result<PathShift> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut shifted = Vec::with_capacity(n * dims);
    let mut drift = vec![0.0; n * dims];
    let mut w = vec![0.0; dims];
    let mut x = vec![0.0; dims];
    let mut delta_u = 0.0;
    let mut norm_sq = 0.0;
    let mut clamped = 0;
    for k in 0..n {
        let slot = &mut drift[k * dims..(k + 1) * dims];
        {
            let view = StepView {
                step: k,
                t: grid.t(k),
                increments: &base[..k * dims],
                driving: &w,
                position: &x,
            };
            policy.drift(&view, slot);
        }
        for d in 0..dims {
            let mut u = slot[d];
            if !u.is_finite() {
                return Err(Error::NonFinite(format!("drift at step {k}, dim {d}")));
            }
            if let Some(b) = clamp {
                if u.abs() > b {
                    u = u.signum() * b;
                    clamped += 1;
                }
            }
            slot[d] = u;
            let dw = base[k * dims + d];
            let du = dw + u * dt;
            shifted.push(du);
            delta_u += u * dw;
            norm_sq += u * u * dt;
            w[d] += dw;
            x[d] += du;
        }
    }
    Ok(PathShift {
        shifted,
        drift,
        delta_u,
        norm_sq,
        clamped,
    })
}

/// Map `f` over shifted paths in parallel; results are in path order and the
/// first error (in path order) wins.
pub fn map_shifted<T, F>(policy: &DriftPolicy, batch: &BrownianBatch, clamp: Option<f64>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64], &PathShift) -> Result<T> + Sync + Send,
{
    let grid = batch.grid();
    let dims = batch.dims();
    policy.check_compatible(grid, dims)?;
    par_map_paths(batch.m_paths(), |i| {
        let base = batch.path(i);
        let shift = shift_one(policy, grid, dims, &base, clamp)?;
        f(i, &base, &shift)
    })
    .into_iter()
    .collect()
}

/// A batch pushed through `U = I_W + u`.
#[derive(Debug)]
pub struct ShiftedBatch<'a> {
    pub base: &'a BrownianBatch,
    pub policy: DriftPolicy,
    shifted: Vec<f64>,
    drift: Vec<f64>,
    delta_u: Vec<f64>,
    norm_sq: Vec<f64>,
    clamped: usize,
}

pub(crate) fn build_shifted<'a>(batch: &'a BrownianBatch, policy: DriftPolicy, clamp: Option<f64>) -> Result<ShiftedBatch<'a>> {
    let rows = map_shifted(&policy, batch, clamp, |_, _, s| Ok(s.clone()))?;
    let len = batch.row_len();
    let m = batch.m_paths();
    let mut out = ShiftedBatch {
        base: batch,
        policy,
        shifted: Vec::with_capacity(m * len),
        drift: Vec::with_capacity(m * len),
        delta_u: Vec::with_capacity(m),
        norm_sq: Vec::with_capacity(m),
        clamped: 0,
    };
    for r in rows {
        out.shifted.extend_from_slice(&r.shifted);
        out.drift.extend_from_slice(&r.drift);
        out.delta_u.push(r.delta_u);
        out.norm_sq.push(r.norm_sq);
        out.clamped += r.clamped;
    }
    Ok(out)
}

/// Push every path of `batch` through `policy`.
pub fn apply_shift<'a>(batch: &'a BrownianBatch, policy: &DriftPolicy) -> Result<ShiftedBatch<'a>> {
    build_shifted(batch, policy.clone(), None)
}

impl<'a> ShiftedBatch<'a> {
    pub fn m_paths(&self) -> usize {
        self.base.m_paths()
    }
    pub fn grid(&self) -> TimeGrid {
        self.base.grid()
    }
    pub fn dims(&self) -> usize {
        self.base.dims()
    }
    fn row(&self, i: usize) -> std::ops::Range<usize> {
        let len = self.base.row_len();
        i * len..(i + 1) * len
    }
    /// Increments `ΔU` of path `i`.
    pub fn shifted_path(&self, i: usize) -> &[f64] {
        &self.shifted[self.row(i)]
    }
    /// Realized `u̇` of path `i`.
    pub fn drift_path(&self, i: usize) -> &[f64] {
        &self.drift[self.row(i)]
    }
    pub fn delta_u(&self, i: usize) -> f64 {
        self.delta_u[i]
    }
    pub fn norm_sq(&self, i: usize) -> f64 {
        self.norm_sq[i]
    }
    /// `½|u|²_H` of path `i`.
    pub fn energy(&self, i: usize) -> f64 {
        0.5 * self.norm_sq[i]
    }
    pub fn clamped(&self) -> usize {
        self.clamped
    }
    pub fn log_weight(&self, i: usize) -> f64 {
        -self.delta_u[i] - 0.5 * self.norm_sq[i]
    }
    pub fn terminal(&self, i: usize) -> Vec<f64> {
        crate::wiener::terminal_value(self.shifted_path(i), self.dims())
    }
    /// `ΔU_k − u̇_k dt`.
    pub fn recover_base(&self, i: usize) -> Vec<f64> {
        let dt = self.grid().dt();
        self.shifted_path(i)
            .iter()
            .zip(self.drift_path(i))
            .map(|(du, u)| du - u * dt)
            .collect()
    }

    /// Per-path summary CSV `path_id,delta_u,energy,weight`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "delta_u", "energy", "weight"])?;
        for i in 0..self.m_paths() {
            w.write_record(&[
                i.to_string(),
                format!("{:e}", self.delta_u(i)),
                format!("{:e}", self.energy(i)),
                format!("{:e}", girsanov_weight(self, i)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `ρ(−δu) = exp(−δu − ½|u|²_H)` for path `i`.
pub fn girsanov_weight(shifted: &ShiftedBatch<'_>, i: usize) -> f64 {
    shifted.log_weight(i).exp()
}

/// Per-path log importance samples `−f(U) + log ρ(−δu)`.
pub fn importance_log_samples(f: &FunctionalSpec, policy: &DriftPolicy, batch: &BrownianBatch) -> Result<Vec<f64>> {
    let grid = batch.grid();
    let dims = batch.dims();
    map_shifted(policy, batch, None, |_, _, s| {
        let fu = f.eval(grid, dims, &s.shifted)?;
        Ok(-fu + s.log_weight())
    })
}

/// Importance estimate of `E[e^{−f}]` from `e^{−f(U)}·ρ(−δu)`.
pub fn importance_estimate(f: &FunctionalSpec, policy: &DriftPolicy, batch: &BrownianBatch) -> Result<EstimateReport> {
    let logs = importance_log_samples(f, policy, batch)?;
    Ok(EstimateReport::from_log_samples(&logs, EstimateMethod::Importance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiener::sample_brownian;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn zero_policy_is_identity() {
        let g = grid(16);
        let b = sample_brownian(g, 8, 1, 3).unwrap();
        let s = apply_shift(&b, &DriftPolicy::zero(g, 1)).unwrap();
        for i in 0..8 {
            assert_eq!(s.shifted_path(i), &*b.path(i));
            assert_eq!(girsanov_weight(&s, i).to_bits(), 1.0f64.to_bits());
        }
    }

    #[test]
    fn constant_shift_moves_terminal_by_one() {
        let g = grid(32);
        let b = sample_brownian(g, 8, 1, 3).unwrap();
        let s = apply_shift(&b, &DriftPolicy::Deterministic(CMElement::constant(g, 1, 1.0))).unwrap();
        for i in 0..8 {
            assert!((s.terminal(i)[0] - b.terminal(i)[0] - 1.0).abs() < 1e-13);
            let rec = s.recover_base(i);
            for (a, b) in rec.iter().zip(b.path(i).iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn policies_only_see_the_past() {
        let g = grid(8);
        let b = sample_brownian(g, 1, 1, 5).unwrap();
        let seen = std::sync::Mutex::new(Vec::new());
        let probe = MarkovFeedback::scalar(FeedbackDescriptor::Opaque { label: "probe".into() }, |_, _| 0.0);
        let policy = DriftPolicy::MarkovFeedback(probe);
        // The view carries exactly k past increments at step k.
        let base = b.path(0);
        let mut x = [0.0];
        for k in 0..8 {
            let view = StepView {
                step: k,
                t: g.t(k),
                increments: &base[..k],
                driving: &x,
                position: &x,
            };
            seen.lock().unwrap().push(view.past_increments().len());
            let mut out = [0.0];
            policy.drift(&view, &mut out);
            x[0] += base[k];
        }
        assert_eq!(*seen.lock().unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn non_finite_drift_is_rejected() {
        let g = grid(4);
        let b = sample_brownian(g, 2, 1, 1).unwrap();
        let bad = MarkovFeedback::scalar(FeedbackDescriptor::Opaque { label: "nan".into() }, |_, _| f64::NAN);
        assert!(apply_shift(&b, &DriftPolicy::MarkovFeedback(bad)).is_err());
    }

    #[test]
    fn time_cap_freezes_time_argument() {
        let m = MarkovFeedback::scalar(FeedbackDescriptor::Opaque { label: "t".into() }, |t, _| t).with_time_cap(0.5);
        assert_eq!(m.eval_scalar(0.25, 0.0), 0.25);
        assert_eq!(m.eval_scalar(0.9, 0.0), 0.5);
    }

    #[test]
    fn negation_flips_every_variant() {
        let g = grid(4);
        let b = sample_brownian(g, 3, 1, 9).unwrap();
        let policies = vec![
            DriftPolicy::Deterministic(CMElement::from_fn(g, |t| t - 0.3).unwrap()),
            DriftPolicy::MarkovFeedback(MarkovFeedback::linear(-0.5, 0.1)),
            DriftPolicy::ParametricBasis(ParametricBasis::new(vec![Feature::One, Feature::X], false, g, vec![0.2, -0.7]).unwrap()),
            DriftPolicy::RegressionTable(RegressionTable::new(vec![Feature::One, Feature::X], g, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap()),
        ];
        for p in policies {
            let a = p.evaluate_on_path(g, 1, &b.path(0)).unwrap();
            let n = p.negated().evaluate_on_path(g, 1, &b.path(0)).unwrap();
            for (x, y) in a.iter().zip(&n) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn incompatible_policy_is_rejected() {
        let b = sample_brownian(grid(8), 2, 1, 1).unwrap();
        let p = DriftPolicy::Deterministic(CMElement::constant(grid(4), 1, 1.0));
        assert!(apply_shift(&b, &p).is_err());
    }

    #[test]
    fn zero_variance_at_linear_optimum() {
        let g = grid(64);
        let b = sample_brownian(g, 2000, 1, 2).unwrap();
        let h = CMElement::constant(g, 1, 1.0);
        let f = FunctionalSpec::linear(h.clone());
        let logs = importance_log_samples(&f, &DriftPolicy::Deterministic(h.scaled(-1.0)), &b).unwrap();
        for l in &logs {
            assert!((l.exp() / 0.5f64.exp() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn summary_csv_rows() {
        let g = grid(4);
        let b = sample_brownian(g, 3, 1, 1).unwrap();
        let s = apply_shift(&b, &DriftPolicy::MarkovFeedback(MarkovFeedback::linear(-1.0, 0.0))).unwrap();
        let mut buf = Vec::new();
        s.write_summary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
