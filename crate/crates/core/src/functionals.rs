//! Catalog of Wiener functionals with closed-form derivative densities.
//!
//! Catalog names (used by the CLI):
//!
//! | name                           | functional                          |
//! |--------------------------------|-------------------------------------|
//! | `constant:c=C`                 | `f ≡ C`                             |
//! | `linear:unit`, `linear:c=C`    | `f = δh`, `ḣ ≡ 1` or `ḣ ≡ C`        |
//! | `linear:ramp`                  | `f = δh`, `ḣ(t) = t`                |
//! | `terminal:quadratic:beta=B`    | `f = B·W(1)²/2`                     |
//! | `terminal:linear:c=C`          | `f = C·W(1)`                        |
//! | `running:identity`             | `f = ∫ W_s ds`                      |
//! | `running:quadratic:c=C`        | `f = ∫ C·W_s²/2 ds`                 |
//! | `cosine:eps=E`                 | `f = E·cos(δh)`, `ḣ ≡ 1`            |
//! | `indicator:a=A`                | `0` on `{|W(1)| ≤ A}`, `+∞` outside |
//!
//! A second functional can be attached as an additive offset with `|`, e.g.
//! `terminal:quadratic:beta=1|constant:c=0.5`.
//!
//! 1-convexity (`f + ½|·|²_H` convex along `H`): every entry is 1-convex
//! except `terminal:quadratic` and `running:quadratic` with a negative
//! coefficient below `-1`, and `cosine` with `E·|h|²_H > 1`. See
//! [`FunctionalSpec::is_one_convex`].

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::stats::pairwise_sum;
use crate::wiener::{cumulative, dot, h_norm_sq, terminal_value, wiener_integral, CMElement, TimeGrid};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type TimeStateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `g` and `g′` for a terminal functional `f = g(W(1))`.
#[derive(Clone)]
pub enum TerminalFn {
    Quadratic { beta: f64 },
    Linear { slope: f64 },
    Custom { label: String, g: ScalarFn, dg: ScalarFn },
}

impl TerminalFn {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic { beta } => 0.5 * beta * x * x,
            Self::Linear { slope } => slope * x,
            Self::Custom { g, .. } => g(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic { beta } => beta * x,
            Self::Linear { slope } => *slope,
            Self::Custom { dg, .. } => dg(x),
        }
    }

    fn name(&self) -> String {
        match self {
            Self::Quadratic { beta } => format!("terminal:quadratic:beta={beta}"),
            Self::Linear { slope } => format!("terminal:linear:c={slope}"),
            Self::Custom { label, .. } => format!("terminal:custom:{label}"),
        }
    }
}

/// `φ(t, x)` and `∂ₓφ` for a running functional `f = ∫ φ(s, W_s) ds`.
#[derive(Clone)]
pub enum RunningFn {
    Identity,
    Quadratic { c: f64 },
    Custom { label: String, phi: TimeStateFn, dphi: TimeStateFn },
}

impl RunningFn {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Quadratic { c } => 0.5 * c * x * x,
            Self::Custom { phi, .. } => phi(t, x),
        }
    }

    pub fn derivative(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Quadratic { c } => c * x,
            Self::Custom { dphi, .. } => dphi(t, x),
        }
    }

    fn name(&self) -> String {
        match self {
            Self::Identity => "running:identity".into(),
            Self::Quadratic { c } => format!("running:quadratic:c={c}"),
            Self::Custom { label, .. } => format!("running:custom:{label}"),
        }
    }
}

#[derive(Clone)]
pub enum FunctionalKind {
    Constant(f64),
    Linear(CMElement),
    Terminal(TerminalFn),
    Running(RunningFn),
    ScaledCosine { eps: f64, h: CMElement },
    IndicatorTerminal { a: f64 },
}

/// A Wiener functional plus optional additive offsets (`f + o₁ + o₂ + …`,
/// an offset playing the role of `−log K` for a change of base measure).
#[derive(Clone)]
pub struct FunctionalSpec {
    kind: FunctionalKind,
    offsets: Vec<FunctionalSpec>,
}

impl fmt::Debug for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// `D_{t_k} f` on the grid, `[step][dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinDensity {
    pub values: Vec<f64>,
    pub dims: usize,
}

impl MalliavinDensity {
    pub fn at(&self, step: usize) -> &[f64] {
        &self.values[step * self.dims..(step + 1) * self.dims]
    }

    /// `⟨Df, h⟩_H = Σ_k D_{t_k}f·ḣ_k dt`.
    pub fn pair(&self, h: &CMElement) -> f64 {
        dot(&self.values, h.derivative()) * h.grid().dt()
    }
}

fn kv(part: &str, key: &str) -> Result<f64> {
    let Some(v) = part.strip_prefix(key).and_then(|r| r.strip_prefix('=')) else {
        return Err(Error::UnknownCatalog(part.to_string()));
    };
    v.parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse `{v}` as a number in `{part}`")))
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind) -> Self {
        Self { kind, offsets: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(FunctionalKind::Constant(c))
    }
    pub fn linear(h: CMElement) -> Self {
        Self::new(FunctionalKind::Linear(h))
    }
    pub fn terminal(g: TerminalFn) -> Self {
        Self::new(FunctionalKind::Terminal(g))
    }
    pub fn terminal_quadratic(beta: f64) -> Self {
        Self::terminal(TerminalFn::Quadratic { beta })
    }
    pub fn running(phi: RunningFn) -> Self {
        Self::new(FunctionalKind::Running(phi))
    }
    pub fn scaled_cosine(eps: f64, h: CMElement) -> Self {
        Self::new(FunctionalKind::ScaledCosine { eps, h })
    }
    pub fn indicator_terminal(a: f64) -> Result<Self> {
        if a <= 0.0 || a.is_nan() {
            return invalid(format!("indicator half-width must be positive, got {a}"));
        }
        Ok(Self::new(FunctionalKind::IndicatorTerminal { a }))
    }

    /// Add `offset` after any offsets already attached. Evaluation sums left
    /// to right, so `f.with_offset(o).eval = f.eval + o.eval` exactly.
    pub fn with_offset(mut self, offset: FunctionalSpec) -> Self {
        self.offsets.push(offset);
        self
    }

    pub fn kind(&self) -> &FunctionalKind {
        &self.kind
    }
    pub fn offsets(&self) -> &[FunctionalSpec] {
        &self.offsets
    }

    /// Parse a catalog name (see module docs).
    pub fn from_catalog(name: &str, grid: TimeGrid) -> Result<Self> {
        if let Some((head, tail)) = name.split_once('|') {
            return Ok(Self::from_catalog(head, grid)?.with_offset(Self::from_catalog(tail, grid)?));
        }
        let parts: Vec<&str> = name.trim().split(':').collect();
        let unknown = || Error::UnknownCatalog(name.to_string());
        match parts.as_slice() {
            ["constant", c] => Ok(Self::constant(kv(c, "c")?)),
            ["linear", "unit"] => Ok(Self::linear(CMElement::constant(grid, 1, 1.0))),
            ["linear", "ramp"] => Ok(Self::linear(CMElement::from_fn(grid, |t| t)?)),
            ["linear", c] => Ok(Self::linear(CMElement::constant(grid, 1, kv(c, "c")?))),
            ["terminal", "quadratic", b] => Ok(Self::terminal_quadratic(kv(b, "beta")?)),
            ["terminal", "quadratic"] => Ok(Self::terminal_quadratic(1.0)),
            ["terminal", "linear", c] => Ok(Self::terminal(TerminalFn::Linear { slope: kv(c, "c")? })),
            ["running", "identity"] => Ok(Self::running(RunningFn::Identity)),
            ["running", "quadratic", c] => Ok(Self::running(RunningFn::Quadratic { c: kv(c, "c")? })),
            ["cosine", e] => Ok(Self::scaled_cosine(kv(e, "eps")?, CMElement::constant(grid, 1, 1.0))),
            ["indicator", a] => Self::indicator_terminal(kv(a, "a")?),
            _ => Err(unknown()),
        }
    }

    /// Catalog-style name; round-trips through [`Self::from_catalog`] for
    /// catalog entries.
    pub fn name(&self) -> String {
        let base = match &self.kind {
            FunctionalKind::Constant(c) => format!("constant:c={c}"),
            FunctionalKind::Linear(h) => {
                let d = h.derivative();
                if h.dims() == 1 && d.iter().all(|x| *x == 1.0) {
                    "linear:unit".into()
                } else if h.dims() == 1 && d.iter().all(|x| *x == d[0]) {
                    format!("linear:c={}", d[0])
                } else {
                    "linear:custom".into()
                }
            }
            FunctionalKind::Terminal(g) => g.name(),
            FunctionalKind::Running(phi) => phi.name(),
            FunctionalKind::ScaledCosine { eps, .. } => format!("cosine:eps={eps}"),
            FunctionalKind::IndicatorTerminal { a } => format!("indicator:a={a}"),
        };
        self.offsets.iter().fold(base, |acc, o| format!("{acc}|{}", o.name()))
    }

    /// Whether `f + ½|·|²_H` is convex along `H` for this catalog entry.
    pub fn is_one_convex(&self) -> bool {
        let own = match &self.kind {
            FunctionalKind::Constant(_) | FunctionalKind::Linear(_) | FunctionalKind::IndicatorTerminal { .. } => true,
            FunctionalKind::Terminal(TerminalFn::Quadratic { beta }) => *beta >= -1.0,
            FunctionalKind::Terminal(TerminalFn::Linear { .. }) => true,
            FunctionalKind::Running(RunningFn::Identity) => true,
            FunctionalKind::Running(RunningFn::Quadratic { c }) => *c >= -1.0,
            FunctionalKind::ScaledCosine { eps, h } => eps.abs() * h_norm_sq(h) <= 1.0,
            FunctionalKind::Terminal(TerminalFn::Custom { .. }) | FunctionalKind::Running(RunningFn::Custom { .. }) => false,
        };
        own && self.offsets.iter().all(|o| o.is_one_convex())
    }

    fn require_scalar(&self, dims: usize) -> Result<()> {
        if dims != 1 {
            return invalid(format!("`{}` is defined for scalar paths only, got dims = {dims}", self.name()));
        }
        Ok(())
    }

    fn check_len(grid: TimeGrid, dims: usize, path: &[f64]) -> Result<()> {
        if path.len() != grid.n_steps() * dims {
            return Err(Error::GridMismatch {
                expected: format!("{} increments", grid.n_steps() * dims),
                found: format!("{} increments", path.len()),
            });
        }
        Ok(())
    }

    /// `f(path)`, possibly `+∞`. NaN is an error.
    pub fn eval(&self, grid: TimeGrid, dims: usize, path: &[f64]) -> Result<f64> {
        Self::check_len(grid, dims, path)?;
        let own = match &self.kind {
            FunctionalKind::Constant(c) => *c,
            FunctionalKind::Linear(h) => wiener_integral(h, grid, path)?,
            FunctionalKind::Terminal(g) => {
                self.require_scalar(dims)?;
                g.value(terminal_value(path, 1)[0])
            }
            FunctionalKind::Running(phi) => {
                self.require_scalar(dims)?;
                let w = cumulative(path);
                let terms: Vec<f64> = (1..=grid.n_steps()).map(|j| phi.value(grid.t(j), w[j])).collect();
                pairwise_sum(&terms) * grid.dt()
            }
            FunctionalKind::ScaledCosine { eps, h } => eps * wiener_integral(h, grid, path)?.cos(),
            FunctionalKind::IndicatorTerminal { a } => {
                self.require_scalar(dims)?;
                if terminal_value(path, 1)[0].abs() <= *a {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        };
        let mut total = own;
        for o in &self.offsets {
            total += o.eval(grid, dims, path)?;
        }
        if total.is_nan() {
            return Err(Error::NonFinite(format!("{} evaluated to NaN", self.name())));
        }
        Ok(total)
    }

    pub fn has_density(&self) -> bool {
        !matches!(self.kind, FunctionalKind::IndicatorTerminal { .. })
            && self.offsets.iter().all(|o| o.has_density())
    }

    /// Closed-form `D_{t_k} f` along a path.
    pub fn malliavin_density(&self, grid: TimeGrid, dims: usize, path: &[f64]) -> Result<MalliavinDensity> {
        Self::check_len(grid, dims, path)?;
        let n = grid.n_steps();
        let mut values = match &self.kind {
            FunctionalKind::Constant(_) => vec![0.0; n * dims],
            FunctionalKind::Linear(h) => {
                h.grid().ensure_same(&grid)?;
                h.derivative().to_vec()
            }
            FunctionalKind::Terminal(g) => {
                self.require_scalar(dims)?;
                vec![g.derivative(terminal_value(path, 1)[0]); n]
            }
            FunctionalKind::Running(phi) => {
                self.require_scalar(dims)?;
                let w = cumulative(path);
                // D_{t_k} f = Σ_{j=k+1..N} ∂ₓφ(t_j, W(t_j)) dt
                let mut out = vec![0.0; n];
                let mut tail = 0.0;
                for k in (0..n).rev() {
                    tail += phi.derivative(grid.t(k + 1), w[k + 1]) * grid.dt();
                    out[k] = tail;
                }
                out
            }
            FunctionalKind::ScaledCosine { eps, h } => {
                let s = -eps * wiener_integral(h, grid, path)?.sin();
                h.derivative().iter().map(|x| s * x).collect()
            }
            FunctionalKind::IndicatorTerminal { .. } => return Err(Error::NoDensity(self.name())),
        };
        for o in &self.offsets {
            let od = o.malliavin_density(grid, dims, path)?;
            for (v, w) in values.iter_mut().zip(od.values) {
                *v += w;
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Malliavin density of {}", self.name())));
        }
        Ok(MalliavinDensity { values, dims })
    }

    /// Closed form of `−log E[e^{−f}]` in the discrete Gaussian model, where
    /// one is known.
    pub fn exact_neg_log_laplace(&self) -> Option<f64> {
        let own = match &self.kind {
            FunctionalKind::Constant(c) => *c,
            FunctionalKind::Linear(h) => -0.5 * h_norm_sq(h),
            FunctionalKind::Terminal(TerminalFn::Quadratic { beta }) if *beta > -1.0 => 0.5 * (1.0 + beta).ln(),
            FunctionalKind::Terminal(TerminalFn::Linear { slope }) => -0.5 * slope * slope,
            FunctionalKind::IndicatorTerminal { a } => crate::variational::indicator_normalizer(*a).ok()?.neg_log_mass,
            _ => return None,
        };
        let mut total = own;
        for o in &self.offsets {
            match o.kind {
                FunctionalKind::Constant(c) if o.offsets.is_empty() => total += c,
                _ => return None,
            }
        }
        Some(total)
    }

    /// `log L = −f + J⋆` for `L = e^{−f}/E[e^{−f}]`, when `J⋆` is known in
    /// closed form.
    pub fn analytic_log_target(&self) -> Option<impl Fn(TimeGrid, usize, &[f64]) -> f64 + Send + Sync + 'static> {
        let j_star = self.exact_neg_log_laplace()?;
        let f = self.clone();
        Some(move |grid: TimeGrid, dims: usize, path: &[f64]| match f.eval(grid, dims, path) {
            Ok(f) => j_star - f,
            Err(_) => f64::NAN,
        })
    }
}

/// Shift every increment by `ε·ḣ_k·dt`.
pub fn shift_path(path: &[f64], h: &CMElement, eps: f64) -> Vec<f64> {
    let dt = h.grid().dt();
    path.iter().zip(h.derivative()).map(|(w, d)| w + eps * d * dt).collect()
}

/// Central difference `(f(w + εh) − f(w − εh)) / 2ε`.
pub fn fd_directional_derivative(
    spec: &FunctionalSpec,
    grid: TimeGrid,
    dims: usize,
    path: &[f64],
    h: &CMElement,
    eps: f64,
) -> Result<f64> {
    if eps <= 0.0 || !eps.is_finite() {
        return invalid(format!("finite-difference step must be positive, got {eps}"));
    }
    h.grid().ensure_same(&grid)?;
    let plus = spec.eval(grid, dims, &shift_path(path, h, eps))?;
    let minus = spec.eval(grid, dims, &shift_path(path, h, -eps))?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!("{} is infinite near the path", spec.name())));
    }
    Ok((plus - minus) / (2.0 * eps))
}
