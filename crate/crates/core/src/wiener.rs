//! Discretized classical Wiener space on `[0, 1]`.
//!
//! Paths are stored as increments `ΔW[path][step][dim]`, row-major. A
//! Cameron–Martin element is represented by its piecewise-constant derivative
//! on the grid cells.

use std::borrow::Cow;
use std::f64::consts::TAU;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::stats::pairwise_sum;

/// Uniform grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return invalid(format!("grid needs at least 2 steps, got {n_steps}"));
        }
        Ok(Self { n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        1.0
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Node `t_k`; `t(n_steps)` is exactly 1.
    pub fn t(&self, k: usize) -> f64 {
        k as f64 / self.n_steps as f64
    }

    /// Short stable fingerprint used to tag saved policies and reports.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("uniform;horizon=1;n_steps={}", self.n_steps).as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: format!("n_steps={}", self.n_steps),
                found: format!("n_steps={}", other.n_steps),
            });
        }
        Ok(())
    }
}

/// Standard normal draw for element `index` of the stream. Consumes exactly
/// two words, so element `index` always reads words `2*index` and `2*index+1`.
pub(crate) fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    // 53-bit uniforms; u1 in (0, 1] keeps the log finite.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

pub(crate) fn path_stream(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// A batch of Brownian increment paths.
///
/// Increments are a pure function of `(seed, path, step, dim)`. A batch is
/// either materialized or streaming; streaming batches regenerate each path on
/// request and are bit-identical to the materialized form.
#[derive(Debug, Clone)]
pub struct BrownianBatch {
    grid: TimeGrid,
    m_paths: usize,
    dims: usize,
    seed: u64,
    increments: Option<Vec<f64>>,
}

/// Draw a materialized batch.
pub fn sample_brownian(grid: TimeGrid, m_paths: usize, dims: usize, seed: u64) -> Result<BrownianBatch> {
    let mut batch = BrownianBatch::streaming(grid, m_paths, dims, seed)?;
    let len = grid.n_steps() * dims;
    let rows = crate::stats::par_map_paths(m_paths, |i| batch.generate(i));
    let mut all = Vec::with_capacity(m_paths * len);
    for row in rows {
        all.extend_from_slice(&row);
    }
    batch.increments = Some(all);
    Ok(batch)
}

impl BrownianBatch {
    pub fn streaming(grid: TimeGrid, m_paths: usize, dims: usize, seed: u64) -> Result<Self> {
        if m_paths == 0 {
            return invalid("m_paths must be at least 1");
        }
        if dims == 0 {
            return invalid("dims must be at least 1");
        }
        Ok(Self {
            grid,
            m_paths,
            dims,
            seed,
            increments: None,
        })
    }

    /// Wrap explicit increments (synthetic paths for tests and debugging).
    pub fn from_increments(grid: TimeGrid, dims: usize, increments: Vec<f64>) -> Result<Self> {
        let len = grid.n_steps() * dims;
        if dims == 0 || increments.is_empty() || increments.len() % len != 0 {
            return invalid(format!(
                "increment array of length {} is not a multiple of n_steps*dims = {len}",
                increments.len()
            ));
        }
        Ok(Self {
            grid,
            m_paths: increments.len() / len,
            dims,
            seed: 0,
            increments: Some(increments),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn m_paths(&self) -> usize {
        self.m_paths
    }
    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn is_materialized(&self) -> bool {
        self.increments.is_some()
    }

    /// Length of one path's increment row.
    pub fn row_len(&self) -> usize {
        self.grid.n_steps() * self.dims
    }

    fn generate(&self, path: usize) -> Vec<f64> {
        let sd = self.grid.dt().sqrt();
        let mut rng = path_stream(self.seed, path);
        (0..self.row_len()).map(|_| sd * box_muller(&mut rng)).collect()
    }

    /// Single increment, addressable without touching any other element.
    pub fn increment(&self, path: usize, step: usize, dim: usize) -> f64 {
        let idx = step * self.dims + dim;
        if let Some(inc) = &self.increments {
            return inc[path * self.row_len() + idx];
        }
        let mut rng = path_stream(self.seed, path);
        rng.set_word_pos(4 * idx as u128);
        self.grid.dt().sqrt() * box_muller(&mut rng)
    }

    /// Increments of one path, `[step][dim]` row-major.
    pub fn path(&self, path: usize) -> Cow<'_, [f64]> {
        match &self.increments {
            Some(inc) => {
                let len = self.row_len();
                Cow::Borrowed(&inc[path * len..(path + 1) * len])
            }
            None => Cow::Owned(self.generate(path)),
        }
    }

    /// `W(1)` of one path (all dims).
    pub fn terminal(&self, path: usize) -> Vec<f64> {
        terminal_value(&self.path(path), self.dims)
    }

    /// Columnar CSV dump `path_id,step,dim,dW` for debugging.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "step", "dim", "dW"])?;
        for p in 0..self.m_paths {
            let row = self.path(p);
            for s in 0..self.grid.n_steps() {
                for d in 0..self.dims {
                    w.write_record(&[
                        p.to_string(),
                        s.to_string(),
                        d.to_string(),
                        format!("{:e}", row[s * self.dims + d]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `W(1) = Σ_k ΔW_k` per dimension.
pub fn terminal_value(increments: &[f64], dims: usize) -> Vec<f64> {
    (0..dims)
        .map(|d| {
            let col: Vec<f64> = increments.iter().skip(d).step_by(dims).copied().collect();
            pairwise_sum(&col)
        })
        .collect()
}

/// Partial sums `W(t_k)`, `k = 0..=n_steps`, for a scalar path.
pub fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for &x in increments {
        acc += x;
        out.push(acc);
    }
    out
}

/// Cameron–Martin element stored as its derivative `ḣ[step][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMElement {
    grid: TimeGrid,
    dims: usize,
    derivative: Vec<f64>,
}

impl CMElement {
    pub fn new(grid: TimeGrid, dims: usize, derivative: Vec<f64>) -> Result<Self> {
        if dims == 0 || derivative.len() != grid.n_steps() * dims {
            return invalid(format!(
                "derivative length {} does not match n_steps*dims = {}",
                derivative.len(),
                grid.n_steps() * dims
            ));
        }
        if derivative.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Cameron–Martin derivative".into()));
        }
        Ok(Self { grid, dims, derivative })
    }

    pub fn zero(grid: TimeGrid, dims: usize) -> Self {
        Self::constant(grid, dims, 0.0)
    }

    pub fn constant(grid: TimeGrid, dims: usize, value: f64) -> Self {
        Self {
            grid,
            dims,
            derivative: vec![value; grid.n_steps() * dims],
        }
    }

    /// Scalar element with `ḣ_k = g(t_k)`.
    pub fn from_fn(grid: TimeGrid, g: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, 1, (0..grid.n_steps()).map(|k| g(grid.t(k))).collect())
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }
    pub fn at(&self, step: usize) -> &[f64] {
        &self.derivative[step * self.dims..(step + 1) * self.dims]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            dims: self.dims,
            derivative: self.derivative.iter().map(|x| c * x).collect(),
        }
    }

    /// `⟨h, k⟩_H = Σ ḣ_k·k̇_k dt`.
    pub fn inner(&self, other: &CMElement) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        if self.dims != other.dims {
            return invalid("dimension mismatch in Cameron–Martin inner product");
        }
        let prods: Vec<f64> = self
            .derivative
            .iter()
            .zip(&other.derivative)
            .map(|(a, b)| a * b)
            .collect();
        Ok(pairwise_sum(&prods) * self.grid.dt())
    }

    fn check_path(&self, grid: TimeGrid, path: &[f64]) -> Result<()> {
        self.grid.ensure_same(&grid)?;
        if path.len() != self.derivative.len() {
            return Err(Error::GridMismatch {
                expected: format!("{} increments", self.derivative.len()),
                found: format!("{} increments", path.len()),
            });
        }
        Ok(())
    }
}

/// `|h|²_H = Σ_k |ḣ_k|² dt`.
pub fn h_norm_sq(h: &CMElement) -> f64 {
    let sq: Vec<f64> = h.derivative.iter().map(|x| x * x).collect();
    pairwise_sum(&sq) * h.grid.dt()
}

/// `δh = Σ_k ḣ_k·ΔW_k` along one path.
pub fn wiener_integral(h: &CMElement, grid: TimeGrid, path: &[f64]) -> Result<f64> {
    h.check_path(grid, path)?;
    Ok(dot(&h.derivative, path))
}

/// Wick exponential `ρ(δh) = exp(δh − ½|h|²_H)`.
pub fn wick_exp(h: &CMElement, grid: TimeGrid, path: &[f64]) -> Result<f64> {
    Ok((wiener_integral(h, grid, path)? - 0.5 * h_norm_sq(h)).exp())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prods)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn grid_endpoints_exact() {
        for n in [2, 3, 49, 64, 100, 1000] {
            let g = grid(n);
            assert_eq!(g.t(0), 0.0);
            assert_eq!(g.t(n), 1.0);
        }
        assert!(TimeGrid::new(1).is_err());
    }

    #[test]
    fn rejects_empty_batches() {
        assert!(sample_brownian(grid(4), 0, 1, 1).is_err());
        assert!(sample_brownian(grid(4), 1, 0, 1).is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let a = sample_brownian(grid(8), 4, 1, 7).unwrap();
        let b = sample_brownian(grid(8), 4, 1, 7).unwrap();
        for p in 0..4 {
            assert_eq!(a.path(p), b.path(p));
        }
        let c = sample_brownian(grid(8), 4, 1, 8).unwrap();
        assert_ne!(a.path(0), c.path(0));
    }

    #[test]
    fn streaming_and_random_access_agree() {
        let g = grid(16);
        let mat = sample_brownian(g, 5, 2, 11).unwrap();
        let lazy = BrownianBatch::streaming(g, 5, 2, 11).unwrap();
        for p in 0..5 {
            assert_eq!(mat.path(p), lazy.path(p));
            for s in [0, 7, 15] {
                for d in 0..2 {
                    assert_eq!(mat.increment(p, s, d).to_bits(), lazy.increment(p, s, d).to_bits());
                }
            }
        }
    }

    #[test]
    fn norm_examples() {
        let g = grid(256);
        assert_eq!(h_norm_sq(&CMElement::zero(g, 1)), 0.0);
        assert_eq!(h_norm_sq(&CMElement::constant(g, 1, 1.0)), 1.0);
        let h = CMElement::from_fn(g, |t| t).unwrap();
        assert!((h_norm_sq(&h) - 1.0 / 3.0).abs() < 1.0 / 256.0);
    }

    #[test]
    fn wiener_integral_synthetic_path() {
        let g = grid(10);
        let path = vec![g.dt(); 10];
        let h = CMElement::constant(g, 1, 1.0);
        assert!((wiener_integral(&h, g, &path).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wiener_integral(&CMElement::zero(g, 1), g, &path).unwrap(), 0.0);
        assert_eq!(wick_exp(&CMElement::zero(g, 1), g, &path).unwrap(), 1.0);
        assert!(wiener_integral(&h, grid(12), &path).is_err());
    }

    #[test]
    fn csv_export_has_one_row_per_element() {
        let b = sample_brownian(grid(3), 2, 2, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);
        assert!(text.starts_with("path_id,step,dim,dW"));
    }
}
