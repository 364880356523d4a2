//! Boundary grids, density quadrature, and Cholesky sampling of
//! covariance-defined processes.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{Family, KernelParam};

/// Truncation of the standard normal support.
pub const NORMAL_HALF_WIDTH: f64 = 8.0;

/// Quadrature nodes on the boundary of a domain.
///
/// Circle grids carry the normalized measure `dt/2π` (weights `1/M`); line
/// grids use the trapezoid rule on `[-L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    family: Family,
    half_width: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BoundaryGrid {
    /// `m` equispaced angles `2πj/m` with weights `1/m`.
    pub fn circle(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!("circle grid needs at least 2 nodes, got {m}")));
        }
        let nodes = (0..m).map(|j| TAU * j as f64 / m as f64).collect();
        Ok(Self {
            family: Family::Disk,
            half_width: PI,
            nodes,
            weights: vec![1.0 / m as f64; m],
        })
    }

    /// `n` equispaced nodes on `[-half_width, half_width]` with trapezoid weights.
    pub fn line(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) || n < 2 {
            return Err(Error::InvalidParameter(format!(
                "line grid needs L > 0 and at least 2 nodes, got L = {half_width}, n = {n}"
            )));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let nodes = (0..n).map(|j| -half_width + h * j as f64).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Self {
            family: Family::Heat,
            half_width,
            nodes,
            weights,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `π` for the circle, `L` for a line grid.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Samples a function at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Boundary trace of a dictionary element on this grid.
    pub fn kernel_values(&self, q: &KernelParam) -> Result<Vec<f64>> {
        if q.family() != self.family {
            return Err(Error::MixedFamily);
        }
        Ok(self.sample(|x| q.eval(x)))
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        grid_inner(f, g, self)
    }

    pub fn norm_sq(&self, f: &[f64]) -> Result<f64> {
        grid_inner(f, f, self)
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    /// `Σ_j w_j f_j g_j` without length checks.
    pub(crate) fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * (a * b))
            .sum()
    }
}

/// Weighted inner product `Σ_j w_j f_j g_j` on a boundary grid.
pub fn grid_inner(f: &[f64], g: &[f64], grid: &BoundaryGrid) -> Result<f64> {
    grid.check_len(f.len())?;
    grid.check_len(g.len())?;
    Ok(grid.dot(f, g))
}

/// Law of a scalar random variable for density-mode signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensitySpec {
    Uniform { lo: f64, hi: f64 },
    /// Standard normal, truncated to `[-8, 8]`.
    StandardNormal,
    /// Density proportional to `exp(-1/((s - π)² + 1))` on `[0, π]` and
    /// `exp(-1/((s + π)² + 1))` on `[-π, 0)`.
    LaplaceExample,
}

impl DensitySpec {
    fn pieces(&self) -> Vec<(f64, f64)> {
        match *self {
            DensitySpec::Uniform { lo, hi } => vec![(lo, hi)],
            DensitySpec::StandardNormal => vec![(-NORMAL_HALF_WIDTH, NORMAL_HALF_WIDTH)],
            DensitySpec::LaplaceExample => vec![(-PI, 0.0), (0.0, PI)],
        }
    }

    /// Unnormalized density.
    fn weight(&self, s: f64) -> f64 {
        match *self {
            DensitySpec::Uniform { .. } => 1.0,
            DensitySpec::StandardNormal => (-0.5 * s * s).exp(),
            DensitySpec::LaplaceExample => {
                if s >= 0.0 {
                    (-1.0 / ((s - PI).powi(2) + 1.0)).exp()
                } else {
                    (-1.0 / ((s + PI).powi(2) + 1.0)).exp()
                }
            }
        }
    }

    fn normalizer(&self, quadrature_mass: f64) -> f64 {
        match *self {
            DensitySpec::Uniform { lo, hi } => hi - lo,
            DensitySpec::StandardNormal => (2.0 * PI).sqrt(),
            DensitySpec::LaplaceExample => quadrature_mass,
        }
    }
}

/// Nodes, weights and density values such that `Σ w_i p_i g(s_i) ≈ E g(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityQuadrature {
    support: (f64, f64),
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl DensityQuadrature {
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Probability mass attached to each node, `w_i p(s_i)`.
    pub fn masses(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.density).map(|(w, p)| w * p).collect()
    }

    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.masses())
            .map(|(&s, m)| m * g(s))
            .sum()
    }

    /// Seeded draws from the law: a cell between neighbouring nodes is chosen
    /// with probability given by the trapezoid mass of the density on it, then
    /// a point is drawn uniformly inside the cell.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        if self.nodes.len() == 1 {
            return vec![self.nodes[0]; n];
        }
        let mut cdf = Vec::with_capacity(self.nodes.len() - 1);
        let mut acc = 0.0;
        for k in 0..self.nodes.len() - 1 {
            acc += 0.5 * (self.density[k] + self.density[k + 1]) * (self.nodes[k + 1] - self.nodes[k]);
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let (a, b) = (self.nodes[k], self.nodes[k + 1]);
                a + (b - a) * rng.random::<f64>()
            })
            .collect()
    }

    /// A single node carrying all of the probability.
    pub fn point_mass(at: f64) -> Self {
        Self {
            support: (at, at),
            nodes: vec![at],
            weights: vec![1.0],
            density: vec![1.0],
        }
    }
}

/// Composite Simpson quadrature for a density, applied piecewise on its
/// smooth pieces. `nodes_per_piece` is rounded up to the next odd number.
pub fn make_density_quadrature(spec: DensitySpec, nodes_per_piece: usize) -> Result<DensityQuadrature> {
    if let DensitySpec::Uniform { lo, hi } = spec {
        if !(hi > lo) {
            return Err(Error::InvalidParameter(format!("empty uniform support [{lo}, {hi}]")));
        }
    }
    let n = (nodes_per_piece.max(3)) | 1;
    let mut nodes: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (a, b) in spec.pieces() {
        let h = (b - a) / (n - 1) as f64;
        for j in 0..n {
            let s = if j == n - 1 { b } else { a + h * j as f64 };
            let w = h / 3.0
                * match j {
                    0 => 1.0,
                    j if j == n - 1 => 1.0,
                    j if j % 2 == 1 => 4.0,
                    _ => 2.0,
                };
            // shared endpoint between consecutive pieces
            if j == 0 && nodes.last().is_some_and(|&last| (last - s).abs() <= 1e-14 * (1.0 + s.abs())) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            nodes.push(s);
            weights.push(w);
        }
    }
    let raw: Vec<f64> = nodes.iter().map(|&s| spec.weight(s)).collect();
    let mass: f64 = raw.iter().zip(&weights).map(|(p, w)| p * w).sum();
    let z = spec.normalizer(mass);
    let density = raw.into_iter().map(|p| p / z).collect();
    let support = (nodes[0], *nodes.last().unwrap());
    Ok(DensityQuadrature {
        support,
        nodes,
        weights,
        density,
    })
}

/// Brownian bridge covariance `min(s, t) − s t / T` on `[0, T]`.
pub fn brownian_bridge_covariance(horizon: f64) -> impl Fn(f64, f64) -> f64 + Copy {
    move |s, t| s.min(t) - s * t / horizon
}

/// Evaluates a covariance function on every pair of grid nodes.
pub fn covariance_matrix(cov: impl Fn(f64, f64) -> f64, grid: &BoundaryGrid) -> DMatrix<f64> {
    let x = grid.nodes();
    DMatrix::from_fn(x.len(), x.len(), |i, j| cov(x[i], x[j]))
}

/// Lower Cholesky factor of a covariance matrix on a grid.
///
/// Rows with exactly zero variance are pinned (excluded from the factor) so
/// that sampled paths reproduce the mean there exactly. The remaining block is
/// factored with a diagonal jitter of `1e-12 · max diag(C)`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    dim: usize,
    active: Vec<usize>,
    lower: DMatrix<f64>,
}

impl CovarianceFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.ncols(),
            });
        }
        let mut active = Vec::with_capacity(n);
        for i in 0..n {
            let d = cov[(i, i)];
            if d < 0.0 || !d.is_finite() {
                return Err(Error::NotPsd { index: i, pivot: d });
            }
            if d > 0.0 {
                active.push(i);
            }
        }
        let max_diag = active.iter().map(|&i| cov[(i, i)]).fold(0.0, f64::max);
        let jitter = 1e-12 * max_diag;
        let k = active.len();
        let sub = DMatrix::from_fn(k, k, |a, b| {
            let v = 0.5 * (cov[(active[a], active[b])] + cov[(active[b], active[a])]);
            if a == b {
                v + jitter
            } else {
                v
            }
        });
        let lower = match nalgebra::Cholesky::new(sub) {
            Some(ch) => ch.unpack(),
            None if k == 0 => DMatrix::zeros(0, 0),
            None => return Err(Error::NotPsd { index: 0, pivot: f64::NAN }),
        };
        Ok(Self { dim: n, active, lower })
    }

    /// Grid dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of factor columns.
    pub fn rank(&self) -> usize {
        self.active.len()
    }

    /// Column `j` of the factor, scattered back to full grid length.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (a, &i) in self.active.iter().enumerate() {
            v[i] = self.lower[(a, j)];
        }
        v
    }

    /// `L z` scattered to full grid length; `z` has length `rank()`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let y = &self.lower * DVector::from_column_slice(z);
        let mut v = vec![0.0; self.dim];
        for (a, &i) in self.active.iter().enumerate() {
            v[i] = y[a];
        }
        v
    }
}

/// Draws `n_paths` realizations `mean + L z` on the grid, one row per path.
///
/// Path `i` draws its normals from ChaCha8 stream `i` of `seed`, so paths can
/// be generated in any order.
pub fn sample_paths_from_covariance(
    mean: &[f64],
    cov: impl Fn(f64, f64) -> f64,
    grid: &BoundaryGrid,
    n_paths: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    grid.check_len(mean.len())?;
    let factor = CovarianceFactor::new(&covariance_matrix(cov, grid))?;
    Ok(sample_paths_with_factor(mean, &factor, n_paths, seed))
}

pub(crate) fn sample_paths_with_factor(
    mean: &[f64],
    factor: &CovarianceFactor,
    n_paths: usize,
    seed: u64,
) -> DMatrix<f64> {
    let n = mean.len();
    let mut out = DMatrix::zeros(n_paths, n);
    for p in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let z: Vec<f64> = (0..factor.rank()).map(|_| rng.sample(StandardNormal)).collect();
        let dev = factor.apply(&z);
        for j in 0..n {
            out[(p, j)] = mean[j] + dev[j];
        }
    }
    out
}
