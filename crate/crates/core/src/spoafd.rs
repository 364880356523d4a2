//! Random boundary data, the statistical maximal selection principle, and the
//! two stochastic expansions: SPOAFD2 (one system chosen for the whole
//! distribution) and SPOAFD1 (the system of the mean).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::discretize::{BoundaryGrid, CovarianceFactor, DensityQuadrature};
use crate::error::{Error, Result};
use crate::kernels::KernelParam;
use crate::poafd::{
    objective_profile, orthogonalize, run_greedy, select_explicit, CandidateSet, Components, DecomposeOptions,
    Expansion, OrthoSystem, SearchMethod, Selection, SelectionAudit, Termination,
};

/// `f(boundary coordinate, value of the random parameter)`.
pub type BivariateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A random boundary function, described by its law.
#[derive(Clone)]
pub enum StochasticSignal {
    /// `f(t, X)` with `X` distributed according to a quadrature rule.
    BivariateDensity { f: BivariateFn, quad: DensityQuadrature },
    /// Gaussian-type process given by its mean and covariance on the grid.
    CovarianceProcess { mean: Vec<f64>, cov: DMatrix<f64> },
    /// Equally likely sample paths, one per row.
    SamplePaths { paths: DMatrix<f64>, seed: u64 },
}

impl fmt::Debug for StochasticSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StochasticSignal::BivariateDensity { quad, .. } => f
                .debug_struct("BivariateDensity")
                .field("nodes", &quad.len())
                .field("support", &quad.support())
                .finish(),
            StochasticSignal::CovarianceProcess { mean, .. } => {
                f.debug_struct("CovarianceProcess").field("dim", &mean.len()).finish()
            }
            StochasticSignal::SamplePaths { paths, seed } => f
                .debug_struct("SamplePaths")
                .field("paths", &paths.nrows())
                .field("seed", seed)
                .finish(),
        }
    }
}

impl StochasticSignal {
    pub fn bivariate(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, quad: DensityQuadrature) -> Self {
        StochasticSignal::BivariateDensity { f: Arc::new(f), quad }
    }

    /// A deterministic function viewed as a random one with a point-mass law.
    pub fn constant(g: Vec<f64>) -> Self {
        let n = g.len();
        StochasticSignal::CovarianceProcess {
            mean: g,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            StochasticSignal::BivariateDensity { .. } => "density",
            StochasticSignal::CovarianceProcess { .. } => "covariance",
            StochasticSignal::SamplePaths { .. } => "paths",
        }
    }

    fn validate(&self, grid: &BoundaryGrid) -> Result<()> {
        match self {
            StochasticSignal::BivariateDensity { quad, .. } => {
                if quad.is_empty() {
                    return Err(Error::InvalidParameter("empty density quadrature".into()));
                }
            }
            StochasticSignal::CovarianceProcess { mean, cov } => {
                grid.check_len(mean.len())?;
                grid.check_len(cov.nrows())?;
                grid.check_len(cov.ncols())?;
                let scale = cov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for i in 0..cov.nrows() {
                    if cov[(i, i)] < 0.0 {
                        return Err(Error::NotPsd {
                            index: i,
                            pivot: cov[(i, i)],
                        });
                    }
                    for j in 0..i {
                        if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                            return Err(Error::InvalidParameter(format!("covariance not symmetric at ({i}, {j})")));
                        }
                    }
                }
            }
            StochasticSignal::SamplePaths { paths, .. } => {
                grid.check_len(paths.ncols())?;
                if paths.nrows() < 2 {
                    return Err(Error::InvalidParameter("need at least 2 sample paths".into()));
                }
            }
        }
        Ok(())
    }

    /// Grid values of `f(·, s)` for a density-mode signal.
    pub fn slice(&self, grid: &BoundaryGrid, s: f64) -> Result<Vec<f64>> {
        match self {
            StochasticSignal::BivariateDensity { f, .. } => Ok(grid.sample(|t| f(t, s))),
            _ => Err(Error::InvalidParameter(format!("{} signals have no parameter slices", self.mode()))),
        }
    }

    /// Pointwise mean `E f(t)`.
    pub fn mean(&self, grid: &BoundaryGrid) -> Result<Vec<f64>> {
        self.validate(grid)?;
        Ok(match self {
            StochasticSignal::BivariateDensity { f, quad } => {
                let mut m = vec![0.0; grid.len()];
                for (&s, p) in quad.nodes().iter().zip(quad.masses()) {
                    for (acc, &t) in m.iter_mut().zip(grid.nodes()) {
                        *acc += p * f(t, s);
                    }
                }
                m
            }
            StochasticSignal::CovarianceProcess { mean, .. } => mean.clone(),
            StochasticSignal::SamplePaths { paths, .. } => {
                let n = paths.nrows() as f64;
                paths.row_sum().iter().map(|v| v / n).collect()
            }
        })
    }

    /// `E‖f‖²` on the grid.
    pub fn norm_sq(&self, grid: &BoundaryGrid) -> Result<f64> {
        self.validate(grid)?;
        Ok(match self {
            StochasticSignal::BivariateDensity { quad, .. } => quad
                .nodes()
                .iter()
                .zip(quad.masses())
                .map(|(&s, p)| {
                    let g = self.slice(grid, s).expect("density mode");
                    p * grid.dot(&g, &g)
                })
                .sum(),
            StochasticSignal::CovarianceProcess { mean, cov } => {
                grid.dot(mean, mean) + grid.weights().iter().enumerate().map(|(j, w)| w * cov[(j, j)]).sum::<f64>()
            }
            StochasticSignal::SamplePaths { paths, .. } => {
                let rows: f64 = paths
                    .row_iter()
                    .map(|r| {
                        let v: Vec<f64> = r.iter().copied().collect();
                        grid.dot(&v, &v)
                    })
                    .sum();
                rows / paths.nrows() as f64
            }
        })
    }

    /// `‖var f‖_{L¹} = ∫ Var f(t) dσ(t)`.
    pub fn variance_l1(&self, grid: &BoundaryGrid) -> Result<f64> {
        self.validate(grid)?;
        let mean = self.mean(grid)?;
        let var: Vec<f64> = match self {
            StochasticSignal::BivariateDensity { f, quad } => {
                let mut v = vec![0.0; grid.len()];
                for (&s, p) in quad.nodes().iter().zip(quad.masses()) {
                    for ((acc, &t), m) in v.iter_mut().zip(grid.nodes()).zip(&mean) {
                        let d = f(t, s) - m;
                        *acc += p * d * d;
                    }
                }
                v
            }
            StochasticSignal::CovarianceProcess { cov, .. } => cov.diagonal().iter().copied().collect(),
            StochasticSignal::SamplePaths { paths, .. } => {
                let n = paths.nrows() as f64;
                (0..grid.len())
                    .map(|j| paths.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n)
                    .collect()
            }
        };
        Ok(grid.weights().iter().zip(&var).map(|(w, v)| w * v).sum())
    }

    /// Second-moment factorization of `f` (or of `f − E f` when `centered`).
    pub(crate) fn components(&self, grid: &BoundaryGrid, centered: bool) -> Result<Components> {
        self.validate(grid)?;
        let n = grid.len();
        let mean = if centered { Some(self.mean(grid)?) } else { None };
        let shift = |mut v: Vec<f64>| {
            if let Some(m) = &mean {
                for (a, b) in v.iter_mut().zip(m) {
                    *a -= b;
                }
            }
            v
        };
        Ok(match self {
            StochasticSignal::BivariateDensity { quad, .. } => {
                let rows = quad
                    .nodes()
                    .iter()
                    .map(|&s| Ok(shift(self.slice(grid, s)?)))
                    .collect::<Result<Vec<_>>>()?;
                Components::from_rows(rows, quad.masses(), n)
            }
            StochasticSignal::CovarianceProcess { mean: m, cov } => {
                let factor = CovarianceFactor::new(cov)?;
                let mut rows = Vec::with_capacity(factor.rank() + 1);
                if !centered {
                    rows.push(m.clone());
                }
                rows.extend((0..factor.rank()).map(|j| factor.column(j)));
                let k = rows.len();
                Components::from_rows(rows, vec![1.0; k], n)
            }
            StochasticSignal::SamplePaths { paths, .. } => {
                let rows: Vec<Vec<f64>> = paths.row_iter().map(|r| shift(r.iter().copied().collect())).collect();
                let w = 1.0 / paths.nrows() as f64;
                Components::from_rows(rows, vec![w; paths.nrows()], n)
            }
        })
    }
}

/// `E|⟨f, E^q_{n+1}⟩|²` evaluated directly from the signal's law.
///
/// `q` is orthogonalized as given; use [`OrthoSystem::resolve`] first to get
/// the multiple kernel for a repeated atom.
pub fn expected_objective(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    system: &OrthoSystem,
    q: &KernelParam,
) -> Result<f64> {
    signal.validate(grid)?;
    let e = orthogonalize(system, q)?.basis;
    Ok(match signal {
        StochasticSignal::BivariateDensity { quad, .. } => quad
            .nodes()
            .iter()
            .zip(quad.masses())
            .map(|(&s, p)| {
                let g = signal.slice(grid, s).expect("density mode");
                p * grid.dot(&g, &e).powi(2)
            })
            .sum(),
        StochasticSignal::CovarianceProcess { mean, cov } => {
            let we = DVector::from_iterator(e.len(), e.iter().zip(grid.weights()).map(|(a, w)| a * w));
            grid.dot(mean, &e).powi(2) + we.dot(&(cov * &we))
        }
        StochasticSignal::SamplePaths { paths, .. } => {
            let total: f64 = paths
                .row_iter()
                .map(|r| {
                    let v: Vec<f64> = r.iter().copied().collect();
                    grid.dot(&v, &e).powi(2)
                })
                .sum();
            total / paths.nrows() as f64
        }
    })
}

/// Statistical maximal selection: argmax of `E|⟨f, E^q_{n+1}⟩|²`, first
/// candidate on ties. The reported objective is the expectation itself.
pub fn smsp_select(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    system: &OrthoSystem,
    candidates: &CandidateSet,
) -> Result<Selection> {
    let comps = signal.components(grid, false)?;
    let (index, c, objective) = select_explicit(system, &comps, candidates.atoms())?;
    Ok(Selection {
        index,
        param: c.param,
        objective,
    })
}

/// One orthonormal system shared by every realization of a random signal.
#[derive(Debug, Clone)]
pub struct StochasticExpansion {
    pub system: OrthoSystem,
    /// Cumulative `Σ_k E|⟨f,E_k⟩|²`.
    pub expected_energy_trace: Vec<f64>,
    /// `E‖f‖²`.
    pub n_norm_sq: f64,
    pub relative_error_trace: Vec<f64>,
    pub audit: Vec<SelectionAudit>,
    pub termination: Termination,
    pub search: SearchMethod,
    pub realization_cache: BTreeMap<String, Vec<f64>>,
}

impl StochasticExpansion {
    pub fn len(&self) -> usize {
        self.system.len()
    }

    pub fn is_empty(&self) -> bool {
        self.system.is_empty()
    }

    /// Computes and stores `F_n(ω)` under `id`.
    pub fn cache_realization(&mut self, id: &str, realization: &[f64]) -> Result<&[f64]> {
        let f = realize_coeffs(self, realization)?;
        self.realization_cache.insert(id.to_string(), f);
        Ok(&self.realization_cache[id])
    }

    /// Relative error `(‖f_ω‖² − Σ_{k≤n} F_n[k]²)/‖f_ω‖²` for `n = 1..len`.
    pub fn realization_error_trace(&self, realization: &[f64]) -> Result<Vec<f64>> {
        let f = realize_coeffs(self, realization)?;
        let grid = self.system.grid();
        let total = grid.dot(realization, realization);
        if !(total > 0.0) {
            return Err(Error::ZeroSignal);
        }
        let mut acc = 0.0;
        Ok(f.iter()
            .map(|c| {
                acc += c * c;
                (total - acc) / total
            })
            .collect())
    }
}

/// `F_n = (⟨f_ω,E_1⟩, …, ⟨f_ω,E_n⟩)` for one realization.
pub fn realize_coeffs(expansion: &StochasticExpansion, realization: &[f64]) -> Result<Vec<f64>> {
    expansion.system.coefficients(realization)
}

/// SPOAFD2: atoms chosen by the statistical maximal selection principle.
pub fn spoafd2_decompose(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    candidates: &CandidateSet,
    opts: &DecomposeOptions,
) -> Result<StochasticExpansion> {
    let comps = signal.components(grid, false)?;
    let n_norm_sq = signal.norm_sq(grid)?;
    let run = run_greedy(grid, &comps, n_norm_sq, candidates, opts)?;
    Ok(StochasticExpansion {
        system: run.system,
        expected_energy_trace: run.energy_trace,
        n_norm_sq,
        relative_error_trace: run.relative_error_trace,
        audit: run.audit,
        termination: run.termination,
        search: run.search,
        realization_cache: BTreeMap::new(),
    })
}

/// SPOAFD1 output: the expansion of the mean, the same system viewed as a
/// stochastic expansion, and `‖var f‖_{L¹}`.
#[derive(Debug, Clone)]
pub struct Spoafd1 {
    pub mean: Vec<f64>,
    pub mean_expansion: Expansion,
    pub stochastic: StochasticExpansion,
    pub variance_l1: f64,
}

/// SPOAFD1: the deterministic expansion of `E f`, reused for every realization.
pub fn spoafd1_decompose(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    candidates: &CandidateSet,
    opts: &DecomposeOptions,
) -> Result<Spoafd1> {
    let mean = signal.mean(grid)?;
    let mean_expansion = crate::poafd::poafd_decompose(&mean, grid, candidates, opts)?;
    let comps = signal.components(grid, false)?;
    let n_norm_sq = signal.norm_sq(grid)?;
    let mut energy = 0.0;
    let expected_energy_trace: Vec<f64> = mean_expansion
        .system
        .basis()
        .iter()
        .map(|e| {
            energy += comps.energy(grid, e);
            energy
        })
        .collect();
    let relative_error_trace = expected_energy_trace.iter().map(|e| (n_norm_sq - e) / n_norm_sq).collect();
    let stochastic = StochasticExpansion {
        system: mean_expansion.system.clone(),
        expected_energy_trace,
        n_norm_sq,
        relative_error_trace,
        audit: mean_expansion.audit.clone(),
        termination: mean_expansion.termination,
        search: mean_expansion.search,
        realization_cache: BTreeMap::new(),
    };
    Ok(Spoafd1 {
        mean,
        mean_expansion,
        stochastic,
        variance_l1: signal.variance_l1(grid)?,
    })
}

/// Both sides of the SPOAFD1 error bounds at one truncation `n`, in squared
/// `N`-norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub n: usize,
    /// `E‖u^{(n)}_{f_ω} − u^{(n)}_{f̃}‖²` on the boundary, i.e. `Σ_{k≤n} E⟨r_ω,E_k⟩²`.
    pub lift_gap: f64,
    /// `‖d_u‖²`: the part of `f_ω` outside the span of the whole mean system.
    pub d_norm_sq: f64,
    /// `‖var f‖_{L¹} − Σ_{j≤n} E|⟨r_ω,E_j⟩|²`.
    pub d_bound: f64,
    pub variance_l1: f64,
}

impl BoundRow {
    pub fn holds(&self, slack: f64) -> bool {
        self.lift_gap <= self.variance_l1 + slack && self.d_norm_sq <= self.d_bound + slack
    }
}

/// Evaluates the SPOAFD1 bounds for `n = 1..=n_max` against a (preferably
/// converged) SPOAFD1 expansion.
///
/// `‖d_u‖²` is computed directly as `E‖f_ω − P f_ω‖²` with `P` the projection
/// onto the full system; the right-hand sides go through `r_ω = f_ω − f̃`.
pub fn spoafd1_bounds(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    expansion: &Spoafd1,
    n_max: usize,
) -> Result<Vec<BoundRow>> {
    let system = &expansion.mean_expansion.system;
    let centered = signal.components(grid, true)?;
    let full = signal.components(grid, false)?;

    let mut d_norm_sq = 0.0;
    for i in 0..full.len() {
        let g: Vec<f64> = full.vectors.row(i).iter().copied().collect();
        let c = system.coefficients(&g)?;
        let p = system.synthesize(&c);
        let r: Vec<f64> = g.iter().zip(&p).map(|(a, b)| a - b).collect();
        d_norm_sq += full.weights[i] * grid.dot(&r, &r);
    }

    let mut acc = 0.0;
    Ok(system
        .basis()
        .iter()
        .take(n_max)
        .enumerate()
        .map(|(k, e)| {
            acc += centered.energy(grid, e);
            BoundRow {
                n: k + 1,
                lift_gap: acc,
                d_norm_sq,
                d_bound: expansion.variance_l1 - acc,
                variance_l1: expansion.variance_l1,
            }
        })
        .collect())
}

/// Statistical boundary-vanishing profile: `max E|⟨f, E_q⟩|²` per radius
/// (disk) or per `s` (heat) over `n_lateral` positions.
pub fn statistical_bvc_scan(
    signal: &StochasticSignal,
    grid: &BoundaryGrid,
    levels: &[f64],
    n_lateral: usize,
) -> Result<Vec<f64>> {
    let comps = signal.components(grid, false)?;
    objective_profile(grid, &comps, levels, n_lateral)
}
