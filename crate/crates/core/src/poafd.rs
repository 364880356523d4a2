//! Pre-orthogonal adaptive Fourier decomposition: candidate dictionaries,
//! consecutive Gram-Schmidt with multiple kernels, and the greedy engine
//! shared by the deterministic and stochastic expansions.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discretize::BoundaryGrid;
use crate::error::{Error, Result};
use crate::kernels::{Atom, Family, KernelParam};

/// Gram-Schmidt degeneracy threshold relative to the candidate's norm.
pub const GS_TOL: f64 = 1e-8;

/// Below this fraction of its squared norm, a candidate's residual in the
/// sweep table has lost too many digits to cancellation and is recomputed.
const TABLE_TRUST: f64 = 1e-6;

const STALL_TOL: f64 = 1e-14;
const REFINE_ROUNDS: usize = 3;
const REFINE_HALF: i32 = 5;
const TABLE_CHUNK: usize = 256;

/// Product grid of atom parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateSpec {
    /// Radii `r_max·j/(n_radii−1)` and angles `2πk/n_angles`.
    Disk { r_max: f64, n_radii: usize, n_angles: usize },
    /// Log-spaced `s` and equispaced `y`, both endpoints included.
    Heat {
        s_min: f64,
        s_max: f64,
        n_s: usize,
        y_min: f64,
        y_max: f64,
        n_y: usize,
    },
}

impl CandidateSpec {
    pub fn disk_default() -> Self {
        CandidateSpec::Disk {
            r_max: 0.99,
            n_radii: 64,
            n_angles: 128,
        }
    }

    /// Default heat dictionary spanning the truncation window `[-L, L]`.
    pub fn heat_default(half_width: f64) -> Self {
        CandidateSpec::Heat {
            s_min: 1e-3,
            s_max: 20.0,
            n_s: 48,
            y_min: -half_width,
            y_max: half_width,
            n_y: 128,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            CandidateSpec::Disk { .. } => Family::Disk,
            CandidateSpec::Heat { .. } => Family::Heat,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CandidateSpec::Disk {
                r_max,
                n_radii,
                n_angles,
            } => r_max > 0.0 && r_max < 1.0 && n_radii >= 2 && n_angles >= 1,
            CandidateSpec::Heat {
                s_min,
                s_max,
                n_s,
                y_min,
                y_max,
                n_y,
            } => s_min > 0.0 && s_max > s_min && s_max.is_finite() && n_s >= 2 && y_max > y_min && n_y >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad candidate grid {self:?}")))
        }
    }

    /// Grid spacing in the two lattice coordinates (`r, α` or `ln s, y`).
    fn spacing(&self) -> (f64, f64) {
        match *self {
            CandidateSpec::Disk {
                r_max,
                n_radii,
                n_angles,
            } => (r_max / (n_radii - 1) as f64, TAU / n_angles as f64),
            CandidateSpec::Heat {
                s_min,
                s_max,
                n_s,
                y_min,
                y_max,
                n_y,
            } => ((s_max / s_min).ln() / (n_s - 1) as f64, (y_max - y_min) / (n_y - 1) as f64),
        }
    }

    fn repeat_rule(&self) -> RepeatRule {
        let (d0, d1) = self.spacing();
        match *self {
            CandidateSpec::Disk { n_angles, .. } => {
                let chord = if n_angles >= 2 {
                    2.0 * d0 * (std::f64::consts::PI / n_angles as f64).sin()
                } else {
                    f64::INFINITY
                };
                RepeatRule::Disk {
                    radius: 0.5 * d0.min(chord),
                }
            }
            CandidateSpec::Heat { .. } => RepeatRule::Heat {
                log_s: 0.5 * d0,
                y: 0.5 * d1,
            },
        }
    }

    fn atoms(&self) -> Result<Vec<Atom>> {
        let mut out = Vec::new();
        match *self {
            CandidateSpec::Disk {
                r_max,
                n_radii,
                n_angles,
            } => {
                for j in 0..n_radii {
                    let r = if j == n_radii - 1 {
                        r_max
                    } else {
                        r_max * j as f64 / (n_radii - 1) as f64
                    };
                    for k in 0..n_angles {
                        out.push(Atom::disk(r, TAU * k as f64 / n_angles as f64)?);
                    }
                }
            }
            CandidateSpec::Heat {
                s_min,
                s_max,
                n_s,
                y_min,
                y_max,
                n_y,
            } => {
                let (dl, dy) = self.spacing();
                for j in 0..n_s {
                    let s = if j == n_s - 1 {
                        s_max
                    } else {
                        (s_min.ln() + dl * j as f64).exp()
                    };
                    for k in 0..n_y {
                        let y = if k == n_y - 1 { y_max } else { y_min + dy * k as f64 };
                        out.push(Atom::heat(s, y)?);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Local lattice of `(2·5+1)²` points around `center`, spanning one grid
    /// spacing in each coordinate at round 0 and shrinking tenfold per round.
    fn local_lattice(&self, center: &Atom, round: usize) -> Vec<Atom> {
        let (d0, d1) = self.spacing();
        let shrink = 10f64.powi(round as i32);
        let (h0, h1) = (d0 / shrink / REFINE_HALF as f64, d1 / shrink / REFINE_HALF as f64);
        let mut out = Vec::with_capacity(((2 * REFINE_HALF + 1) * (2 * REFINE_HALF + 1)) as usize);
        match (*self, center) {
            (CandidateSpec::Disk { r_max, .. }, Atom::Disk(c)) => {
                for i in -REFINE_HALF..=REFINE_HALF {
                    let r = c.r() + h0 * i as f64;
                    if !(0.0..=r_max).contains(&r) {
                        continue;
                    }
                    for j in -REFINE_HALF..=REFINE_HALF {
                        if let Ok(a) = Atom::disk(r, c.alpha() + h1 * j as f64) {
                            out.push(a);
                        }
                    }
                }
            }
            (
                CandidateSpec::Heat {
                    s_min,
                    s_max,
                    y_min,
                    y_max,
                    ..
                },
                Atom::Heat(c),
            ) => {
                for i in -REFINE_HALF..=REFINE_HALF {
                    let s = (c.s().ln() + h0 * i as f64).exp();
                    if s < s_min || s > s_max {
                        continue;
                    }
                    for j in -REFINE_HALF..=REFINE_HALF {
                        let y = c.y() + h1 * j as f64;
                        if y < y_min || y > y_max {
                            continue;
                        }
                        if let Ok(a) = Atom::heat(s, y) {
                            out.push(a);
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }
}

/// When two atoms count as the same parameter for multiplicity purposes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RepeatRule {
    /// Only bitwise-equal atoms coincide.
    Exact,
    /// Distance between the points `r e^{iα}` below `radius`.
    Disk { radius: f64 },
    /// Per-coordinate distance in `ln s` and `y`.
    Heat { log_s: f64, y: f64 },
}

impl RepeatRule {
    pub fn coincides(&self, a: &Atom, b: &Atom) -> bool {
        if a == b {
            return true;
        }
        match (*self, a, b) {
            (RepeatRule::Disk { radius }, Atom::Disk(p), Atom::Disk(q)) => (p.point() - q.point()).norm() < radius,
            (RepeatRule::Heat { log_s, y }, Atom::Heat(p), Atom::Heat(q)) => {
                (p.s().ln() - q.s().ln()).abs() < log_s && (p.y() - q.y()).abs() < y
            }
            _ => false,
        }
    }
}

/// Candidate atoms in enumeration order, which is also the tie-break order.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    atoms: Vec<Atom>,
    rule: RepeatRule,
    lattice: Option<CandidateSpec>,
}

impl CandidateSet {
    pub fn new(spec: CandidateSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            atoms: spec.atoms()?,
            rule: spec.repeat_rule(),
            lattice: Some(spec),
        })
    }

    /// An explicit list of atoms. Refinement is unavailable for such sets.
    pub fn from_atoms(atoms: Vec<Atom>, rule: RepeatRule) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidParameter("empty candidate set".into()));
        };
        if atoms.iter().any(|a| a.family() != first.family()) {
            return Err(Error::MixedFamily);
        }
        Ok(Self {
            atoms,
            rule,
            lattice: None,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn family(&self) -> Family {
        self.atoms[0].family()
    }

    pub fn repeat_rule(&self) -> RepeatRule {
        self.rule
    }

    pub fn spec(&self) -> Option<CandidateSpec> {
        self.lattice
    }
}

/// Orthonormalized multiple kernels together with the raw kernels and the
/// lower-triangular matrix `a_ij = ⟨E_j, K̃_i⟩` recorded along the way.
#[derive(Debug, Clone)]
pub struct OrthoSystem {
    grid: BoundaryGrid,
    rule: RepeatRule,
    params: Vec<KernelParam>,
    basis: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
}

impl OrthoSystem {
    pub fn new(grid: BoundaryGrid, rule: RepeatRule) -> Self {
        Self {
            grid,
            rule,
            params: Vec::new(),
            basis: Vec::new(),
            raw: Vec::new(),
            gram: Vec::new(),
        }
    }

    pub fn grid(&self) -> &BoundaryGrid {
        &self.grid
    }

    pub fn repeat_rule(&self) -> RepeatRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[KernelParam] {
        &self.params
    }

    /// Grid values of `E_1..E_n`.
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Grid values of the (multiple) kernels `K̃_{q_1}..K̃_{q_n}`.
    pub fn raw_kernels(&self) -> &[Vec<f64>] {
        &self.raw
    }

    /// Row `i` of the triangular matrix: `a_i0..a_ii`.
    pub fn gram_row(&self, i: usize) -> &[f64] {
        &self.gram[i]
    }

    pub fn gram_a(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.gram[i][j] } else { 0.0 })
    }

    /// Negative-control hook: perturbs one recorded entry of `gram_A`.
    #[doc(hidden)]
    pub fn perturb_gram(&mut self, i: usize, j: usize, delta: f64) {
        self.gram[i][j] += delta;
    }

    /// Maps an atom onto the parameter it repeats (if any) and assigns the
    /// next multiplicity order. Fresh atoms come back plain.
    pub fn resolve(&self, atom: &Atom) -> KernelParam {
        let Some(hit) = self.params.iter().find(|p| self.rule.coincides(&p.atom, atom)) else {
            return KernelParam::plain(*atom);
        };
        let count = self.params.iter().filter(|p| p.atom == hit.atom).count();
        KernelParam::with_multiplicity(hit.atom, count as u32 + 1).expect("multiplicity is positive")
    }

    /// Appends a Gram-Schmidt candidate produced against this system.
    pub fn push(&mut self, c: GsCandidate) -> Result<()> {
        if c.projections.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: c.projections.len(),
            });
        }
        let mut row = c.projections;
        row.push(c.denominator);
        self.params.push(c.param);
        self.basis.push(c.basis);
        self.raw.push(c.raw);
        self.gram.push(row);
        Ok(())
    }

    /// Runs [`gs_step`] on `atom` and appends the result. Repeating an atom
    /// already in the system appends the next multiple kernel.
    pub fn extend(&mut self, atom: &Atom) -> Result<&KernelParam> {
        let c = gs_step(self, atom)?;
        self.push(c)?;
        Ok(self.params.last().unwrap())
    }

    /// `⟨f, E_k⟩` for every basis vector.
    pub fn coefficients(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(f.len())?;
        Ok(self.basis.iter().map(|e| self.grid.dot(f, e)).collect())
    }

    /// `Σ c_k E_k` over the first `c.len()` basis vectors.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        combine(&self.basis, coeffs, self.grid.len())
    }

    /// Max-abs deviation of `⟨E_i, E_j⟩` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                let g = self.grid.dot(&self.basis[i], &self.basis[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

pub(crate) fn combine(vectors: &[Vec<f64>], coeffs: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (c, v) in coeffs.iter().zip(vectors) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += c * x;
        }
    }
    out
}

/// Outcome of orthogonalizing one dictionary element against a system.
#[derive(Debug, Clone)]
pub struct GsCandidate {
    pub param: KernelParam,
    pub raw: Vec<f64>,
    /// Normalized residual `E^q_{n+1}`.
    pub basis: Vec<f64>,
    /// `⟨K̃_q, E_k⟩` for the existing basis.
    pub projections: Vec<f64>,
    /// `‖K̃_q − Σ⟨K̃_q,E_k⟩E_k‖`.
    pub denominator: f64,
    pub kernel_norm: f64,
}

/// Gram-Schmidt step with repeat handling: an atom that coincides with an
/// existing parameter is replaced by that parameter's next multiple kernel.
pub fn gs_step(system: &OrthoSystem, atom: &Atom) -> Result<GsCandidate> {
    orthogonalize(system, &system.resolve(atom))
}

/// Orthogonalizes `q` exactly as given (no repeat substitution), using two
/// passes of modified Gram-Schmidt.
pub fn orthogonalize(system: &OrthoSystem, q: &KernelParam) -> Result<GsCandidate> {
    let grid = &system.grid;
    let raw = grid.kernel_values(q)?;
    let kernel_norm = grid.dot(&raw, &raw).sqrt();
    let threshold = GS_TOL * kernel_norm;
    let mut v = raw.clone();
    let mut projections = vec![0.0; system.len()];
    for _ in 0..2 {
        for (p, e) in projections.iter_mut().zip(&system.basis) {
            let c = grid.dot(&v, e);
            *p += c;
            for (x, y) in v.iter_mut().zip(e) {
                *x -= c * y;
            }
        }
    }
    let denominator = grid.dot(&v, &v).sqrt();
    if !(denominator > threshold) {
        return Err(Error::DegenerateCandidate {
            denominator,
            threshold,
        });
    }
    for x in v.iter_mut() {
        *x /= denominator;
    }
    Ok(GsCandidate {
        param: *q,
        raw,
        basis: v,
        projections,
        denominator,
        kernel_norm,
    })
}

/// Second-moment factorization `E|⟨f,u⟩|² = Σ_i c_i ⟨g_i,u⟩²`.
#[derive(Debug, Clone)]
pub(crate) struct Components {
    /// One row per component, grid values along the columns.
    pub vectors: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl Components {
    pub fn single(g: &[f64]) -> Self {
        Self {
            vectors: DMatrix::from_row_slice(1, g.len(), g),
            weights: vec![1.0],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, weights: Vec<f64>, n: usize) -> Self {
        let keep: Vec<usize> = (0..rows.len())
            .filter(|&i| weights[i] != 0.0 && rows[i].iter().any(|&x| x != 0.0))
            .collect();
        let vectors = DMatrix::from_fn(keep.len(), n, |i, j| rows[keep[i]][j]);
        Self {
            vectors,
            weights: keep.iter().map(|&i| weights[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// `⟨g_i, u⟩` for every component.
    pub fn projections(&self, grid: &BoundaryGrid, u: &[f64]) -> Vec<f64> {
        let wu = DVector::from_iterator(u.len(), u.iter().zip(grid.weights()).map(|(a, w)| a * w));
        (&self.vectors * wu).as_slice().to_vec()
    }

    pub fn energy(&self, grid: &BoundaryGrid, u: &[f64]) -> f64 {
        weighted_square_sum(&self.weights, &self.projections(grid, u))
    }

    #[cfg(test)]
    pub fn norm_sq(&self, grid: &BoundaryGrid) -> f64 {
        (0..self.len())
            .map(|i| {
                let row: Vec<f64> = self.vectors.row(i).iter().copied().collect();
                self.weights[i] * grid.dot(&row, &row)
            })
            .sum()
    }
}

fn weighted_square_sum(c: &[f64], p: &[f64]) -> f64 {
    c.iter().zip(p).map(|(c, p)| c * p * p).sum()
}

/// How the argmax over the parameter domain was searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Grid,
    GridRefined,
}

impl SearchMethod {
    pub fn label(self) -> &'static str {
        match self {
            SearchMethod::Grid => "grid",
            SearchMethod::GridRefined => "grid+refine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The best objective fell below `1e-14` of the signal norm before
    /// reaching the tolerance (only with `allow_stall`).
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub refine: bool,
    /// Return the partial expansion instead of [`Error::NoProgress`].
    pub allow_stall: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 100,
            refine: false,
            allow_stall: false,
        }
    }
}

impl DecomposeOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "need tol > 0 and max_iter ≥ 1, got tol = {}, max_iter = {}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Per-iteration record of the candidate sweep.
///
/// Objectives are squared (`E|⟨f,E^q⟩|²`, or `|⟨G,E^q⟩|²` for a single
/// function).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAudit {
    pub iteration: usize,
    /// Index of the sweep winner in the candidate set.
    pub candidate: usize,
    /// Parameter actually appended (after refinement and repeat handling).
    pub param: KernelParam,
    pub objective: f64,
    /// The sweep winner's objective.
    pub sweep_objective: f64,
    /// Best objective among the other candidates of the sweep.
    pub runner_up: f64,
    pub refined: bool,
}

/// Index of the first maximum; `None` when every entry is `-inf`.
fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Explicit objective of one atom against the system, `None` if degenerate.
fn explicit(system: &OrthoSystem, comps: &Components, atom: &Atom) -> Result<Option<(GsCandidate, f64)>> {
    match gs_step(system, atom) {
        Ok(c) => {
            let obj = comps.energy(&system.grid, &c.basis);
            Ok(Some((c, obj)))
        }
        Err(Error::DegenerateCandidate { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn explicit_objectives(system: &OrthoSystem, comps: &Components, atoms: &[Atom]) -> Result<Vec<f64>> {
    atoms
        .par_iter()
        .map(|a| Ok(explicit(system, comps, a)?.map_or(f64::NEG_INFINITY, |(_, o)| o)))
        .collect()
}

/// Argmax of the expected objective over `atoms` by direct evaluation.
pub(crate) fn select_explicit(
    system: &OrthoSystem,
    comps: &Components,
    atoms: &[Atom],
) -> Result<(usize, GsCandidate, f64)> {
    let obj = explicit_objectives(system, comps, atoms)?;
    let best = first_argmax(&obj).ok_or(Error::AllDegenerate)?;
    let (c, o) = explicit(system, comps, &atoms[best])?.ok_or(Error::AllDegenerate)?;
    Ok((best, c, o))
}

/// Candidate with the largest `|⟨G, E^q_{n+1}⟩|` (first in enumeration order on
/// ties).
#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub param: KernelParam,
    pub objective: f64,
}

pub fn maximal_selection(g: &[f64], system: &OrthoSystem, candidates: &CandidateSet) -> Result<Selection> {
    system.grid.check_len(g.len())?;
    let comps = Components::single(g);
    let (index, c, o) = select_explicit(system, &comps, candidates.atoms())?;
    Ok(Selection {
        index,
        param: c.param,
        objective: o.sqrt(),
    })
}

/// Sweep state: `R_iq = ⟨g_i, K_q − P_n K_q⟩` and `den²_q = ‖K_q − P_n K_q‖²`
/// for every candidate, updated by one rank-one step per appended basis vector.
struct SweepTable {
    kernels: DMatrix<f64>,
    residual: DMatrix<f64>,
    den2: Vec<f64>,
    norm2: Vec<f64>,
}

impl SweepTable {
    fn new(grid: &BoundaryGrid, comps: &Components, atoms: &[Atom]) -> Result<Self> {
        let n = grid.len();
        let c = atoms.len();
        let mut kernels = DMatrix::<f64>::zeros(n, c);
        kernels
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(atoms.par_iter())
            .try_for_each(|(col, a)| -> Result<()> {
                let q = KernelParam::plain(*a);
                if q.family() != grid.family() {
                    return Err(Error::MixedFamily);
                }
                for (v, &x) in col.iter_mut().zip(grid.nodes()) {
                    *v = q.eval(x);
                }
                Ok(())
            })?;
        let norm2: Vec<f64> = kernels.as_slice().par_chunks(n).map(|col| grid.dot(col, col)).collect();
        let mut gw = comps.vectors.clone();
        for (j, w) in grid.weights().iter().enumerate() {
            gw.column_mut(j).scale_mut(*w);
        }
        let blocks: Vec<DMatrix<f64>> = (0..c.div_ceil(TABLE_CHUNK))
            .into_par_iter()
            .map(|b| {
                let start = b * TABLE_CHUNK;
                let width = TABLE_CHUNK.min(c - start);
                &gw * kernels.columns(start, width)
            })
            .collect();
        let mut residual = DMatrix::<f64>::zeros(comps.len(), c);
        for (b, block) in blocks.into_iter().enumerate() {
            residual.columns_mut(b * TABLE_CHUNK, block.ncols()).copy_from(&block);
        }
        Ok(Self {
            kernels,
            residual,
            den2: norm2.clone(),
            norm2,
        })
    }

    /// Accounts for a new basis vector `e` whose component projections are `f`.
    fn update(&mut self, grid: &BoundaryGrid, e: &[f64], f: &[f64]) {
        let n = grid.len();
        let we: Vec<f64> = e.iter().zip(grid.weights()).map(|(a, w)| a * w).collect();
        let b: Vec<f64> = self
            .kernels
            .as_slice()
            .par_chunks(n)
            .map(|col| col.iter().zip(&we).map(|(k, w)| k * w).sum())
            .collect();
        let rows = f.len();
        if rows > 0 {
            self.residual
                .as_mut_slice()
                .par_chunks_mut(rows)
                .zip(b.par_iter())
                .for_each(|(col, bq)| {
                    for (r, fi) in col.iter_mut().zip(f) {
                        *r -= fi * bq;
                    }
                });
        }
        for (d, bq) in self.den2.iter_mut().zip(&b) {
            *d -= bq * bq;
        }
    }

    /// Table objectives; `None` marks candidates that need explicit evaluation.
    fn objectives(&self, weights: &[f64], repeat: &[bool]) -> Vec<Option<f64>> {
        let rows = weights.len();
        (0..self.den2.len())
            .into_par_iter()
            .map(|q| {
                if repeat[q] || self.den2[q] <= TABLE_TRUST * self.norm2[q] {
                    return None;
                }
                let col = &self.residual.as_slice()[q * rows..(q + 1) * rows];
                Some(weighted_square_sum(weights, col) / self.den2[q])
            })
            .collect()
    }
}

pub(crate) struct GreedyRun {
    pub system: OrthoSystem,
    /// Component projections `⟨g_i, E_k⟩`, one vector per iteration.
    pub projections: Vec<Vec<f64>>,
    pub energy_trace: Vec<f64>,
    pub relative_error_trace: Vec<f64>,
    pub audit: Vec<SelectionAudit>,
    pub termination: Termination,
    pub search: SearchMethod,
}

/// Greedy maximization of `Σ c_i ⟨g_i, E^q_{n+1}⟩²` over the candidate set.
pub(crate) fn run_greedy(
    grid: &BoundaryGrid,
    comps: &Components,
    norm_sq: f64,
    candidates: &CandidateSet,
    opts: &DecomposeOptions,
) -> Result<GreedyRun> {
    opts.validate()?;
    if candidates.family() != grid.family() {
        return Err(Error::MixedFamily);
    }
    if !(norm_sq > 0.0) || !norm_sq.is_finite() {
        return Err(Error::ZeroSignal);
    }
    let refine_spec = if opts.refine { candidates.spec() } else { None };
    let search = if refine_spec.is_some() {
        SearchMethod::GridRefined
    } else {
        SearchMethod::Grid
    };
    let atoms = candidates.atoms();
    let rule = candidates.repeat_rule();
    let mut system = OrthoSystem::new(grid.clone(), rule);
    let mut table = SweepTable::new(grid, comps, atoms)?;
    let mut repeat = vec![false; atoms.len()];

    let mut projections = Vec::new();
    let mut energy_trace = Vec::new();
    let mut relative_error_trace = Vec::new();
    let mut audit = Vec::new();
    let mut energy = 0.0;
    let mut rel = 1.0;
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=opts.max_iter {
        let table_obj = table.objectives(&comps.weights, &repeat);
        let mut obj: Vec<f64> = table_obj
            .par_iter()
            .zip(atoms.par_iter())
            .map(|(t, a)| match t {
                Some(v) => Ok(*v),
                None => Ok(explicit(&system, comps, a)?.map_or(f64::NEG_INFINITY, |(_, o)| o)),
            })
            .collect::<Result<_>>()?;

        let (winner, mut chosen, mut best) = loop {
            let w = first_argmax(&obj).ok_or(Error::AllDegenerate)?;
            match explicit(&system, comps, &atoms[w])? {
                Some((c, o)) => break (w, c, o),
                None => obj[w] = f64::NEG_INFINITY,
            }
        };
        let sweep_objective = obj[winner];
        let runner_up = obj
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != winner && *v != f64::NEG_INFINITY)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);

        let mut refined = false;
        if let Some(spec) = refine_spec {
            let mut center = atoms[winner];
            for round in 0..REFINE_ROUNDS {
                let local = spec.local_lattice(&center, round);
                let lobj = explicit_objectives(&system, comps, &local)?;
                if let Some(i) = first_argmax(&lobj) {
                    if lobj[i] > best {
                        if let Some((c, o)) = explicit(&system, comps, &local[i])? {
                            chosen = c;
                            best = o;
                            center = local[i];
                            refined = true;
                        }
                    }
                }
            }
        }

        if best.sqrt() < STALL_TOL * norm_sq.sqrt() {
            if opts.allow_stall {
                termination = Termination::Stalled;
                break;
            }
            return Err(Error::NoProgress {
                iteration,
                objective: best.sqrt(),
                relative_error: rel,
            });
        }

        let f = comps.projections(grid, &chosen.basis);
        energy += weighted_square_sum(&comps.weights, &f);
        rel = (norm_sq - energy) / norm_sq;
        table.update(grid, &chosen.basis, &f);
        let atom = chosen.param.atom;
        for (flag, a) in repeat.iter_mut().zip(atoms) {
            if !*flag && rule.coincides(&atom, a) {
                *flag = true;
            }
        }
        audit.push(SelectionAudit {
            iteration,
            candidate: winner,
            param: chosen.param,
            objective: best,
            sweep_objective,
            runner_up,
            refined,
        });
        system.push(chosen)?;
        projections.push(f);
        energy_trace.push(energy);
        relative_error_trace.push(rel);
        if rel < opts.tol {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(GreedyRun {
        system,
        projections,
        energy_trace,
        relative_error_trace,
        audit,
        termination,
        search,
    })
}

/// Expansion `G ≈ Σ ⟨G,E_k⟩ E_k` of a single boundary function.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub system: OrthoSystem,
    pub coeffs: Vec<f64>,
    pub energy_trace: Vec<f64>,
    pub relative_error_trace: Vec<f64>,
    pub signal_norm_sq: f64,
    pub audit: Vec<SelectionAudit>,
    pub termination: Termination,
    pub search: SearchMethod,
}

impl Expansion {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Partial sum with the first `n` terms.
    pub fn reconstruction(&self, n: usize) -> Vec<f64> {
        self.system.synthesize(&self.coeffs[..n.min(self.len())])
    }

    pub fn residual(&self, g: &[f64]) -> Vec<f64> {
        let rec = self.reconstruction(self.len());
        g.iter().zip(rec).map(|(a, b)| a - b).collect()
    }
}

/// Greedy pre-orthogonal expansion of `g` over `candidates`.
pub fn poafd_decompose(
    g: &[f64],
    grid: &BoundaryGrid,
    candidates: &CandidateSet,
    opts: &DecomposeOptions,
) -> Result<Expansion> {
    grid.check_len(g.len())?;
    let comps = Components::single(g);
    let norm_sq = grid.dot(g, g);
    let run = run_greedy(grid, &comps, norm_sq, candidates, opts)?;
    Ok(Expansion {
        coeffs: run.projections.iter().map(|p| p[0]).collect(),
        system: run.system,
        energy_trace: run.energy_trace,
        relative_error_trace: run.relative_error_trace,
        signal_norm_sq: norm_sq,
        audit: run.audit,
        termination: run.termination,
        search: run.search,
    })
}

/// Largest normalized correlation against the empty system at each level:
/// `max_α E|⟨f, K_{(r,α)}⟩|²/‖K‖²` for disk radii, or the same over `y` in the
/// grid window for heat `s` values.
pub(crate) fn objective_profile(
    grid: &BoundaryGrid,
    comps: &Components,
    levels: &[f64],
    n_lateral: usize,
) -> Result<Vec<f64>> {
    if n_lateral == 0 {
        return Err(Error::InvalidParameter("profile needs at least one lateral point".into()));
    }
    let system = OrthoSystem::new(grid.clone(), RepeatRule::Exact);
    let l = grid.half_width();
    levels
        .iter()
        .map(|&v| {
            let atoms: Vec<Atom> = (0..n_lateral)
                .map(|k| match grid.family() {
                    Family::Disk => Atom::disk(v, TAU * k as f64 / n_lateral as f64),
                    Family::Heat => {
                        let y = if n_lateral == 1 {
                            0.0
                        } else {
                            -l + 2.0 * l * k as f64 / (n_lateral - 1) as f64
                        };
                        Atom::heat(v, y)
                    }
                })
                .collect::<Result<_>>()?;
            let obj = explicit_objectives(&system, comps, &atoms)?;
            Ok(obj.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// Boundary-vanishing profile `max |⟨G, E_q⟩|` per radius (disk) or per `s`
/// (heat), maximized over `n_lateral` angles or window positions.
pub fn bvc_scan(g: &[f64], grid: &BoundaryGrid, levels: &[f64], n_lateral: usize) -> Result<Vec<f64>> {
    grid.check_len(g.len())?;
    let comps = Components::single(g);
    Ok(objective_profile(grid, &comps, levels, n_lateral)?
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kernel_norm;
    use approx::assert_relative_eq;

    fn circle() -> BoundaryGrid {
        BoundaryGrid::circle(512).unwrap()
    }

    fn small_disk_set() -> CandidateSet {
        CandidateSet::new(CandidateSpec::Disk {
            r_max: 0.9,
            n_radii: 10,
            n_angles: 16,
        })
        .unwrap()
    }

    #[test]
    fn candidate_grid_layout() {
        let set = small_disk_set();
        assert_eq!(set.len(), 160);
        assert_eq!(set.atoms()[0].coords(), (0.0, 0.0));
        assert_eq!(set.atoms()[159].coords().0, 0.9);
        let heat = CandidateSet::new(CandidateSpec::heat_default(40.0)).unwrap();
        assert_eq!(heat.len(), 48 * 128);
        let (s0, y0) = heat.atoms()[0].coords();
        assert_relative_eq!(s0, 1e-3, epsilon = 1e-15);
        assert_eq!(y0, -40.0);
        assert_eq!(heat.atoms().last().unwrap().coords(), (20.0, 40.0));
        assert!(CandidateSet::new(CandidateSpec::Disk {
            r_max: 1.0,
            n_radii: 4,
            n_angles: 4
        })
        .is_err());
    }

    #[test]
    fn repeat_rule_separates_grid_points() {
        let set = small_disk_set();
        let rule = set.repeat_rule();
        let atoms = set.atoms();
        for (i, a) in atoms.iter().enumerate() {
            for b in &atoms[i + 1..] {
                let same_point = a.coords().0 == 0.0 && b.coords().0 == 0.0;
                assert_eq!(rule.coincides(a, b), same_point, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn first_step_normalizes_the_kernel() {
        let grid = circle();
        let sys = OrthoSystem::new(grid.clone(), RepeatRule::Exact);
        let c = gs_step(&sys, &Atom::disk(0.5, 0.0).unwrap()).unwrap();
        assert_relative_eq!(c.denominator, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(grid.norm_sq(&c.basis).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn repeated_atom_uses_the_next_multiple_kernel() {
        let grid = circle();
        let q = Atom::disk(0.5, 0.0).unwrap();
        let mut sys = OrthoSystem::new(grid.clone(), RepeatRule::Exact);
        sys.extend(&q).unwrap();
        assert!(matches!(
            orthogonalize(&sys, &KernelParam::plain(q)),
            Err(Error::DegenerateCandidate { .. })
        ));
        let c = gs_step(&sys, &q).unwrap();
        assert_eq!(c.param.multiplicity(), 2);
        assert!(grid.inner(&c.basis, &sys.basis()[0]).unwrap().abs() < 1e-12);
        assert_relative_eq!(grid.norm_sq(&c.basis).unwrap(), 1.0, epsilon = 1e-12);

        // Oracle: classical Gram-Schmidt of {K, ∂_r K} sampled independently.
        let k0 = grid.sample(|t| (1.0 - 0.25) / (1.0 - t.cos() + 0.25));
        // quotient rule on (1 − r²)/(1 − 2r cos t + r²) at r = 1/2
        let k1 = grid.sample(|t| {
            let d = 1.25 - t.cos();
            (-d - 0.75 * (1.0 - 2.0 * t.cos())) / (d * d)
        });
        let e0: Vec<f64> = {
            let n = grid.norm_sq(&k0).unwrap().sqrt();
            k0.iter().map(|x| x / n).collect()
        };
        let p = grid.inner(&k1, &e0).unwrap();
        let v: Vec<f64> = k1.iter().zip(&e0).map(|(a, b)| a - p * b).collect();
        let nv = grid.norm_sq(&v).unwrap().sqrt();
        for (a, b) in c.basis.iter().zip(&v) {
            assert!((a - b / nv).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_first_atom() {
        let grid = circle();
        let mut sys = OrthoSystem::new(grid.clone(), RepeatRule::Exact);
        sys.extend(&Atom::disk(0.0, 0.0).unwrap()).unwrap();
        let c = gs_step(&sys, &Atom::disk(0.5, 0.0).unwrap()).unwrap();
        let one = vec![1.0; grid.len()];
        assert!(grid.inner(&c.basis, &one).unwrap().abs() < 1e-12);
        let p = grid.sample(|t| 0.75 / (1.25 - t.cos()) - 1.0);
        let np = grid.norm_sq(&p).unwrap().sqrt();
        for (a, b) in c.basis.iter().zip(&p) {
            assert!((a - b / np).abs() < 1e-10);
        }
    }

    #[test]
    fn maximal_selection_examples() {
        let grid = circle();
        let set = small_disk_set();
        let sys = OrthoSystem::new(grid.clone(), set.repeat_rule());
        let q0 = set.atoms()[53];
        let k = grid.kernel_values(&KernelParam::plain(q0)).unwrap();
        let nk = grid.norm_sq(&k).unwrap().sqrt();
        let g: Vec<f64> = k.iter().map(|x| x / nk).collect();
        let sel = maximal_selection(&g, &sys, &set).unwrap();
        assert_eq!(sel.index, 53);
        assert_relative_eq!(sel.objective, 1.0, epsilon = 1e-12);

        let one = vec![1.0; grid.len()];
        let sel = maximal_selection(&one, &sys, &set).unwrap();
        assert_eq!(sel.index, 0);
        assert_relative_eq!(sel.objective, 1.0, epsilon = 1e-12);

        let mut sys = sys;
        sys.extend(&q0).unwrap();
        let residual_norm = {
            let c = sys.coefficients(&g).unwrap();
            let r: Vec<f64> = g.iter().zip(sys.synthesize(&c)).map(|(a, b)| a - b).collect();
            grid.norm_sq(&r).unwrap().sqrt()
        };
        let sel = maximal_selection(&g, &sys, &set).unwrap();
        assert!(sel.objective <= residual_norm + 1e-12);
        assert!(sel.objective < 1e-10);
    }

    #[test]
    fn single_atom_signal_converges_at_once() {
        let grid = circle();
        let set = small_disk_set();
        let q0 = KernelParam::plain(set.atoms()[77]);
        let k = grid.kernel_values(&q0).unwrap();
        let nk = kernel_norm(&q0).unwrap();
        let g: Vec<f64> = k.iter().map(|x| 3.0 * x / nk).collect();
        let exp = poafd_decompose(&g, &grid, &set, &DecomposeOptions::default()).unwrap();
        assert_eq!(exp.len(), 1);
        assert_eq!(exp.termination, Termination::Converged);
        assert_relative_eq!(exp.coeffs[0].abs(), 3.0, epsilon = 1e-10);
        assert!(exp.relative_error_trace[0] <= 1e-14);
    }

    #[test]
    fn two_atom_signal_is_recovered() {
        let grid = BoundaryGrid::circle(1024).unwrap();
        let set = CandidateSet::new(CandidateSpec::Disk {
            r_max: 0.9,
            n_radii: 4,
            n_angles: 2,
        })
        .unwrap();
        // radii {0, 0.3, 0.6, 0.9} and angles {0, π}
        let a = KernelParam::plain(Atom::disk(0.3, 0.0).unwrap());
        let b = KernelParam::plain(Atom::disk(0.6, std::f64::consts::PI).unwrap());
        let g: Vec<f64> = grid.nodes().iter().map(|&t| a.eval(t) + b.eval(t)).collect();
        let opts = DecomposeOptions {
            tol: 1e-10,
            max_iter: 6,
            ..Default::default()
        };
        let exp = poafd_decompose(&g, &grid, &set, &opts).unwrap();
        assert_eq!(exp.termination, Termination::Converged);
        assert!(*exp.relative_error_trace.last().unwrap() <= 1e-10);
    }

    #[test]
    fn laplace_example_boundary_trace() {
        let grid = BoundaryGrid::circle(1024).unwrap();
        let set = CandidateSet::new(CandidateSpec::Disk {
            r_max: 0.99,
            n_radii: 32,
            n_angles: 64,
        })
        .unwrap();
        let g = grid.sample(|t| 1.0 / (5.0 + t.sin().powi(2)).sqrt());
        let opts = DecomposeOptions::new(1e-12, 4);
        let exp = poafd_decompose(&g, &grid, &set, &opts).unwrap();
        assert_eq!(exp.len(), 4);
        assert!(exp.relative_error_trace[3] <= 1e-3);
        check_expansion_invariants(&exp, &g);
    }

    fn check_expansion_invariants(exp: &Expansion, g: &[f64]) {
        let grid = exp.system.grid();
        assert!(exp.system.orthonormality_defect() < 1e-8);
        for w in exp.energy_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(*exp.energy_trace.last().unwrap() <= exp.signal_norm_sq + 1e-10);
        let r = exp.residual(g);
        for e in exp.system.basis() {
            assert!(grid.inner(&r, e).unwrap().abs() < 1e-8);
        }
        let rn = grid.norm_sq(&r).unwrap();
        let e = *exp.energy_trace.last().unwrap();
        assert!((exp.signal_norm_sq - e - rn).abs() <= 1e-10 * exp.signal_norm_sq);
        for a in &exp.audit {
            assert!(a.sweep_objective >= a.runner_up);
            assert!(a.objective >= a.sweep_objective * (1.0 - 1e-9));
        }
        for (i, row) in (0..exp.system.len()).map(|i| (i, exp.system.gram_row(i))) {
            assert!(row[i] > 0.0);
        }
    }

    #[test]
    fn refinement_never_lowers_the_objective() {
        let grid = BoundaryGrid::circle(512).unwrap();
        let set = CandidateSet::new(CandidateSpec::Disk {
            r_max: 0.95,
            n_radii: 8,
            n_angles: 16,
        })
        .unwrap();
        let g = grid.sample(|t| 1.0 / (1.3 - (t - 0.37).cos()));
        let plain = poafd_decompose(&g, &grid, &set, &DecomposeOptions::new(1e-12, 3)).unwrap();
        let opts = DecomposeOptions {
            refine: true,
            ..DecomposeOptions::new(1e-12, 3)
        };
        let refined = poafd_decompose(&g, &grid, &set, &opts).unwrap();
        assert_eq!(refined.search, SearchMethod::GridRefined);
        assert!(refined.audit[0].objective >= plain.audit[0].objective);
        assert!(refined.audit[0].refined);
        check_expansion_invariants(&refined, &g);
    }

    #[test]
    fn stalls_are_reported() {
        let grid = BoundaryGrid::circle(64).unwrap();
        let set = CandidateSet::from_atoms(vec![Atom::disk(0.0, 0.0).unwrap()], RepeatRule::Exact).unwrap();
        // ∂_r^m P at the origin is 2·m!·cos(mt), so sin t is invisible
        let g = grid.sample(f64::sin);
        let err = poafd_decompose(&g, &grid, &set, &DecomposeOptions::new(1e-4, 3)).unwrap_err();
        assert!(matches!(err, Error::NoProgress { .. }), "{err:?}");
    }

    #[test]
    fn zero_signal_is_rejected() {
        let grid = circle();
        let g = vec![0.0; grid.len()];
        assert_eq!(
            poafd_decompose(&g, &grid, &small_disk_set(), &DecomposeOptions::default()).unwrap_err(),
            Error::ZeroSignal
        );
    }

    #[test]
    fn bvc_profiles() {
        let grid = BoundaryGrid::circle(4096).unwrap();
        let g = grid.sample(|t| 1.0 / (5.0 + t.sin().powi(2)).sqrt());
        let radii = [0.0, 0.3, 0.6, 0.9, 0.99, 0.999];
        let p = bvc_scan(&g, &grid, &radii, 64).unwrap();
        let max = p.iter().cloned().fold(0.0, f64::max);
        assert!(p[5] <= 0.1 * max);

        let q0 = KernelParam::plain(Atom::disk(0.5, 0.0).unwrap());
        let e = grid.kernel_values(&q0).unwrap();
        let radii: Vec<f64> = (0..20).map(|j| 0.05 * j as f64).collect();
        let p = bvc_scan(&e, &grid, &radii, 64).unwrap();
        let peak = first_argmax(&p).unwrap();
        assert_eq!(radii[peak], 0.5);

        let z = vec![0.0; grid.len()];
        assert!(bvc_scan(&z, &grid, &radii, 8).unwrap().iter().all(|&v| v == 0.0));
    }
}
