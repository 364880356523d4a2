//! Lifting boundary expansions into the interior.
//!
//! Coefficients in the orthonormal basis are converted to raw-kernel
//! coefficients through the triangular matrix recorded during Gram-Schmidt,
//! and each kernel is lifted by the semigroup property.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dd::{Cdd, Dd, PI};
use crate::discretize::BoundaryGrid;
use crate::error::{Error, Result};
use crate::kernels::{kernel_inner, lift_atom, Atom, Family, KernelParam, Point};
use crate::poafd::{combine, OrthoSystem};

/// Default stencil step.
pub const STENCIL_STEP: f64 = 1e-3;
/// Default number of interior probes.
pub const PROBE_COUNT: usize = 200;

const SINGULAR_TOL: f64 = 1e-12;

/// Solves `C A = F` for the leading `F.len()` block of `gram_A` by back
/// substitution.
pub fn triangular_coefficients(f: &[f64], system: &OrthoSystem) -> Result<Vec<f64>> {
    let n = f.len();
    if n > system.len() {
        return Err(Error::DimensionMismatch {
            expected: system.len(),
            found: n,
        });
    }
    let mut c = vec![0.0; n];
    for j in (0..n).rev() {
        let diagonal = system.gram_row(j)[j];
        if !(diagonal >= SINGULAR_TOL) {
            return Err(Error::SingularSystem { index: j, diagonal });
        }
        let mut acc = f[j];
        for (i, ci) in c.iter().enumerate().skip(j + 1) {
            acc -= ci * system.gram_row(i)[j];
        }
        c[j] = acc / diagonal;
    }
    Ok(c)
}

/// Relative grid-L² gap between `Σ C_k K̃_{q_k}` and `Σ F_k E_k`.
pub fn reconstruction_defect(system: &OrthoSystem, f: &[f64], c: &[f64]) -> Result<f64> {
    if f.len() != c.len() || f.len() > system.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            found: c.len(),
        });
    }
    let grid = system.grid();
    let lhs = combine(system.raw_kernels(), c, grid.len());
    let rhs = combine(system.basis(), f, grid.len());
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let scale = grid.dot(&rhs, &rhs).sqrt();
    let gap = grid.dot(&diff, &diff).sqrt();
    Ok(if scale > 0.0 { gap / scale } else { gap })
}

/// Max-abs gap between `A Aᵀ` and the closed-form Gram matrix of the raw
/// kernels, relative to the largest Gram entry.
pub fn gram_cross_check(system: &OrthoSystem) -> Result<f64> {
    let a = system.gram_a();
    let aat = &a * a.transpose();
    let params = system.params();
    let n = params.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_inner(&params[i], &params[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let scale = gram.amax();
    Ok((aat - gram).amax() / scale.max(f64::MIN_POSITIVE))
}

/// `u(x) = Σ_k C_k · lift(K̃_{q_k})(x)`, summed in double-double because the
/// coefficients can be large and of alternating sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub family: Family,
    pub atoms: Vec<KernelParam>,
    pub coeffs: Vec<f64>,
    pub realization: Option<String>,
}

impl SolutionField {
    pub fn eval(&self, p: Point) -> Result<f64> {
        if p.family() != self.family {
            return Err(Error::MixedFamily);
        }
        // validates the point against the domain
        if let Some(q) = self.atoms.first() {
            lift_atom(q, p)?;
        }
        let u = match p {
            Point::Disk { rho, theta } => eval_dd(self, rho * theta.cos(), rho * theta.sin()),
            Point::Heat { t, x } => eval_dd(self, t, x),
        };
        Ok(u.to_f64())
    }

    pub fn with_realization(mut self, id: impl Into<String>) -> Self {
        self.realization = Some(id.into());
        self
    }
}

pub fn lift_field(coeffs: &[f64], atoms: &[KernelParam]) -> Result<SolutionField> {
    if coeffs.len() != atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: atoms.len(),
            found: coeffs.len(),
        });
    }
    let Some(first) = atoms.first() else {
        return Err(Error::InvalidParameter("a field needs at least one atom".into()));
    };
    if atoms.iter().any(|q| q.family() != first.family()) {
        return Err(Error::MixedFamily);
    }
    Ok(SolutionField {
        family: first.family(),
        atoms: atoms.to_vec(),
        coeffs: coeffs.to_vec(),
        realization: None,
    })
}

/// The interior solution for boundary coefficients `F_n = ⟨f_ω, E_k⟩`.
pub fn solve(system: &OrthoSystem, f: &[f64]) -> Result<SolutionField> {
    let c = triangular_coefficients(f, system)?;
    lift_field(&c, &system.params()[..f.len()])
}

/// Seeded interior probes: uniform on the disk of radius 0.9, or uniform on
/// `[0.05, 2] × [-12, 12]` for the heat half-plane.
pub fn interior_probes(family: Family, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match family {
            Family::Disk => {
                let rho = 0.9 * rng.random::<f64>().sqrt();
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                Point::Disk { rho, theta }
            }
            Family::Heat => {
                let t = 0.05 + 1.95 * rng.random::<f64>();
                let x = -12.0 + 24.0 * rng.random::<f64>();
                Point::Heat { t, x }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub rms: f64,
    /// `max |u|` over the probes, for scale.
    pub max_u: f64,
}

/// `lift_atom` at the Cartesian disk point `(x, y)` in double-double.
fn disk_lift_dd(q: &KernelParam, x: f64, y: f64) -> Dd {
    let Atom::Disk(a) = q.atom else {
        unreachable!("family checked by the caller")
    };
    let (sa, ca) = a.alpha().sin_cos();
    // w = ρ e^{i(θ − α)}
    let w = Cdd::new(Dd::from(x) * ca + Dd::from(y) * sa, Dd::from(y) * ca - Dd::from(x) * sa);
    let z = w.scale(a.r());
    let one_minus_z = Cdd::new(-z.re + 1.0, -z.im);
    let m = q.derivative_order();
    if m == 0 {
        return Cdd::new(z.re + 1.0, z.im).div(one_minus_z).re;
    }
    let factorial: f64 = (1..=m).map(f64::from).product();
    w.powu(m).scale(2.0 * factorial).div(one_minus_z.powu(m + 1)).re
}

/// `lift_atom` at `(t, x)` in double-double.
fn heat_lift_dd(q: &KernelParam, t: f64, x: f64) -> Dd {
    let Atom::Heat(a) = q.atom else {
        unreachable!("family checked by the caller")
    };
    let tau = Dd::from(t) + a.s();
    let d = Dd::diff(x, a.y());
    let g = (-(d.sqr() / (tau * 4.0))).exp() / (PI * tau * 4.0).sqrt();
    let m = q.derivative_order();
    if m == 0 {
        return g;
    }
    let u = d / (tau.sqrt() * 2.0);
    let (mut prev, mut cur) = (Dd::ONE, u * 2.0);
    for k in 1..2 * m {
        let next = u * cur * 2.0 - prev * (2.0 * f64::from(k));
        prev = cur;
        cur = next;
    }
    cur * g / (tau * 4.0).powu(m)
}

fn eval_dd(field: &SolutionField, a: f64, b: f64) -> Dd {
    field.atoms.iter().zip(&field.coeffs).fold(Dd::ZERO, |acc, (q, &c)| {
        let k = match field.family {
            Family::Disk => disk_lift_dd(q, a, b),
            Family::Heat => heat_lift_dd(q, a, b),
        };
        acc + k * c
    })
}

/// Three-point second difference on the nodes `lo < mid < hi`, with the
/// actual (rounded) node spacings.
fn second_difference(f: impl Fn(f64) -> Dd, lo: f64, mid: f64, hi: f64, f_mid: Dd) -> Dd {
    let (h1, h2) = (Dd::diff(mid, lo), Dd::diff(hi, mid));
    ((f(hi) - f_mid) / h2 - (f_mid - f(lo)) / h1) * 2.0 / (h1 + h2)
}

/// Stencil residual and field value at `p`. The field is evaluated in
/// double-double so that rounding stays far below the truncation error even
/// when the kernel coefficients are large and cancel.
fn stencil(field: &SolutionField, p: Point, h: f64) -> Result<(f64, f64)> {
    match p {
        Point::Disk { rho, theta } => {
            if !(rho + h * std::f64::consts::SQRT_2 < 1.0) {
                return Err(Error::InvalidParameter(format!("stencil at rho = {rho} leaves the disk")));
            }
            let (x, y) = (rho * theta.cos(), rho * theta.sin());
            let u = eval_dd(field, x, y);
            let uxx = second_difference(|v| eval_dd(field, v, y), x - h, x, x + h, u);
            let uyy = second_difference(|v| eval_dd(field, x, v), y - h, y, y + h, u);
            Ok(((uxx + uyy).to_f64(), u.to_f64()))
        }
        Point::Heat { t, x } => {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("heat stencil needs t > 0, got {t}")));
            }
            // Δt = h² keeps the forward difference second order in h
            let t1 = t + h * h;
            let u = eval_dd(field, t, x);
            let ut = (eval_dd(field, t1, x) - u) / Dd::diff(t1, t);
            let uxx = second_difference(|v| eval_dd(field, t, v), x - h, x, x + h, u);
            Ok(((ut - uxx).to_f64(), u.to_f64()))
        }
    }
}

/// Finite-difference residual of Laplace's equation (5-point stencil in
/// Cartesian coordinates) or the heat equation at the probes.
pub fn pde_residual(field: &SolutionField, probes: &[Point], h: f64) -> Result<ResidualStats> {
    if !(h > 0.0) || probes.is_empty() {
        return Err(Error::InvalidParameter("need h > 0 and at least one probe".into()));
    }
    let vals: Vec<(f64, f64)> = probes.par_iter().map(|&p| stencil(field, p, h)).collect::<Result<_>>()?;
    let max_abs = vals.iter().fold(0.0f64, |m, (r, _)| m.max(r.abs()));
    let rms = (vals.iter().map(|(r, _)| r * r).sum::<f64>() / vals.len() as f64).sqrt();
    let max_u = vals.iter().fold(0.0f64, |m, (_, u)| m.max(u.abs()));
    Ok(ResidualStats { max_abs, rms, max_u })
}

/// `max-abs residual(h) / max-abs residual(h/2)`; near 4 for a second-order
/// stencil applied to an exact solution.
pub fn residual_ratio(field: &SolutionField, probes: &[Point], h: f64) -> Result<f64> {
    let coarse = pde_residual(field, probes, h)?;
    let fine = pde_residual(field, probes, 0.5 * h)?;
    Ok(coarse.max_abs / fine.max_abs)
}

/// Grid-L² distance between the field near the boundary and a boundary
/// function, for each radius `ρ` (disk) or time `t` (heat) in `schedule`.
pub fn boundary_attainment(
    field: &SolutionField,
    boundary: &[f64],
    grid: &BoundaryGrid,
    schedule: &[f64],
) -> Result<Vec<f64>> {
    grid.check_len(boundary.len())?;
    if grid.family() != field.family {
        return Err(Error::MixedFamily);
    }
    schedule
        .iter()
        .map(|&level| {
            let diff: Vec<f64> = grid
                .nodes()
                .par_iter()
                .zip(boundary.par_iter())
                .map(|(&c, b)| {
                    let p = match field.family {
                        Family::Disk => Point::Disk { rho: level, theta: c },
                        Family::Heat => Point::Heat { t: level, x: c },
                    };
                    Ok(field.eval(p)? - b)
                })
                .collect::<Result<_>>()?;
            Ok(grid.dot(&diff, &diff).sqrt())
        })
        .collect()
}
