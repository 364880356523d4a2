//! Built-in battery of numerical checks run by `spoafd validate`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spoafd_core::discretize::make_density_quadrature;
use spoafd_core::kernels::kernel_inner;
use spoafd_core::lift::{self, interior_probes, residual_ratio, STENCIL_STEP};
use spoafd_core::poafd::{CandidateSet, CandidateSpec, DecomposeOptions, OrthoSystem};
use spoafd_core::spoafd::{spoafd1_bounds, spoafd1_decompose, StochasticSignal};
use spoafd_core::{Atom, BoundaryGrid, DensitySpec, KernelParam};

use crate::experiment::{heat_initial, laplace_boundary};

pub const ORTHONORMALITY_TOL: f64 = 1e-8;
pub const DISK_INNER_TOL: f64 = 1e-10;
pub const HEAT_INNER_TOL: f64 = 1e-6;
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
pub const RATIO_RANGE: (f64, f64) = (3.5, 4.5);
pub const BOUND_SLACK: f64 = 1e-8;

/// Result of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit: format!("<= {tol:e}"),
            passed: value <= tol,
        }
    }

    fn within(name: impl Into<String>, value: f64, (lo, hi): (f64, f64)) -> Self {
        Check {
            name: name.into(),
            value,
            limit: format!("in [{lo}, {hi}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.limit
        )
    }
}

fn random_param(rng: &mut ChaCha8Rng, disk: bool) -> KernelParam {
    let atom = if disk {
        Atom::disk(0.9 * rng.random::<f64>(), TAU * rng.random::<f64>())
    } else {
        Atom::heat(0.01 + 0.99 * rng.random::<f64>(), -5.0 + 10.0 * rng.random::<f64>())
    }
    .expect("parameters drawn inside the domain");
    let m = 1 + (rng.random::<f64>() * 3.0) as u32;
    KernelParam::with_multiplicity(atom, m).expect("multiplicity is positive")
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize, periodic: bool) -> f64 {
    let h = (hi - lo) / n as f64;
    if periodic {
        (0..n).map(|k| f(lo + k as f64 * h)).sum::<f64>() * h
    } else {
        let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h)).sum();
        (inner + 0.5 * (f(lo) + f(hi))) * h
    }
}

/// Largest relative gap between the closed-form inner product and a
/// trapezoid quadrature over `pairs` random parameter pairs.
pub fn semigroup_gap(disk: bool, pairs: usize, seed: u64) -> anyhow::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_param(&mut rng, disk);
        let b = random_param(&mut rng, disk);
        let closed = kernel_inner(&a, &b)?;
        let quad = if disk {
            trapezoid(|t| a.eval(t) * b.eval(t), 0.0, TAU, 4096, true) / TAU
        } else {
            trapezoid(|x| a.eval(x) * b.eval(x), -40.0, 40.0, 80_000, false)
        };
        worst = worst.max((quad - closed).abs() / closed.abs().max(1.0));
    }
    Ok(worst)
}

/// Max-abs distance of the Gram matrix of the orthonormal basis from the identity.
pub fn orthonormality_defect(system: &OrthoSystem) -> f64 {
    system.orthonormality_defect()
}

/// Relative reconstruction defect of `Σ C_k K̃_{q_k}` against `Σ F_k E_k`
/// for the boundary data `f`.
pub fn reconstruction_gap(system: &OrthoSystem, f: &[f64]) -> anyhow::Result<f64> {
    let coeffs = system.coefficients(f)?;
    let c = lift::triangular_coefficients(&coeffs, system)?;
    Ok(lift::reconstruction_defect(system, &coeffs, &c)?)
}

struct Case {
    name: &'static str,
    grid: BoundaryGrid,
    signal: StochasticSignal,
    spec: CandidateSpec,
    realization: Vec<f64>,
}

fn cases() -> anyhow::Result<Vec<Case>> {
    let disk_grid = BoundaryGrid::circle(256)?;
    let heat_grid = BoundaryGrid::line(40.0, 1024)?;
    let laplace = StochasticSignal::bivariate(laplace_boundary, make_density_quadrature(DensitySpec::LaplaceExample, 41)?);
    let heat = StochasticSignal::bivariate(heat_initial, make_density_quadrature(DensitySpec::StandardNormal, 81)?);
    Ok(vec![
        Case {
            name: "disk",
            realization: disk_grid.sample(|t| laplace_boundary(t, 2.4504)),
            grid: disk_grid,
            signal: laplace,
            spec: CandidateSpec::Disk {
                r_max: 0.95,
                n_radii: 16,
                n_angles: 32,
            },
        },
        Case {
            name: "heat",
            realization: heat_grid.sample(|x| heat_initial(x, -0.7)),
            grid: heat_grid,
            signal: heat,
            spec: CandidateSpec::Heat {
                s_min: 1e-2,
                s_max: 20.0,
                n_s: 16,
                y_min: -20.0,
                y_max: 20.0,
                n_y: 41,
            },
        },
    ])
}

/// Runs every check and returns them in order. `corrupt_gram` perturbs one
/// off-diagonal Gram entry of each system before the reconstruction check.
pub fn run_checks(corrupt_gram: bool, seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut checks = vec![
        Check::at_most("semigroup identities (disk, 50 pairs)", semigroup_gap(true, 50, seed)?, DISK_INNER_TOL),
        Check::at_most("semigroup identities (heat, 50 pairs)", semigroup_gap(false, 50, seed)?, HEAT_INNER_TOL),
    ];
    for case in cases()? {
        let candidates = CandidateSet::new(case.spec)?;
        let opts = DecomposeOptions::new(1e-6, 8);
        let s1 = spoafd1_decompose(&case.signal, &case.grid, &candidates, &opts)?;
        let mut system = s1.stochastic.system.clone();

        checks.push(Check::at_most(
            format!("orthonormality ({}, {} atoms)", case.name, system.len()),
            orthonormality_defect(&system),
            ORTHONORMALITY_TOL,
        ));

        if corrupt_gram && system.len() > 1 {
            system.perturb_gram(1, 0, 1e-3);
        }
        checks.push(Check::at_most(
            format!("reconstruction through the kernels ({})", case.name),
            reconstruction_gap(&system, &case.realization)?,
            RECONSTRUCTION_TOL,
        ));

        let coeffs = s1.stochastic.system.coefficients(&case.realization)?;
        let field = lift::solve(&s1.stochastic.system, &coeffs)?;
        let probes = interior_probes(field.family, 200, seed);
        checks.push(Check::within(
            format!("PDE residual ratio ({})", case.name),
            residual_ratio(&field, &probes, STENCIL_STEP)?,
            RATIO_RANGE,
        ));

        // the bounds concern the span of the whole mean system, so the mean
        // expansion is carried well past the truncations being checked
        let long = DecomposeOptions {
            tol: 1e-10,
            max_iter: 40,
            refine: false,
            allow_stall: true,
        };
        let full = spoafd1_decompose(&case.signal, &case.grid, &candidates, &long)?;
        let rows = spoafd1_bounds(&case.signal, &case.grid, &full, 10)?;
        let worst = rows
            .iter()
            .map(|r| (r.lift_gap - r.variance_l1).max(r.d_norm_sq - r.d_bound))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            format!("SPOAFD1 bounds ({}, n <= {})", case.name, rows.len()),
            worst.max(0.0),
            BOUND_SLACK,
        ));
    }
    Ok(checks)
}

/// Prints one PASS/FAIL line per check and returns whether all passed.
pub fn validate_suite(corrupt_gram: bool) -> anyhow::Result<bool> {
    let checks = run_checks(corrupt_gram, 0)?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed))
}
