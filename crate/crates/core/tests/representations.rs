//! Cross-checks between the signal representations and between the
//! incremental Gram-Schmidt and a from-scratch one.

use nalgebra::DMatrix;
use spoafd_core::discretize::make_density_quadrature;
use spoafd_core::poafd::{CandidateSet, CandidateSpec, RepeatRule};
use spoafd_core::spoafd::expected_objective;
use spoafd_core::{Atom, BoundaryGrid, DensitySpec, OrthoSystem, StochasticSignal};

fn laplace_boundary(t: f64, x: f64) -> f64 {
    1.0 / (5.0 + (t.sin() - x).powi(2)).sqrt()
}

fn covariance_from(signal: &StochasticSignal, grid: &BoundaryGrid, nodes: &[f64], masses: &[f64]) -> StochasticSignal {
    let mean = signal.mean(grid).unwrap();
    let n = grid.len();
    let mut cov = DMatrix::zeros(n, n);
    for (&s, &m) in nodes.iter().zip(masses) {
        let g = signal.slice(grid, s).unwrap();
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += m * (g[i] - mean[i]) * (g[j] - mean[j]);
            }
        }
    }
    StochasticSignal::CovarianceProcess { mean, cov }
}

#[test]
fn density_covariance_and_paths_agree_on_the_objective() {
    let grid = BoundaryGrid::circle(64).unwrap();
    let quad = make_density_quadrature(DensitySpec::LaplaceExample, 101).unwrap();
    let density = StochasticSignal::bivariate(laplace_boundary, quad.clone());
    let covariance = covariance_from(&density, &grid, quad.nodes(), &quad.masses());

    let xs = quad.sample(100_000, 17);
    let paths = DMatrix::from_fn(xs.len(), grid.len(), |i, j| laplace_boundary(grid.nodes()[j], xs[i]));
    let sampled = StochasticSignal::SamplePaths { paths, seed: 17 };

    let candidates = CandidateSet::new(CandidateSpec::Disk {
        r_max: 0.9,
        n_radii: 5,
        n_angles: 4,
    })
    .unwrap();
    assert_eq!(candidates.len(), 20);

    let mut system = OrthoSystem::new(grid.clone(), RepeatRule::Exact);
    for stage in 0..2 {
        // once the centre is taken, the other r = 0 candidates are degenerate
        let values: Vec<(Atom, [f64; 3])> = candidates
            .atoms()
            .iter()
            .filter_map(|atom| {
                let q = system.resolve(atom);
                let d = expected_objective(&density, &grid, &system, &q).ok()?;
                let rest = [&covariance, &sampled].map(|s| expected_objective(s, &grid, &system, &q).unwrap());
                Some((*atom, [d, rest[0], rest[1]]))
            })
            .collect();
        assert!(values.len() >= 16);
        // candidates whose objective vanishes by symmetry are compared on
        // the scale of the largest one
        let floor = 1e-3 * values.iter().map(|(_, v)| v[0]).fold(0.0, f64::max);
        for (atom, [d, c, p]) in values {
            assert!((c - d).abs() <= 1e-10 * d.max(floor), "stage {stage} {atom:?}: {c} vs {d}");
            assert!((p - d).abs() <= 0.02 * d.max(floor), "stage {stage} {atom:?}: {p} vs {d}");
        }
        system.extend(&Atom::disk(0.0, 0.0).unwrap()).unwrap();
    }
}

/// Modified Gram-Schmidt of the raw kernel samples, done twice per vector.
fn brute_force(system: &OrthoSystem) -> Vec<Vec<f64>> {
    let grid = system.grid();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in system.raw_kernels() {
        let mut w = v.clone();
        for _ in 0..2 {
            for e in &out {
                let c = grid.inner(&w, e).unwrap();
                for (wi, ei) in w.iter_mut().zip(e) {
                    *wi -= c * ei;
                }
            }
        }
        let n = grid.norm_sq(&w).unwrap().sqrt();
        out.push(w.iter().map(|x| x / n).collect());
    }
    out
}

fn assert_matches_brute_force(system: &OrthoSystem) {
    let grid = system.grid();
    for (k, (e, b)) in system.basis().iter().zip(brute_force(system)).enumerate() {
        let d: Vec<f64> = e.iter().zip(&b).map(|(x, y)| x - y).collect();
        let gap = grid.norm_sq(&d).unwrap().sqrt();
        assert!(gap <= 1e-8, "E_{k}: gap {gap}");
    }
    assert!(system.orthonormality_defect() <= 1e-8);
}

#[test]
fn forced_repeats_match_brute_force_gram_schmidt() {
    let mut disk = OrthoSystem::new(BoundaryGrid::circle(2048).unwrap(), RepeatRule::Exact);
    let a = Atom::disk(0.4, 0.7).unwrap();
    for atom in [a, Atom::disk(0.6, 3.0).unwrap(), a, a] {
        disk.extend(&atom).unwrap();
    }
    assert_eq!(disk.params()[3].multiplicity(), 3);
    assert_matches_brute_force(&disk);

    let mut heat = OrthoSystem::new(BoundaryGrid::line(30.0, 8192).unwrap(), RepeatRule::Exact);
    let h = Atom::heat(0.5, -1.0).unwrap();
    for atom in [h, h, Atom::heat(1.2, 2.0).unwrap(), h] {
        heat.extend(&atom).unwrap();
    }
    assert_eq!(heat.params()[3].multiplicity(), 3);
    assert_matches_brute_force(&heat);
}
