//! Building signals for the configured example, running the decomposition,
//! and writing the result files.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use nalgebra::DMatrix;
use serde_json::json;
use spoafd_core::discretize::{
    brownian_bridge_covariance, covariance_matrix, make_density_quadrature, sample_paths_from_covariance,
};
use spoafd_core::lift::{self, SolutionField};
use spoafd_core::poafd::{CandidateSet, DecomposeOptions, Termination};
use spoafd_core::spoafd::{spoafd1_decompose, spoafd2_decompose, StochasticExpansion, StochasticSignal};
use spoafd_core::{BoundaryGrid, DensitySpec, Family, Point};

use crate::config::{ExampleId, ExperimentConfig, Method, SignalMode};

/// Environment variable that overrides the directory relative output paths
/// are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "SPOAFD_OUTPUT_ROOT";

/// Boundary data of the disk example, `1/√(5 + (sin t − X)²)`.
pub fn laplace_boundary(t: f64, x: f64) -> f64 {
    1.0 / (5.0 + (t.sin() - x).powi(2)).sqrt()
}

/// Initial data of the heat example, `1/(2 + (x/3 − X)²)`.
pub fn heat_initial(x: f64, s: f64) -> f64 {
    1.0 / (2.0 + (x / 3.0 - s).powi(2))
}

/// One realization of the random boundary data evaluated by the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// Identifier used in file names and CSV headers.
    pub id: String,
    /// Human-readable description (`X = 2.4504`, `path 0`).
    pub label: String,
    pub values: Vec<f64>,
}

/// Grid, signal and realizations for a resolved config.
pub struct Problem {
    pub grid: BoundaryGrid,
    pub signal: StochasticSignal,
    pub realizations: Vec<Realization>,
}

pub fn make_grid(cfg: &ExperimentConfig) -> anyhow::Result<BoundaryGrid> {
    let points = cfg.grid.points.expect("resolved config");
    Ok(match cfg.family() {
        Family::Disk => BoundaryGrid::circle(points)?,
        Family::Heat => BoundaryGrid::line(cfg.grid.half_width.expect("resolved config"), points)?,
    })
}

fn read_paths(path: &Path, width: usize) -> anyhow::Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a number", path.display(), line_no + 1))?;
        if row.len() != width {
            bail!(
                "{}:{}: expected {width} values (one per grid point), found {}",
                path.display(),
                line_no + 1,
                row.len()
            );
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        bail!("{}: need at least 2 paths", path.display());
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn bivariate_signal(
    cfg: &ExperimentConfig,
    grid: &BoundaryGrid,
    f: fn(f64, f64) -> f64,
    law: DensitySpec,
) -> anyhow::Result<StochasticSignal> {
    let quad = make_density_quadrature(law, cfg.signal.density_nodes.expect("resolved config"))?;
    let density = StochasticSignal::bivariate(f, quad.clone());
    Ok(match cfg.mode() {
        SignalMode::Density => density,
        SignalMode::Covariance => {
            let mean = density.mean(grid)?;
            let n = grid.len();
            let slices: Vec<Vec<f64>> = quad
                .nodes()
                .iter()
                .map(|&s| grid.sample(|t| f(t, s)))
                .collect();
            let mut cov = DMatrix::zeros(n, n);
            for (g, m) in slices.iter().zip(quad.masses()) {
                let d = nalgebra::DVector::from_iterator(n, g.iter().zip(&mean).map(|(a, b)| a - b));
                cov.ger(m, &d, &d, 1.0);
            }
            StochasticSignal::CovarianceProcess { mean, cov }
        }
        SignalMode::Paths => {
            let xs = quad.sample(cfg.signal.signal_paths.expect("resolved config"), cfg.seed);
            let paths = DMatrix::from_fn(xs.len(), grid.len(), |i, j| f(grid.nodes()[j], xs[i]));
            StochasticSignal::SamplePaths { paths, seed: cfg.seed }
        }
    })
}

pub fn build_problem(cfg: &ExperimentConfig, base: &Path) -> anyhow::Result<Problem> {
    let grid = make_grid(cfg)?;
    let value_realizations = |f: fn(f64, f64) -> f64| -> Vec<Realization> {
        cfg.realizations
            .values
            .as_ref()
            .expect("resolved config")
            .iter()
            .enumerate()
            .map(|(i, &x)| Realization {
                id: format!("x{i}"),
                label: format!("X = {x}"),
                values: grid.sample(|t| f(t, x)),
            })
            .collect()
    };
    let path_realizations = |paths: &DMatrix<f64>| -> Vec<Realization> {
        let k = cfg.realizations.n_paths.expect("resolved config").min(paths.nrows());
        (0..k)
            .map(|i| Realization {
                id: format!("path{i}"),
                label: format!("path {i}"),
                values: paths.row(i).iter().copied().collect(),
            })
            .collect()
    };
    let (signal, realizations) = match cfg.example {
        ExampleId::LaplaceBivariate => (
            bivariate_signal(cfg, &grid, laplace_boundary, DensitySpec::LaplaceExample)?,
            value_realizations(laplace_boundary),
        ),
        ExampleId::HeatBivariate => (
            bivariate_signal(cfg, &grid, heat_initial, DensitySpec::StandardNormal)?,
            value_realizations(heat_initial),
        ),
        ExampleId::BrownianBridge => {
            let mean = vec![0.0; grid.len()];
            let cov_fn = brownian_bridge_covariance(TAU);
            let n_paths = cfg.realizations.n_paths.expect("resolved config");
            let shown = sample_paths_from_covariance(&mean, cov_fn, &grid, n_paths, cfg.seed)?;
            let signal = match cfg.mode() {
                SignalMode::Covariance => StochasticSignal::CovarianceProcess {
                    mean,
                    cov: covariance_matrix(cov_fn, &grid),
                },
                SignalMode::Paths => StochasticSignal::SamplePaths {
                    paths: sample_paths_from_covariance(
                        &mean,
                        cov_fn,
                        &grid,
                        cfg.signal.signal_paths.expect("resolved config"),
                        cfg.seed,
                    )?,
                    seed: cfg.seed,
                },
                SignalMode::Density => unreachable!("rejected by resolve"),
            };
            (signal, path_realizations(&shown))
        }
        ExampleId::Custom => {
            let file = base.join(cfg.signal.paths_file.as_ref().expect("resolved config"));
            let paths = read_paths(&file, grid.len())?;
            let shown = path_realizations(&paths);
            (StochasticSignal::SamplePaths { paths, seed: cfg.seed }, shown)
        }
    };
    Ok(Problem {
        grid,
        signal,
        realizations,
    })
}

/// Everything a run produces, before it is written to disk.
pub struct Outcome {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub expansion: StochasticExpansion,
    /// `‖var f‖_{L¹}` for SPOAFD1 runs.
    pub variance_l1: Option<f64>,
    /// Relative error of each realization after `n = 1..len` terms.
    pub realization_errors: Vec<Vec<f64>>,
    pub fields: Vec<SolutionField>,
    pub wall_time: f64,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.expansion.termination == Termination::Converged
    }
}

/// Runs the decomposition for a config. Relative paths in the config are
/// resolved against `base`.
pub fn execute(cfg: &ExperimentConfig, base: &Path) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let cfg = cfg.resolve()?;
    let problem = build_problem(&cfg, base)?;
    let candidates = CandidateSet::new(cfg.candidate_spec())?;
    let opts = DecomposeOptions {
        tol: cfg.tol.expect("resolved config"),
        max_iter: cfg.max_iter.expect("resolved config"),
        refine: cfg.candidates.refine.expect("resolved config"),
        allow_stall: false,
    };
    let (mut expansion, variance_l1) = match cfg.method {
        Method::Spoafd2 => (spoafd2_decompose(&problem.signal, &problem.grid, &candidates, &opts)?, None),
        Method::Spoafd1 => {
            let s1 = spoafd1_decompose(&problem.signal, &problem.grid, &candidates, &opts)?;
            (s1.stochastic, Some(s1.variance_l1))
        }
    };
    let mut realization_errors = Vec::new();
    let mut fields = Vec::new();
    for r in &problem.realizations {
        let f = expansion.cache_realization(&r.id, &r.values)?.to_vec();
        realization_errors.push(expansion.realization_error_trace(&r.values)?);
        fields.push(lift::solve(&expansion.system, &f)?.with_realization(r.id.clone()));
    }
    Ok(Outcome {
        config: cfg,
        problem,
        expansion,
        variance_l1,
        realization_errors,
        fields,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Interior evaluation lattice for the field files.
pub fn field_lattice(cfg: &ExperimentConfig) -> Vec<Point> {
    let f = &cfg.field;
    match cfg.family() {
        Family::Disk => {
            let na = f.n_angular.expect("resolved config");
            let mut pts = Vec::new();
            for rho in linspace(0.0, 0.99, f.n_radial.expect("resolved config")) {
                for k in 0..na {
                    pts.push(Point::Disk {
                        rho,
                        theta: TAU * k as f64 / na as f64,
                    });
                }
            }
            pts
        }
        Family::Heat => {
            let xs = linspace(-12.0, 12.0, f.n_x.expect("resolved config"));
            let mut pts = Vec::new();
            for t in linspace(0.05, 2.0, f.n_t.expect("resolved config")) {
                for &x in &xs {
                    pts.push(Point::Heat { t, x });
                }
            }
            pts
        }
    }
}

pub fn errors_csv(out: &Outcome) -> String {
    let mut s = String::from("n,expected_relative_error");
    for r in &out.problem.realizations {
        write!(s, ",{}", r.id).unwrap();
    }
    s.push('\n');
    for (k, e) in out.expansion.relative_error_trace.iter().enumerate() {
        write!(s, "{},{}", k + 1, sci(*e)).unwrap();
        for tr in &out.realization_errors {
            write!(s, ",{}", sci(tr[k])).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn atoms_csv(out: &Outcome) -> String {
    let mut s = match out.config.family() {
        Family::Disk => String::from("k,r,alpha"),
        Family::Heat => String::from("k,s,y"),
    };
    s.push_str(",multiplicity,objective,runner_up,refined\n");
    for a in &out.expansion.audit {
        let (c0, c1) = a.param.atom.coords();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            a.iteration,
            sci(c0),
            sci(c1),
            a.param.multiplicity(),
            sci(a.objective),
            sci(a.runner_up),
            a.refined
        )
        .unwrap();
    }
    s
}

pub fn field_csv(cfg: &ExperimentConfig, field: &SolutionField) -> anyhow::Result<String> {
    let mut s = match cfg.family() {
        Family::Disk => String::from("rho,theta,u\n"),
        Family::Heat => String::from("t,x,u\n"),
    };
    for p in field_lattice(cfg) {
        let u = field.eval(p)?;
        let (a, b) = match p {
            Point::Disk { rho, theta } => (rho, theta),
            Point::Heat { t, x } => (t, x),
        };
        writeln!(s, "{},{},{}", sci(a), sci(b), sci(u)).unwrap();
    }
    Ok(s)
}

pub fn meta_json(out: &Outcome, output_dir: &Path) -> serde_json::Value {
    let cfg = &out.config;
    let lattice = match cfg.family() {
        Family::Disk => json!({"rho": [0.0, 0.99], "n_radial": cfg.field.n_radial, "n_angular": cfg.field.n_angular}),
        Family::Heat => json!({"t": [0.05, 2.0], "x": [-12.0, 12.0], "n_t": cfg.field.n_t, "n_x": cfg.field.n_x}),
    };
    json!({
        "config": cfg,
        "seed": cfg.seed,
        "wall_time_seconds": out.wall_time,
        "method": cfg.method,
        "signal_mode": out.problem.signal.mode(),
        "search_method": out.expansion.search.label(),
        "version": format!("spoafd {}", env!("CARGO_PKG_VERSION")),
        "termination": format!("{:?}", out.expansion.termination),
        "iterations": out.expansion.len(),
        "signal_norm_sq": out.expansion.n_norm_sq,
        "variance_l1": out.variance_l1,
        "brownian_horizon": if cfg.example == ExampleId::BrownianBridge { Some(TAU) } else { None },
        "realizations": out.problem.realizations.iter().map(|r| json!({"id": r.id, "label": r.label})).collect::<Vec<_>>(),
        "field_lattice": lattice,
        "output_dir": output_dir.display().to_string(),
    })
}

/// Writes `errors.csv`, `atoms.csv`, one `field_<id>.csv` per realization
/// and `meta.json`.
pub fn write_outputs(out: &Outcome, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let put = |name: &str, body: String| -> anyhow::Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    put("errors.csv", errors_csv(out))?;
    put("atoms.csv", atoms_csv(out))?;
    for field in &out.fields {
        let id = field.realization.as_deref().unwrap_or("field");
        put(&format!("field_{id}.csv"), field_csv(&out.config, field)?)?;
    }
    put(
        "meta.json",
        serde_json::to_string_pretty(&meta_json(out, dir))? + "\n",
    )?;
    Ok(())
}

/// Directory against which relative output paths are resolved.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Outcome of `run`: process exit codes 0 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::MaxIterations => 2,
        }
    }
}

/// Runs an experiment and writes its files under `root/output_dir`.
/// `base` resolves relative input paths (the config file's directory).
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, root: &Path) -> anyhow::Result<(RunStatus, PathBuf)> {
    let out = execute(cfg, base)?;
    let dir = root.join(out.config.output_dir.as_ref().expect("resolved config"));
    write_outputs(&out, &dir)?;
    let status = if out.converged() {
        RunStatus::Converged
    } else {
        RunStatus::MaxIterations
    };
    Ok((status, dir))
}

/// Canonical config for `demo <example-id>`.
pub fn demo_config(example: ExampleId) -> anyhow::Result<ExperimentConfig> {
    if example == ExampleId::Custom {
        bail!("there is no canonical custom example; write a config with a paths file");
    }
    ExperimentConfig::new(example).resolve()
}
