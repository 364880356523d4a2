//! Experiment configuration files.
//!
//! A config names one of the built-in examples (or `custom`) and may override
//! any knob. [`ExperimentConfig::resolve`] fills every unset knob with the
//! example's default, so the resolved config is a complete record of the run.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use spoafd_core::poafd::CandidateSpec;
use spoafd_core::Family;

/// Smallest circle grid accepted in a config.
pub const MIN_CIRCLE_POINTS: usize = 16;
/// Smallest line grid accepted in a config.
pub const MIN_LINE_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleId {
    LaplaceBivariate,
    HeatBivariate,
    BrownianBridge,
    Custom,
}

impl ExampleId {
    pub fn name(self) -> &'static str {
        match self {
            ExampleId::LaplaceBivariate => "laplace_bivariate",
            ExampleId::HeatBivariate => "heat_bivariate",
            ExampleId::BrownianBridge => "brownian_bridge",
            ExampleId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "laplace_bivariate" => ExampleId::LaplaceBivariate,
            "heat_bivariate" => ExampleId::HeatBivariate,
            "brownian_bridge" => ExampleId::BrownianBridge,
            "custom" => ExampleId::Custom,
            other => bail!(
                "unknown example `{other}` (expected laplace_bivariate, heat_bivariate, brownian_bridge or custom)"
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spoafd1,
    #[default]
    Spoafd2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    Density,
    Covariance,
    Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Disk,
    Heat,
}

impl From<KernelFamily> for Family {
    fn from(f: KernelFamily) -> Self {
        match f {
            KernelFamily::Disk => Family::Disk,
            KernelFamily::Heat => Family::Heat,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<KernelFamily>,
    /// `M` on the circle, `N` on the line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Truncation `L` of the line to `[-L, L]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_radii: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_angles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_y: Option<usize>,
    /// Local refinement around each grid winner.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SignalMode>,
    /// Simpson nodes per smooth piece of the density.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_nodes: Option<usize>,
    /// Number of sample paths when the signal is given by paths.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_paths: Option<usize>,
    /// CSV of sample paths for the custom example (one path per row).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths_file: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationConfig {
    /// Values of the random parameter for the bivariate examples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Number of sample paths evaluated for process examples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_radial: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_angular: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_x: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    #[serde(default)]
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub candidates: CandidateConfig,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub realizations: RealizationConfig,
    #[serde(default)]
    pub field: FieldConfig,
}

fn or<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

impl ExperimentConfig {
    pub fn new(example: ExampleId) -> Self {
        Self {
            example,
            method: Method::default(),
            tol: None,
            max_iter: None,
            seed: 0,
            output_dir: None,
            grid: GridConfig::default(),
            candidates: CandidateConfig::default(),
            signal: SignalConfig::default(),
            realizations: RealizationConfig::default(),
            field: FieldConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Fills every unset knob with the example default and validates the result.
    pub fn resolve(&self) -> anyhow::Result<Self> {
        let mut c = self.clone();
        let family = match c.example {
            ExampleId::LaplaceBivariate | ExampleId::BrownianBridge => KernelFamily::Disk,
            ExampleId::HeatBivariate => KernelFamily::Heat,
            ExampleId::Custom => match c.grid.family {
                Some(f) => f,
                None => bail!("custom examples need grid.family"),
            },
        };
        if c.grid.family.is_some_and(|f| f != family) {
            bail!("example {} runs on the {:?} dictionary", c.example.name(), family);
        }
        c.grid.family = Some(family);
        or(&mut c.output_dir, format!("out/{}", c.example.name()));

        match c.example {
            ExampleId::LaplaceBivariate => {
                or(&mut c.grid.points, 2048);
                // tight enough that the 4-term row is always emitted
                or(&mut c.tol, 1e-7);
                or(&mut c.max_iter, 20);
                or(&mut c.signal.mode, SignalMode::Density);
                or(&mut c.realizations.values, vec![0.0, -std::f64::consts::PI, 2.4504]);
            }
            ExampleId::HeatBivariate => {
                or(&mut c.grid.points, 4096);
                or(&mut c.grid.half_width, 40.0);
                // tight enough that the 15-term row is always emitted
                or(&mut c.tol, 1e-5);
                or(&mut c.max_iter, 20);
                or(&mut c.signal.mode, SignalMode::Density);
                or(&mut c.realizations.values, vec![0.0, -3.7, 3.1]);
            }
            ExampleId::BrownianBridge => {
                or(&mut c.grid.points, 1024);
                or(&mut c.max_iter, 130);
                or(&mut c.signal.mode, SignalMode::Covariance);
                or(&mut c.realizations.n_paths, 2);
            }
            ExampleId::Custom => {
                or(&mut c.max_iter, 100);
                or(&mut c.signal.mode, SignalMode::Paths);
                or(&mut c.realizations.n_paths, 2);
                if c.grid.points.is_none() {
                    bail!("custom examples need grid.points");
                }
                if c.signal.paths_file.is_none() {
                    bail!("custom examples need signal.paths_file");
                }
                if family == KernelFamily::Heat {
                    or(&mut c.grid.half_width, 40.0);
                }
            }
        }

        or(&mut c.tol, 1e-4);

        let bivariate = matches!(c.example, ExampleId::LaplaceBivariate | ExampleId::HeatBivariate);
        let mode = c.signal.mode.unwrap();
        match (c.example, mode) {
            (ExampleId::BrownianBridge, SignalMode::Density) => {
                bail!("brownian_bridge has no parameter density; use covariance or paths")
            }
            (ExampleId::Custom, m) if m != SignalMode::Paths => bail!("custom examples are given as paths"),
            _ => {}
        }
        if bivariate {
            or(&mut c.signal.density_nodes, if family == KernelFamily::Disk { 101 } else { 201 });
            c.realizations.n_paths = None;
        } else {
            c.realizations.values = None;
        }
        if mode == SignalMode::Paths && c.example != ExampleId::Custom {
            or(&mut c.signal.signal_paths, 1000);
        }

        match family {
            KernelFamily::Disk => {
                or(&mut c.candidates.r_max, 0.99);
                or(&mut c.candidates.n_radii, 64);
                or(&mut c.candidates.n_angles, 128);
                or(&mut c.field.n_radial, 100);
                or(&mut c.field.n_angular, 256);
            }
            KernelFamily::Heat => {
                or(&mut c.candidates.s_min, 1e-3);
                or(&mut c.candidates.s_max, 20.0);
                or(&mut c.candidates.n_s, 48);
                or(&mut c.candidates.n_y, 128);
                or(&mut c.field.n_t, 40);
                or(&mut c.field.n_x, 241);
            }
        }
        or(&mut c.candidates.refine, false);

        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let tol = self.tol.unwrap();
        if !(tol > 0.0) {
            bail!("tol must be positive, got {tol}");
        }
        if self.max_iter == Some(0) {
            bail!("max_iter must be at least 1");
        }
        let points = self.grid.points.unwrap();
        match self.family() {
            Family::Disk if points < MIN_CIRCLE_POINTS => {
                bail!("grid.points must be at least {MIN_CIRCLE_POINTS} on the circle, got {points}")
            }
            Family::Heat if points < MIN_LINE_POINTS => {
                bail!("grid.points must be at least {MIN_LINE_POINTS} on the line, got {points}")
            }
            Family::Heat if !(self.grid.half_width.unwrap() > 0.0) => bail!("grid.half_width must be positive"),
            _ => {}
        }
        if let Some(v) = &self.realizations.values {
            if v.is_empty() {
                bail!("realizations.values must not be empty");
            }
        }
        if self.realizations.n_paths == Some(0) {
            bail!("realizations.n_paths must be at least 1");
        }
        if self.signal.density_nodes.is_some_and(|n| n < 3) {
            bail!("signal.density_nodes must be at least 3");
        }
        if self.signal.signal_paths.is_some_and(|n| n < 2) {
            bail!("signal.signal_paths must be at least 2");
        }
        let f = &self.field;
        if [f.n_radial, f.n_angular, f.n_t, f.n_x].iter().flatten().any(|&n| n < 2) {
            bail!("field lattice sizes must be at least 2");
        }
        Ok(())
    }

    /// Dictionary family of a resolved config.
    pub fn family(&self) -> Family {
        self.grid.family.expect("resolved config").into()
    }

    pub fn mode(&self) -> SignalMode {
        self.signal.mode.expect("resolved config")
    }

    pub fn candidate_spec(&self) -> CandidateSpec {
        let c = &self.candidates;
        match self.family() {
            Family::Disk => CandidateSpec::Disk {
                r_max: c.r_max.unwrap(),
                n_radii: c.n_radii.unwrap(),
                n_angles: c.n_angles.unwrap(),
            },
            Family::Heat => {
                let l = self.grid.half_width.unwrap();
                CandidateSpec::Heat {
                    s_min: c.s_min.unwrap(),
                    s_max: c.s_max.unwrap(),
                    n_s: c.n_s.unwrap(),
                    y_min: -l,
                    y_max: l,
                    n_y: c.n_y.unwrap(),
                }
            }
        }
    }
}
