//! TOML run configuration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memsim_core::family::{
    example_family, AffineFamily, BoundaryFamily, ConstantPermittivity, HarmonicPermittivity,
    Permittivity, PermittivityField,
};
use memsim_core::geometry::{load_profile, BcKind, DeviceParams, Direction, Grid1D, Profile};
use memsim_core::minimizer::MinimizeOptions;
use memsim_core::shape::FdScheme;
use memsim_core::transmission::{Model, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default = "DeviceParams::standard")]
    pub device: DeviceParams,
    #[serde(default)]
    pub permittivity: PermittivitySpec,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub direction: DirectionSpec,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub minimize: MinimizeOptions,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            device: DeviceParams::standard(),
            permittivity: PermittivitySpec::default(),
            family: FamilySpec::default(),
            grid: GridSection::default(),
            solver: SolverOptions::default(),
            profile: ProfileSpec::default(),
            direction: DirectionSpec::default(),
            validate: ValidateSection::default(),
            minimize: MinimizeOptions::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: 1,
        }
    }
}

/// Permittivity `σ₁` of the dielectric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PermittivitySpec {
    Constant {
        value: f64,
    },
    /// `mean + amplitude·sin(k·π·x/L + phase)`.
    Harmonic {
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Default for PermittivitySpec {
    fn default() -> Self {
        PermittivitySpec::Constant { value: 2.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Closed-form two-layer capacitor data.
    #[default]
    Capacitor,
    /// `h₂ = offset + slope_z(z+H) + slope_x·x + slope_w·w`; needs constant `σ₁`.
    Affine {
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        slope_z: f64,
        #[serde(default)]
        slope_x: f64,
        #[serde(default)]
        slope_w: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Number of x-cells.
    pub nx: usize,
    pub bc: BcKind,
    /// Contact threshold; `1e-8·H` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_c: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 128,
            bc: BcKind::Clamped,
            eps_c: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude·H·(1 - (x/L)²)²`.
    Bulge {
        amplitude: f64,
    },
    /// `-H + (H/4)(1 - cos(πx/L))²`, touching the layer at `x = 0`.
    Touching,
    /// Profile CSV with the `# memsim-profile v1` header.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DirectionSpec {
    Zero,
    /// `amplitude·(1 - (x/L)²)²`.
    Bulge {
        amplitude: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DirectionSpec {
    fn default() -> Self {
        DirectionSpec::Bulge { amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub steps: Vec<f64>,
    pub scheme: FdScheme,
    /// Pass bound on the smallest relative error of the table.
    pub max_rel_err: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            steps: vec![1e-2, 1e-3, 1e-4],
            scheme: FdScheme::Forward,
            max_rel_err: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub v_min: f64,
    pub v_max: f64,
    pub count: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            v_min: 0.5,
            v_max: 8.0,
            count: 16,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub nx: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Some(out) = &overrides.out {
            config.run.out = out.clone();
        }
        if let Some(nx) = overrides.nx {
            config.grid.nx = nx;
        }
        if let Some(tol) = overrides.tol {
            config.solver.tol = tol;
        }
        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.device.validate().map_err(CliError::config)?;
        if self.grid.nx < 4 {
            return Err(CliError::Config(format!(
                "grid.nx = {} (need at least 4 cells)",
                self.grid.nx
            )));
        }
        if self.solver.nz_layer < 2 || self.solver.nz_gap < 2 {
            return Err(CliError::Config(
                "solver.nz_layer and solver.nz_gap must be at least 2".into(),
            ));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(CliError::Config(format!(
                "solver.tol = {} must lie in (0, 1)",
                self.solver.tol
            )));
        }
        if let Some(eps) = self.grid.eps_c {
            if !(eps >= 0.0) {
                return Err(CliError::Config(format!("grid.eps_c = {eps} must be >= 0")));
            }
        }
        self.minimize.validate().map_err(CliError::config)?;
        if self.validate.steps.is_empty() || self.validate.steps.iter().any(|t| !(*t > 0.0)) {
            return Err(CliError::Config(
                "validate.steps must be non-empty and positive".into(),
            ));
        }
        if !(self.validate.max_rel_err > 0.0) {
            return Err(CliError::Config(
                "validate.max_rel_err must be positive".into(),
            ));
        }
        let s = &self.sweep;
        if s.count < 1 || !(s.v_min >= 0.0) || !(s.v_max >= s.v_min) {
            return Err(CliError::Config(
                "sweep needs count >= 1 and 0 <= v_min <= v_max".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn permittivity(&self, params: &DeviceParams) -> Result<PermittivityField, CliError> {
        let sigma1: Arc<dyn Permittivity> = match self.permittivity {
            PermittivitySpec::Constant { value } => Arc::new(ConstantPermittivity(value)),
            PermittivitySpec::Harmonic {
                mean,
                amplitude,
                wavenumber,
                phase,
            } => Arc::new(HarmonicPermittivity {
                mean,
                amplitude,
                wavenumber,
                phase,
                half_width: params.half_width,
            }),
        };
        PermittivityField::new(sigma1, params.sigma2, params).map_err(CliError::config)
    }

    pub fn family(
        &self,
        params: &DeviceParams,
        perm: &PermittivityField,
    ) -> Result<Arc<dyn BoundaryFamily>, CliError> {
        Ok(match self.family {
            FamilySpec::Capacitor => {
                Arc::new(example_family(params, perm).map_err(CliError::config)?)
            }
            FamilySpec::Affine {
                offset,
                slope_z,
                slope_x,
                slope_w,
            } => {
                let PermittivitySpec::Constant { value } = self.permittivity else {
                    return Err(CliError::Config(
                        "the affine family needs a constant permittivity".into(),
                    ));
                };
                Arc::new(AffineFamily {
                    offset,
                    slope_z,
                    slope_x,
                    slope_w,
                    sigma1: value,
                    sigma2: params.sigma2,
                    gap_height: params.gap_height,
                })
            }
        })
    }

    /// Model for the configured device, optionally at another voltage.
    pub fn model_at(&self, voltage: f64) -> Result<Model, CliError> {
        let params = self.device.with_voltage(voltage);
        let perm = self.permittivity(&params)?;
        let family = self.family(&params, &perm)?;
        Model::new(params, perm, family, self.solver).map_err(CliError::config)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        self.model_at(self.device.voltage)
    }

    pub fn grid(&self) -> Result<Grid1D, CliError> {
        Grid1D::new(self.device.half_width, self.grid.nx).map_err(CliError::config)
    }

    fn eps_c(&self) -> f64 {
        self.grid
            .eps_c
            .unwrap_or_else(|| self.device.contact_threshold())
    }

    pub fn profile(&self) -> Result<Profile, CliError> {
        let params = &self.device;
        let (h, l) = (params.gap_height, params.half_width);
        let grid = self.grid()?;
        let samples: Vec<f64> = match &self.profile {
            ProfileSpec::File { path } => {
                let loaded = load_profile(path, params, self.grid.bc).map_err(CliError::config)?;
                if loaded.grid().cells() != self.grid.nx {
                    return Err(CliError::Config(format!(
                        "{} has {} cells but grid.nx = {}",
                        path.display(),
                        loaded.grid().cells(),
                        self.grid.nx
                    )));
                }
                loaded.values().to_vec()
            }
            spec => grid
                .nodes()
                .iter()
                .map(|&x| match spec {
                    ProfileSpec::Zero => 0.0,
                    ProfileSpec::Constant { value } => *value,
                    ProfileSpec::Bulge { amplitude } => {
                        amplitude * h * (1.0 - (x / l).powi(2)).powi(2)
                    }
                    ProfileSpec::Touching => {
                        let c = 1.0 - (PI * x / l).cos();
                        -h + 0.25 * h * c * c
                    }
                    ProfileSpec::File { .. } => unreachable!(),
                })
                .collect(),
        };
        Profile::with_threshold(grid, samples, params, self.grid.bc, self.eps_c())
            .map_err(CliError::config)
    }

    pub fn direction(&self) -> Result<Direction, CliError> {
        let grid = self.grid()?;
        let l = self.device.half_width;
        let values = match &self.direction {
            DirectionSpec::Zero => vec![0.0; grid.len()],
            DirectionSpec::Bulge { amplitude } => grid
                .nodes()
                .iter()
                .map(|&x| amplitude * (1.0 - (x / l).powi(2)).powi(2))
                .collect(),
            DirectionSpec::File { path } => {
                let (xs, values) =
                    memsim_core::geometry::read_profile_csv(path).map_err(CliError::config)?;
                if xs.len() != grid.len() {
                    return Err(CliError::Config(format!(
                        "{} has {} nodes but the grid has {}",
                        path.display(),
                        xs.len(),
                        grid.len()
                    )));
                }
                values
            }
        };
        Direction::new(grid, values, self.grid.bc).map_err(CliError::config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = RunConfig {
            permittivity: PermittivitySpec::Harmonic {
                mean: 2.0,
                amplitude: 0.5,
                wavenumber: 1.0,
                phase: 0.25,
            },
            profile: ProfileSpec::Bulge { amplitude: 0.3 },
            grid: GridSection {
                eps_c: Some(1e-9),
                ..GridSection::default()
            },
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_device_key_is_named() {
        let text =
            "[device]\nH = 1.0\nd = 1.0\nsigma2 = 1.0\nV = 1.0\nbeta = 1.0\ntau = 0.0\na = 0.0\n";
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("`L`"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[grid]\nnx = 32\ncolour = 1\n").is_err());
        assert!(
            RunConfig::parse("[profile]\nkind = \"bulge\"\namplitude = 0.1\nwidth = 2\n").is_err()
        );
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let overrides = Overrides {
            out: Some(PathBuf::from("elsewhere")),
            nx: Some(64),
            tol: Some(1e-8),
            seed: Some(9),
        };
        let c = RunConfig::load(None, &overrides).unwrap();
        assert_eq!(c.grid.nx, 64);
        assert_eq!(c.solver.tol, 1e-8);
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.run.out, PathBuf::from("elsewhere"));
    }

    #[test]
    fn profiles_are_admissible() {
        let mut c = RunConfig::default();
        c.grid.nx = 32;
        for spec in [
            ProfileSpec::Zero,
            ProfileSpec::Bulge { amplitude: -0.5 },
            ProfileSpec::Touching,
        ] {
            c.profile = spec;
            c.profile().unwrap();
        }
        c.profile = ProfileSpec::Touching;
        assert!(c.profile().unwrap().has_contact());
    }
}
