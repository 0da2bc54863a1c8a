//! Benchmark configuration: presets per case, overridable from a flat
//! `key = value` file with optional `[case]` sections.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pmhdg_core::particles::SeedingMode;
use pmhdg_core::projection::TimeScheme;

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    GaussianHump,
    RigidRotation,
    SkewAdvection,
    Poiseuille,
    TaylorGreen,
}

impl Case {
    pub const ALL: [Case; 5] = [
        Case::GaussianHump,
        Case::RigidRotation,
        Case::SkewAdvection,
        Case::Poiseuille,
        Case::TaylorGreen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Case::GaussianHump => "gaussian-hump",
            Case::RigidRotation => "rigid-rotation",
            Case::SkewAdvection => "skew-advection",
            Case::Poiseuille => "poiseuille",
            Case::TaylorGreen => "taylor-green",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Case::Poiseuille | Case::TaylorGreen)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Case::ALL
            .into_iter()
            .find(|c| c.name() == norm || c.name().replace('-', "") == norm)
            .ok_or_else(|| BenchError::Config(format!("unknown case '{s}'")))
    }
}

/// How particle data reaches the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    /// PDE-constrained, locally conservative projection.
    Constrained,
    /// Cellwise least squares.
    L2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub case: Case,
    /// Refinement parameter: disk rings, or cells along the shorter side.
    pub mesh_n: usize,
    pub k: usize,
    pub l: usize,
    pub theta: f64,
    pub theta_l: f64,
    pub beta: f64,
    /// Interior penalty; `None` selects the default for the Eulerian stage.
    pub alpha: Option<f64>,
    pub dt: f64,
    pub end_time: f64,
    pub particles_per_cell: usize,
    pub seeding: SeedingMode,
    pub projection: ProjectionKind,
    pub kappa: f64,
    pub nu: f64,
    /// Transport direction of the skew advection case, in degrees.
    pub skew_angle: f64,
    /// Velocity scale: peak Taylor–Green velocity or Poiseuille centreline velocity.
    pub amplitude: f64,
    pub wavelength: [f64; 2],
    /// Taylor–Green wavelengths along each side of the periodic domain.
    pub periods: usize,
    /// Relative amplitude of a small-scale perturbation added to the initial
    /// Taylor–Green velocity.
    pub perturbation: f64,
    pub rng_seed: u64,
    /// Simulation times at which a report row is written (the end time is always reported).
    pub report_times: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    /// Write VTK files and particle dumps at report times.
    pub write_fields: bool,
}

impl BenchmarkConfig {
    /// Default settings of each case at its coarsest level.
    pub fn preset(case: Case) -> Self {
        let base = Self {
            case,
            mesh_n: 8,
            k: 1,
            l: 0,
            theta: 0.5,
            theta_l: 0.5,
            beta: 1e-6,
            alpha: None,
            dt: 0.02,
            end_time: 2.0,
            particles_per_cell: 30,
            seeding: SeedingMode::Random,
            projection: ProjectionKind::Constrained,
            kappa: 0.0,
            nu: 0.0,
            skew_angle: 45.0,
            amplitude: 1.0,
            wavelength: [2.0, 2.0],
            periods: 1,
            perturbation: 0.0,
            rng_seed: 1,
            report_times: Vec::new(),
            output_dir: None,
            write_fields: false,
        };
        match case {
            Case::GaussianHump => Self {
                k: 2,
                dt: 0.08,
                ..base
            },
            Case::RigidRotation => Self {
                mesh_n: 26,
                dt: 0.01,
                report_times: vec![1.0],
                ..base
            },
            Case::SkewAdvection => Self {
                mesh_n: 25,
                dt: 0.01,
                particles_per_cell: 20,
                ..base
            },
            Case::Poiseuille => Self {
                mesh_n: 4,
                k: 2,
                dt: 0.2,
                end_time: 125.0,
                nu: 1e-3,
                amplitude: 0.4,
                ..base
            },
            Case::TaylorGreen => Self {
                k: 2,
                dt: 0.1,
                particles_per_cell: 28,
                nu: 0.02,
                ..base
            },
        }
    }

    pub fn time_scheme(&self) -> TimeScheme {
        TimeScheme {
            dt: self.dt,
            theta: self.theta,
            theta_l: self.theta_l,
            beta: self.beta,
            multiplier_degree: self.l,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.end_time / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Side lengths of the periodic Taylor–Green domain.
    pub fn domain(&self) -> [f64; 2] {
        self.wavelength.map(|l| l * self.periods as f64)
    }

    /// Doubles the mesh resolution and halves the time step `level` times.
    pub fn refined(&self, level: usize) -> Self {
        let f = 1usize << level;
        Self {
            mesh_n: self.mesh_n * f,
            dt: self.dt / f as f64,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.time_scheme().validate()?;
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.mesh_n == 0 {
            return bad("mesh_n must be positive");
        }
        if self.k == 0 || self.k > pmhdg_core::spaces::MAX_DEGREE {
            return bad("k must lie in 1..=4");
        }
        if !(self.end_time > 0.0) {
            return bad("end_time must be positive");
        }
        if self.kappa < 0.0 {
            return bad("kappa must be non-negative");
        }
        if self.case.is_flow() && !(self.nu > 0.0) {
            return bad("nu must be positive for flow cases");
        }
        if self.periods == 0 {
            return bad("periods must be positive");
        }
        if self.particles_per_cell == 0 {
            return bad("particles_per_cell must be positive");
        }
        Ok(())
    }

    /// Applies `key = value` settings. Lines in a `[section]` apply only when
    /// the section names this case; `#` starts a comment.
    pub fn apply(&mut self, text: &str) -> Result<(), BenchError> {
        let mut active = true;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                active = section.trim().parse::<Case>()? == self.case;
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BenchError::Config(format!("line {}: expected key = value", no + 1))
            })?;
            if active {
                self.set(key.trim(), value.trim())
                    .map_err(|e| BenchError::Config(format!("line {}: {e}", no + 1)))?;
            }
        }
        Ok(())
    }

    /// Parses a configuration file. The `case` key (outside any section)
    /// selects the preset the remaining keys modify.
    pub fn parse(text: &str, case: Option<Case>) -> Result<Self, BenchError> {
        let named = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .take_while(|l| !l.starts_with('['))
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "case")
            .map(|(_, v)| v.trim().parse::<Case>())
            .transpose()?;
        let case = case
            .or(named)
            .ok_or_else(|| BenchError::Config("no case given".into()))?;
        let mut cfg = Self::preset(case);
        cfg.apply(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        fn list(v: &str) -> Result<Vec<f64>, String> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| num(s.trim()))
                .collect()
        }
        match key {
            "case" => {
                if value.parse::<Case>().map_err(|e| e.to_string())? != self.case {
                    return Err(format!("case '{value}' conflicts with '{}'", self.case));
                }
            }
            "mesh_n" => self.mesh_n = num(value)?,
            "k" => self.k = num(value)?,
            "l" => self.l = num(value)?,
            "theta" => self.theta = num(value)?,
            "theta_l" => self.theta_l = num(value)?,
            "beta" => self.beta = num(value)?,
            "alpha" => self.alpha = Some(num(value)?),
            "dt" => self.dt = num(value)?,
            "end_time" => self.end_time = num(value)?,
            "particles_per_cell" => self.particles_per_cell = num(value)?,
            "seeding" => {
                self.seeding = match value {
                    "random" => SeedingMode::Random,
                    "lattice" => SeedingMode::Lattice,
                    _ => return Err(format!("unknown seeding '{value}'")),
                }
            }
            "projection" => {
                self.projection = match value {
                    "pde" | "constrained" => ProjectionKind::Constrained,
                    "l2" => ProjectionKind::L2,
                    _ => return Err(format!("unknown projection '{value}'")),
                }
            }
            "kappa" => self.kappa = num(value)?,
            "nu" => self.nu = num(value)?,
            "reynolds" => {
                let re: f64 = num(value)?;
                self.nu = match self.case {
                    Case::Poiseuille => 2.0 * self.amplitude * 0.25 / re,
                    _ => self.amplitude * self.wavelength[0] / re,
                };
            }
            "skew_angle" => self.skew_angle = num(value)?,
            "amplitude" => self.amplitude = num(value)?,
            "wavelength" => {
                let v = list(value)?;
                self.wavelength = match v.as_slice() {
                    [a] => [*a, *a],
                    [a, b] => [*a, *b],
                    _ => return Err("wavelength takes one or two values".into()),
                };
            }
            "periods" => self.periods = num(value)?,
            "perturbation" => self.perturbation = num(value)?,
            "rng_seed" | "seed" => self.rng_seed = num(value)?,
            "report_times" => self.report_times = list(value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "write_fields" => self.write_fields = num(value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_round_trip() {
        for c in Case::ALL {
            assert_eq!(c.name().parse::<Case>().unwrap(), c);
        }
        assert_eq!("TaylorGreen".parse::<Case>().unwrap(), Case::TaylorGreen);
        assert!("vortex".parse::<Case>().is_err());
    }

    #[test]
    fn sections_override_only_their_case() {
        let text = "case = taylor-green\nk = 1\n[poiseuille]\nk = 3\n[taylor-green]\ndt = 0.05 # halved\nreport_times = 0.5, 1.0\n";
        let cfg = BenchmarkConfig::parse(text, None).unwrap();
        assert_eq!(cfg.case, Case::TaylorGreen);
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.report_times, vec![0.5, 1.0]);
    }

    #[test]
    fn bad_input_is_reported_with_line() {
        let err = BenchmarkConfig::parse("case = poiseuille\nfoo = 1\n", None).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(BenchmarkConfig::parse("k = 2\n", None).is_err());
        assert!(BenchmarkConfig::parse("theta = 0.2\n", Some(Case::GaussianHump)).is_err());
    }

    #[test]
    fn reynolds_sets_viscosity() {
        let cfg = BenchmarkConfig::parse("reynolds = 1000\n", Some(Case::TaylorGreen)).unwrap();
        assert!((cfg.nu - 2e-3).abs() < 1e-15);
        let cfg = BenchmarkConfig::parse("reynolds = 200\n", Some(Case::Poiseuille)).unwrap();
        assert!((cfg.nu - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn refinement_doubles_mesh_and_halves_step() {
        let cfg = BenchmarkConfig::preset(Case::TaylorGreen).refined(2);
        assert_eq!(cfg.mesh_n, 32);
        assert!((cfg.dt - 0.025).abs() < 1e-15);
        assert_eq!(cfg.n_steps(), 80);
    }
}
