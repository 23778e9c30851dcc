//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{EitError, Result};
use crate::hyperprior::HybridSchedule;
use crate::ias::{Route, RoutePolicy};
use crate::postproc::SsimVariant;
use crate::sim::INJECTION_COUNTS;

/// Everything that determines a run. Defaults follow the two-inclusion protocol at full data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Reconstruction mesh file; a disk mesh is generated when absent.
    pub mesh_file: Option<PathBuf>,
    pub mesh_h: f64,
    pub generation_h: f64,
    pub level: usize,
    pub phantom: String,
    pub eta1: f64,
    pub vartheta_star: f64,
    pub r2: f64,
    pub k_max1: usize,
    pub k_max2: usize,
    pub tol: f64,
    pub inner_linearizations: usize,
    pub omega: f64,
    pub sigma0: f64,
    pub z0: f64,
    /// Current injected by each electrode pair.
    pub amplitude: f64,
    pub grid: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub route: RoutePolicy,
    pub ssim: SsimVariant,
    /// Run one phase with this hyperprior exponent instead of the hybrid scheme.
    pub single_prior: Option<f64>,
    /// Replace the homogeneous part of the data by the model's own via the reference measurement.
    pub reference_correction: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = HybridSchedule::default();
        RunConfig {
            mesh_file: None,
            mesh_h: 0.08,
            generation_h: 0.04,
            level: 32,
            phantom: "two-inclusions".into(),
            eta1: s.eta1,
            vartheta_star: s.vartheta_star,
            r2: s.r2,
            k_max1: s.k_max1,
            k_max2: s.k_max2,
            tol: s.tol,
            inner_linearizations: s.inner_linearizations,
            omega: 0.004,
            sigma0: 0.79,
            z0: 1e-6,
            amplitude: DEFAULT_AMPLITUDE,
            grid: 256,
            seed: 0,
            output: PathBuf::from("out"),
            route: RoutePolicy::Auto,
            ssim: SsimVariant::Global,
            single_prior: None,
            reference_correction: true,
        }
    }
}

pub const DEFAULT_AMPLITUDE: f64 = 1.0;

pub const KEYS: [&str; 23] = [
    "mesh", "mesh_h", "generation_h", "level", "phantom", "eta1", "vartheta_star", "r2", "k_max1",
    "k_max2", "tol", "inner_linearizations", "omega", "sigma0", "z0", "amplitude", "grid", "seed",
    "output", "route", "ssim", "single_prior", "reference_correction",
];

fn number<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("'{value}' is not a valid value for {key}"))
}

impl RunConfig {
    pub fn schedule(&self) -> HybridSchedule {
        HybridSchedule {
            eta1: self.eta1,
            r2: self.r2,
            vartheta_star: self.vartheta_star,
            k_max1: self.k_max1,
            k_max2: self.k_max2,
            tol: self.tol,
            inner_linearizations: self.inner_linearizations,
        }
    }

    /// Assigns one key. Errors are plain messages; callers attach the location.
    fn assign(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "mesh" => {
                self.mesh_file = match value {
                    "generate" => None,
                    path => Some(PathBuf::from(path)),
                }
            }
            "mesh_h" => self.mesh_h = number(key, value)?,
            "generation_h" => self.generation_h = number(key, value)?,
            "level" => self.level = number(key, value)?,
            "phantom" => self.phantom = value.to_string(),
            "eta1" => self.eta1 = number(key, value)?,
            "vartheta_star" => self.vartheta_star = number(key, value)?,
            "r2" => self.r2 = number(key, value)?,
            "k_max1" => self.k_max1 = number(key, value)?,
            "k_max2" => self.k_max2 = number(key, value)?,
            "tol" => self.tol = number(key, value)?,
            "inner_linearizations" => self.inner_linearizations = number(key, value)?,
            "omega" => self.omega = number(key, value)?,
            "sigma0" => self.sigma0 = number(key, value)?,
            "z0" => self.z0 = number(key, value)?,
            "amplitude" => self.amplitude = number(key, value)?,
            "grid" => self.grid = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "route" => {
                self.route = match value {
                    "auto" => RoutePolicy::Auto,
                    "primal" => RoutePolicy::Force(Route::Primal),
                    "adjoint" => RoutePolicy::Force(Route::Adjoint),
                    _ => return Err(format!("route must be auto, primal or adjoint, not '{value}'")),
                }
            }
            "ssim" => self.ssim = value.parse().map_err(|e: EitError| e.to_string())?,
            "single_prior" => {
                self.single_prior = match value {
                    "none" => None,
                    v => Some(number(key, v.strip_prefix("r=").unwrap_or(v))?),
                }
            }
            "reference_correction" => {
                self.reference_correction = match value {
                    "true" | "on" | "yes" => true,
                    "false" | "off" | "no" => false,
                    _ => return Err(format!("reference_correction must be true or false, not '{value}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Applies a command-line override `key=value`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.assign(key, value)
            .map_err(|m| EitError::Config(format!("--{}: {m}", key.replace('_', "-"))))
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| EitError::parse(origin, i + 1, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(EitError::parse(origin, i + 1, format!("duplicate key '{key}'")));
            }
            cfg.assign(key, value).map_err(|m| EitError::parse(origin, i + 1, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mesh = self
            .mesh_file
            .as_ref()
            .map_or("generate".to_string(), |p| p.display().to_string());
        let route = match self.route {
            RoutePolicy::Auto => "auto",
            RoutePolicy::Force(Route::Primal) => "primal",
            RoutePolicy::Force(Route::Adjoint) => "adjoint",
        };
        let ssim = match self.ssim {
            SsimVariant::Global => "global",
            SsimVariant::Windowed => "windowed",
        };
        let single = self.single_prior.map_or("none".to_string(), |r| format!("{r:?}"));
        let entries: [(&str, String); 23] = [
            ("mesh", mesh),
            ("mesh_h", format!("{:?}", self.mesh_h)),
            ("generation_h", format!("{:?}", self.generation_h)),
            ("level", self.level.to_string()),
            ("phantom", self.phantom.clone()),
            ("eta1", format!("{:?}", self.eta1)),
            ("vartheta_star", format!("{:?}", self.vartheta_star)),
            ("r2", format!("{:?}", self.r2)),
            ("k_max1", self.k_max1.to_string()),
            ("k_max2", self.k_max2.to_string()),
            ("tol", format!("{:?}", self.tol)),
            ("inner_linearizations", self.inner_linearizations.to_string()),
            ("omega", format!("{:?}", self.omega)),
            ("sigma0", format!("{:?}", self.sigma0)),
            ("z0", format!("{:?}", self.z0)),
            ("amplitude", format!("{:?}", self.amplitude)),
            ("grid", self.grid.to_string()),
            ("seed", self.seed.to_string()),
            ("output", self.output.display().to_string()),
            ("route", route.into()),
            ("ssim", ssim.into()),
            ("single_prior", single),
            ("reference_correction", self.reference_correction.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mesh_h", self.mesh_h),
            ("generation_h", self.generation_h),
            ("sigma0", self.sigma0),
            ("z0", self.z0),
            ("amplitude", self.amplitude),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EitError::Config(format!("{k} must be positive and finite, got {v}")));
            }
        }
        if self.generation_h >= self.mesh_h {
            return Err(EitError::Config(format!(
                "generation_h ({}) must be finer than mesh_h ({})",
                self.generation_h, self.mesh_h
            )));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(EitError::Config(format!("omega must be non-negative, got {}", self.omega)));
        }
        if !INJECTION_COUNTS.iter().any(|(l, _)| *l == self.level) {
            return Err(EitError::Config(format!(
                "level must be one of 32, 30, 28, 26, 24, 22, 20, got {}",
                self.level
            )));
        }
        if self.grid < 8 {
            return Err(EitError::Config(format!("grid must be at least 8, got {}", self.grid)));
        }
        if let Some(r) = self.single_prior {
            if r == 0.0 || !r.is_finite() {
                return Err(EitError::Config(format!("single_prior exponent must be nonzero, got {r}")));
            }
        }
        self.schedule().validate()
    }
}
