//! Run configuration: TOML with sections, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::cl::{ClGrid, Closure};
use crate::grid::{make_grid, RingGrid, RingParams};
use crate::risb::effective_beta;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Risb,
    Cl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Markovian,
    Heom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub k: usize,
    pub n_trunc: usize,
    /// Closure of the CL hierarchy.
    pub closure: Closure,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n_trunc: 2,
            closure: Closure::Terminator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_max: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_theta: 64,
            n_max: 31,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// RKF45 error tolerance.
    pub tol: f64,
    /// Relaxation: maximum time, check interval and sup-norm change threshold.
    pub horizon: f64,
    pub check_interval: f64,
    pub eq_eps: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            horizon: 2000.0,
            check_interval: 1.0,
            eq_eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub t_max: f64,
    pub dt: f64,
    /// Window damping, `2 pi / t_max` when absent.
    pub damping: Option<f64>,
    /// Relative height for peak detection.
    pub peak_threshold: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            t_max: 200.0,
            dt: 0.05,
            damping: None,
            peak_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            gamma: 1.0,
            beta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub regime: Regime,
    pub system: RingParams,
    pub bath: BathConfig,
    pub hierarchy: HierarchyConfig,
    pub grid: GridConfig,
    pub cl_grid: ClGrid,
    /// Flux values for sweeps; `system.flux_bar` is used by single runs.
    pub flux: Vec<f64>,
    pub integrator: IntegratorConfig,
    pub spectrum: SpectrumConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::default(),
            regime: Regime::default(),
            system: RingParams::default(),
            bath: BathConfig::default(),
            hierarchy: HierarchyConfig::default(),
            grid: GridConfig::default(),
            cl_grid: ClGrid::default(),
            flux: vec![
                0.0, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 1.0,
            ],
            integrator: IntegratorConfig::default(),
            spectrum: SpectrumConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn bath_spec(&self) -> Result<BathSpec> {
        BathSpec::new(self.bath.eta, self.bath.gamma, self.bath.beta)
    }

    pub fn ring_grid(&self) -> Result<RingGrid> {
        make_grid(self.grid.n_theta, self.grid.n_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let bath = self.bath_spec()?;
        match self.model {
            Model::Risb => {
                self.ring_grid()?;
            }
            Model::Cl => self.cl_grid.validate()?,
        }
        if self.model == Model::Risb && self.regime == Regime::Markovian {
            effective_beta(&self.system, bath.beta)?;
        }
        if self.regime == Regime::Heom && self.hierarchy.n_trunc == 0 && self.model == Model::Risb {
            return Err(Error::Config(
                "the ring hierarchy needs n_trunc >= 1".into(),
            ));
        }
        let i = &self.integrator;
        if !(i.tol > 0.0 && i.horizon > 0.0 && i.check_interval > 0.0 && i.eq_eps > 0.0) {
            return Err(Error::Config("integrator settings must be positive".into()));
        }
        let s = &self.spectrum;
        if !(s.t_max > 0.0 && s.dt > 0.0 && s.dt < s.t_max) {
            return Err(Error::Config(format!(
                "need 0 < dt < t_max, got dt={} t_max={}",
                s.dt, s.t_max
            )));
        }
        if s.damping.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::Config("damping must be non-negative".into()));
        }
        if self.flux.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("flux values must be finite".into()));
        }
        Ok(())
    }
}
