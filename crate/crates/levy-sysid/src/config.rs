//! JSON experiment configuration for the CLI and the Monte Carlo harness.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ecf_iid::{EcfOptions, Weighting};
use crate::ecf_system::Stage3Options;
use crate::error::{Error, Result};
use crate::grid::{FrequencyGrid, DEFAULT_GRID_SIZE};
use crate::noise::NoiseModel;
use crate::pe::PeOptions;
use crate::system::SystemParams;

/// Noise model selector mirroring [`NoiseModel`], without the sampling
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum NoiseSpec {
    GaussianIid {
        sigma: f64,
    },
    GaussianMixture {
        weights: Vec<f64>,
        sigmas: Vec<f64>,
    },
    CompoundPoissonGaussian {
        lambda: f64,
        jump_mean: f64,
        jump_std: f64,
    },
    VarianceGamma {
        sigma: f64,
        nu: f64,
        theta: f64,
    },
    CgmyCfOnly {
        c: f64,
        g: f64,
        m: f64,
        y: f64,
    },
}

/// Noise model plus sampling interval: `{"kind": ..., "params": ..., "h": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(flatten)]
    pub spec: NoiseSpec,
    pub h: f64,
}

impl NoiseConfig {
    pub fn to_model(&self) -> Result<NoiseModel> {
        match &self.spec {
            NoiseSpec::GaussianIid { sigma } => NoiseModel::gaussian_iid(*sigma, self.h),
            NoiseSpec::GaussianMixture { weights, sigmas } => {
                NoiseModel::gaussian_mixture(weights.clone(), sigmas.clone(), self.h)
            }
            NoiseSpec::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
            } => NoiseModel::compound_poisson_gaussian(*lambda, *jump_mean, *jump_std, self.h),
            NoiseSpec::VarianceGamma { sigma, nu, theta } => {
                NoiseModel::variance_gamma(*sigma, *nu, *theta, self.h)
            }
            NoiseSpec::CgmyCfOnly { c, g, m, y } => {
                NoiseModel::cgmy_cf_only(*c, *g, *m, *y, self.h)
            }
        }
    }
}

/// Frequency-grid selection: automatic span or explicit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridSpec {
    Auto {
        #[serde(default = "default_grid_m")]
        m: usize,
    },
    Points {
        points: Vec<f64>,
    },
}

fn default_grid_m() -> usize {
    DEFAULT_GRID_SIZE
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { m: DEFAULT_GRID_SIZE }
    }
}

impl GridSpec {
    /// Builds the grid; auto mode spans the informative band of `model`.
    pub fn build(&self, model: &NoiseModel) -> Result<FrequencyGrid> {
        match self {
            GridSpec::Auto { m } => FrequencyGrid::auto(model, *m),
            GridSpec::Points { points } => FrequencyGrid::new(points.clone()),
        }
    }
}

/// Estimator options shared by the three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub max_iter: usize,
    pub tol_g: f64,
    pub burn_in: usize,
    pub rho_stab: f64,
    /// Stage-1 starting system; long-AR two-step initialization when absent.
    /// Stability is checked at estimation time, not at config validation.
    pub init: Option<SystemParams>,
    /// Stage-2 starting noise parameters; moment-matched when absent.
    pub init_eta: Option<Vec<f64>>,
    pub weighting: Weighting,
    /// Also run the unweighted-score baseline in Monte Carlo studies.
    pub fscore_baseline: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let pe = PeOptions::default();
        EstimatorConfig {
            max_iter: pe.max_iter,
            tol_g: pe.tol_g,
            burn_in: pe.burn_in,
            rho_stab: pe.rho_stab,
            init: None,
            init_eta: None,
            weighting: Weighting::default(),
            fscore_baseline: false,
        }
    }
}

impl EstimatorConfig {
    pub fn pe_options(&self) -> PeOptions {
        PeOptions {
            max_iter: self.max_iter,
            tol_g: self.tol_g,
            burn_in: self.burn_in,
            rho_stab: self.rho_stab,
            init: self.init.clone(),
        }
    }

    pub fn ecf_options(&self) -> EcfOptions {
        EcfOptions {
            max_iter: self.max_iter,
            weighting: self.weighting,
            ..Default::default()
        }
    }

    pub fn stage3_options(&self) -> Stage3Options {
        Stage3Options {
            max_iter: self.max_iter,
            burn_in: self.burn_in,
            rho_stab: self.rho_stab,
            ..Default::default()
        }
    }
}

/// Full experiment description; round-trips through JSON unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub noise: NoiseConfig,
    pub n_samples: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_replications() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Checks everything needed before any simulation starts.
    pub fn validate(&self) -> Result<()> {
        let model = self.noise.to_model()?;
        model.validate()?;
        self.system.require_stable(0.0)?;
        let p = self.system.dim();
        if self.n_samples <= self.estimator.burn_in + 10 * p.max(1) {
            return Err(Error::Config(format!(
                "n_samples = {} must exceed burn_in + 10 p = {}",
                self.n_samples,
                self.estimator.burn_in + 10 * p.max(1)
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if let GridSpec::Points { points } = &self.grid {
            FrequencyGrid::new(points.clone())?;
        }
        if !self.estimator.tol_g.is_finite() || self.estimator.tol_g <= 0.0 {
            return Err(Error::Config(format!(
                "tol_g must be a positive finite number, got {}",
                self.estimator.tol_g
            )));
        }
        if !self.estimator.rho_stab.is_finite()
            || self.estimator.rho_stab <= 0.0
            || self.estimator.rho_stab >= 0.5
        {
            return Err(Error::Config(format!(
                "rho_stab must lie in (0, 0.5), got {}",
                self.estimator.rho_stab
            )));
        }
        if let Some(init) = &self.estimator.init {
            if init.theta().iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("init coefficients must be finite".into()));
            }
        }
        if let Some(init_eta) = &self.estimator.init_eta {
            if init_eta.len() != model.eta_dim() {
                return Err(Error::Config(format!(
                    "init_eta has length {}, model needs {}",
                    init_eta.len(),
                    model.eta_dim()
                )));
            }
            if init_eta.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("init_eta values must be finite".into()));
            }
        }
        Ok(())
    }

    /// The grid every stage of this experiment evaluates scores on. Auto mode
    /// spans the informative band of the initializer (or, absent one, of the
    /// configured noise model), and is fixed across replications so that
    /// empirical and theoretical covariances refer to the same moments.
    pub fn build_grid(&self) -> Result<FrequencyGrid> {
        let model = self.noise.to_model()?;
        let grid_model = match &self.estimator.init_eta {
            Some(eta) => model.with_eta(eta)?,
            None => model,
        };
        self.grid.build(&grid_model)
    }
}
