//! The three-stage identification pipeline on one simulated record:
//! simulate, prediction-error fit, noise fit on the residuals, and the
//! weighted-score re-fit of the dynamics.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::ecf_iid::{ecf_on_residuals, EcfIidResult};
use crate::ecf_system::{stage3_estimate, Stage3Result};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::noise::NoiseModel;
use crate::pe::{pe_estimate, PeResult};
use crate::report::{EcfSummary, PeSummary, Stage3Summary};
use crate::rng::derive_seed;
use crate::system::{innovations, simulate, SensitivityOrder};

/// Raw results of the three stages.
#[derive(Debug)]
pub struct PipelineOutput {
    pub pe: PeResult,
    pub ecf: EcfIidResult,
    pub stage3: Stage3Result,
    pub grid: FrequencyGrid,
}

/// Serializable single-run report; deterministic for a fixed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: ExperimentConfig,
    pub grid: Vec<f64>,
    pub pe: PeSummary,
    pub ecf: EcfSummary,
    pub stage3: Stage3Summary,
}

/// Runs the pipeline on data simulated with the replication seed
/// `derive_seed(config.seed, replication)`.
pub fn run_replication(config: &ExperimentConfig, replication: u64) -> Result<PipelineOutput> {
    let model = config.noise.to_model()?;
    let grid = config.build_grid()?;
    let seed = derive_seed(config.seed, replication);
    let noise = model
        .sample_increments(config.n_samples, seed)
        .map_err(|e| e.in_stage("simulate"))?;
    let dy = simulate(&config.system, &noise).map_err(|e| e.in_stage("simulate"))?;
    run_stages(config, &model, &grid, &dy)
}

/// Runs the three estimation stages on an existing record.
pub fn run_stages(
    config: &ExperimentConfig,
    model: &NoiseModel,
    grid: &FrequencyGrid,
    dy: &[f64],
) -> Result<PipelineOutput> {
    let est = &config.estimator;
    let pe = pe_estimate(dy, config.system.orders(), &est.pe_options())
        .map_err(|e| e.in_stage("pe"))?;

    let init_eta = match &est.init_eta {
        Some(eta) => eta.clone(),
        None => {
            let eps = innovations(&pe.theta_hat, dy, SensitivityOrder::Value)
                .map_err(|e| e.in_stage("ecf"))?
                .eps;
            model
                .moment_matched_init(&eps[est.burn_in.min(eps.len() - 1)..])
                .ok_or_else(|| {
                    Error::Config(format!(
                        "model kind `{}` needs an explicit init_eta",
                        model.kind_name()
                    ))
                })?
        }
    };

    let ecf = ecf_on_residuals(
        dy,
        &pe.theta_hat,
        grid,
        model,
        &init_eta,
        est.burn_in,
        &est.ecf_options(),
    )
    .map_err(|e| e.in_stage("ecf"))?;

    let noise_hat = model
        .with_eta(&ecf.eta_hat)
        .map_err(|e| e.in_stage("stage3"))?;
    let stage3 = stage3_estimate(
        dy,
        &pe.theta_hat,
        &noise_hat,
        grid,
        &pe.r_p_star,
        pe.sigma2_hat,
        &est.stage3_options(),
    )
    .map_err(|e| e.in_stage("stage3"))?;

    Ok(PipelineOutput {
        pe,
        ecf,
        stage3,
        grid: grid.clone(),
    })
}

/// Validates the config, runs one replication and assembles the report.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineReport> {
    config.validate()?;
    let output = run_replication(config, 0)?;
    Ok(PipelineReport {
        config: config.clone(),
        grid: output.grid.points().to_vec(),
        pe: PeSummary::from(&output.pe),
        ecf: EcfSummary::from(&output.ecf),
        stage3: Stage3Summary::from(&output.stage3),
    })
}
