//! Seeded Monte Carlo replication studies comparing empirical estimator
//! covariances against the closed-form asymptotics.
//!
//! Replication `i` derives its seed from the master seed, so reports are
//! identical for any worker-thread count. The theoretical block is evaluated
//! at the configured true parameters; the reference `R_P*` comes from one
//! long simulation at the truth.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::ecf_iid::avar_eta_optimal;
use crate::ecf_system::{fisher_location, kappa_on_grid, stage3_estimate_fscore};
use crate::error::{Error, Result};
use crate::numeric::spd_inverse;
use crate::pipeline::run_stages;
use crate::report::{csv_number, write_file, RealMatrixJson};
use crate::rng::derive_seed;
use crate::system::{innovations, simulate, SensitivityOrder};

/// One successful replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub index: usize,
    pub seed: u64,
    pub theta_pe: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta_s3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_fscore: Option<Vec<f64>>,
    pub converged_pe: bool,
    pub converged_ecf: bool,
    pub converged_s3: bool,
}

/// One failed replication with the stage that aborted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

/// Closed-form covariance targets evaluated at the configured truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBlock {
    /// Innovation-sensitivity information matrix from a long reference run.
    pub r_p_star: RealMatrixJson,
    /// True increment variance.
    pub sigma2: f64,
    /// `sigma2 * inv(R_P*)`.
    pub sigma_p: RealMatrixJson,
    /// `(G* C^-1 G)^-1` for the noise parameters on the experiment grid.
    pub avar_eta_optimal: RealMatrixJson,
    /// `psi* C^-1 psi` on the experiment grid.
    pub kappa: f64,
    /// `(1/kappa) inv(R_P*)`.
    pub avar_stage3: RealMatrixJson,
    /// Fisher information of location, when the density is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// `(1/mu) inv(R_P*)`, when the density is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ml: Option<RealMatrixJson>,
}

/// Empirical covariances scaled by the sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBlock {
    pub mean_theta_pe: Vec<f64>,
    pub mean_eta: Vec<f64>,
    pub mean_theta_s3: Vec<f64>,
    pub n_cov_theta_pe: RealMatrixJson,
    pub n_cov_eta: RealMatrixJson,
    pub n_cov_theta_s3: RealMatrixJson,
}

/// Diagonal empirical-over-theoretical ratios and the stage-3/PE comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBlock {
    pub pe_vs_sigma_p: Vec<f64>,
    pub eta_vs_avar_optimal: Vec<f64>,
    pub stage3_vs_avar_stage3: Vec<f64>,
    /// Empirical stage-3 variance over empirical PE variance, per component.
    pub stage3_vs_pe_empirical: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub total_seconds: f64,
    pub mean_replication_seconds: f64,
}

/// Full Monte Carlo report; identical across thread counts except for
/// `wall_clock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: ExperimentConfig,
    pub grid: Vec<f64>,
    pub n_total: usize,
    pub n_success: usize,
    pub replications: Vec<RepRecord>,
    pub failures: Vec<FailureRecord>,
    pub theoretical: TheoreticalBlock,
    pub empirical: EmpiricalBlock,
    pub ratios: RatioBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<WallClock>,
}

fn scaled_covariance(rows: &[&Vec<f64>], scale: f64) -> DMatrix<f64> {
    if rows.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in rows {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    if rows.len() > 1 {
        cov /= n - 1.0;
    }
    cov * scale
}

fn mean_vector(rows: &[&Vec<f64>]) -> Vec<f64> {
    if rows.is_empty() {
        return vec![];
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    mean
}

fn diag_ratio(emp: &DMatrix<f64>, theory: &RealMatrixJson) -> Vec<f64> {
    let t = theory.diagonal();
    (0..emp.nrows().min(t.len()))
        .map(|i| emp[(i, i)] / t[i])
        .collect()
}

/// Reference theoretical block from one long simulation at the truth.
fn theoretical_block(config: &ExperimentConfig, grid_points: &[f64]) -> Result<TheoreticalBlock> {
    let model = config.noise.to_model()?;
    let grid = crate::grid::FrequencyGrid::new(grid_points.to_vec())?;
    let n_ref = config.n_samples.max(200_000);
    let seed = derive_seed(config.seed, u64::MAX);
    let z = model.sample_increments(n_ref, seed)?;
    let dy = simulate(&config.system, &z)?;
    let bundle = innovations(&config.system, &dy, SensitivityOrder::Gradient)?;
    let grad = bundle.eps_grad.as_ref().unwrap();
    let p = config.system.dim();
    let burn = config.estimator.burn_in.min(n_ref / 10);
    let n_eff = (n_ref - burn) as f64;
    let mut r_p = DMatrix::<f64>::zeros(p, p);
    for t in burn..n_ref {
        for i in 0..p {
            for j in i..p {
                r_p[(i, j)] += grad[(t, i)] * grad[(t, j)];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            r_p[(i, j)] = r_p[(j, i)];
        }
    }
    r_p /= n_eff;

    let sigma2 = model.moments().variance;
    let r_p_inv = spd_inverse(&r_p, "reference R_P*")?;
    let kappa = kappa_on_grid(&model, &grid)?;
    let avar_eta = avar_eta_optimal(&model, &grid)?;
    let mu = fisher_location(&model).ok();
    let sigma_ml = mu.map(|mu| RealMatrixJson::from_matrix(&(&r_p_inv / mu)));

    Ok(TheoreticalBlock {
        r_p_star: RealMatrixJson::from_matrix(&r_p),
        sigma2,
        sigma_p: RealMatrixJson::from_matrix(&(&r_p_inv * sigma2)),
        avar_eta_optimal: RealMatrixJson::from_matrix(&avar_eta),
        kappa,
        avar_stage3: RealMatrixJson::from_matrix(&(&r_p_inv / kappa)),
        mu,
        sigma_ml,
    })
}

fn run_one(config: &ExperimentConfig, index: usize) -> std::result::Result<RepRecord, String> {
    let seed = derive_seed(config.seed, index as u64);
    let inner = || -> Result<RepRecord> {
        let model = config.noise.to_model()?;
        let grid = config.build_grid()?;
        let z = model
            .sample_increments(config.n_samples, seed)
            .map_err(|e| e.in_stage("simulate"))?;
        let dy = simulate(&config.system, &z).map_err(|e| e.in_stage("simulate"))?;
        let output = run_stages(config, &model, &grid, &dy)?;
        let theta_fscore = if config.estimator.fscore_baseline {
            let noise_hat = model.with_eta(&output.ecf.eta_hat)?;
            let (sys, _) = stage3_estimate_fscore(
                &dy,
                &output.pe.theta_hat,
                &noise_hat,
                &grid,
                &config.estimator.stage3_options(),
            )
            .map_err(|e| e.in_stage("fscore"))?;
            Some(sys.theta())
        } else {
            None
        };
        Ok(RepRecord {
            index,
            seed,
            theta_pe: output.pe.theta_hat.theta(),
            eta: output.ecf.eta_hat.clone(),
            theta_s3: output.stage3.theta_hat2.theta(),
            theta_fscore,
            converged_pe: output.pe.converged,
            converged_ecf: output.ecf.converged,
            converged_s3: output.stage3.converged,
        })
    };
    inner().map_err(|e| e.to_string())
}

/// Runs the replication study on `threads` workers (the global pool when
/// `None`).
pub fn run_monte_carlo(config: &ExperimentConfig, threads: Option<usize>) -> Result<McReport> {
    config.validate()?;
    if config.replications < 50 {
        eprintln!(
            "warning: {} replications are too few for covariance comparisons; use at least 50",
            config.replications
        );
    }
    let start = Instant::now();
    let grid = config.build_grid()?;
    let grid_points = grid.points().to_vec();
    let theoretical = theoretical_block(config, &grid_points)?;

    let indices: Vec<usize> = (0..config.replications).collect();
    let job = || -> Vec<std::result::Result<RepRecord, String>> {
        indices.par_iter().map(|&i| run_one(config, i)).collect()
    };
    let outcomes = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => replications.push(rec),
            Err(message) => failures.push(FailureRecord {
                index: i,
                seed: derive_seed(config.seed, i as u64),
                message,
            }),
        }
    }
    let n_total = config.replications;
    let n_success = replications.len();
    if n_success * 10 < n_total * 9 {
        return Err(Error::InsufficientReplications {
            succeeded: n_success,
            total: n_total,
        });
    }

    let n = config.n_samples as f64;
    let theta_rows: Vec<&Vec<f64>> = replications.iter().map(|r| &r.theta_pe).collect();
    let eta_rows: Vec<&Vec<f64>> = replications.iter().map(|r| &r.eta).collect();
    let s3_rows: Vec<&Vec<f64>> = replications.iter().map(|r| &r.theta_s3).collect();
    let cov_pe = scaled_covariance(&theta_rows, n);
    let cov_eta = scaled_covariance(&eta_rows, n);
    let cov_s3 = scaled_covariance(&s3_rows, n);

    let stage3_vs_pe: Vec<f64> = (0..cov_s3.nrows())
        .map(|i| cov_s3[(i, i)] / cov_pe[(i, i)])
        .collect();
    let ratios = RatioBlock {
        pe_vs_sigma_p: diag_ratio(&cov_pe, &theoretical.sigma_p),
        eta_vs_avar_optimal: diag_ratio(&cov_eta, &theoretical.avar_eta_optimal),
        stage3_vs_avar_stage3: diag_ratio(&cov_s3, &theoretical.avar_stage3),
        stage3_vs_pe_empirical: stage3_vs_pe,
    };
    let empirical = EmpiricalBlock {
        mean_theta_pe: mean_vector(&theta_rows),
        mean_eta: mean_vector(&eta_rows),
        mean_theta_s3: mean_vector(&s3_rows),
        n_cov_theta_pe: RealMatrixJson::from_matrix(&cov_pe),
        n_cov_eta: RealMatrixJson::from_matrix(&cov_eta),
        n_cov_theta_s3: RealMatrixJson::from_matrix(&cov_s3),
    };

    let elapsed = start.elapsed().as_secs_f64();
    Ok(McReport {
        config: config.clone(),
        grid: grid_points,
        n_total,
        n_success,
        replications,
        failures,
        theoretical,
        empirical,
        ratios,
        wall_clock: Some(WallClock {
            total_seconds: elapsed,
            mean_replication_seconds: elapsed / n_total.max(1) as f64,
        }),
    })
}

/// CSV of raw estimates: one row per successful replication.
pub fn mc_report_csv(report: &McReport) -> String {
    let model = report
        .config
        .noise
        .to_model()
        .expect("config was validated");
    let theta_names = report.config.system.theta_names();
    let eta_names = model.eta_names();
    let mut header: Vec<String> = vec![
        "replication".into(),
        "seed".into(),
        "converged_pe".into(),
        "converged_ecf".into(),
        "converged_s3".into(),
    ];
    header.extend(theta_names.iter().map(|n| format!("pe_{n}")));
    header.extend(eta_names.iter().map(|n| format!("eta_{n}")));
    header.extend(theta_names.iter().map(|n| format!("s3_{n}")));
    if report.config.estimator.fscore_baseline {
        header.extend(theta_names.iter().map(|n| format!("fscore_{n}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for rec in &report.replications {
        let mut fields: Vec<String> = vec![
            rec.index.to_string(),
            rec.seed.to_string(),
            rec.converged_pe.to_string(),
            rec.converged_ecf.to_string(),
            rec.converged_s3.to_string(),
        ];
        fields.extend(rec.theta_pe.iter().map(|&x| csv_number(x)));
        fields.extend(rec.eta.iter().map(|&x| csv_number(x)));
        fields.extend(rec.theta_s3.iter().map(|&x| csv_number(x)));
        if report.config.estimator.fscore_baseline {
            if let Some(fs) = &rec.theta_fscore {
                fields.extend(fs.iter().map(|&x| csv_number(x)));
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes `mc_report.json` and `mc_report.csv` under `dir`.
pub fn emit_mc_report(report: &McReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let json = serde_json::to_string_pretty(report)?;
    let json_path = write_file(dir, "mc_report.json", &json)?;
    let csv_path = write_file(dir, "mc_report.csv", &mc_report_csv(report))?;
    Ok((json_path, csv_path))
}
