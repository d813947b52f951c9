//! Serializable report forms and file emission.
//!
//! Matrices are serialized row-major with explicit dimensions; complex
//! matrices carry separate real and imaginary planes. CSV numbers use 17
//! significant digits.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ecf_iid::EcfIidResult;
use crate::ecf_system::Stage3Result;
use crate::error::Result;
use crate::pe::PeResult;
use crate::system::SystemParams;

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        RealMatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .collect()
    }
}

/// Row-major complex matrix with split planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrixJson {
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let mut re = Vec::with_capacity(m.nrows() * m.ncols());
        let mut im = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        ComplexMatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }
}

/// Complex vector split into planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVecJson {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVecJson {
    pub fn from_slice(v: &[Complex64]) -> Self {
        ComplexVecJson {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }
}

/// Stage-1 summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeSummary {
    pub theta_hat: SystemParams,
    pub cost: f64,
    pub sigma2_hat: f64,
    pub r_p_star: RealMatrixJson,
    pub sigma_p: RealMatrixJson,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&PeResult> for PeSummary {
    fn from(r: &PeResult) -> Self {
        PeSummary {
            theta_hat: r.theta_hat.clone(),
            cost: r.cost,
            sigma2_hat: r.sigma2_hat,
            r_p_star: RealMatrixJson::from_matrix(&r.r_p_star),
            sigma_p: RealMatrixJson::from_matrix(&r.sigma_p),
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// Stage-2 summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfSummary {
    pub eta_hat: Vec<f64>,
    pub c_matrix: ComplexMatrixJson,
    pub g_matrix: ComplexMatrixJson,
    pub avar_optimal: RealMatrixJson,
    pub avar_sandwich: RealMatrixJson,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&EcfIidResult> for EcfSummary {
    fn from(r: &EcfIidResult) -> Self {
        EcfSummary {
            eta_hat: r.eta_hat.clone(),
            c_matrix: ComplexMatrixJson::from_matrix(&r.c_matrix),
            g_matrix: ComplexMatrixJson::from_matrix(&r.g_matrix),
            avar_optimal: RealMatrixJson::from_matrix(&r.avar_optimal),
            avar_sandwich: RealMatrixJson::from_matrix(&r.avar_sandwich),
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// Stage-3 summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Summary {
    pub theta_hat2: SystemParams,
    pub psi: ComplexVecJson,
    pub kappa: f64,
    pub avar_stage3: RealMatrixJson,
    pub efficiency_ratio_vs_pe: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&Stage3Result> for Stage3Summary {
    fn from(r: &Stage3Result) -> Self {
        Stage3Summary {
            theta_hat2: r.theta_hat2.clone(),
            psi: ComplexVecJson::from_slice(&r.psi),
            kappa: r.kappa,
            avar_stage3: RealMatrixJson::from_matrix(&r.avar_stage3),
            efficiency_ratio_vs_pe: r.efficiency_ratio_vs_pe,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// Formats one CSV number with 17 significant digits.
pub fn csv_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `content` under `dir/name`, creating the directory first.
pub fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}
