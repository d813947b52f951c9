//! Stage 2: characteristic-function matching for i.i.d. samples.
//!
//! Matches the model characteristic function to the empirical one on a fixed
//! frequency grid by iterated weighted least squares. Scores are complex and
//! handled with Hermitian quadratic forms; the gradient of the real cost
//! `hbar* K^-1 hbar` is `2 Re(hbar_eta* K^-1 hbar)`.
//!
//! Internally every grid is closed under conjugation (see [`crate::grid`]),
//! so the optimally weighted estimator coincides with the real
//! moment-matching estimator on `(Re hbar, Im hbar)` and the covariance
//! formula `(G* C^-1 G)^-1` is its exact asymptotic covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClosedGrid, FrequencyGrid};
use crate::noise::NoiseModel;
use crate::numeric::{cholesky_hermitian, ridge_regularize, spd_inverse, symmetrize, C_RIDGE_TAU};
use crate::system::{innovations, SensitivityOrder, SystemParams};

/// Weighting matrix choice for the quadratic score cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Identity,
    #[default]
    OptimalC,
}

/// Options for the stage-2 estimator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EcfOptions {
    pub max_iter: usize,
    /// Step-size convergence threshold relative to `1 + |eta|_inf`.
    pub tol_step: f64,
    pub weighting: Weighting,
}

impl Default for EcfOptions {
    fn default() -> Self {
        EcfOptions {
            max_iter: 200,
            tol_step: 1e-10,
            weighting: Weighting::OptimalC,
        }
    }
}

/// Stage-2 fit with the matrices entering the asymptotic covariances.
#[derive(Debug, Clone)]
pub struct EcfIidResult {
    pub eta_hat: Vec<f64>,
    /// Score covariance on the user grid (exact formula, no ridge).
    pub c_matrix: DMatrix<Complex64>,
    /// Score-mean Jacobian `g_eta = -phi_eta` on the user grid.
    pub g_matrix: DMatrix<Complex64>,
    /// `(G* C^-1 G)^-1` on the conjugate-closed grid.
    pub avar_optimal: DMatrix<f64>,
    /// Sandwich covariance for the weighting actually used.
    pub avar_sandwich: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Empirical-minus-model characteristic function
/// `hbar(u_j) = (1/N) sum_k e^{i u_j r_k} - phi(u_j)` on the user grid.
pub fn score_mean(samples: &[f64], grid: &FrequencyGrid, model: &NoiseModel) -> Vec<Complex64> {
    let n = samples.len().max(1) as f64;
    grid.points()
        .iter()
        .map(|&u| {
            let mut acc = Complex64::default();
            for &r in samples {
                let (s, c) = (u * r).sin_cos();
                acc += Complex64::new(c, s);
            }
            acc / n - model.cf(u)
        })
        .collect()
}

/// Score covariance `C_{k,l} = phi(u_k - u_l) - phi(u_k) phi(-u_l)` on an
/// arbitrary signed point set.
pub fn c_matrix_points(model: &NoiseModel, points: &[f64]) -> DMatrix<Complex64> {
    let m = points.len();
    let phi: Vec<Complex64> = points.iter().map(|&u| model.cf(u)).collect();
    let phi_neg: Vec<Complex64> = points.iter().map(|&u| model.cf(-u)).collect();
    let mut c = DMatrix::<Complex64>::zeros(m, m);
    for k in 0..m {
        for l in 0..m {
            c[(k, l)] = model.cf(points[k] - points[l]) - phi[k] * phi_neg[l];
        }
    }
    c
}

/// Score covariance on the user grid.
pub fn c_matrix(model: &NoiseModel, grid: &FrequencyGrid) -> DMatrix<Complex64> {
    c_matrix_points(model, grid.points())
}

/// Empirical characteristic function on a closed grid, positives first and
/// exact conjugates in the mirrored half.
fn empirical_cf_closed(samples: &[f64], closed: &ClosedGrid) -> Vec<Complex64> {
    let half = closed.half_len();
    let mut acc = vec![Complex64::default(); half];
    let mut ladder = vec![Complex64::default(); half];
    for &r in samples {
        closed.cis_ladder(r, &mut ladder);
        for (a, v) in acc.iter_mut().zip(&ladder) {
            *a += v;
        }
    }
    let n = samples.len().max(1) as f64;
    let mut out = Vec::with_capacity(2 * half);
    out.extend(acc.iter().map(|a| a / n));
    out.extend(acc.iter().map(|a| (a / n).conj()));
    out
}

/// Model cf on a closed grid with exact conjugate mirroring.
fn cf_closed(model: &NoiseModel, closed: &ClosedGrid) -> Vec<Complex64> {
    let pos: Vec<Complex64> = closed.abs_points().iter().map(|&u| model.cf(u)).collect();
    let mut out = pos.clone();
    out.extend(pos.iter().map(|v| v.conj()));
    out
}

/// `-phi_eta` rows on a closed grid (the Jacobian of the score mean in eta).
fn score_jacobian_closed(model: &NoiseModel, closed: &ClosedGrid) -> Result<DMatrix<Complex64>> {
    let half = closed.half_len();
    let r = model.eta_dim();
    let mut jac = DMatrix::<Complex64>::zeros(2 * half, r);
    for (k, &u) in closed.abs_points().iter().enumerate() {
        let grad = model.cf_grad_eta(u)?;
        for (j, g) in grad.iter().enumerate() {
            jac[(k, j)] = -g;
            jac[(k + half, j)] = -g.conj();
        }
    }
    Ok(jac)
}

struct ClosedForms {
    hbar: DVector<Complex64>,
    jac: DMatrix<Complex64>,
}

fn closed_forms(
    emp: &[Complex64],
    model: &NoiseModel,
    closed: &ClosedGrid,
) -> Result<ClosedForms> {
    let phi = cf_closed(model, closed);
    let hbar = DVector::from_iterator(
        emp.len(),
        emp.iter().zip(&phi).map(|(e, p)| e - p),
    );
    Ok(ClosedForms {
        hbar,
        jac: score_jacobian_closed(model, closed)?,
    })
}

fn weight_cholesky(
    model: &NoiseModel,
    closed: &ClosedGrid,
    weighting: Weighting,
) -> Result<Option<Cholesky<Complex64, Dyn>>> {
    match weighting {
        Weighting::Identity => Ok(None),
        Weighting::OptimalC => {
            let c = c_matrix_points(model, &closed.signed_points());
            let c = ridge_regularize(&c, C_RIDGE_TAU);
            Ok(Some(cholesky_hermitian(c, "C weighting matrix")?))
        }
    }
}

fn apply_weight(
    chol: &Option<Cholesky<Complex64, Dyn>>,
    x: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    match chol {
        Some(c) => c.solve(x),
        None => x.clone(),
    }
}

fn real_part_sym(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    symmetrize(m.map(|z| z.re))
}

/// Optimal-weighting covariance `(G* C^-1 G)^-1` on the closed grid.
fn avar_optimal_closed(model: &NoiseModel, closed: &ClosedGrid) -> Result<DMatrix<f64>> {
    let jac = score_jacobian_closed(model, closed)?;
    let c = ridge_regularize(&c_matrix_points(model, &closed.signed_points()), C_RIDGE_TAU);
    let chol = cholesky_hermitian(c, "C matrix")?;
    let t = jac.adjoint() * chol.solve(&jac);
    spd_inverse(&real_part_sym(&t), "G* C^-1 G")
}

/// `(G* C^-1 G)^-1` for a model on a user grid, closed under conjugation
/// internally like the estimator itself.
pub fn avar_eta_optimal(model: &NoiseModel, grid: &FrequencyGrid) -> Result<DMatrix<f64>> {
    avar_optimal_closed(model, &grid.conjugate_closed())
}

/// Sandwich covariance for a given weighting on the closed grid.
fn avar_sandwich_closed(
    model: &NoiseModel,
    closed: &ClosedGrid,
    weighting: Weighting,
) -> Result<DMatrix<f64>> {
    match weighting {
        Weighting::OptimalC => avar_optimal_closed(model, closed),
        Weighting::Identity => {
            let jac = score_jacobian_closed(model, closed)?;
            let c = c_matrix_points(model, &closed.signed_points());
            let a = real_part_sym(&(jac.adjoint() * &jac));
            let b = real_part_sym(&(jac.adjoint() * &c * &jac));
            let a_inv = spd_inverse(&a, "G* G")?;
            Ok(&a_inv * b * &a_inv)
        }
    }
}

/// Estimates the noise parameters from i.i.d. samples.
///
/// `template` fixes the model kind and sampling interval; `init_eta` is the
/// starting parameter vector. With [`Weighting::OptimalC`] the weight is
/// re-evaluated at each iterate.
pub fn ecf_iid_estimate(
    samples: &[f64],
    grid: &FrequencyGrid,
    template: &NoiseModel,
    init_eta: &[f64],
    opts: &EcfOptions,
) -> Result<EcfIidResult> {
    let r = template.eta_dim();
    if grid.m() < r {
        return Err(Error::Config(format!(
            "grid has {} points but the model needs at least {}",
            grid.m(),
            r
        )));
    }
    if init_eta.len() != r {
        return Err(Error::Config(format!(
            "init_eta has length {}, expected {}",
            init_eta.len(),
            r
        )));
    }

    let closed = grid.conjugate_closed();
    let emp = empirical_cf_closed(samples, &closed);

    let mut eta = init_eta.to_vec();
    template.clamp_eta(&mut eta);
    let mut model = template.with_eta(&eta)?;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let chol = weight_cholesky(&model, &closed, opts.weighting)?;
        let forms = closed_forms(&emp, &model, &closed)?;
        let hbar_mat = DMatrix::from_column_slice(forms.hbar.len(), 1, forms.hbar.as_slice());
        let k_h = apply_weight(&chol, &hbar_mat);
        let k_j = apply_weight(&chol, &forms.jac);
        let grad_c = forms.jac.adjoint() * &k_h;
        let grad: DVector<f64> = DVector::from_iterator(r, grad_c.iter().map(|z| 2.0 * z.re));
        let hess = real_part_sym(&(forms.jac.adjoint() * &k_j)) * 2.0;

        let step = match hess.clone().cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad * (1.0 / (1.0 + grad.norm())),
        };
        let cost0 = (forms.hbar.adjoint() * &k_h)[(0, 0)].re;
        let slope = grad.dot(&step);

        let mut t_step = 1.0;
        let mut next_eta = eta.clone();
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = eta
                .iter()
                .zip(step.iter())
                .map(|(e, s)| e + t_step * s)
                .collect();
            template.clamp_eta(&mut cand);
            let cand_model = template.with_eta(&cand)?;
            let cand_forms = closed_forms(&emp, &cand_model, &closed)?;
            let cand_mat =
                DMatrix::from_column_slice(cand_forms.hbar.len(), 1, cand_forms.hbar.as_slice());
            let cand_cost = (cand_forms.hbar.adjoint() * apply_weight(&chol, &cand_mat))[(0, 0)].re;
            if cand_cost <= cost0 + 1e-4 * t_step * slope {
                next_eta = cand;
                accepted = true;
                break;
            }
            t_step *= 0.5;
        }
        if !accepted {
            break;
        }
        let max_move = eta
            .iter()
            .zip(&next_eta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let scale = 1.0 + eta.iter().map(|e| e.abs()).fold(0.0f64, f64::max);
        eta = next_eta;
        model = template.with_eta(&eta)?;
        if max_move < opts.tol_step * scale {
            converged = true;
            break;
        }
    }
    if template.eta_near_boundary(&eta) {
        converged = false;
    }

    Ok(EcfIidResult {
        eta_hat: eta,
        c_matrix: c_matrix(&model, grid),
        g_matrix: {
            let mut g = DMatrix::<Complex64>::zeros(grid.m(), r);
            for (k, &u) in grid.points().iter().enumerate() {
                for (j, v) in model.cf_grad_eta(u)?.iter().enumerate() {
                    g[(k, j)] = -v;
                }
            }
            g
        },
        avar_optimal: avar_optimal_closed(&model, &closed)?,
        avar_sandwich: avar_sandwich_closed(&model, &closed, opts.weighting)?,
        iterations,
        converged,
    })
}

/// Certainty-equivalence stage 2: invert the system at `theta`, drop the
/// burn-in, then run the i.i.d. estimator on the innovations.
pub fn ecf_on_residuals(
    dy: &[f64],
    theta: &SystemParams,
    grid: &FrequencyGrid,
    template: &NoiseModel,
    init_eta: &[f64],
    burn_in: usize,
    opts: &EcfOptions,
) -> Result<EcfIidResult> {
    let bundle = innovations(theta, dy, SensitivityOrder::Value)?;
    if bundle.eps.len() <= burn_in {
        return Err(Error::Config(format!(
            "series of length {} does not cover burn_in {}",
            bundle.eps.len(),
            burn_in
        )));
    }
    ecf_iid_estimate(&bundle.eps[burn_in..], grid, template, init_eta, opts)
}
