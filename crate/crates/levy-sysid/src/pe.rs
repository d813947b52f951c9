//! Stage 1: prediction-error estimation of the ARMA parameters.
//!
//! Minimizes `V(theta) = 1/2 sum eps_n(theta)^2` by damped Gauss-Newton with
//! the innovation-sensitivity curvature `sum eps_grad eps_grad^T`, projecting
//! each iterate back inside the stability margin.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{spd_inverse, symmetrize};
use crate::system::{innovations, project_stable, SensitivityOrder, SystemParams};

/// Options for [`pe_estimate`]; also reused by the later stages for burn-in
/// and stability-margin handling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PeOptions {
    pub max_iter: usize,
    /// Gradient tolerance: converged when
    /// `|grad|_inf <= tol_g * N * sigma2_hat` (scale-free in the data).
    pub tol_g: f64,
    /// Samples excluded from all cost and covariance sums.
    pub burn_in: usize,
    /// Stability margin used when projecting iterates.
    pub rho_stab: f64,
    /// Starting point; a long-AR two-step fit when absent.
    pub init: Option<SystemParams>,
}

impl Default for PeOptions {
    fn default() -> Self {
        PeOptions {
            max_iter: 200,
            tol_g: 1e-8,
            burn_in: 500,
            rho_stab: crate::system::DEFAULT_RHO_STAB,
            init: None,
        }
    }
}

/// Prediction-error fit with the quantities the later stages consume.
#[derive(Debug, Clone)]
pub struct PeResult {
    pub theta_hat: SystemParams,
    pub cost: f64,
    /// `(1/N') sum eps_grad eps_grad^T` at the estimate.
    pub r_p_star: DMatrix<f64>,
    /// Innovation variance estimate `(1/N') sum eps^2`.
    pub sigma2_hat: f64,
    /// Asymptotic covariance `sigma2_hat * inverse(r_p_star)`.
    pub sigma_p: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Cost `1/2 sum_{n > burn_in} eps_n^2` and its gradient
/// `sum eps_grad_n eps_n`.
pub fn pe_cost(sys: &SystemParams, dy: &[f64], burn_in: usize) -> Result<(f64, Vec<f64>)> {
    let bundle = innovations(sys, dy, SensitivityOrder::Gradient)?;
    let grad_mat = bundle.eps_grad.as_ref().expect("gradient requested");
    let p = sys.dim();
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    for t in burn_in..dy.len() {
        let e = bundle.eps[t];
        value += 0.5 * e * e;
        for k in 0..p {
            grad[k] += grad_mat[(t, k)] * e;
        }
    }
    Ok((value, grad))
}

fn cost_only(sys: &SystemParams, dy: &[f64], burn_in: usize) -> Result<f64> {
    let bundle = innovations(sys, dy, SensitivityOrder::Value)?;
    Ok(bundle.eps[burn_in..].iter().map(|e| 0.5 * e * e).sum())
}

/// Fits an ARMA model of the given orders by damped Gauss-Newton.
///
/// Non-convergence within `max_iter` yields `converged = false`, never an
/// error; an unstable explicit initializer is an error.
pub fn pe_estimate(dy: &[f64], orders: (usize, usize), opts: &PeOptions) -> Result<PeResult> {
    let (pa, pc) = match &opts.init {
        Some(init) => init.orders(),
        None => orders,
    };
    let p = pa + pc;
    if dy.len() <= opts.burn_in + 10 * p.max(1) {
        return Err(Error::Config(format!(
            "need more than burn_in + 10 p = {} samples, got {}",
            opts.burn_in + 10 * p.max(1),
            dy.len()
        )));
    }

    let mut sys = match &opts.init {
        Some(init) => {
            init.require_stable(0.0)?;
            init.clone()
        }
        None => long_ar_init(dy, pa, pc, opts.rho_stab),
    };
    sys = project_stable(&sys, opts.rho_stab);

    let n = dy.len();
    let n_eff = (n - opts.burn_in) as f64;
    let mut converged = false;
    let mut iterations = 0;

    if p == 0 {
        let cost = cost_only(&sys, dy, opts.burn_in)?;
        return Ok(PeResult {
            theta_hat: sys,
            cost,
            r_p_star: DMatrix::zeros(0, 0),
            sigma2_hat: 2.0 * cost / n_eff,
            sigma_p: DMatrix::zeros(0, 0),
            iterations: 0,
            converged: true,
        });
    }

    let mut cost;
    loop {
        let bundle = innovations(&sys, dy, SensitivityOrder::Gradient)?;
        let grad_mat = bundle.eps_grad.as_ref().unwrap();
        let mut value = 0.0;
        let mut grad = DVector::<f64>::zeros(p);
        let mut curv = DMatrix::<f64>::zeros(p, p);
        for t in opts.burn_in..n {
            let e = bundle.eps[t];
            value += 0.5 * e * e;
            for k in 0..p {
                let gk = grad_mat[(t, k)];
                grad[k] += gk * e;
                for l in k..p {
                    curv[(k, l)] += gk * grad_mat[(t, l)];
                }
            }
        }
        for k in 0..p {
            for l in 0..k {
                curv[(k, l)] = curv[(l, k)];
            }
        }
        cost = value;
        let sigma2 = 2.0 * value / n_eff;
        let scale = opts.tol_g * n as f64 * sigma2;
        if grad.amax() <= scale {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let direction = match curv.clone().cholesky() {
            Some(chol) => -chol.solve(&grad),
            None => -&grad * (1.0 / (1.0 + grad.norm())),
        };
        let slope: f64 = grad.dot(&direction);
        // the attainable decrease is below f64 rounding of the cost:
        // stationary for all practical purposes
        if slope.abs() <= 1e-14 * (1.0 + value) {
            converged = true;
            break;
        }
        let theta = DVector::from_vec(sys.theta());

        let mut t_step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand_vec = &theta + &direction * t_step;
            let cand = project_stable(
                &SystemParams::from_theta(pa, pc, cand_vec.as_slice()),
                opts.rho_stab,
            );
            let cand_cost = cost_only(&cand, dy, opts.burn_in)?;
            if cand_cost <= value + 1e-4 * t_step * slope {
                sys = cand;
                accepted = true;
                break;
            }
            t_step *= 0.5;
        }
        if !accepted {
            // stuck on the stability boundary or at numerical noise level
            break;
        }
    }

    let bundle = innovations(&sys, dy, SensitivityOrder::Gradient)?;
    let grad_mat = bundle.eps_grad.as_ref().unwrap();
    let mut r_p = DMatrix::<f64>::zeros(p, p);
    let mut sigma2_hat = 0.0;
    for t in opts.burn_in..n {
        sigma2_hat += bundle.eps[t] * bundle.eps[t];
        for k in 0..p {
            for l in k..p {
                r_p[(k, l)] += grad_mat[(t, k)] * grad_mat[(t, l)];
            }
        }
    }
    sigma2_hat /= n_eff;
    r_p /= n_eff;
    for k in 0..p {
        for l in 0..k {
            r_p[(k, l)] = r_p[(l, k)];
        }
    }
    let r_p = symmetrize(r_p);
    let sigma_p = spd_inverse(&r_p, "R_P")? * sigma2_hat;

    Ok(PeResult {
        theta_hat: sys,
        cost,
        r_p_star: r_p,
        sigma2_hat,
        sigma_p,
        iterations,
        converged,
    })
}

/// Two-step starting point: fit a long AR by least squares, then regress the
/// output on lagged outputs and lagged AR residuals.
fn long_ar_init(dy: &[f64], pa: usize, pc: usize, rho: f64) -> SystemParams {
    let n = dy.len();
    if pa + pc == 0 {
        return SystemParams::identity();
    }
    let long = (n / 10).clamp(pa + pc + 1, 20);
    let resid = ar_residuals(dy, long);

    // design: dy_t = sum_i a_i (-dy_{t-i}) + sum_j c_j resid_{t-j} + resid-like error
    let start = long + pc.max(pa);
    if start + 10 * (pa + pc) >= n {
        return SystemParams {
            ar: vec![0.0; pa],
            ma: vec![0.0; pc],
        };
    }
    let rows = n - start;
    let cols = pa + pc;
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut target = DVector::<f64>::zeros(rows);
    for (r, t) in (start..n).enumerate() {
        target[r] = dy[t];
        for i in 0..pa {
            design[(r, i)] = -dy[t - i - 1];
        }
        for j in 0..pc {
            design[(r, pa + j)] = resid[t - j - 1];
        }
    }
    let solution = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-10)
        .unwrap_or_else(|_| DVector::zeros(cols));
    let sys = SystemParams::from_theta(pa, pc, solution.as_slice());
    project_stable(&sys, rho)
}

fn ar_residuals(dy: &[f64], order: usize) -> Vec<f64> {
    let n = dy.len();
    let rows = n - order;
    let mut design = DMatrix::<f64>::zeros(rows, order);
    let mut target = DVector::<f64>::zeros(rows);
    for (r, t) in (order..n).enumerate() {
        target[r] = dy[t];
        for i in 0..order {
            design[(r, i)] = dy[t - i - 1];
        }
    }
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-10)
        .unwrap_or_else(|_| DVector::zeros(order));
    let mut resid = vec![0.0; n];
    for t in order..n {
        let mut pred = 0.0;
        for i in 0..order {
            pred += coef[i] * dy[t - i - 1];
        }
        resid[t] = dy[t] - pred;
    }
    resid
}
