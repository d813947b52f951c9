//! Stage 3: re-estimation of the dynamics with sensitivity-weighted
//! characteristic-function scores.
//!
//! The per-sample score at frequency `u_k` is
//! `h_{k,n}(theta) = (e^{i u_k eps_n(theta)} - phi(u_k, eta)) eps_grad_n(theta)`,
//! stacked over the grid into an `M p`-vector and weighted with
//! `K = C (x) R_P*`, whose inverse is applied factorwise through the
//! Kronecker identities. The resulting asymptotic covariance is
//! `(psi* C^-1 psi)^-1 (R_P*)^-1 / N`, which approaches the
//! maximum-likelihood covariance `mu^-1 (R_P*)^-1 / N` as the grid fills the
//! line.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ecf_iid::c_matrix_points;
use crate::error::{Error, Result};
use crate::grid::{ClosedGrid, FrequencyGrid};
use crate::noise::NoiseModel;
use crate::numeric::{
    adaptive_simpson, cholesky_hermitian, ridge_regularize, spd_inverse, symmetrize, C_RIDGE_TAU,
};
use crate::pe::PeResult;
use crate::system::{innovations, project_stable, SensitivityOrder, SystemParams};

/// Options for [`stage3_estimate`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Stage3Options {
    pub max_iter: usize,
    /// Step-size convergence threshold relative to `1 + |theta|_inf`.
    pub tol_step: f64,
    pub burn_in: usize,
    pub rho_stab: f64,
}

impl Default for Stage3Options {
    fn default() -> Self {
        Stage3Options {
            max_iter: 100,
            tol_step: 1e-9,
            burn_in: 500,
            rho_stab: crate::system::DEFAULT_RHO_STAB,
        }
    }
}

/// Stage-3 fit and the pieces of its asymptotic covariance.
#[derive(Debug, Clone)]
pub struct Stage3Result {
    pub theta_hat2: SystemParams,
    /// `psi_k = i u_k phi(u_k, eta)` on the user grid.
    pub psi: Vec<Complex64>,
    /// `psi* C^-1 psi` on the conjugate-closed grid; real and positive.
    pub kappa: f64,
    /// `(1/kappa) (R_P*)^-1`; divide by `N` for the covariance of the estimate.
    pub avar_stage3: DMatrix<f64>,
    /// `kappa * sigma2`; approaches 1 for Gaussian noise on dense grids and
    /// exceeds 1 whenever the score beats plain prediction error.
    pub efficiency_ratio_vs_pe: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-sample stage-3 scores on the user grid, plus their mean.
#[derive(Debug, Clone)]
pub struct Stage3Scores {
    /// `N' x (M p)` matrix; row `n` holds blocks `(h_{1,n}^T, ..., h_{M,n}^T)`.
    pub per_sample: DMatrix<Complex64>,
    /// Mean score, length `M p`.
    pub mean: Vec<Complex64>,
}

/// Materialized Kronecker product `c (x) r_p`.
pub fn kronecker_weight(
    c: &DMatrix<Complex64>,
    r_p: &DMatrix<f64>,
) -> Result<DMatrix<Complex64>> {
    if c.nrows() != c.ncols() || r_p.nrows() != r_p.ncols() {
        return Err(Error::Config(format!(
            "kronecker factors must be square, got {}x{} and {}x{}",
            c.nrows(),
            c.ncols(),
            r_p.nrows(),
            r_p.ncols()
        )));
    }
    let m = c.nrows();
    let p = r_p.nrows();
    let mut k = DMatrix::<Complex64>::zeros(m * p, m * p);
    for a in 0..m {
        for b in 0..m {
            for i in 0..p {
                for j in 0..p {
                    k[(a * p + i, b * p + j)] = c[(a, b)] * r_p[(i, j)];
                }
            }
        }
    }
    Ok(k)
}

/// Public score operation on the user grid; errors on parameter-free systems.
pub fn stage3_scores(
    dy: &[f64],
    theta: &SystemParams,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    burn_in: usize,
) -> Result<Stage3Scores> {
    let p = theta.dim();
    if p == 0 {
        return Err(Error::Config(
            "stage-3 scores need at least one system parameter".into(),
        ));
    }
    if dy.len() <= burn_in {
        return Err(Error::Config(format!(
            "series of length {} does not cover burn_in {}",
            dy.len(),
            burn_in
        )));
    }
    let bundle = innovations(theta, dy, SensitivityOrder::Gradient)?;
    let grad = bundle.eps_grad.as_ref().unwrap();
    let n_eff = dy.len() - burn_in;
    let m = grid.m();
    let phis: Vec<Complex64> = grid.points().iter().map(|&u| noise.cf(u)).collect();
    let mut per_sample = DMatrix::<Complex64>::zeros(n_eff, m * p);
    let mut mean = vec![Complex64::default(); m * p];
    for (row, t) in (burn_in..dy.len()).enumerate() {
        let eps = bundle.eps[t];
        for (k, &u) in grid.points().iter().enumerate() {
            let w = Complex64::from_polar(1.0, u * eps) - phis[k];
            for i in 0..p {
                let v = w * grad[(t, i)];
                per_sample[(row, k * p + i)] = v;
                mean[k * p + i] += v;
            }
        }
    }
    for v in &mut mean {
        *v /= n_eff as f64;
    }
    Ok(Stage3Scores { per_sample, mean })
}

/// Score blocks on the closed grid. `hbar` holds the mean score per block;
/// `gn` the Gauss-Newton Jacobian blocks `(1/N') sum i a_k e^{i a_k eps}
/// eps_grad eps_grad^T`; `exact` adds the `(e^{i a_k eps} - phi) eps_hess`
/// term, giving the exact Jacobian of the mean score.
struct ScoreBlocks {
    half: usize,
    p: usize,
    hbar: Vec<Complex64>,
    gn: Option<Vec<Complex64>>,
    exact: Option<Vec<Complex64>>,
}

impl ScoreBlocks {
    fn hbar_matrix(&self) -> DMatrix<Complex64> {
        let rows = 2 * self.half;
        DMatrix::from_fn(rows, self.p, |k, i| self.hbar[k * self.p + i])
    }

    fn block(&self, store: &[Complex64], k: usize) -> DMatrix<Complex64> {
        let p = self.p;
        DMatrix::from_fn(p, p, |i, m| store[(k * p + i) * p + m])
    }
}

fn assemble_scores(
    sys: &SystemParams,
    dy: &[f64],
    noise: &NoiseModel,
    closed: &ClosedGrid,
    burn_in: usize,
    with_jacobian: bool,
) -> Result<ScoreBlocks> {
    let p = sys.dim();
    let order = if with_jacobian {
        SensitivityOrder::Hessian
    } else {
        SensitivityOrder::Gradient
    };
    let bundle = innovations(sys, dy, order)?;
    let grad = bundle.eps_grad.as_ref().unwrap();
    let n = dy.len();
    let n_eff = (n - burn_in) as f64;
    let half = closed.half_len();
    let phis: Vec<Complex64> = closed.abs_points().iter().map(|&u| noise.cf(u)).collect();

    let mut hbar_pos = vec![Complex64::default(); half * p];
    let mut gn_pos = if with_jacobian {
        vec![Complex64::default(); half * p * p]
    } else {
        vec![]
    };
    let mut ex_pos = gn_pos.clone();

    let mut ladder = vec![Complex64::default(); half];
    let mut grow = vec![0.0f64; p];
    let hess = bundle.eps_hess.as_ref();

    for t in burn_in..n {
        let eps = bundle.eps[t];
        closed.cis_ladder(eps, &mut ladder);
        for i in 0..p {
            grow[i] = grad[(t, i)];
        }
        for k in 0..half {
            let z = ladder[k];
            let w = z - phis[k];
            let base = k * p;
            for i in 0..p {
                hbar_pos[base + i] += w * grow[i];
            }
            if with_jacobian {
                let ia_z = Complex64::new(0.0, closed.abs_points()[k]) * z;
                let hess = hess.unwrap();
                for i in 0..p {
                    let row = (base + i) * p;
                    for m in 0..p {
                        gn_pos[row + m] += ia_z * (grow[i] * grow[m]);
                        ex_pos[row + m] += w * hess.get(t, i, m);
                    }
                }
            }
        }
    }

    let scale = 1.0 / n_eff;
    let mut hbar = vec![Complex64::default(); 2 * half * p];
    for k in 0..half {
        for i in 0..p {
            let v = hbar_pos[k * p + i] * scale;
            hbar[k * p + i] = v;
            hbar[(k + half) * p + i] = v.conj();
        }
    }
    let (gn, exact) = if with_jacobian {
        let mut gn = vec![Complex64::default(); 2 * half * p * p];
        let mut exact = gn.clone();
        for k in 0..half {
            for i in 0..p {
                for m in 0..p {
                    let g = gn_pos[(k * p + i) * p + m] * scale;
                    let e = g + ex_pos[(k * p + i) * p + m] * scale;
                    gn[(k * p + i) * p + m] = g;
                    gn[((k + half) * p + i) * p + m] = g.conj();
                    exact[(k * p + i) * p + m] = e;
                    exact[((k + half) * p + i) * p + m] = e.conj();
                }
            }
        }
        (Some(gn), Some(exact))
    } else {
        (None, None)
    };

    Ok(ScoreBlocks {
        half,
        p,
        hbar,
        gn,
        exact,
    })
}

/// Weighting context: Cholesky of the ridged closed-grid C and the inverse
/// of `R_P*`; `K^-1` is applied factorwise, never materialized.
struct KroneckerSolver {
    c_chol: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
    r_inv: DMatrix<f64>,
}

impl KroneckerSolver {
    fn new(noise: &NoiseModel, closed: &ClosedGrid, r_p: &DMatrix<f64>) -> Result<Self> {
        let c = ridge_regularize(&c_matrix_points(noise, &closed.signed_points()), C_RIDGE_TAU);
        let c_chol = cholesky_hermitian(c, "C (x) R_P weighting, C factor")?;
        let r_inv = spd_inverse(r_p, "C (x) R_P weighting, R_P factor")?;
        Ok(KroneckerSolver { c_chol, r_inv })
    }

    /// `W = C^-1 Hm R_P^-1` where `Hm` is the blocked score matrix.
    fn weighted(&self, hm: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let left = self.c_chol.solve(hm);
        let r_inv_c = self.r_inv.map(|x| Complex64::new(x, 0.0));
        left * r_inv_c
    }
}

fn cost_value(hm: &DMatrix<Complex64>, w: &DMatrix<Complex64>) -> f64 {
    hm.iter().zip(w.iter()).map(|(h, w)| (h.conj() * w).re).sum()
}

fn cost_and_grad(
    blocks: &ScoreBlocks,
    solver: &KroneckerSolver,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = blocks.p;
    let rows = 2 * blocks.half;
    let hm = blocks.hbar_matrix();
    let w = solver.weighted(&hm);
    let value = cost_value(&hm, &w);

    let exact = blocks.exact.as_ref().expect("jacobian requested");
    let mut grad = DVector::<f64>::zeros(p);
    for k in 0..rows {
        let jb = blocks.block(exact, k);
        for m in 0..p {
            let mut acc = Complex64::default();
            for i in 0..p {
                acc += jb[(i, m)].conj() * w[(k, i)];
            }
            grad[m] += 2.0 * acc.re;
        }
    }

    // Gauss-Newton curvature: 2 Re sum_{k,l} C^-1[k,l] A_k^H R^-1 A_l
    let gn = blocks.gn.as_ref().unwrap();
    let mut amat = DMatrix::<Complex64>::zeros(rows, p * p);
    for k in 0..rows {
        for i in 0..p {
            for m in 0..p {
                amat[(k, i * p + m)] = gn[(k * p + i) * p + m];
            }
        }
    }
    let ca = solver.c_chol.solve(&amat);
    let mut hessian = DMatrix::<f64>::zeros(p, p);
    for k in 0..rows {
        let a_k = blocks.block(gn, k);
        let ca_k = DMatrix::from_fn(p, p, |i, m| ca[(k, i * p + m)]);
        let r_inv_c = solver.r_inv.map(|x| Complex64::new(x, 0.0));
        let term = a_k.adjoint() * r_inv_c * ca_k;
        for m in 0..p {
            for n2 in 0..p {
                hessian[(m, n2)] += 2.0 * term[(m, n2)].re;
            }
        }
    }
    (value, grad, symmetrize(hessian))
}

/// Cost `hbar* K^-1 hbar` and its exact theta-gradient at the given point.
pub fn stage3_cost_grad(
    dy: &[f64],
    theta: &SystemParams,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    r_p_star: &DMatrix<f64>,
    burn_in: usize,
) -> Result<(f64, Vec<f64>)> {
    let closed = grid.conjugate_closed();
    let solver = KroneckerSolver::new(noise, &closed, r_p_star)?;
    let blocks = assemble_scores(theta, dy, noise, &closed, burn_in, true)?;
    let (value, grad, _) = cost_and_grad(&blocks, &solver);
    Ok((value, grad.iter().copied().collect()))
}

/// `psi* C^-1 psi` on a closed grid.
fn kappa_closed(noise: &NoiseModel, closed: &ClosedGrid) -> Result<f64> {
    let c = ridge_regularize(&c_matrix_points(noise, &closed.signed_points()), C_RIDGE_TAU);
    let chol = cholesky_hermitian(c, "C matrix")?;
    let points = closed.signed_points();
    let psi = DMatrix::from_fn(points.len(), 1, |k, _| {
        Complex64::new(0.0, points[k]) * noise.cf(points[k])
    });
    let solved = chol.solve(&psi);
    let kappa = (psi.adjoint() * solved)[(0, 0)];
    if kappa.im.abs() > 1e-10 * kappa.re.abs().max(1e-300) {
        return Err(Error::Numerical(format!(
            "kappa has a non-negligible imaginary part: {kappa}"
        )));
    }
    if kappa.re <= 0.0 {
        return Err(Error::Numerical(format!("kappa must be positive: {kappa}")));
    }
    Ok(kappa.re)
}

/// `psi* C^-1 psi` for a model on a user grid, closed under conjugation
/// internally like the estimator itself.
pub fn kappa_on_grid(noise: &NoiseModel, grid: &FrequencyGrid) -> Result<f64> {
    kappa_closed(noise, &grid.conjugate_closed())
}

/// Re-estimates the dynamics from the PE starting point with the noise
/// estimate frozen. `r_p_star` and `sigma2` come from stage 1.
pub fn stage3_estimate(
    dy: &[f64],
    theta_init: &SystemParams,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    r_p_star: &DMatrix<f64>,
    sigma2: f64,
    opts: &Stage3Options,
) -> Result<Stage3Result> {
    let p = theta_init.dim();
    if p == 0 {
        return Err(Error::Config(
            "stage 3 needs at least one system parameter".into(),
        ));
    }
    if r_p_star.nrows() != p || r_p_star.ncols() != p {
        return Err(Error::Config(format!(
            "r_p_star is {}x{} but theta has dimension {p}",
            r_p_star.nrows(),
            r_p_star.ncols()
        )));
    }
    theta_init.require_stable(0.0)?;
    if dy.len() <= opts.burn_in + 10 * p {
        return Err(Error::Config(format!(
            "need more than burn_in + 10 p = {} samples, got {}",
            opts.burn_in + 10 * p,
            dy.len()
        )));
    }

    let closed = grid.conjugate_closed();
    let solver = KroneckerSolver::new(noise, &closed, r_p_star)?;
    let (pa, pc) = theta_init.orders();
    let mut sys = project_stable(theta_init, opts.rho_stab);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let blocks = assemble_scores(&sys, dy, noise, &closed, opts.burn_in, true)?;
        let (value, grad, hessian) = cost_and_grad(&blocks, &solver);
        let step = match hessian.clone().cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad * (1.0 / (1.0 + grad.norm())),
        };
        let slope = grad.dot(&step);
        let theta = DVector::from_vec(sys.theta());

        let mut t_step = 1.0;
        let mut accepted = false;
        let mut next = sys.clone();
        for _ in 0..40 {
            let cand_vec = &theta + &step * t_step;
            let cand = project_stable(
                &SystemParams::from_theta(pa, pc, cand_vec.as_slice()),
                opts.rho_stab,
            );
            let cand_blocks = assemble_scores(&cand, dy, noise, &closed, opts.burn_in, false)?;
            let hm = cand_blocks.hbar_matrix();
            let w = solver.weighted(&hm);
            if cost_value(&hm, &w) <= value + 1e-4 * t_step * slope {
                next = cand;
                accepted = true;
                break;
            }
            t_step *= 0.5;
        }
        if !accepted {
            break;
        }
        let max_move = sys
            .theta()
            .iter()
            .zip(next.theta())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let scale = 1.0 + sys.theta().iter().map(|x| x.abs()).fold(0.0f64, f64::max);
        sys = next;
        if max_move < opts.tol_step * scale {
            converged = true;
            break;
        }
    }

    let kappa = kappa_closed(noise, &closed)?;
    let psi: Vec<Complex64> = grid
        .points()
        .iter()
        .map(|&u| Complex64::new(0.0, u) * noise.cf(u))
        .collect();
    let avar_stage3 = spd_inverse(r_p_star, "R_P*")? / kappa;

    Ok(Stage3Result {
        theta_hat2: sys,
        psi,
        kappa,
        avar_stage3,
        efficiency_ratio_vs_pe: kappa * sigma2,
        iterations,
        converged,
    })
}

/// Convenience wrapper feeding stage 3 from a stage-1 fit.
pub fn stage3_from_pe(
    dy: &[f64],
    pe: &PeResult,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    opts: &Stage3Options,
) -> Result<Stage3Result> {
    stage3_estimate(
        dy,
        &pe.theta_hat,
        noise,
        grid,
        &pe.r_p_star,
        pe.sigma2_hat,
        opts,
    )
}

/// Fisher information of a location parameter: `mu = E[(f'/f)^2]` by
/// adaptive quadrature of `f'^2 / f` over the real line.
pub fn fisher_location(model: &NoiseModel) -> Result<f64> {
    if model.density(0.0).is_none() {
        return Err(Error::DensityUnavailable(model.kind_name()));
    }
    let sd = model.moments().variance.sqrt();
    let half_width = 14.0 * sd;
    let integrand = |x: f64| {
        let f = model.density(x).unwrap();
        let fp = model.density_deriv(x).unwrap();
        if f <= 1e-300 {
            0.0
        } else {
            fp * fp / f
        }
    };
    let left = adaptive_simpson(&integrand, -half_width, 0.0, 1e-7);
    let right = adaptive_simpson(&integrand, 0.0, half_width, 1e-7);
    Ok(left + right)
}

/// `kappa(M)` on increasingly dense auto grids.
#[derive(Debug, Clone)]
pub struct KappaCurve {
    pub kappas: Vec<f64>,
    /// False when the C factorization failed at some grid size; remaining
    /// entries repeat the last stable value.
    pub conditioning_ok: bool,
}

pub fn continuum_limit_kappa(model: &NoiseModel, m_values: &[usize]) -> Result<KappaCurve> {
    let mut kappas = Vec::with_capacity(m_values.len());
    let mut conditioning_ok = true;
    let mut last_stable: Option<f64> = None;
    for &m in m_values {
        let grid = FrequencyGrid::auto(model, m)?;
        match kappa_closed(model, &grid.conjugate_closed()) {
            Ok(k) => {
                last_stable = Some(k);
                kappas.push(k);
            }
            Err(_) => {
                conditioning_ok = false;
                match last_stable {
                    Some(k) => kappas.push(k),
                    None => {
                        return Err(Error::Numerical(format!(
                            "C matrix factorization failed already at M = {m}"
                        )))
                    }
                }
            }
        }
    }
    Ok(KappaCurve {
        kappas,
        conditioning_ok,
    })
}

/// Baseline stage-3 variant using the unweighted scores
/// `f_{k,n} = e^{i u_k eps_n} - phi(u_k)` (no sensitivity factor). Kept as a
/// Monte Carlo comparison baseline; it is not efficient.
pub fn stage3_estimate_fscore(
    dy: &[f64],
    theta_init: &SystemParams,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    opts: &Stage3Options,
) -> Result<(SystemParams, bool)> {
    let p = theta_init.dim();
    if p == 0 {
        return Err(Error::Config(
            "the f-score baseline needs at least one system parameter".into(),
        ));
    }
    theta_init.require_stable(0.0)?;
    let closed = grid.conjugate_closed();
    let c = ridge_regularize(
        &c_matrix_points(noise, &closed.signed_points()),
        C_RIDGE_TAU,
    );
    let chol = cholesky_hermitian(c, "C matrix")?;
    let phis: Vec<Complex64> = closed
        .abs_points()
        .iter()
        .map(|&u| noise.cf(u))
        .collect();
    let half = closed.half_len();
    let (pa, pc) = theta_init.orders();
    let mut sys = project_stable(theta_init, opts.rho_stab);
    let n = dy.len();
    let n_eff = (n - opts.burn_in) as f64;

    let eval = |sys: &SystemParams,
                with_jac: bool|
     -> Result<(DMatrix<Complex64>, Option<DMatrix<Complex64>>)> {
        let order = if with_jac {
            SensitivityOrder::Gradient
        } else {
            SensitivityOrder::Value
        };
        let bundle = innovations(sys, dy, order)?;
        let mut fbar = DMatrix::<Complex64>::zeros(2 * half, 1);
        let mut jac = if with_jac {
            Some(DMatrix::<Complex64>::zeros(2 * half, p))
        } else {
            None
        };
        let mut ladder = vec![Complex64::default(); half];
        for t in opts.burn_in..n {
            closed.cis_ladder(bundle.eps[t], &mut ladder);
            for k in 0..half {
                let z = ladder[k];
                fbar[(k, 0)] += z - phis[k];
                if let Some(jac) = jac.as_mut() {
                    let grad = bundle.eps_grad.as_ref().unwrap();
                    let ia_z = Complex64::new(0.0, closed.abs_points()[k]) * z;
                    for m in 0..p {
                        jac[(k, m)] += ia_z * grad[(t, m)];
                    }
                }
            }
        }
        for k in 0..half {
            fbar[(k, 0)] /= n_eff;
            fbar[(k + half, 0)] = fbar[(k, 0)].conj();
        }
        if let Some(jac) = jac.as_mut() {
            for k in 0..half {
                for m in 0..p {
                    jac[(k, m)] /= n_eff;
                    jac[(k + half, m)] = jac[(k, m)].conj();
                }
            }
        }
        Ok((fbar, jac))
    };

    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (fbar, jac) = eval(&sys, true)?;
        let jac = jac.unwrap();
        let kf = chol.solve(&fbar);
        let kj = chol.solve(&jac);
        let grad_c = jac.adjoint() * &kf;
        let grad = DVector::from_iterator(p, grad_c.iter().map(|z| 2.0 * z.re));
        let hess = symmetrize((jac.adjoint() * &kj).map(|z| z.re)) * 2.0;
        let step = match hess.clone().cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad * (1.0 / (1.0 + grad.norm())),
        };
        let value = (fbar.adjoint() * &kf)[(0, 0)].re;
        let slope = grad.dot(&step);
        let theta = DVector::from_vec(sys.theta());
        let mut t_step = 1.0;
        let mut accepted = false;
        let mut next = sys.clone();
        for _ in 0..40 {
            let cand_vec = &theta + &step * t_step;
            let cand = project_stable(
                &SystemParams::from_theta(pa, pc, cand_vec.as_slice()),
                opts.rho_stab,
            );
            let (fb2, _) = eval(&cand, false)?;
            let cost2 = (fb2.adjoint() * chol.solve(&fb2))[(0, 0)].re;
            if cost2 <= value + 1e-4 * t_step * slope {
                next = cand;
                accepted = true;
                break;
            }
            t_step *= 0.5;
        }
        if !accepted {
            break;
        }
        let max_move = sys
            .theta()
            .iter()
            .zip(next.theta())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        sys = next;
        if max_move < opts.tol_step * 10.0 {
            converged = true;
            break;
        }
    }
    Ok((sys, converged))
}
