//! Zero-mean i.i.d. increment laws with closed-form characteristic functions.
//!
//! Each model describes the increment of a driving process over a fixed
//! sampling interval `h`, centered analytically so that the mean is exactly
//! zero. Samplers are seeded and deterministic. The CGMY model is
//! characteristic-function-only: it has no sampler and exists as an
//! estimation target and to exercise the tempered-stable exponent.
//!
//! An alpha-stable model (Lévy density `C^- |x|^{-1-alpha}` for `x < 0` plus
//! `C^+ x^{-1-alpha}` for `x > 0`) is deliberately not implemented: its
//! increments have infinite variance, which breaks every moment-based
//! estimator in this crate.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::gamma::{digamma, gamma};

use crate::error::{Error, Result};
use crate::rng::make_rng;

/// Guard half-width around `Y = 1` inside which the CGMY model is rejected.
pub const CGMY_Y_GUARD: f64 = 1e-3;
/// Wider guard around `Y in {0, 1}` inside which the Y-gradient is refused.
pub const CGMY_Y_GRAD_GUARD: f64 = 1e-2;

const SCALE_FLOOR: f64 = 1e-8;
const WEIGHT_FLOOR: f64 = 1e-6;

/// First four moments of the centered increment law.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub abs_moment_4: f64,
}

/// Gamma-process mean/variance pairs of the two legs of a variance-gamma
/// increment: `mu_p = sqrt(theta^2 + 2 sigma^2/nu)/2 + theta/2`,
/// `nu_p = mu_p^2 nu`, and the mirrored `mu_n`, `nu_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VgDerivedParams {
    pub mu_p: f64,
    pub nu_p: f64,
    pub mu_n: f64,
    pub nu_n: f64,
}

/// Splits a variance-gamma law into its difference-of-gammas legs.
pub fn vg_derived_params(sigma: f64, nu: f64, theta: f64) -> VgDerivedParams {
    let s = (theta * theta + 2.0 * sigma * sigma / nu).sqrt();
    let mu_p = 0.5 * s + 0.5 * theta;
    let mu_n = 0.5 * s - 0.5 * theta;
    VgDerivedParams {
        mu_p,
        nu_p: mu_p * mu_p * nu,
        mu_n,
        nu_n: mu_n * mu_n * nu,
    }
}

/// A centered increment law over sampling interval `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    GaussianIid {
        sigma: f64,
        h: f64,
    },
    GaussianMixture {
        weights: Vec<f64>,
        sigmas: Vec<f64>,
        h: f64,
    },
    CompoundPoissonGaussian {
        lambda: f64,
        jump_mean: f64,
        jump_std: f64,
        h: f64,
    },
    VarianceGamma {
        sigma: f64,
        nu: f64,
        theta: f64,
        h: f64,
    },
    CgmyCfOnly {
        c: f64,
        g: f64,
        m: f64,
        y: f64,
        h: f64,
    },
}

fn require_positive(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::Domain {
            name,
            reason: format!("must be a positive finite number, got {v}"),
        });
    }
    Ok(())
}

fn require_finite(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain {
            name,
            reason: format!("must be finite, got {v}"),
        });
    }
    Ok(())
}

/// `Gamma(-y)` for `y in (0,1) U (1,2)` via the reflection formula.
fn gamma_neg(y: f64) -> f64 {
    -std::f64::consts::PI / ((std::f64::consts::PI * y).sin() * gamma(1.0 + y))
}

/// `digamma(-y)` for `y in (0,1) U (1,2)` via the digamma reflection formula.
fn digamma_neg(y: f64) -> f64 {
    digamma(1.0 + y) + std::f64::consts::PI / (std::f64::consts::PI * y).tan()
}

/// `digamma(1-y)` for `y in (0,1) U (1,2)`.
fn digamma_one_minus(y: f64) -> f64 {
    digamma(y) + std::f64::consts::PI / (std::f64::consts::PI * y).tan()
}

impl NoiseModel {
    pub fn gaussian_iid(sigma: f64, h: f64) -> Result<Self> {
        let model = NoiseModel::GaussianIid { sigma, h };
        model.validate()?;
        Ok(model)
    }

    pub fn gaussian_mixture(weights: Vec<f64>, sigmas: Vec<f64>, h: f64) -> Result<Self> {
        let model = NoiseModel::GaussianMixture { weights, sigmas, h };
        model.validate()?;
        Ok(model)
    }

    pub fn compound_poisson_gaussian(
        lambda: f64,
        jump_mean: f64,
        jump_std: f64,
        h: f64,
    ) -> Result<Self> {
        let model = NoiseModel::CompoundPoissonGaussian {
            lambda,
            jump_mean,
            jump_std,
            h,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn variance_gamma(sigma: f64, nu: f64, theta: f64, h: f64) -> Result<Self> {
        let model = NoiseModel::VarianceGamma { sigma, nu, theta, h };
        model.validate()?;
        Ok(model)
    }

    pub fn cgmy_cf_only(c: f64, g: f64, m: f64, y: f64, h: f64) -> Result<Self> {
        let model = NoiseModel::CgmyCfOnly { c, g, m, y, h };
        model.validate()?;
        Ok(model)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseModel::GaussianIid { .. } => "gaussian_iid",
            NoiseModel::GaussianMixture { .. } => "gaussian_mixture",
            NoiseModel::CompoundPoissonGaussian { .. } => "compound_poisson_gaussian",
            NoiseModel::VarianceGamma { .. } => "variance_gamma",
            NoiseModel::CgmyCfOnly { .. } => "cgmy_cf_only",
        }
    }

    pub fn h(&self) -> f64 {
        match *self {
            NoiseModel::GaussianIid { h, .. }
            | NoiseModel::GaussianMixture { h, .. }
            | NoiseModel::CompoundPoissonGaussian { h, .. }
            | NoiseModel::VarianceGamma { h, .. }
            | NoiseModel::CgmyCfOnly { h, .. } => h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("h", self.h())?;
        match self {
            NoiseModel::GaussianIid { sigma, .. } => require_positive("sigma", *sigma),
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                if weights.is_empty() || weights.len() != sigmas.len() {
                    return Err(Error::Domain {
                        name: "weights",
                        reason: "weights and sigmas must be non-empty and equally long".into(),
                    });
                }
                for &w in weights {
                    if !w.is_finite() || w <= 0.0 || w >= 1.0 {
                        if weights.len() == 1 && w == 1.0 {
                            continue;
                        }
                        return Err(Error::Domain {
                            name: "weights",
                            reason: format!("each weight must lie in (0,1), got {w}"),
                        });
                    }
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain {
                        name: "weights",
                        reason: format!("weights must sum to 1, got {total}"),
                    });
                }
                for &s in sigmas {
                    require_positive("sigmas", s)?;
                }
                Ok(())
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => {
                require_positive("lambda", *lambda)?;
                require_finite("jump_mean", *jump_mean)?;
                require_positive("jump_std", *jump_std)
            }
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => {
                require_positive("sigma", *sigma)?;
                require_positive("nu", *nu)?;
                require_finite("theta", *theta)
            }
            NoiseModel::CgmyCfOnly { c, g, m, y, .. } => {
                require_positive("c", *c)?;
                require_positive("g", *g)?;
                require_positive("m", *m)?;
                if !y.is_finite() || *y <= 0.0 || *y >= 2.0 {
                    return Err(Error::Domain {
                        name: "y",
                        reason: format!("must lie in (0,2), got {y}"),
                    });
                }
                if (*y - 1.0).abs() < CGMY_Y_GUARD {
                    return Err(Error::Domain {
                        name: "y",
                        reason: format!(
                            "must stay {CGMY_Y_GUARD} away from the Gamma(-Y) pole at 1, got {y}"
                        ),
                    });
                }
                Ok(())
            }
        }
    }

    /// Characteristic function of the centered increment at frequency `u`.
    pub fn cf(&self, u: f64) -> Complex64 {
        let h = self.h();
        match self {
            NoiseModel::GaussianIid { sigma, .. } => {
                Complex64::new((-0.5 * sigma * sigma * u * u * h).exp(), 0.0)
            }
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                let mut acc = 0.0;
                for (w, s) in weights.iter().zip(sigmas) {
                    acc += w * (-0.5 * s * s * u * u * h).exp();
                }
                Complex64::new(acc, 0.0)
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => {
                let jump_cf = Complex64::new(
                    -0.5 * jump_std * jump_std * u * u,
                    u * jump_mean,
                )
                .exp();
                let exponent = lambda * h * (jump_cf - 1.0)
                    - Complex64::new(0.0, u * lambda * h * jump_mean);
                exponent.exp()
            }
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => {
                let d = Complex64::new(1.0 + 0.5 * sigma * sigma * nu * u * u, -u * theta * nu);
                let powed = (-(h / nu) * d.ln()).exp();
                powed * Complex64::new(0.0, -u * theta * h).exp()
            }
            NoiseModel::CgmyCfOnly { c, g, m, y, .. } => {
                let psi = cgmy_exponent(*c, *g, *m, *y, u);
                let mean = cgmy_mean_rate(*c, *g, *m, *y);
                (psi * h - Complex64::new(0.0, u * mean * h)).exp()
            }
        }
    }

    /// Length of the model's free parameter vector.
    pub fn eta_dim(&self) -> usize {
        match self {
            NoiseModel::GaussianIid { .. } => 1,
            NoiseModel::GaussianMixture { weights, .. } => 2 * weights.len() - 1,
            NoiseModel::CompoundPoissonGaussian { .. } => 3,
            NoiseModel::VarianceGamma { .. } => 3,
            NoiseModel::CgmyCfOnly { .. } => 4,
        }
    }

    /// Free parameter vector. Mixture weights enter as `w_1..w_{k-1}` with the
    /// last weight implied.
    pub fn eta(&self) -> Vec<f64> {
        match self {
            NoiseModel::GaussianIid { sigma, .. } => vec![*sigma],
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                let k = weights.len();
                let mut eta = weights[..k - 1].to_vec();
                eta.extend_from_slice(sigmas);
                eta
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => vec![*lambda, *jump_mean, *jump_std],
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => vec![*sigma, *nu, *theta],
            NoiseModel::CgmyCfOnly { c, g, m, y, .. } => vec![*c, *g, *m, *y],
        }
    }

    pub fn eta_names(&self) -> Vec<String> {
        match self {
            NoiseModel::GaussianIid { .. } => vec!["sigma".into()],
            NoiseModel::GaussianMixture { weights, .. } => {
                let k = weights.len();
                let mut names: Vec<String> = (1..k).map(|i| format!("w{i}")).collect();
                names.extend((1..=k).map(|i| format!("sigma{i}")));
                names
            }
            NoiseModel::CompoundPoissonGaussian { .. } => {
                vec!["lambda".into(), "jump_mean".into(), "jump_std".into()]
            }
            NoiseModel::VarianceGamma { .. } => {
                vec!["sigma".into(), "nu".into(), "theta".into()]
            }
            NoiseModel::CgmyCfOnly { .. } => {
                vec!["c".into(), "g".into(), "m".into(), "y".into()]
            }
        }
    }

    /// Same kind and `h`, new parameter vector.
    pub fn with_eta(&self, eta: &[f64]) -> Result<Self> {
        if eta.len() != self.eta_dim() {
            return Err(Error::Config(format!(
                "eta length {} does not match model dimension {}",
                eta.len(),
                self.eta_dim()
            )));
        }
        let h = self.h();
        match self {
            NoiseModel::GaussianIid { .. } => NoiseModel::gaussian_iid(eta[0], h),
            NoiseModel::GaussianMixture { weights, .. } => {
                let k = weights.len();
                let mut w = eta[..k - 1].to_vec();
                let last = 1.0 - w.iter().sum::<f64>();
                w.push(last);
                NoiseModel::gaussian_mixture(w, eta[k - 1..].to_vec(), h)
            }
            NoiseModel::CompoundPoissonGaussian { .. } => {
                NoiseModel::compound_poisson_gaussian(eta[0], eta[1], eta[2], h)
            }
            NoiseModel::VarianceGamma { .. } => {
                NoiseModel::variance_gamma(eta[0], eta[1], eta[2], h)
            }
            NoiseModel::CgmyCfOnly { .. } => {
                NoiseModel::cgmy_cf_only(eta[0], eta[1], eta[2], eta[3], h)
            }
        }
    }

    /// Pulls an optimizer iterate back into the open parameter domain.
    pub fn clamp_eta(&self, eta: &mut [f64]) {
        match self {
            NoiseModel::GaussianIid { .. } => eta[0] = eta[0].max(SCALE_FLOOR),
            NoiseModel::GaussianMixture { weights, .. } => {
                let k = weights.len();
                for w in eta[..k - 1].iter_mut() {
                    *w = w.clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR);
                }
                let total: f64 = eta[..k - 1].iter().sum();
                if total > 1.0 - WEIGHT_FLOOR {
                    let scale = (1.0 - WEIGHT_FLOOR) / total;
                    for w in eta[..k - 1].iter_mut() {
                        *w *= scale;
                    }
                }
                for s in eta[k - 1..].iter_mut() {
                    *s = s.max(SCALE_FLOOR);
                }
            }
            NoiseModel::CompoundPoissonGaussian { .. } => {
                eta[0] = eta[0].max(SCALE_FLOOR);
                eta[2] = eta[2].max(SCALE_FLOOR);
            }
            NoiseModel::VarianceGamma { .. } => {
                eta[0] = eta[0].max(SCALE_FLOOR);
                eta[1] = eta[1].max(SCALE_FLOOR);
            }
            NoiseModel::CgmyCfOnly { .. } => {
                eta[0] = eta[0].max(SCALE_FLOOR);
                eta[1] = eta[1].max(SCALE_FLOOR);
                eta[2] = eta[2].max(SCALE_FLOOR);
                eta[3] = eta[3].clamp(CGMY_Y_GUARD, 2.0 - CGMY_Y_GUARD);
                if (eta[3] - 1.0).abs() < CGMY_Y_GUARD {
                    eta[3] = if eta[3] >= 1.0 {
                        1.0 + 2.0 * CGMY_Y_GUARD
                    } else {
                        1.0 - 2.0 * CGMY_Y_GUARD
                    };
                }
            }
        }
    }

    /// True when a clamped iterate sits on the domain boundary (degenerate fit).
    pub fn eta_near_boundary(&self, eta: &[f64]) -> bool {
        let scales: Vec<f64> = match self {
            NoiseModel::GaussianIid { .. } => vec![eta[0]],
            NoiseModel::GaussianMixture { weights, .. } => {
                let k = weights.len();
                eta[k - 1..].to_vec()
            }
            NoiseModel::CompoundPoissonGaussian { .. } => vec![eta[0], eta[2]],
            NoiseModel::VarianceGamma { .. } => vec![eta[0], eta[1]],
            NoiseModel::CgmyCfOnly { .. } => vec![eta[0], eta[1], eta[2]],
        };
        scales.into_iter().any(|s| s <= 2.0 * SCALE_FLOOR)
    }

    /// Gradient of the characteristic function in the free parameters.
    pub fn cf_grad_eta(&self, u: f64) -> Result<Vec<Complex64>> {
        let h = self.h();
        let phi = self.cf(u);
        match self {
            NoiseModel::GaussianIid { sigma, .. } => Ok(vec![phi * (-sigma * u * u * h)]),
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                let k = weights.len();
                let comp: Vec<f64> = sigmas
                    .iter()
                    .map(|s| (-0.5 * s * s * u * u * h).exp())
                    .collect();
                let mut grad = Vec::with_capacity(2 * k - 1);
                for i in 0..k - 1 {
                    grad.push(Complex64::new(comp[i] - comp[k - 1], 0.0));
                }
                for i in 0..k {
                    grad.push(Complex64::new(-weights[i] * sigmas[i] * u * u * h * comp[i], 0.0));
                }
                Ok(grad)
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => {
                let jump_cf =
                    Complex64::new(-0.5 * jump_std * jump_std * u * u, u * jump_mean).exp();
                let iu = Complex64::new(0.0, u);
                let d_lambda = h * (jump_cf - 1.0) - iu * h * jump_mean;
                let d_mean = iu * lambda * h * (jump_cf - 1.0);
                let d_std = -lambda * h * jump_std * u * u * jump_cf;
                Ok(vec![phi * d_lambda, phi * d_mean, phi * d_std])
            }
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => {
                let d = Complex64::new(1.0 + 0.5 * sigma * sigma * nu * u * u, -u * theta * nu);
                let iu = Complex64::new(0.0, u);
                let d_sigma = -h * sigma * u * u / d;
                let d_nu = (h / (nu * nu)) * (d.ln() - (d - 1.0) / d);
                let d_theta = iu * h * (1.0 - d) / d;
                Ok(vec![phi * d_sigma, phi * d_nu, phi * d_theta])
            }
            NoiseModel::CgmyCfOnly { c, g, m, y, .. } => {
                if *y < CGMY_Y_GRAD_GUARD || (*y - 1.0).abs() < CGMY_Y_GRAD_GUARD {
                    return Err(Error::Numerical(format!(
                        "CGMY Y-gradient is unstable within {CGMY_Y_GRAD_GUARD} of the Gamma(-Y) \
                         poles at 0 and 1 (Y = {y})"
                    )));
                }
                Ok(cgmy_cf_grad(*c, *g, *m, *y, h, u, phi))
            }
        }
    }

    /// Draws `n` centered increments; deterministic for a fixed seed.
    pub fn sample_increments(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = make_rng(seed);
        let h = self.h();
        match self {
            NoiseModel::GaussianIid { sigma, .. } => {
                let normal = Normal::new(0.0, sigma * h.sqrt()).expect("validated");
                Ok((0..n).map(|_| normal.sample(&mut rng)).collect())
            }
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                let normals: Vec<Normal<f64>> = sigmas
                    .iter()
                    .map(|s| Normal::new(0.0, s * h.sqrt()).expect("validated"))
                    .collect();
                let mut cum = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w;
                    cum.push(acc);
                }
                Ok((0..n)
                    .map(|_| {
                        let v: f64 = rng.random();
                        let idx = cum.iter().position(|&c| v < c).unwrap_or(cum.len() - 1);
                        normals[idx].sample(&mut rng)
                    })
                    .collect())
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => {
                let poisson = Poisson::new(lambda * h).expect("validated");
                let jump = Normal::new(*jump_mean, *jump_std).expect("validated");
                let shift = lambda * h * jump_mean;
                Ok((0..n)
                    .map(|_| {
                        let k = poisson.sample(&mut rng) as u64;
                        let mut total = 0.0;
                        for _ in 0..k {
                            total += jump.sample(&mut rng);
                        }
                        total - shift
                    })
                    .collect())
            }
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => {
                let derived = vg_derived_params(*sigma, *nu, *theta);
                // gamma increment over h with mean mu*h, variance nu*h has
                // shape mu^2 h / nu and scale nu / mu
                let shape = h / nu;
                let pos = Gamma::new(shape, derived.mu_p * nu).expect("validated");
                let neg = Gamma::new(shape, derived.mu_n * nu).expect("validated");
                let shift = theta * h;
                Ok((0..n)
                    .map(|_| pos.sample(&mut rng) - neg.sample(&mut rng) - shift)
                    .collect())
            }
            NoiseModel::CgmyCfOnly { .. } => Err(Error::UnsupportedSampler(self.kind_name())),
        }
    }

    /// Mean (identically zero), variance and fourth absolute moment.
    pub fn moments(&self) -> Moments {
        let h = self.h();
        let (variance, kappa4) = match self {
            NoiseModel::GaussianIid { sigma, .. } => (sigma * sigma * h, 0.0),
            NoiseModel::GaussianMixture { weights, sigmas, .. } => {
                let var: f64 = weights.iter().zip(sigmas).map(|(w, s)| w * s * s * h).sum();
                let m4: f64 = weights
                    .iter()
                    .zip(sigmas)
                    .map(|(w, s)| 3.0 * w * (s * s * h) * (s * s * h))
                    .sum();
                return Moments {
                    mean: 0.0,
                    variance: var,
                    abs_moment_4: m4,
                };
            }
            NoiseModel::CompoundPoissonGaussian {
                lambda,
                jump_mean,
                jump_std,
                ..
            } => {
                let m2 = jump_mean * jump_mean + jump_std * jump_std;
                let m4 = jump_mean.powi(4)
                    + 6.0 * jump_mean * jump_mean * jump_std * jump_std
                    + 3.0 * jump_std.powi(4);
                (lambda * h * m2, lambda * h * m4)
            }
            NoiseModel::VarianceGamma { sigma, nu, theta, .. } => {
                let derived = vg_derived_params(*sigma, *nu, *theta);
                let var = h * (sigma * sigma + theta * theta * nu);
                let k4 = 6.0 * h * nu.powi(3) * (derived.mu_p.powi(4) + derived.mu_n.powi(4));
                (var, k4)
            }
            NoiseModel::CgmyCfOnly { c, g, m, y, .. } => {
                let gamma_2 = (1.0 - y) * (-y) * gamma_neg(*y);
                let gamma_4 = (3.0 - y) * (2.0 - y) * gamma_2;
                let var = h * c * gamma_2 * (m.powf(y - 2.0) + g.powf(y - 2.0));
                let k4 = h * c * gamma_4 * (m.powf(y - 4.0) + g.powf(y - 4.0));
                (var, k4)
            }
        };
        Moments {
            mean: 0.0,
            variance,
            abs_moment_4: kappa4 + 3.0 * variance * variance,
        }
    }

    /// Probability density at `x`, for the models that have one in closed form.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            NoiseModel::GaussianIid { sigma, h } => Some(normal_pdf(x, sigma * sigma * h)),
            NoiseModel::GaussianMixture { weights, sigmas, h } => Some(
                weights
                    .iter()
                    .zip(sigmas)
                    .map(|(w, s)| w * normal_pdf(x, s * s * h))
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Derivative of the density in `x`, where the density exists.
    pub fn density_deriv(&self, x: f64) -> Option<f64> {
        match self {
            NoiseModel::GaussianIid { sigma, h } => {
                let v = sigma * sigma * h;
                Some(-x / v * normal_pdf(x, v))
            }
            NoiseModel::GaussianMixture { weights, sigmas, h } => Some(
                weights
                    .iter()
                    .zip(sigmas)
                    .map(|(w, s)| {
                        let v = s * s * h;
                        -w * x / v * normal_pdf(x, v)
                    })
                    .sum(),
            ),
            _ => None,
        }
    }

    /// A crude moment-matched starting point for estimating this model's kind
    /// from a sample. Returns `None` for kinds that need an explicit guess.
    pub fn moment_matched_init(&self, samples: &[f64]) -> Option<Vec<f64>> {
        let h = self.h();
        let n = samples.len().max(1) as f64;
        let var = samples.iter().map(|x| x * x).sum::<f64>() / n;
        let std_unit = (var / h).sqrt().max(SCALE_FLOOR);
        match self {
            NoiseModel::GaussianIid { .. } => Some(vec![std_unit]),
            NoiseModel::GaussianMixture { weights, .. } => {
                let k = weights.len();
                let mut eta = vec![1.0 / k as f64; k - 1];
                for i in 0..k {
                    let spread = 0.5 * 4.0f64.powf(i as f64 / (k.max(2) - 1) as f64);
                    eta.push(std_unit * spread);
                }
                Some(eta)
            }
            NoiseModel::CompoundPoissonGaussian { .. } => Some(vec![1.0, 0.0, std_unit]),
            NoiseModel::VarianceGamma { .. } => Some(vec![std_unit, 1.0, 0.0]),
            NoiseModel::CgmyCfOnly { .. } => None,
        }
    }
}

fn normal_pdf(x: f64, variance: f64) -> f64 {
    (-0.5 * x * x / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Tempered-stable characteristic exponent
/// `C Gamma(-Y) ((M-iu)^Y - M^Y + (G+iu)^Y - G^Y)`.
fn cgmy_exponent(c: f64, g: f64, m: f64, y: f64, u: f64) -> Complex64 {
    let gn = gamma_neg(y);
    let m_term = Complex64::new(m, -u).powf(y) - m.powf(y);
    let g_term = Complex64::new(g, u).powf(y) - g.powf(y);
    c * gn * (m_term + g_term)
}

/// Mean of the raw (uncentered) CGMY increment per unit time:
/// `C Gamma(1-Y) (M^{Y-1} - G^{Y-1})`.
fn cgmy_mean_rate(c: f64, g: f64, m: f64, y: f64) -> f64 {
    let gamma_1 = -y * gamma_neg(y);
    c * gamma_1 * (m.powf(y - 1.0) - g.powf(y - 1.0))
}

fn cgmy_cf_grad(c: f64, g: f64, m: f64, y: f64, h: f64, u: f64, phi: Complex64) -> Vec<Complex64> {
    let gn = gamma_neg(y);
    let gamma_1 = -y * gn;
    let iu = Complex64::new(0.0, u);
    let mc = Complex64::new(m, -u);
    let gc = Complex64::new(g, u);
    let bracket = mc.powf(y) - m.powf(y) + gc.powf(y) - g.powf(y);
    let psi = c * gn * bracket;
    let mean = cgmy_mean_rate(c, g, m, y);

    // log phi = h psi(u) - i u h mean_rate
    let d_c = h * psi / c - iu * h * mean / c;

    let dpsi_dg = c * gn * y * (gc.powf(y - 1.0) - g.powf(y - 1.0));
    let dmean_dg = c * gamma_1 * (-(y - 1.0)) * g.powf(y - 2.0);
    let d_g = h * dpsi_dg - iu * h * dmean_dg;

    let dpsi_dm = c * gn * y * (mc.powf(y - 1.0) - m.powf(y - 1.0));
    let dmean_dm = c * gamma_1 * (y - 1.0) * m.powf(y - 2.0);
    let d_m = h * dpsi_dm - iu * h * dmean_dm;

    // d/dY Gamma(-Y) = -Gamma(-Y) digamma(-Y); d/dY Gamma(1-Y) = -Gamma(1-Y) digamma(1-Y)
    let dpsi_dy = c * gn * (-digamma_neg(y)) * bracket
        + c * gn
            * (mc.powf(y) * mc.ln() - m.powf(y) * m.ln() + gc.powf(y) * gc.ln()
                - g.powf(y) * g.ln());
    let dmean_dy = c * gamma_1 * (-digamma_one_minus(y)) * (m.powf(y - 1.0) - g.powf(y - 1.0))
        + c * gamma_1 * (m.powf(y - 1.0) * m.ln() - g.powf(y - 1.0) * g.ln());
    let d_y = h * dpsi_dy - iu * h * dmean_dy;

    vec![phi * d_c, phi * d_g, phi * d_m, phi * d_y]
}
