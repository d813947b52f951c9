//! Acceptance suite: every closed-form asymptotic claim the library makes is
//! verified here, by construction oracles or by seeded Monte Carlo at desk
//! scale. Each test prints one PASS line with the measured numbers.

use std::sync::LazyLock;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use levy_sysid::config::ExperimentConfig;
use levy_sysid::ecf_iid::{avar_eta_optimal, c_matrix, ecf_iid_estimate, EcfOptions};
use levy_sysid::ecf_system::{kappa_on_grid, kronecker_weight, stage3_cost_grad};
use levy_sysid::grid::FrequencyGrid;
use levy_sysid::monte_carlo::{run_monte_carlo, McReport};
use levy_sysid::noise::NoiseModel;
use levy_sysid::numeric::{
    cholesky_hermitian, hermitian_min_eig, ridge_regularize, spd_inverse, symmetric_min_eig,
    C_RIDGE_TAU,
};
use levy_sysid::pe::{pe_cost, pe_estimate, PeOptions};
use levy_sysid::pipeline::run_stages;
use levy_sysid::rng::{derive_seed, make_rng};
use levy_sysid::system::{innovations, simulate, SensitivityOrder, SystemParams};

fn mixture() -> NoiseModel {
    NoiseModel::gaussian_mixture(vec![0.9, 0.1], vec![0.1, 3.0], 1.0).unwrap()
}

fn sampled_models() -> Vec<NoiseModel> {
    vec![
        NoiseModel::gaussian_iid(1.0, 1.0).unwrap(),
        mixture(),
        NoiseModel::compound_poisson_gaussian(2.0, 0.3, 1.0, 1.0).unwrap(),
        NoiseModel::variance_gamma(1.0, 1.0, 0.5, 1.0).unwrap(),
    ]
}

fn load_benchmark(name: &str) -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).expect("benchmark config parses")
}

/// Shared mixture-benchmark Monte Carlo (criteria 6 and 7 and the
/// uncorrelatedness invariant read from the same run).
static MIXTURE_MC: LazyLock<McReport> = LazyLock::new(|| {
    let mut config = load_benchmark("mixture_arma11.json");
    config.replications = 500;
    run_monte_carlo(&config, None).expect("mixture benchmark runs")
});

/// Shared Gaussian-benchmark Monte Carlo (criterion 7's efficiency ratio).
static GAUSSIAN_MC: LazyLock<McReport> = LazyLock::new(|| {
    let mut config = load_benchmark("gaussian_arma11.json");
    config.replications = 300;
    run_monte_carlo(&config, None).expect("gaussian benchmark runs")
});

/// Builds a random stable/inverse-stable system from roots drawn inside the
/// disk of radius 0.85 (complex ones paired into real quadratic factors).
fn random_stable_system(rng: &mut impl Rng, max_order: usize) -> SystemParams {
    fn build(rng: &mut impl Rng, max_order: usize) -> Vec<f64> {
        let order = rng.random_range(0..=max_order);
        let mut coeffs = vec![1.0f64];
        let mut remaining = order;
        while remaining > 0 {
            if remaining >= 2 && rng.random::<f64>() < 0.4 {
                let radius = 0.15 + 0.7 * rng.random::<f64>();
                let angle = std::f64::consts::PI * rng.random::<f64>();
                let re = radius * angle.cos();
                let r2 = radius * radius;
                let mut next = vec![0.0; coeffs.len() + 2];
                for (i, &c) in coeffs.iter().enumerate() {
                    next[i] += c;
                    next[i + 1] += c * (-2.0 * re);
                    next[i + 2] += c * r2;
                }
                coeffs = next;
                remaining -= 2;
            } else {
                let root = 1.7 * rng.random::<f64>() - 0.85;
                let mut next = vec![0.0; coeffs.len() + 1];
                for (i, &c) in coeffs.iter().enumerate() {
                    next[i] += c;
                    next[i + 1] += c * (-root);
                }
                coeffs = next;
                remaining -= 1;
            }
        }
        coeffs[1..].to_vec()
    }
    SystemParams::new(build(rng, max_order), build(rng, max_order))
}

#[test]
fn criterion_1_cf_matches_sampled_increments() {
    for model in sampled_models() {
        let start = Instant::now();
        let grid = FrequencyGrid::auto(&model, 10).unwrap();
        let samples = model.sample_increments(100_000, 1).unwrap();
        let n = samples.len() as f64;
        let mut worst: f64 = 0.0;
        for &u in grid.points() {
            let mut acc = Complex64::default();
            for &x in &samples {
                let (s, c) = (u * x).sin_cos();
                acc += Complex64::new(c, s);
            }
            worst = worst.max((acc / n - model.cf(u)).norm());
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(
            worst < 0.02,
            "{}: empirical cf deviates by {worst}",
            model.kind_name()
        );
        assert!(elapsed < 5.0, "{}: took {elapsed:.2}s", model.kind_name());
        println!(
            "PASS criterion 1 [{}]: max |ecf - cf| = {worst:.5} (< 0.02), {elapsed:.2}s",
            model.kind_name()
        );
    }
}

#[test]
fn criterion_2_inverse_filter_identity() {
    let mut rng = make_rng(33);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 50 {
        let sys = random_stable_system(&mut rng, 3);
        if !sys.is_stable(0.05) {
            continue;
        }
        checked += 1;
        let z: Vec<f64> = (0..600).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let dy = simulate(&sys, &z).unwrap();
        let eps = innovations(&sys, &dy, SensitivityOrder::Value).unwrap().eps;
        for t in 0..z.len() {
            worst = worst.max((eps[t] - z[t]).abs());
        }
    }
    // exact round trip up to f64 rounding of the two mirrored recursions
    assert!(worst < 1e-9, "round trip error {worst}");
    println!("PASS criterion 2: 50 systems, max |innovations(simulate(z)) - z| = {worst:.2e}");
}

#[test]
fn criterion_3_gradient_suite() {
    let mut rng = make_rng(34);

    // innovation sensitivities against central differences
    let mut worst_eps: f64 = 0.0;
    for _ in 0..20 {
        let sys = loop {
            let s = random_stable_system(&mut rng, 2);
            if s.dim() > 0 && s.is_stable(0.05) {
                break s;
            }
        };
        let dy: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let bundle = innovations(&sys, &dy, SensitivityOrder::Gradient).unwrap();
        let grad = bundle.eps_grad.unwrap();
        let (pa, pc) = sys.orders();
        let theta = sys.theta();
        let scale = grad.amax().max(1.0);
        for k in 0..sys.dim() {
            let step = 1e-6;
            let mut tp = theta.clone();
            tp[k] += step;
            let mut tm = theta.clone();
            tm[k] -= step;
            let ep = innovations(&SystemParams::from_theta(pa, pc, &tp), &dy, SensitivityOrder::Value)
                .unwrap()
                .eps;
            let em = innovations(&SystemParams::from_theta(pa, pc, &tm), &dy, SensitivityOrder::Value)
                .unwrap()
                .eps;
            for t in 0..dy.len() {
                let fd = (ep[t] - em[t]) / (2.0 * step);
                worst_eps = worst_eps.max((grad[(t, k)] - fd).abs() / scale);
            }
        }
    }
    assert!(worst_eps < 1e-4, "eps gradient relative error {worst_eps}");

    // prediction-error cost gradient
    let mut worst_pe: f64 = 0.0;
    for _ in 0..20 {
        let sys = loop {
            let s = random_stable_system(&mut rng, 2);
            if s.dim() > 0 && s.is_stable(0.05) {
                break s;
            }
        };
        let truth = SystemParams::new(vec![-0.4], vec![0.2]);
        let noise = NoiseModel::gaussian_iid(1.0, 1.0).unwrap();
        let z = noise
            .sample_increments(600, rng.random::<u64>())
            .unwrap();
        let dy = simulate(&truth, &z).unwrap();
        let (_, grad) = pe_cost(&sys, &dy, 50).unwrap();
        let theta = sys.theta();
        let (pa, pc) = sys.orders();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-8);
        for k in 0..sys.dim() {
            let step = 1e-6;
            let mut tp = theta.clone();
            tp[k] += step;
            let mut tm = theta.clone();
            tm[k] -= step;
            let (vp, _) = pe_cost(&SystemParams::from_theta(pa, pc, &tp), &dy, 50).unwrap();
            let (vm, _) = pe_cost(&SystemParams::from_theta(pa, pc, &tm), &dy, 50).unwrap();
            let fd = (vp - vm) / (2.0 * step);
            worst_pe = worst_pe.max((grad[k] - fd).abs() / gnorm);
        }
    }
    assert!(worst_pe < 1e-4, "pe gradient relative error {worst_pe}");

    // characteristic-function eta-gradients
    let models = {
        let mut m = sampled_models();
        m.push(NoiseModel::cgmy_cf_only(1.0, 5.0, 8.0, 0.5, 1.0).unwrap());
        m
    };
    let mut worst_cf: f64 = 0.0;
    for model in &models {
        let eta = model.eta();
        for _ in 0..20 {
            let u: f64 = (rng.random::<f64>() - 0.5) * 6.0;
            let grad = model.cf_grad_eta(u).unwrap();
            let scale = grad.iter().map(|g| g.norm()).fold(1.0f64, f64::max);
            for k in 0..eta.len() {
                let step = 1e-6 * (1.0 + eta[k].abs());
                let mut ep = eta.clone();
                ep[k] += step;
                let mut em = eta.clone();
                em[k] -= step;
                let fd = (model.with_eta(&ep).unwrap().cf(u)
                    - model.with_eta(&em).unwrap().cf(u))
                    / (2.0 * step);
                worst_cf = worst_cf.max((grad[k] - fd).norm() / scale);
            }
        }
    }
    assert!(worst_cf < 1e-4, "cf gradient relative error {worst_cf}");

    // stage-3 score-cost gradient (exact Jacobian including the hessian term)
    let noise = mixture();
    let grid = FrequencyGrid::new(vec![1.0, 3.0, 8.0, 16.0]).unwrap();
    let mut worst_s3: f64 = 0.0;
    for rep in 0..20 {
        let truth = SystemParams::new(vec![-0.5], vec![0.3]);
        let z = noise.sample_increments(2500, 900 + rep).unwrap();
        let dy = simulate(&truth, &z).unwrap();
        let sys = SystemParams::new(
            vec![-0.5 + 0.1 * (rng.random::<f64>() - 0.5)],
            vec![0.3 + 0.1 * (rng.random::<f64>() - 0.5)],
        );
        let r_p = DMatrix::from_row_slice(2, 2, &[1.2, -0.8, -0.8, 1.1]);
        let (_, grad) = stage3_cost_grad(&dy, &sys, &noise, &grid, &r_p, 100).unwrap();
        let theta = sys.theta();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
        for k in 0..2 {
            let step = 1e-6;
            let mut tp = theta.clone();
            tp[k] += step;
            let mut tm = theta.clone();
            tm[k] -= step;
            let (vp, _) = stage3_cost_grad(
                &dy,
                &SystemParams::from_theta(1, 1, &tp),
                &noise,
                &grid,
                &r_p,
                100,
            )
            .unwrap();
            let (vm, _) = stage3_cost_grad(
                &dy,
                &SystemParams::from_theta(1, 1, &tm),
                &noise,
                &grid,
                &r_p,
                100,
            )
            .unwrap();
            let fd = (vp - vm) / (2.0 * step);
            worst_s3 = worst_s3.max((grad[k] - fd).abs() / gnorm);
        }
    }
    assert!(worst_s3 < 1e-4, "stage-3 gradient relative error {worst_s3}");

    println!(
        "PASS criterion 3: max relative FD error: eps_grad {worst_eps:.2e}, pe {worst_pe:.2e}, \
         cf {worst_cf:.2e}, stage3 {worst_s3:.2e} (all < 1e-4)"
    );
}

#[test]
fn criterion_4_sigma_p_for_ar1() {
    // Sigma_P = sigma^2 (E[eps_theta^2])^-1 = 1 - a^2 = 0.75 for a = -0.5
    let start = Instant::now();
    let truth = SystemParams::new(vec![-0.5], vec![]);
    let noise = NoiseModel::gaussian_iid(1.0, 1.0).unwrap();
    let n = 20_000;
    let estimates: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let z = noise
                .sample_increments(n, derive_seed(4001, rep))
                .unwrap();
            let dy = simulate(&truth, &z).unwrap();
            let fit = pe_estimate(&dy, (1, 0), &PeOptions::default()).unwrap();
            fit.theta_hat.ar[0]
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
        / (estimates.len() - 1) as f64;
    let scaled = n as f64 * var;
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        (scaled - 0.75).abs() < 0.25 * 0.75,
        "N var(a) = {scaled}, expected 0.75 within 25%"
    );
    assert!(elapsed < 120.0, "criterion 4 took {elapsed:.1}s");
    println!(
        "PASS criterion 4: N var(a_hat) = {scaled:.4} vs Sigma_P = 0.75 (ratio {:.3}), {elapsed:.1}s",
        scaled / 0.75
    );
}

#[test]
fn criterion_5_iid_ecf_covariance() {
    let start = Instant::now();
    let model = mixture();
    let truth = model.eta();
    // two-scale grid: low frequencies see the wide component, high ones the spike
    let grid = FrequencyGrid::new(vec![0.2, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0]).unwrap();
    let n = 50_000;
    let rows: Vec<Vec<f64>> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let samples = model
                .sample_increments(n, derive_seed(5001, rep))
                .unwrap();
            ecf_iid_estimate(&samples, &grid, &model, &truth, &EcfOptions::default())
                .unwrap()
                .eta_hat
        })
        .collect();
    let theory = avar_eta_optimal(&model, &grid).unwrap();
    let dim = truth.len();
    let mut mean = vec![0.0; dim];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    let mut ratios = vec![];
    for k in 0..dim {
        let var = rows
            .iter()
            .map(|r| (r[k] - mean[k]) * (r[k] - mean[k]))
            .sum::<f64>()
            / (rows.len() - 1) as f64;
        let ratio = n as f64 * var / theory[(k, k)];
        ratios.push(ratio);
        assert!(
            (ratio - 1.0).abs() < 0.25,
            "eta[{k}]: N var = {}, theory = {}, ratio {ratio}",
            n as f64 * var,
            theory[(k, k)]
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 5 took {elapsed:.1}s");
    println!(
        "PASS criterion 5: N cov(eta) / (G*C^-1G)^-1 diagonals = {ratios:?} (within 25%), {elapsed:.1}s"
    );
}

#[test]
fn criterion_6_stage3_covariance_theorem() {
    let report = &*MIXTURE_MC;
    assert!(report.n_success >= 450, "too many failures: {}", report.n_success);
    let ratios = &report.ratios.stage3_vs_avar_stage3;
    for (k, ratio) in ratios.iter().enumerate() {
        assert!(
            (ratio - 1.0).abs() < 0.25,
            "stage-3 covariance ratio[{k}] = {ratio} outside 25%"
        );
    }
    println!(
        "PASS criterion 6: N cov(theta_hat2) / kappa^-1 (R_P*)^-1 diagonals = {ratios:?} (within 25%)"
    );
}

#[test]
fn criterion_7_efficiency_ordering() {
    // mixture: kappa on the dense benchmark grid approaches mu from below
    let report = &*MIXTURE_MC;
    let kappa = report.theoretical.kappa;
    let mu = report.theoretical.mu.expect("mixture has a density");
    assert!(kappa <= mu * (1.0 + 1e-9), "kappa {kappa} exceeds mu {mu}");
    assert!(kappa >= 0.8 * mu, "kappa {kappa} below 0.8 mu = {}", 0.8 * mu);
    // stage 3 beats prediction error by far more than the required factor 2
    for (k, ratio) in report.ratios.stage3_vs_pe_empirical.iter().enumerate() {
        assert!(
            *ratio < 0.5,
            "stage3/pe empirical variance ratio[{k}] = {ratio} not < 0.5"
        );
    }
    // Gaussian noise: prediction error is already efficient, ratio stays near 1
    let gauss = &*GAUSSIAN_MC;
    for (k, ratio) in gauss.ratios.stage3_vs_pe_empirical.iter().enumerate() {
        assert!(
            (0.85..=1.15).contains(ratio),
            "gaussian stage3/pe ratio[{k}] = {ratio} outside [0.85, 1.15]"
        );
    }
    let kappa_g = gauss.theoretical.kappa;
    let sigma2_g = gauss.theoretical.sigma2;
    assert!(
        kappa_g * sigma2_g >= 0.9 && kappa_g * sigma2_g <= 1.0 + 1e-9,
        "gaussian kappa sigma^2 = {}",
        kappa_g * sigma2_g
    );
    println!(
        "PASS criterion 7: mixture kappa/mu = {:.4} in [0.8, 1], stage3/pe = {:?} (< 0.5); \
         gaussian stage3/pe = {:?} in [0.85, 1.15], kappa sigma^2 = {:.4}",
        kappa / mu,
        report.ratios.stage3_vs_pe_empirical,
        gauss.ratios.stage3_vs_pe_empirical,
        kappa_g * sigma2_g
    );
}

#[test]
fn criterion_8_rate_surrogates() {
    // median errors halve (within 30%) when N quadruples, for all three stages
    let config = load_benchmark("gaussian_arma11.json");
    let model = config.noise.to_model().unwrap();
    let grid = FrequencyGrid::auto(&model, 10).unwrap();
    let truth_theta = config.system.theta();
    let truth_eta = model.eta();
    let sizes = [4_000usize, 16_000, 64_000];
    let mut medians_pe = vec![];
    let mut medians_eta = vec![];
    let mut medians_s3 = vec![];
    for (si, &n) in sizes.iter().enumerate() {
        let errs: Vec<(f64, f64, f64)> = (0..100u64)
            .into_par_iter()
            .map(|rep| {
                let mut cfg = config.clone();
                cfg.n_samples = n;
                cfg.estimator.burn_in = 500.min(n / 10);
                let z = model
                    .sample_increments(n, derive_seed(8000 + si as u64, rep))
                    .unwrap();
                let dy = simulate(&cfg.system, &z).unwrap();
                let out = run_stages(&cfg, &model, &grid, &dy).unwrap();
                let norm = |a: &[f64], b: &[f64]| -> f64 {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                };
                (
                    norm(&out.pe.theta_hat.theta(), &truth_theta),
                    norm(&out.ecf.eta_hat, &truth_eta),
                    norm(&out.stage3.theta_hat2.theta(), &truth_theta),
                )
            })
            .collect();
        let median = |mut v: Vec<f64>| -> f64 {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        medians_pe.push(median(errs.iter().map(|e| e.0).collect()));
        medians_eta.push(median(errs.iter().map(|e| e.1).collect()));
        medians_s3.push(median(errs.iter().map(|e| e.2).collect()));
    }
    let check = |name: &str, m: &[f64]| {
        for w in m.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.4..=2.6).contains(&ratio),
                "{name}: medians {m:?}, ratio {ratio} outside [1.4, 2.6]"
            );
        }
    };
    check("pe", &medians_pe);
    check("eta", &medians_eta);
    check("stage3", &medians_s3);
    println!(
        "PASS criterion 8: median-error ratios across N=4k/16k/64k: pe {medians_pe:?}, \
         eta {medians_eta:?}, stage3 {medians_s3:?} (all halving within 30%)"
    );
}

#[test]
fn criterion_9_kronecker_algebra_and_psd() {
    // factorwise inverse equals dense inverse for M, p <= 4
    let mut rng = make_rng(99);
    let model = NoiseModel::variance_gamma(1.0, 0.8, 0.3, 1.0).unwrap();
    for m in 1..=4usize {
        for p in 1..=4usize {
            let pts: Vec<f64> = (1..=m).map(|k| k as f64 * (0.4 + rng.random::<f64>())).collect();
            let grid = FrequencyGrid::new(pts).unwrap();
            let c = ridge_regularize(&c_matrix(&model, &grid), C_RIDGE_TAU);
            let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
            let r = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
            let k = kronecker_weight(&c, &r).unwrap();
            let dense_inv = k.clone().try_inverse().expect("K invertible");
            let c_inv = cholesky_hermitian(c, "c").unwrap().inverse();
            let r_inv = spd_inverse(&r, "r").unwrap();
            let factor_inv = kronecker_weight(&c_inv, &r_inv).unwrap();
            let diff = (&dense_inv - &factor_inv).map(|z| z.norm()).max();
            assert!(diff < 1e-8, "M={m} p={p}: factorwise inverse off by {diff}");
        }
    }
    // C matrices stay Hermitian PSD on 100 random grids
    let models = sampled_models();
    let mut worst_min_eig = f64::INFINITY;
    for trial in 0..100 {
        let model = &models[trial % models.len()];
        let count = 2 + (trial % 5);
        let pts: Vec<f64> = (0..count)
            .map(|_| {
                let mut u = (rng.random::<f64>() - 0.5) * 12.0;
                if u.abs() < 1e-3 {
                    u += 0.5;
                }
                u
            })
            .collect();
        let grid = match FrequencyGrid::new(pts) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let c = c_matrix(model, &grid);
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                assert!((c[(i, j)] - c[(j, i)].conj()).norm() < 1e-12);
            }
        }
        worst_min_eig = worst_min_eig.min(hermitian_min_eig(&c));
    }
    assert!(
        worst_min_eig > -1e-10,
        "C matrix min eigenvalue {worst_min_eig}"
    );
    println!(
        "PASS criterion 9: Kronecker factorwise inverse within 1e-8 for M,p <= 4; \
         min C eigenvalue over 100 grids = {worst_min_eig:.2e} (> -1e-10)"
    );
}

#[test]
fn criterion_10_determinism_across_thread_counts() {
    let mut config = load_benchmark("mixture_arma11.json");
    config.n_samples = 6_000;
    config.replications = 40;
    config.estimator.burn_in = 300;
    config.grid = levy_sysid::config::GridSpec::Auto { m: 10 };
    let mut one = run_monte_carlo(&config, Some(1)).unwrap();
    let mut eight = run_monte_carlo(&config, Some(8)).unwrap();
    one.wall_clock = None;
    eight.wall_clock = None;
    let a = serde_json::to_string(&one).unwrap();
    let b = serde_json::to_string(&eight).unwrap();
    assert_eq!(a, b, "reports differ between 1 and 8 worker threads");
    println!(
        "PASS criterion 10: identical {}-replication reports at 1 and 8 threads ({} bytes)",
        one.n_total,
        a.len()
    );
}

#[test]
fn invariant_eta_theta_asymptotically_uncorrelated() {
    let report = &*MIXTURE_MC;
    let truth_eta = [0.9, 0.1, 3.0];
    let truth_theta = [-0.5, 0.3];
    let n = report.config.n_samples as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = report
        .replications
        .iter()
        .map(|r| {
            (
                r.eta
                    .iter()
                    .zip(truth_eta)
                    .map(|(e, t)| n.sqrt() * (e - t))
                    .collect(),
                r.theta_s3
                    .iter()
                    .zip(truth_theta)
                    .map(|(e, t)| n.sqrt() * (e - t))
                    .collect(),
            )
        })
        .collect();
    let count = rows.len() as f64;
    let mean = |sel: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| -> f64 {
        rows.iter().map(sel).sum::<f64>() / count
    };
    for i in 0..3 {
        for j in 0..2 {
            let me = mean(&|r| r.0[i]);
            let mt = mean(&|r| r.1[j]);
            let cov = rows
                .iter()
                .map(|r| (r.0[i] - me) * (r.1[j] - mt))
                .sum::<f64>()
                / (count - 1.0);
            let ve = rows.iter().map(|r| (r.0[i] - me).powi(2)).sum::<f64>() / (count - 1.0);
            let vt = rows.iter().map(|r| (r.1[j] - mt).powi(2)).sum::<f64>() / (count - 1.0);
            let corr = cov / (ve * vt).sqrt();
            assert!(
                corr.abs() < 0.1,
                "corr(sqrtN eta[{i}], sqrtN theta[{j}]) = {corr}"
            );
        }
    }
    println!("PASS invariant: sqrt-N eta and stage-3 theta errors uncorrelated (|corr| < 0.1)");
}

#[test]
fn invariant_theorem5_error_representation() {
    // the normalized estimation error tracks -(R*)^-1 V_theta(theta*, eta*)
    // across replications; kappa and constant factors drop out of a correlation
    let noise = mixture();
    let truth = SystemParams::new(vec![-0.5], vec![0.3]);
    let n = 20_000;
    let grid = FrequencyGrid::new((1..=10).map(|k| k as f64 * 2.0).collect()).unwrap();
    let config = ExperimentConfig::from_json(
        r#"{
        "system": {"ar": [-0.5], "ma": [0.3]},
        "noise": {"kind": "gaussian_mixture", "params": {"weights": [0.9, 0.1], "sigmas": [0.1, 3.0]}, "h": 1.0},
        "n_samples": 20000,
        "seed": 77,
        "grid": {"mode": "points", "points": [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0]},
        "estimator": {"init_eta": [0.9, 0.1, 3.0]}
    }"#,
    )
    .unwrap();
    // population R_P from one long record at the truth
    let z_ref = noise.sample_increments(400_000, 424_242).unwrap();
    let dy_ref = simulate(&truth, &z_ref).unwrap();
    let bundle = innovations(&truth, &dy_ref, SensitivityOrder::Gradient).unwrap();
    let g = bundle.eps_grad.as_ref().unwrap();
    let mut r_p = DMatrix::<f64>::zeros(2, 2);
    for t in 500..dy_ref.len() {
        for i in 0..2 {
            for j in 0..2 {
                r_p[(i, j)] += g[(t, i)] * g[(t, j)];
            }
        }
    }
    r_p /= (dy_ref.len() - 500) as f64;
    let r_p_inv = spd_inverse(&r_p, "r_p").unwrap();

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let z = noise.sample_increments(n, derive_seed(555, rep)).unwrap();
            let dy = simulate(&truth, &z).unwrap();
            let out = run_stages(&config, &noise, &grid, &dy).unwrap();
            let err: Vec<f64> = out
                .stage3
                .theta_hat2
                .theta()
                .iter()
                .zip(truth.theta())
                .map(|(a, b)| a - b)
                .collect();
            let (_, grad) = stage3_cost_grad(&dy, &truth, &noise, &grid, &r_p, 500).unwrap();
            let gvec = nalgebra::DVector::from_vec(grad);
            let predict = -(&r_p_inv * gvec);
            (err, predict.iter().copied().collect())
        })
        .collect();
    for comp in 0..2 {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0[comp]).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1[comp]).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(
            corr > 0.9,
            "component {comp}: correlation {corr} not above 0.9"
        );
        println!(
            "PASS invariant theorem-5 representation: component {comp} correlation = {corr:.4}"
        );
    }
}

#[test]
fn invariant_ordering_chain_at_dense_grids() {
    // mixture at the dense benchmark grid: Sigma_ML <= avar_stage3 <= Sigma_P
    let report = &*MIXTURE_MC;
    let avar3 = report.theoretical.avar_stage3.to_matrix();
    let sigma_p = report.theoretical.sigma_p.to_matrix();
    let sigma_ml = report
        .theoretical
        .sigma_ml
        .as_ref()
        .expect("mixture has a density")
        .to_matrix();
    let scale = sigma_p.amax();
    let upper = symmetric_min_eig(&(&sigma_p - &avar3)) / scale;
    let lower = symmetric_min_eig(&(&avar3 - &sigma_ml)) / scale;
    assert!(upper > -1e-6, "avar_stage3 exceeds Sigma_P: {upper}");
    assert!(lower > -1e-6, "avar_stage3 under Sigma_ML: {lower}");
    // Gaussian: the chain collapses; kappa sits inside the spec's band
    let gauss = &*GAUSSIAN_MC;
    let kappa = gauss.theoretical.kappa;
    let mu = gauss.theoretical.mu.unwrap();
    assert!(kappa <= mu * (1.0 + 1e-6));
    assert!(kappa * gauss.theoretical.sigma2 >= 0.9);
    println!(
        "PASS invariant ordering chain: min-eig margins upper {upper:.2e}, lower {lower:.2e} \
         (mixture); gaussian kappa/mu = {:.6}",
        kappa / mu
    );
}

#[test]
fn invariant_kappa_grid_monotonicity() {
    let model = mixture();
    let curve =
        levy_sysid::ecf_system::continuum_limit_kappa(&model, &[5, 10, 20, 40, 80]).unwrap();
    assert!(curve.conditioning_ok);
    for w in curve.kappas.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "kappa not monotone: {:?}", curve.kappas);
    }
    let mu = levy_sysid::ecf_system::fisher_location(&model).unwrap();
    let last = *curve.kappas.last().unwrap();
    assert!(last <= mu * (1.0 + 1e-9) && last >= 0.99 * mu);
    // psi* C^-1 psi stays real on every refinement
    for m in [5usize, 10, 20, 40, 80] {
        let grid = FrequencyGrid::auto(&model, m).unwrap();
        let k = kappa_on_grid(&model, &grid).unwrap();
        assert!(k.is_finite() && k > 0.0);
    }
    println!(
        "PASS invariant kappa monotone: {:?} -> mu = {mu:.4}",
        curve.kappas
    );
}
