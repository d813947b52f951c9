//! Frequency grids for characteristic-function scores.
//!
//! Estimators internally close the user grid under conjugation (every `u`
//! paired with `-u`), which is the finite-grid discretization of the
//! symmetric continuum of frequencies; all covariance formulas then equal
//! the asymptotic covariance of the implemented estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;

/// The cf magnitude below which frequencies stop being informative; the auto
/// grid spans `(0, u_max]` where `|phi(u_max)|` first drops under this.
pub const AUTO_GRID_CF_FLOOR: f64 = 0.05;

/// Default number of auto-grid points.
pub const DEFAULT_GRID_SIZE: usize = 10;

/// Strictly increasing, zero-free evaluation frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        FrequencyGrid::new(points)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(g: FrequencyGrid) -> Vec<f64> {
        g.points
    }
}

impl FrequencyGrid {
    /// Sorts the points into canonical (strictly increasing) order; rejects
    /// zeros, non-finite values, duplicates and empty input.
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("frequency grid must be non-empty".into()));
        }
        for &u in &points {
            if !u.is_finite() {
                return Err(Error::Config(format!("grid point {u} is not finite")));
            }
            if u == 0.0 {
                return Err(Error::Config("grid points must be nonzero".into()));
            }
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("grid points must be distinct".into()));
        }
        Ok(FrequencyGrid { points })
    }

    /// Equally spaced grid `u_j = j * u_max / m` where `u_max` is the first
    /// frequency at which `|cf|` drops below [`AUTO_GRID_CF_FLOOR`].
    pub fn auto(model: &NoiseModel, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("grid size must be positive".into()));
        }
        let u_max = cf_decay_frequency(model)?;
        let step = u_max / m as f64;
        FrequencyGrid::new((1..=m).map(|j| j as f64 * step).collect())
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Closure of the grid under `u -> -u`, keyed by the distinct magnitudes.
    pub fn conjugate_closed(&self) -> ClosedGrid {
        let mut abs: Vec<f64> = self.points.iter().map(|u| u.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        abs.dedup();
        ClosedGrid::from_abs_points(abs)
    }
}

/// First `u > 0` with `|cf(u)| < AUTO_GRID_CF_FLOOR`, found by doubling then
/// bisection. Compound-Poisson-type laws have an atom, so `|cf|` can plateau
/// above the floor; then the target becomes the point where the decaying part
/// has shrunk to 5% of its range above the plateau.
fn cf_decay_frequency(model: &NoiseModel) -> Result<f64> {
    let mut target = AUTO_GRID_CF_FLOOR;
    let mut hi = 1e-3;
    let mut guard = 0;
    while model.cf(hi).norm() >= target {
        hi *= 2.0;
        guard += 1;
        if guard > 40 {
            let plateau = model.cf(hi).norm();
            if plateau >= 1.0 - 1e-9 {
                return Err(Error::Numerical(
                    "characteristic function does not decay on any frequency scale".into(),
                ));
            }
            target = plateau + AUTO_GRID_CF_FLOOR * (1.0 - plateau);
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if model.cf(mid).norm() >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A conjugate-closed grid laid out as `[+a_1..+a_K, -a_1..-a_K]` with the
/// magnitudes `a_k` ascending. Score vectors, C matrices and psi vectors built
/// on this layout have exact conjugate structure between the two halves.
#[derive(Debug, Clone)]
pub struct ClosedGrid {
    abs_points: Vec<f64>,
    /// Set when the magnitudes form a uniform ladder `a_k = k * step`, which
    /// enables the recurrence kernel for `exp(i a_k x)`.
    uniform_step: Option<f64>,
}

impl ClosedGrid {
    fn from_abs_points(abs_points: Vec<f64>) -> Self {
        let step = abs_points[0];
        let uniform = step > 0.0
            && abs_points
                .iter()
                .enumerate()
                .all(|(k, &a)| (a - (k + 1) as f64 * step).abs() <= 1e-9 * a.abs());
        ClosedGrid {
            abs_points,
            uniform_step: if uniform { Some(step) } else { None },
        }
    }

    /// Number of distinct magnitudes `K`; the closed grid has `2K` points.
    pub fn half_len(&self) -> usize {
        self.abs_points.len()
    }

    pub fn len(&self) -> usize {
        2 * self.abs_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_points.is_empty()
    }

    pub fn abs_points(&self) -> &[f64] {
        &self.abs_points
    }

    /// Signed frequency at layout index `k` in `0..2K`.
    pub fn signed(&self, k: usize) -> f64 {
        let half = self.abs_points.len();
        if k < half {
            self.abs_points[k]
        } else {
            -self.abs_points[k - half]
        }
    }

    pub fn signed_points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.signed(k)).collect()
    }

    /// Evaluates `e^{i a_k x}` for all magnitudes `a_k`, appending into `out`.
    /// Uses the power recurrence on uniform ladders, `sin_cos` otherwise.
    #[inline]
    pub fn cis_ladder(&self, x: f64, out: &mut [num_complex::Complex64]) {
        debug_assert_eq!(out.len(), self.abs_points.len());
        match self.uniform_step {
            Some(step) => {
                let (s, c) = (step * x).sin_cos();
                let w = num_complex::Complex64::new(c, s);
                let mut acc = w;
                out[0] = acc;
                for slot in out.iter_mut().skip(1) {
                    acc *= w;
                    *slot = acc;
                }
            }
            None => {
                for (slot, &a) in out.iter_mut().zip(&self.abs_points) {
                    let (s, c) = (a * x).sin_cos();
                    *slot = num_complex::Complex64::new(c, s);
                }
            }
        }
    }
}
