//! Fenton-Wilkinson approximation of the per-sensor log-normal sum.
//!
//! Each term `r_mk = P_k d_mk^-alpha 10^(n_mk/10)` is log-normal with
//! `E[r_mk^l] = (P_k d_mk^-alpha)^l * beta^(l^2)`, where
//!
//! ```text
//! beta = exp((ln 10)^2 sigma_s^2 / 200)
//! ```
//!
//! Note that `beta` is the *exponential* of `(ln 10)^2 sigma_s^2 / 200`; the
//! bare quantity does not satisfy the moment identity above (it is not even
//! 1 when `sigma_s = 0`).
//!
//! The sum over sources is replaced by a single log-normal `exp(X)`,
//! `X ~ N(mu_m, sigma_m^2)`, with matching mean and variance:
//!
//! ```text
//! E_m = beta * S1,  D_m = beta^2 (beta^2 - 1) * S2
//! S1 = sum_k P_k d_mk^-alpha,  S2 = sum_k (P_k d_mk^-alpha)^2
//! sigma_m^2 = ln(1 + D_m / E_m^2),  mu_m = ln E_m - sigma_m^2 / 2
//! ```
//!
//! All logarithms are natural.

use crate::error::{invalid, Error, Result};
use crate::mle::ParameterVector;
use crate::scenario::{distance, Point2};

/// `(ln 10)^2 / 200`, so that `ln beta = BETA_EXPONENT * sigma_s^2`.
const BETA_EXPONENT: f64 = std::f64::consts::LN_10 * std::f64::consts::LN_10 / 200.0;

/// Moment-matching constant for shadowing with standard deviation
/// `sigma_s` dB.
pub fn beta(sigma_s: f64) -> Result<f64> {
    ln_beta(sigma_s).map(f64::exp)
}

fn ln_beta(sigma_s: f64) -> Result<f64> {
    if !(sigma_s >= 0.0 && sigma_s.is_finite()) {
        return Err(invalid(format!("sigma_s must be >= 0, got {sigma_s}")));
    }
    Ok(BETA_EXPONENT * sigma_s * sigma_s)
}

/// Channel constants the approximation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwParams {
    pub beta: f64,
    pub alpha: f64,
    pub sigma_s: f64,
    ln_beta: f64,
    /// `beta^2 - 1`, computed without cancellation.
    beta2_m1: f64,
}

impl FwParams {
    pub fn new(alpha: f64, sigma_s: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("path-loss exponent must be > 0, got {alpha}")));
        }
        let ln_beta = ln_beta(sigma_s)?;
        Ok(FwParams {
            beta: ln_beta.exp(),
            alpha,
            sigma_s,
            ln_beta,
            beta2_m1: (2.0 * ln_beta).exp_m1(),
        })
    }

    pub fn ln_beta(&self) -> f64 {
        self.ln_beta
    }

    /// `beta^2 - 1`.
    pub fn excess(&self) -> f64 {
        self.beta2_m1
    }

    /// Log-normal fit from the per-sensor power sums `S1`, `S2`.
    /// Returns `(mu, sigma^2)`.
    pub(crate) fn fit_from_sums(&self, s1: f64, s2: f64) -> (f64, f64) {
        let sigma2 = (self.beta2_m1 * s2 / (s1 * s1)).ln_1p();
        let mu = self.ln_beta + s1.ln() - 0.5 * sigma2;
        (mu, sigma2)
    }
}

/// Mean and variance of the received power at one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

/// Per-sensor fitted normal parameters of `ln r_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogNormalFit {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// `(S1, S2)` at one sensor: sums of `P_k d^-alpha` and its square.
pub(crate) fn power_sums(theta: &ParameterVector, sensor: Point2, alpha: f64) -> (f64, f64) {
    (0..theta.k())
        .map(|k| {
            let g = theta.power(k) * distance(theta.position(k), sensor).powf(-alpha);
            (g, g * g)
        })
        .fold((0.0, 0.0), |(a, b), (g, g2)| (a + g, b + g2))
}

/// Mean and variance of the summed received power at every sensor.
pub fn sum_moments(theta: &ParameterVector, sensors: &[Point2], params: &FwParams) -> Vec<Moments> {
    let b2 = params.beta * params.beta;
    sensors
        .iter()
        .map(|&a| {
            let (s1, s2) = power_sums(theta, a, params.alpha);
            Moments {
                mean: params.beta * s1,
                var: b2 * params.beta2_m1 * s2,
            }
        })
        .collect()
}

/// Fits a log-normal to each sensor's received-power sum.
pub fn fit_lognormal(
    theta: &ParameterVector,
    sensors: &[Point2],
    params: &FwParams,
) -> Result<LogNormalFit> {
    if params.sigma_s == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let (mu, sigma2) = sensors
        .iter()
        .map(|&a| {
            let (s1, s2) = power_sums(theta, a, params.alpha);
            params.fit_from_sums(s1, s2)
        })
        .unzip();
    Ok(LogNormalFit { mu, sigma2 })
}
