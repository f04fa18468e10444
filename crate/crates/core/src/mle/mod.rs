//! Maximum-likelihood refinement of source positions and powers.
//!
//! With the log-normal fit `(mu_m, sigma_m^2)` of every sensor's received
//! power, the negative log-likelihood (up to constants and a factor 1/2) of
//! the observations `r_hat` is
//!
//! ```text
//! f(theta) = sum_m [ ln sigma_m^2 + (ln r_hat_m - mu_m)^2 / sigma_m^2 ]
//! ```
//!
//! minimized over `0 <= u_k <= l`, `0 <= v_k <= w`, `P_low <= P_k <= P_high`
//! by gradient projection (see [`gp`]).

pub mod gp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::RssObservation;
use crate::error::{invalid, Error, Result};
use crate::fw::FwParams;
use crate::scenario::{Point2, Roi, Source, D_MIN};

pub use gp::{GpOptions, GpReport, Multiplier, Side};

/// Stacked source parameters `(u_1..u_K, v_1..v_K, P_1..P_K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(theta: Vec<f64>) -> Result<Self> {
        Self::from_vec(theta)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(theta: ParameterVector) -> Self {
        theta.0
    }
}

impl ParameterVector {
    /// Wraps a raw stacked vector; its length must be a multiple of 3.
    pub fn from_vec(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || !theta.len().is_multiple_of(3) {
            return Err(invalid(format!(
                "parameter vector length must be a positive multiple of 3, got {}",
                theta.len()
            )));
        }
        Ok(ParameterVector(theta))
    }

    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Self {
        let k = triples.len();
        let mut theta = vec![0.0; 3 * k];
        for (i, &(u, v, p)) in triples.iter().enumerate() {
            theta[i] = u;
            theta[k + i] = v;
            theta[2 * k + i] = p;
        }
        ParameterVector(theta)
    }

    pub fn from_sources(sources: &[Source]) -> Self {
        let triples: Vec<_> = sources
            .iter()
            .map(|s| (s.position.u, s.position.v, s.power))
            .collect();
        Self::from_triples(&triples)
    }

    pub fn k(&self) -> usize {
        self.0.len() / 3
    }

    pub fn position(&self, k: usize) -> Point2 {
        Point2::new(self.0[k], self.0[self.k() + k])
    }

    pub fn power(&self, k: usize) -> f64 {
        self.0[2 * self.k() + k]
    }

    pub fn set_power(&mut self, k: usize, p: f64) {
        let kk = self.k();
        self.0[2 * kk + k] = p;
    }

    pub fn set_position(&mut self, k: usize, p: Point2) {
        let kk = self.k();
        self.0[k] = p.u;
        self.0[kk + k] = p.v;
    }

    pub fn sources(&self) -> Vec<Source> {
        (0..self.k())
            .map(|k| Source {
                position: self.position(k),
                power: self.power(k),
            })
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The constraint system `A x >= b` with `A = (I; -I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl BoxConstraints {
    pub fn new(k: usize, roi: Roi, p_low: f64, p_high: f64) -> Self {
        let n = 3 * k;
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(i, i)] = 1.0;
            a[(n + i, i)] = -1.0;
        }
        let (lower, upper) = bounds(k, roi, p_low, p_high);
        let b = DVector::from_iterator(
            2 * n,
            lower.iter().copied().chain(upper.iter().map(|u| -u)),
        );
        BoxConstraints { a, b }
    }

    pub fn is_satisfied(&self, x: &[f64]) -> bool {
        let ax = &self.a * DVector::from_column_slice(x);
        ax.iter().zip(self.b.iter()).all(|(l, r)| l >= r)
    }

    /// Indices of rows holding with equality at `x`.
    pub fn active_rows(&self, x: &[f64]) -> Vec<usize> {
        let ax = &self.a * DVector::from_column_slice(x);
        (0..self.b.len()).filter(|&j| ax[j] == self.b[j]).collect()
    }
}

fn bounds(k: usize, roi: Roi, p_low: f64, p_high: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![0.0; 3 * k];
    let mut upper = vec![0.0; 3 * k];
    for i in 0..k {
        upper[i] = roi.l;
        upper[k + i] = roi.w;
        lower[2 * k + i] = p_low;
        upper[2 * k + i] = p_high;
    }
    (lower, upper)
}

/// Everything the likelihood depends on besides `theta`.
#[derive(Debug, Clone)]
pub struct MleProblem<'a> {
    pub sensors: &'a [Point2],
    /// `ln r_hat_m`.
    log_rss: Vec<f64>,
    pub params: FwParams,
    pub roi: Roi,
    pub p_low: f64,
    pub p_high: f64,
}

impl<'a> MleProblem<'a> {
    pub fn new(
        sensors: &'a [Point2],
        r_hat: &RssObservation,
        params: FwParams,
        roi: Roi,
        p_low: f64,
        p_high: f64,
    ) -> Result<Self> {
        if params.sigma_s == 0.0 {
            return Err(Error::DegenerateVariance);
        }
        let log_rss = log_observations(sensors, r_hat)?;
        if !(p_low > 0.0 && p_low <= p_high) {
            return Err(invalid("power bounds must satisfy 0 < p_low <= p_high"));
        }
        roi.validate()?;
        Ok(MleProblem {
            sensors,
            log_rss,
            params,
            roi,
            p_low,
            p_high,
        })
    }

    pub fn constraints(&self, k: usize) -> BoxConstraints {
        BoxConstraints::new(k, self.roi, self.p_low, self.p_high)
    }

    pub fn value(&self, theta: &ParameterVector) -> f64 {
        value_and_gradient(theta.as_slice(), self.sensors, &self.log_rss, &self.params, None)
    }

    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        value_and_gradient(theta, self.sensors, &self.log_rss, &self.params, Some(grad))
    }
}

fn log_observations(sensors: &[Point2], r_hat: &RssObservation) -> Result<Vec<f64>> {
    r_hat.validate()?;
    if r_hat.len() != sensors.len() {
        return Err(invalid(format!(
            "observation has {} entries for {} sensors",
            r_hat.len(),
            sensors.len()
        )));
    }
    Ok(r_hat.values().iter().map(|r| r.ln()).collect())
}

/// Negative log-likelihood of `r_hat` at `theta`.
pub fn objective(
    theta: &ParameterVector,
    sensors: &[Point2],
    r_hat: &RssObservation,
    params: &FwParams,
) -> Result<f64> {
    if params.sigma_s == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let y = log_observations(sensors, r_hat)?;
    Ok(value_and_gradient(theta.as_slice(), sensors, &y, params, None))
}

/// Analytic gradient of [`objective`] with respect to the stacked `theta`.
/// Distances on the `D_MIN` clamp contribute no positional derivative.
pub fn gradient(
    theta: &ParameterVector,
    sensors: &[Point2],
    r_hat: &RssObservation,
    params: &FwParams,
) -> Result<Vec<f64>> {
    if params.sigma_s == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let y = log_observations(sensors, r_hat)?;
    let mut grad = vec![0.0; theta.as_slice().len()];
    value_and_gradient(theta.as_slice(), sensors, &y, params, Some(&mut grad));
    Ok(grad)
}

// Per sensor, with g_k = P_k d_k^-alpha, S1 = sum g_k, S2 = sum g_k^2,
// q = S2 / S1^2 and c = beta^2 - 1:
//   sigma^2 = ln(1 + c q),  mu = ln beta + ln S1 - sigma^2 / 2,
//   df/dsigma^2 = 1/sigma^2 - e^2/sigma^4,  df/dmu = -2e/sigma^2,  e = y - mu,
//   dsigma^2/dg_k = c/(1 + c q) * 2 (g_k - S2/S1) / S1^2,
//   dmu/dg_k = 1/S1 - dsigma^2/dg_k / 2.
fn value_and_gradient(
    theta: &[f64],
    sensors: &[Point2],
    log_rss: &[f64],
    params: &FwParams,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let k = theta.len() / 3;
    let (us, rest) = theta.split_at(k);
    let (vs, ps) = rest.split_at(k);
    let alpha = params.alpha;
    let excess = params.excess();

    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut g_terms = vec![0.0; k];
    // d g_k / d u_k and d g_k / d v_k, zero on the clamp.
    let mut du = vec![0.0; k];
    let mut dv = vec![0.0; k];

    let mut total = 0.0;
    for (sensor, &y) in sensors.iter().zip(log_rss) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..k {
            let dx = us[j] - sensor.u;
            let dy = vs[j] - sensor.v;
            let raw2 = dx * dx + dy * dy;
            let clamped = raw2 <= D_MIN * D_MIN;
            let d2 = if clamped { D_MIN * D_MIN } else { raw2 };
            let g = ps[j] * d2.powf(-0.5 * alpha);
            g_terms[j] = g;
            s1 += g;
            s2 += g * g;
            if clamped {
                du[j] = 0.0;
                dv[j] = 0.0;
            } else {
                du[j] = -alpha * g * dx / d2;
                dv[j] = -alpha * g * dy / d2;
            }
        }
        let (mu, sigma2) = params.fit_from_sums(s1, s2);
        let e = y - mu;
        total += sigma2.ln() + e * e / sigma2;

        if let Some(grad) = grad.as_deref_mut() {
            let df_dsigma2 = 1.0 / sigma2 - e * e / (sigma2 * sigma2);
            let df_dmu = -2.0 * e / sigma2;
            let q = s2 / (s1 * s1);
            let dsig_scale = excess / (1.0 + excess * q) * 2.0 / (s1 * s1);
            let ratio = s2 / s1;
            for j in 0..k {
                let dsigma2 = dsig_scale * (g_terms[j] - ratio);
                let dmu = 1.0 / s1 - 0.5 * dsigma2;
                let df_dg = df_dsigma2 * dsigma2 + df_dmu * dmu;
                grad[j] += df_dg * du[j];
                grad[k + j] += df_dg * dv[j];
                grad[2 * k + j] += df_dg * g_terms[j] / ps[j];
            }
        }
    }
    total
}

/// Options for [`solve`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveOptions {
    pub gp: GpOptions,
}

/// Result of one maximum-likelihood solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta: ParameterVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    /// Multipliers of the bounds active at termination.
    #[serde(default)]
    pub multipliers: Vec<Multiplier>,
}

/// Runs gradient projection on the likelihood from the feasible start
/// `theta0`. Hitting the iteration cap is not an error: the report carries
/// the last iterate with `converged = false`.
pub fn solve(
    theta0: &ParameterVector,
    problem: &MleProblem<'_>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let k = theta0.k();
    let (lower, upper) = bounds(k, problem.roi, problem.p_low, problem.p_high);
    let report = gp::minimize(
        |x, g| problem.value_and_gradient(x, g),
        &lower,
        &upper,
        theta0.as_slice(),
        &opts.gp,
    )?;
    Ok(SolveReport {
        theta: ParameterVector(report.x),
        objective: report.objective,
        iterations: report.iterations,
        converged: report.converged,
        trace: report.trace,
        multipliers: report.multipliers,
    })
}
