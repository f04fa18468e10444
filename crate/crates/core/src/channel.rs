//! Multi-source received power under log-normal shadowing.
//!
//! Sensor `m` observes `r_m = sum_k P_k d_mk^-alpha 10^(n_mk / 10)` in mW,
//! with `n_mk ~ N(0, sigma_s^2)` dB drawn independently per sensor/source
//! pair. Antenna gains are folded into unit coefficient and receiver noise
//! is not modelled.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{substream, Stream};
use crate::scenario::{distance, Point2, Scenario};

/// Per-sensor received power in mW. Serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RssObservation(pub Vec<f64>);

impl RssObservation {
    /// Wraps `values`, rejecting empty input and any non-positive entry.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let obs = RssObservation(values);
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(invalid("observation is empty"));
        }
        if let Some((i, r)) = self
            .0
            .iter()
            .enumerate()
            .find(|(_, r)| !(**r > 0.0 && r.is_finite()))
        {
            return Err(invalid(format!("observation {i} is not a positive finite power: {r}")));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The shadowing realization behind one observation, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingDraw {
    /// Row-major `sensors x sources`.
    pub n: Vec<f64>,
    pub sources: usize,
}

impl ShadowingDraw {
    pub fn get(&self, sensor: usize, source: usize) -> f64 {
        self.n[sensor * self.sources + source]
    }
}

fn attenuated(power: f64, d: f64, alpha: f64) -> f64 {
    power * d.powf(-alpha)
}

/// Draws one shadowed observation for `scenario`; deterministic in `seed`.
pub fn simulate_rss(scenario: &Scenario, seed: u64) -> (RssObservation, ShadowingDraw) {
    let k = scenario.sources.len();
    let mut rng = substream(seed, Stream::Shadowing);
    // sigma_s is validated non-negative; zero gives a point mass.
    let normal = Normal::new(0.0, scenario.sigma_s).expect("sigma_s must be finite and >= 0");
    let mut n = Vec::with_capacity(scenario.sensors.len() * k);
    let r = scenario
        .sensors
        .iter()
        .map(|&a| {
            scenario
                .sources
                .iter()
                .map(|src| {
                    let n_mk: f64 = normal.sample(&mut rng);
                    n.push(n_mk);
                    attenuated(src.power, distance(src.position, a), scenario.alpha)
                        * 10f64.powf(n_mk / 10.0)
                })
                .sum()
        })
        .collect();
    (RssObservation(r), ShadowingDraw { n, sources: k })
}

/// Received power with shadowing switched off.
pub fn noiseless_rss(scenario: &Scenario) -> RssObservation {
    RssObservation(
        scenario
            .sensors
            .iter()
            .map(|&a| sum_attenuated(&scenario.sources, a, scenario.alpha))
            .collect(),
    )
}

fn sum_attenuated(sources: &[crate::scenario::Source], a: Point2, alpha: f64) -> f64 {
    sources
        .iter()
        .map(|s| attenuated(s.power, distance(s.position, a), alpha))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{random_scenario, Roi, ScenarioConfig, Source};

    fn one_sensor(sources: &[(f64, f64, f64)], alpha: f64, sigma_s: f64) -> Scenario {
        Scenario {
            roi: Roi { l: 100.0, w: 100.0 },
            sensors: vec![Point2::new(0.0, 0.0)],
            sources: sources
                .iter()
                .map(|&(u, v, p)| Source {
                    position: Point2::new(u, v),
                    power: p,
                })
                .collect(),
            alpha,
            sigma_s,
            p_low: 1.0,
            p_high: 1000.0,
            seed: 0,
        }
    }

    #[test]
    fn single_source_no_shadowing() {
        let s = one_sensor(&[(10.0, 0.0, 100.0)], 2.0, 0.0);
        let (r, n) = simulate_rss(&s, 3);
        assert!((r.0[0] - 1.0).abs() < 1e-15);
        assert_eq!(n.get(0, 0), 0.0);
        assert!((noiseless_rss(&s).0[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn superposition_of_two_sources() {
        let s = one_sensor(&[(10.0, 0.0, 100.0), (0.0, 10.0, 100.0)], 2.0, 0.0);
        assert!((simulate_rss(&s, 3).0 .0[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_equals_noiseless_exactly() {
        let cfg = ScenarioConfig {
            sigma_s: 0.0,
            ..ScenarioConfig::default()
        };
        for seed in 0..5 {
            let s = random_scenario(&cfg, seed).unwrap();
            assert_eq!(simulate_rss(&s, seed + 100).0, noiseless_rss(&s));
        }
    }

    #[test]
    fn noiseless_matches_direct_summation() {
        let s = random_scenario(&ScenarioConfig::default(), 11).unwrap();
        let r = noiseless_rss(&s);
        for (m, a) in s.sensors.iter().enumerate() {
            let mut expect = 0.0;
            for src in &s.sources {
                let dx = src.position.u - a.u;
                let dy = src.position.v - a.v;
                let d = (dx * dx + dy * dy).sqrt().max(1.0);
                expect += src.power / d.powf(s.alpha);
            }
            assert!((r.0[m] - expect).abs() <= 1e-13 * expect);
        }
    }

    #[test]
    fn reconstruction_from_draw() {
        let s = random_scenario(&ScenarioConfig::default(), 5).unwrap();
        let (r, n) = simulate_rss(&s, 77);
        assert_eq!(n.n.len(), s.sensors.len() * s.sources.len());
        for (m, a) in s.sensors.iter().enumerate() {
            let expect: f64 = s
                .sources
                .iter()
                .enumerate()
                .map(|(k, src)| {
                    src.power * distance(src.position, *a).powf(-s.alpha)
                        * 10f64.powf(n.get(m, k) / 10.0)
                })
                .sum();
            assert!((r.0[m] - expect).abs() <= 1e-12 * expect);
        }
        assert_eq!(simulate_rss(&s, 77).0, r);
    }

    #[test]
    fn log_rss_variance_single_source() {
        let sigma_s = 6.0;
        let s = one_sensor(&[(10.0, 0.0, 100.0)], 2.0, sigma_s);
        let draws = 100_000;
        let logs: Vec<f64> = (0..draws).map(|i| simulate_rss(&s, i).0 .0[0].ln()).collect();
        let mean = logs.iter().sum::<f64>() / draws as f64;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let expect = std::f64::consts::LN_10.powi(2) * sigma_s * sigma_s / 100.0;
        assert!((var / expect - 1.0).abs() < 0.02, "var {var} vs {expect}");
    }

    #[test]
    fn observation_validation() {
        assert!(RssObservation::new(vec![1.0, 2.0]).is_ok());
        assert!(RssObservation::new(vec![]).is_err());
        assert!(RssObservation::new(vec![1.0, 0.0]).is_err());
        assert!(RssObservation::new(vec![f64::NAN]).is_err());
        let o: RssObservation = serde_json::from_str("[0.5, 1.5]").unwrap();
        assert_eq!(o.0, vec![0.5, 1.5]);
        assert_eq!(serde_json::to_string(&o).unwrap(), "[0.5,1.5]");
    }
}
