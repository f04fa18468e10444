//! Region of interest, sensors, sources and the discretization grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{substream, Stream};

/// Lower clamp on every sensor-to-point distance (meters).
pub const D_MIN: f64 = 1.0;

/// Rectangular region of interest, `[0, l] x [0, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub l: f64,
    pub w: f64,
}

impl Roi {
    pub fn new(l: f64, w: f64) -> Result<Self> {
        let roi = Roi { l, w };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.w > 0.0 && self.l.is_finite() && self.w.is_finite()) {
            return Err(invalid(format!(
                "ROI dimensions must be positive and finite, got {} x {}",
                self.l, self.w
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }

    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=self.l).contains(&p.u) && (0.0..=self.w).contains(&p.v)
    }
}

/// A planar position in meters. Serialized as `[u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }

    /// Unclamped Euclidean distance.
    pub fn raw_distance(&self, other: &Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([u, v]: [f64; 2]) -> Self {
        Point2 { u, v }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.u, p.v]
    }
}

/// Euclidean distance clamped below at [`D_MIN`].
pub fn distance(p: Point2, q: Point2) -> f64 {
    p.raw_distance(&q).max(D_MIN)
}

/// An emitter with its transmit power in mW. Serialized as `{u, v, p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SourceRecord", into = "SourceRecord")]
pub struct Source {
    pub position: Point2,
    pub power: f64,
}

#[derive(Serialize, Deserialize)]
struct SourceRecord {
    u: f64,
    v: f64,
    p: f64,
}

impl From<SourceRecord> for Source {
    fn from(r: SourceRecord) -> Self {
        Source {
            position: Point2::new(r.u, r.v),
            power: r.p,
        }
    }
}

impl From<Source> for SourceRecord {
    fn from(s: Source) -> Self {
        SourceRecord {
            u: s.position.u,
            v: s.position.v,
            p: s.power,
        }
    }
}

/// A complete deployment: geometry, truth and channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub roi: Roi,
    pub sensors: Vec<Point2>,
    pub sources: Vec<Source>,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Shadowing standard deviation in dB.
    pub sigma_s: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub seed: u64,
}

impl Scenario {
    /// Checks the structural invariants. A single source is accepted here
    /// so that one-source channel and solver checks can reuse the type;
    /// generated and configured scenarios require at least two.
    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        if self.sensors.is_empty() {
            return Err(invalid("scenario needs at least one sensor"));
        }
        if self.sources.is_empty() {
            return Err(invalid("scenario needs at least one source"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("path-loss exponent must be > 0, got {}", self.alpha)));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(invalid(format!("sigma_s must be >= 0, got {}", self.sigma_s)));
        }
        if !(self.p_low > 0.0 && self.p_low <= self.p_high && self.p_high.is_finite()) {
            return Err(invalid(format!(
                "power bounds must satisfy 0 < p_low <= p_high, got [{}, {}]",
                self.p_low, self.p_high
            )));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if !self.roi.contains(*s) {
                return Err(invalid(format!("sensor {i} at ({}, {}) is outside the ROI", s.u, s.v)));
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !self.roi.contains(s.position) {
                return Err(invalid(format!(
                    "source {i} at ({}, {}) is outside the ROI",
                    s.position.u, s.position.v
                )));
            }
            if !(self.p_low..=self.p_high).contains(&s.power) {
                return Err(invalid(format!(
                    "source {i} power {} outside [{}, {}]",
                    s.power, self.p_low, self.p_high
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry<'_> {
        Geometry {
            roi: self.roi,
            sensors: &self.sensors,
            alpha: self.alpha,
            p_low: self.p_low,
            p_high: self.p_high,
        }
    }
}

/// The parts of a scenario a localizer is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct Geometry<'a> {
    pub roi: Roi,
    pub sensors: &'a [Point2],
    pub alpha: f64,
    pub p_low: f64,
    pub p_high: f64,
}

/// Parameters for [`random_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub roi: Roi,
    pub sensors: usize,
    pub sources: usize,
    pub alpha: f64,
    pub sigma_s: f64,
    pub p_low: f64,
    pub p_high: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            roi: Roi { l: 2000.0, w: 2000.0 },
            sensors: 150,
            sources: 3,
            alpha: 2.5,
            sigma_s: 6.0,
            p_low: 2000.0,
            p_high: 4000.0,
        }
    }
}

/// Draws sensors and sources uniformly over the ROI and powers uniformly
/// over `[p_low, p_high]`. Deterministic in `seed`.
pub fn random_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    if config.sources < 2 {
        return Err(invalid(format!(
            "at least two sources are required, got {}",
            config.sources
        )));
    }
    config.roi.validate()?;
    if !(config.p_low > 0.0 && config.p_low <= config.p_high) {
        return Err(invalid("power bounds must satisfy 0 < p_low <= p_high"));
    }
    let mut rng = substream(seed, Stream::Geometry);
    let roi = config.roi;
    let point = |rng: &mut rand_chacha::ChaCha8Rng| {
        Point2::new(rng.random::<f64>() * roi.l, rng.random::<f64>() * roi.w)
    };
    let sensors: Vec<Point2> = (0..config.sensors).map(|_| point(&mut rng)).collect();
    let sources = (0..config.sources)
        .map(|_| {
            let position = point(&mut rng);
            let power = config.p_low + rng.random::<f64>() * (config.p_high - config.p_low);
            Source { position, power }
        })
        .collect();
    let scenario = Scenario {
        roi,
        sensors,
        sources,
        alpha: config.alpha,
        sigma_s: config.sigma_s,
        p_low: config.p_low,
        p_high: config.p_high,
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// A square lattice of candidate source locations covering the ROI,
/// boundary included, laid out row-major (index = row * side + col).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub points: Vec<Point2>,
    pub side: usize,
    pub spacing_l: f64,
    pub spacing_w: f64,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds a `sqrt(n) x sqrt(n)` lattice with spacing `l / (sqrt(n) - 1)`.
pub fn make_grid(roi: Roi, n: usize) -> Result<Grid> {
    roi.validate()?;
    let side = n.isqrt();
    if side * side != n || n < 4 {
        return Err(invalid(format!(
            "grid size must be a perfect square >= 4, got {n}"
        )));
    }
    let spacing_l = roi.l / (side - 1) as f64;
    let spacing_w = roi.w / (side - 1) as f64;
    let last = side - 1;
    // Pin the last row/column to the exact ROI edge.
    let coord = |i: usize, spacing: f64, extent: f64| {
        if i == last {
            extent
        } else {
            i as f64 * spacing
        }
    };
    let points = (0..side)
        .flat_map(|row| {
            (0..side).map(move |col| {
                Point2::new(coord(col, spacing_l, roi.l), coord(row, spacing_w, roi.w))
            })
        })
        .collect();
    Ok(Grid {
        points,
        side,
        spacing_l,
        spacing_w,
    })
}
