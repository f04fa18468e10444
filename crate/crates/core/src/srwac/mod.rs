//! Initial estimate from sparse recovery and weighted averaging.
//!
//! 1. Model each grid point as a potential emitter at `P_high` and solve
//!    the l1-regularized least squares
//!    `min 0.5 ||r_hat - Phi s||^2 + lambda ||s||_1` over `s in [0, 1]^N`,
//!    which is the box QP with `B = Phi'Phi`, `c = lambda 1 - Phi' r_hat`.
//! 2. Keep grid points whose weight reaches `max(s) - std(s)`.
//! 3. Split the survivors into `K` groups with k-means on their coordinates.
//! 4. Each group yields a source at its weight-averaged position with power
//!    `max(s) * P_high`.

pub mod kmeans;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::boxqp::{solve_box_qp, QpOptions, QpProblem, QpSolution};
use crate::channel::RssObservation;
use crate::error::{invalid, Error, Result};
use crate::mle::ParameterVector;
use crate::rng::{substream, Stream};
use crate::scenario::{distance, Geometry, Grid, Point2, Roi, Source};

pub use kmeans::{kmeans, Clustering, KMeansOptions};

/// Sensor-by-grid energy propagation matrix, `Phi[m, n] = P_high d_mn^-alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix(pub DMatrix<f64>);

pub fn build_phi(grid: &Grid, sensors: &[Point2], alpha: f64, p_high: f64) -> PropagationMatrix {
    PropagationMatrix(DMatrix::from_fn(sensors.len(), grid.len(), |m, n| {
        p_high * distance(sensors[m], grid.points[n]).powf(-alpha)
    }))
}

/// Solves the box-constrained BPDN problem for the grid weights.
pub fn sparse_recover(
    phi: &PropagationMatrix,
    r_hat: &RssObservation,
    lambda: f64,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let phi = &phi.0;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be > 0, got {lambda}")));
    }
    if r_hat.len() != phi.nrows() {
        return Err(invalid(format!(
            "observation has {} entries, propagation matrix has {} rows",
            r_hat.len(),
            phi.nrows()
        )));
    }
    let r = DVector::from_column_slice(r_hat.values());
    let b = phi.tr_mul(phi);
    let c = DVector::from_element(phi.ncols(), lambda) - phi.tr_mul(&r);
    let problem = QpProblem::new(b, c)?;
    solve_box_qp(&problem, opts)
}

/// Grid points surviving the adaptive threshold, with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Keeps every weight `>= max(s) - std(s)`, with the sample standard
/// deviation (divisor `N - 1`; zero for a single entry).
pub fn adt_truncate(s_star: &[f64]) -> Result<CandidateSet> {
    if s_star.is_empty() {
        return Err(invalid("cannot truncate an empty weight vector"));
    }
    let n = s_star.len();
    let max = s_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std = if n > 1 {
        let mean = s_star.iter().sum::<f64>() / n as f64;
        (s_star.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let threshold = max - std;
    let (indices, weights) = s_star
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w >= threshold)
        .map(|(i, &w)| (i, w))
        .unzip();
    Ok(CandidateSet {
        indices,
        weights,
        threshold,
    })
}

/// Starting point for the likelihood solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialEstimate {
    pub sources: Vec<Source>,
    /// Grid indices forming each source's cluster; empty for sources
    /// synthesized when there are fewer candidates than sources.
    pub clusters: Vec<Vec<usize>>,
}

impl InitialEstimate {
    pub fn theta(&self) -> ParameterVector {
        ParameterVector::from_sources(&self.sources)
    }
}

/// Weighted mean of grid points `members` (indices into `grid`).
pub fn weighted_center(grid: &Grid, members: &[usize], weights: &[f64]) -> Point2 {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        let u = members.iter().zip(weights).map(|(&i, w)| w * grid.points[i].u).sum::<f64>();
        let v = members.iter().zip(weights).map(|(&i, w)| w * grid.points[i].v).sum::<f64>();
        Point2::new(u / total, v / total)
    } else {
        let n = members.len() as f64;
        let u = members.iter().map(|&i| grid.points[i].u).sum::<f64>();
        let v = members.iter().map(|&i| grid.points[i].v).sum::<f64>();
        Point2::new(u / n, v / n)
    }
}

/// `max(weights) * P_high`.
pub fn initial_power(weights: &[f64], p_high: f64) -> f64 {
    weights.iter().copied().fold(0.0, f64::max) * p_high
}

/// Clusters the candidates into `k` groups and turns each into a source.
/// Never fails for a nonempty candidate set: with fewer candidates than
/// sources, the strongest candidate is replicated one grid step away.
pub fn cluster_and_average(
    cands: &CandidateSet,
    grid: &Grid,
    k: usize,
    geometry: &Geometry<'_>,
    seed: u64,
) -> Result<InitialEstimate> {
    if cands.is_empty() {
        return Err(invalid("candidate set is empty"));
    }
    if k == 0 {
        return Err(invalid("number of sources must be positive"));
    }
    let points: Vec<Point2> = cands.indices.iter().map(|&i| grid.points[i]).collect();
    let groups = if cands.len() <= k {
        (0..cands.len()).map(|i| vec![i]).collect::<Vec<_>>()
    } else {
        let mut rng = substream(seed, Stream::Clustering);
        let c = kmeans(&points, k, &mut rng, &KMeansOptions::default());
        let mut groups = vec![Vec::new(); k];
        for (i, &g) in c.assignment.iter().enumerate() {
            groups[g].push(i);
        }
        groups
    };

    let finish = |center: Point2, power: f64| Source {
        position: nudge_inside(center, geometry.roi),
        power: power.clamp(geometry.p_low, geometry.p_high),
    };

    let mut sources = Vec::with_capacity(k);
    let mut clusters = Vec::with_capacity(k);
    for group in &groups {
        let members: Vec<usize> = group.iter().map(|&i| cands.indices[i]).collect();
        let weights: Vec<f64> = group.iter().map(|&i| cands.weights[i]).collect();
        sources.push(finish(
            weighted_center(grid, &members, &weights),
            initial_power(&weights, geometry.p_high),
        ));
        clusters.push(members);
    }

    if sources.len() < k {
        let strongest = (0..cands.len())
            .max_by(|&a, &b| cands.weights[a].total_cmp(&cands.weights[b]).then(b.cmp(&a)))
            .expect("nonempty");
        let base = points[strongest];
        let power = cands.weights[strongest] * geometry.p_high;
        let steps = [
            (grid.spacing_l, 0.0),
            (0.0, grid.spacing_w),
            (-grid.spacing_l, 0.0),
            (0.0, -grid.spacing_w),
        ];
        let mut j = 0;
        while sources.len() < k {
            let (du, dv) = steps[j % steps.len()];
            let reach = (j / steps.len() + 1) as f64;
            let mut p = Point2::new(base.u + reach * du, base.v + reach * dv);
            if !geometry.roi.contains(p) {
                // Mirror across the base point to stay inside the ROI.
                p = Point2::new(base.u - reach * du, base.v - reach * dv);
            }
            p = Point2::new(p.u.clamp(0.0, geometry.roi.l), p.v.clamp(0.0, geometry.roi.w));
            sources.push(finish(p, power));
            clusters.push(Vec::new());
            j += 1;
        }
    }
    Ok(InitialEstimate { sources, clusters })
}

fn nudge_inside(p: Point2, roi: Roi) -> Point2 {
    let nudge = |x: f64, extent: f64| {
        let eps = 1e-6 * extent;
        if x <= 0.0 {
            eps
        } else if x >= extent {
            extent - eps
        } else {
            x
        }
    };
    Point2::new(nudge(p.u, roi.l), nudge(p.v, roi.w))
}

/// Stage-one settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SrWacConfig {
    pub lambda: f64,
    pub qp: QpOptions,
}

impl Default for SrWacConfig {
    fn default() -> Self {
        SrWacConfig {
            lambda: 1e-3,
            qp: QpOptions::default(),
        }
    }
}

/// Everything stage one produced, for diagnostics and debug dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub s_star: Vec<f64>,
    pub candidates: CandidateSet,
    pub estimate: InitialEstimate,
    pub qp_converged: bool,
    pub qp_iterations: usize,
}

impl Initialization {
    /// CSV rows `grid_index,u,v,s_star,retained,cluster` (cluster -1 when
    /// not retained).
    pub fn debug_csv(&self, grid: &Grid) -> String {
        let mut cluster_of = vec![-1i64; grid.len()];
        for (c, members) in self.estimate.clusters.iter().enumerate() {
            for &i in members {
                cluster_of[i] = c as i64;
            }
        }
        let mut retained = vec![false; grid.len()];
        for &i in &self.candidates.indices {
            retained[i] = true;
        }
        let mut out = String::from("grid_index,u,v,s_star,retained,cluster\n");
        for (i, p) in grid.points.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                p.u, p.v, self.s_star[i], retained[i] as u8, cluster_of[i]
            );
        }
        out
    }
}

/// Runs the whole first stage. QP non-convergence is an error.
pub fn initialize(
    geometry: &Geometry<'_>,
    grid: &Grid,
    r_hat: &RssObservation,
    k: usize,
    config: &SrWacConfig,
    seed: u64,
) -> Result<InitialEstimate> {
    let phi = build_phi(grid, geometry.sensors, geometry.alpha, geometry.p_high);
    let sol = sparse_recover(&phi, r_hat, config.lambda, &config.qp)?;
    let candidates = adt_truncate(&sol.s)?;
    cluster_and_average(&candidates, grid, k, geometry, seed)
}

/// Like [`initialize`], but continues from the QP's last iterate when it
/// hits the iteration cap, recording `qp_converged = false`.
pub fn initialize_detailed(
    geometry: &Geometry<'_>,
    grid: &Grid,
    r_hat: &RssObservation,
    k: usize,
    config: &SrWacConfig,
    seed: u64,
) -> Result<Initialization> {
    let phi = build_phi(grid, geometry.sensors, geometry.alpha, geometry.p_high);
    let (s_star, qp_converged, qp_iterations) =
        match sparse_recover(&phi, r_hat, config.lambda, &config.qp) {
            Ok(sol) => (sol.s, true, sol.iterations),
            Err(Error::NotConverged {
                iterations, best, ..
            }) => (best, false, iterations),
            Err(e) => return Err(e),
        };
    let candidates = adt_truncate(&s_star)?;
    let estimate = cluster_and_average(&candidates, grid, k, geometry, seed)?;
    Ok(Initialization {
        s_star,
        candidates,
        estimate,
        qp_converged,
        qp_iterations,
    })
}
