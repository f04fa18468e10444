//! Error metrics, truth-to-estimate matching and the Monte-Carlo driver.
//!
//! Distances in curves are relative: a position error divided by the
//! square root of the ROI area.

use std::io::{self, Write};

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fw::FwParams;
use crate::mle::{self, MleProblem, SolveOptions};
use crate::rng::trial_seed;
use crate::scenario::{make_grid, random_scenario, Point2, Roi, ScenarioConfig, Source};
use crate::srwac::{self, SrWacConfig};
use crate::channel::simulate_rss;

/// Largest source count accepted by [`match_sources`].
pub const MAX_MATCH_K: usize = 8;

/// Number of evenly spaced samples in the MEF and CDF curves.
pub const CURVE_POINTS: usize = 200;

/// Upper end of the relative-distance axis of the curves.
pub const CURVE_MAX_D: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `permutation[k]` is the estimate paired with truth `k`.
    pub permutation: Vec<usize>,
    /// Position error of each truth, in truth order.
    pub errors: Vec<f64>,
}

/// Pairs truths with estimates by minimizing the summed squared position
/// error over all `K!` assignments. Ties keep the lexicographically first
/// permutation.
pub fn match_sources(truth: &[Point2], estimates: &[Point2]) -> Result<Matching> {
    let k = truth.len();
    if estimates.len() != k {
        return Err(invalid(format!(
            "cannot match {k} truths with {} estimates",
            estimates.len()
        )));
    }
    if k > MAX_MATCH_K {
        return Err(Error::Unsupported(format!(
            "matching supports at most {MAX_MATCH_K} sources, got {k}"
        )));
    }
    let sq = |a: Point2, b: Point2| (a.u - b.u).powi(2) + (a.v - b.v).powi(2);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let cost: f64 = perm.iter().enumerate().map(|(t, &e)| sq(truth[t], estimates[e])).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, perm));
        }
    }
    let permutation = best.map(|(_, p)| p).unwrap_or_default();
    let errors = permutation
        .iter()
        .enumerate()
        .map(|(t, &e)| sq(truth[t], estimates[e]).sqrt())
        .collect();
    Ok(Matching { permutation, errors })
}

/// Outcome of one Monte-Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub truth: Vec<Source>,
    /// Estimates reordered to line up with `truth`.
    pub estimate: Vec<Source>,
    /// Matched position errors in meters.
    pub errors: Vec<f64>,
    /// Largest matched error (m).
    pub delta: f64,
    /// Mean matched error (m).
    pub avg_error: f64,
    /// Root-mean-square matched error (m).
    pub rms: f64,
    /// Gradient-projection iterations (0 when the refinement was skipped).
    pub iterations: usize,
    /// Both stages met their tolerances.
    pub converged: bool,
    /// Why the refinement did not run or failed, if it did not finish.
    pub note: Option<String>,
}

impl TrialRecord {
    fn new(
        trial: usize,
        seed: u64,
        truth: Vec<Source>,
        estimate: Vec<Source>,
        iterations: usize,
        converged: bool,
        note: Option<String>,
    ) -> Result<Self> {
        let t: Vec<Point2> = truth.iter().map(|s| s.position).collect();
        let e: Vec<Point2> = estimate.iter().map(|s| s.position).collect();
        let m = match_sources(&t, &e)?;
        let estimate = m.permutation.iter().map(|&i| estimate[i]).collect();
        let k = m.errors.len() as f64;
        Ok(TrialRecord {
            trial,
            seed,
            truth,
            estimate,
            delta: m.errors.iter().copied().fold(0.0, f64::max),
            avg_error: m.errors.iter().sum::<f64>() / k,
            rms: (m.errors.iter().map(|x| x * x).sum::<f64>() / k).sqrt(),
            errors: m.errors,
            iterations,
            converged,
            note,
        })
    }
}

/// Mean over trials of the per-trial root-mean-square error.
pub fn rmse(trials: &[TrialRecord]) -> Result<f64> {
    if trials.is_empty() {
        return Err(invalid("rmse needs at least one trial"));
    }
    Ok(trials.iter().map(|t| t.rms).sum::<f64>() / trials.len() as f64)
}

pub fn relative_rmse(rmse: f64, roi: Roi) -> f64 {
    rmse / roi.area().sqrt()
}

/// `CURVE_POINTS` evenly spaced values covering `[0, CURVE_MAX_D]`.
pub fn curve_grid() -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|i| CURVE_MAX_D * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect()
}

/// Fraction of trials whose relative worst-source error exceeds each `d`.
pub fn mef_curve(deltas: &[f64], roi: Roi, d: &[f64]) -> Vec<f64> {
    let scale = roi.area().sqrt();
    let n = deltas.len().max(1) as f64;
    d.iter()
        .map(|&d| deltas.iter().filter(|&&x| x / scale > d).count() as f64 / n)
        .collect()
}

/// Empirical CDF of the relative per-trial average error at each `d`.
pub fn cdf_curve(avg_errors: &[f64], roi: Roi, d: &[f64]) -> Vec<f64> {
    let scale = roi.area().sqrt();
    let n = avg_errors.len().max(1) as f64;
    d.iter()
        .map(|&d| avg_errors.iter().filter(|&&x| x / scale <= d).count() as f64 / n)
        .collect()
}

/// Empirical CDF of the relative worst-source error; `1 - MEF`.
pub fn delta_cdf_curve(deltas: &[f64], roi: Roi, d: &[f64]) -> Vec<f64> {
    mef_curve(deltas, roi, d).into_iter().map(|m| 1.0 - m).collect()
}

/// One sweep point of a Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Number of grid points (a perfect square).
    pub grid_n: usize,
    pub srwac: SrWacConfig,
    pub solve: SolveOptions,
    pub trials: usize,
    pub master_seed: u64,
    /// Reuse one deployment for every trial; only shadowing changes.
    pub fixed_geometry: bool,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    /// Value written to the `sweep_param` column.
    pub sweep_param: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            grid_n: 121,
            srwac: SrWacConfig::default(),
            solve: SolveOptions::default(),
            trials: 500,
            master_seed: 0,
            fixed_geometry: false,
            threads: None,
            sweep_param: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub sweep_param: f64,
    pub roi: Roi,
    /// Sensors per square meter.
    pub rho: f64,
    pub trials: Vec<TrialRecord>,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub failures: usize,
    /// RMSE over converged trials only; `None` when every trial failed.
    pub rmse_converged: Option<f64>,
    pub d: Vec<f64>,
    pub mef: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl ExperimentResult {
    /// Fraction of trials with relative average error `<= d`.
    pub fn avg_error_cdf_at(&self, d: f64) -> f64 {
        let avg: Vec<f64> = self.trials.iter().map(|t| t.avg_error).collect();
        cdf_curve(&avg, self.roi, &[d])[0]
    }
}

/// Runs `config.trials` independent trials. Trial `j` draws everything
/// from `trial_seed(master_seed, j)`, so results do not depend on the
/// thread count. `progress` is called with the number of finished trials.
pub fn run_experiment(
    config: &ExperimentConfig,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<ExperimentResult> {
    if config.trials == 0 {
        return Err(invalid("number of trials must be positive"));
    }
    let fixed = if config.fixed_geometry {
        Some(random_scenario(&config.scenario, config.master_seed)?)
    } else {
        // Surface configuration errors before spawning trials.
        random_scenario(&config.scenario, config.master_seed)?;
        None
    };
    let grid = make_grid(config.scenario.roi, config.grid_n)?;
    if config.scenario.sigma_s > 0.0 {
        FwParams::new(config.scenario.alpha, config.scenario.sigma_s)?;
    }

    let done = std::sync::atomic::AtomicUsize::new(0);
    let run = |j: usize| -> Result<TrialRecord> {
        let seed = trial_seed(config.master_seed, j as u64);
        let scenario = match &fixed {
            Some(s) => s.clone(),
            None => random_scenario(&config.scenario, seed)?,
        };
        let record = run_trial(j, seed, &scenario, &grid, config)?;
        if let Some(report) = progress {
            let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            report(n, config.trials);
        }
        Ok(record)
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let trials: Vec<TrialRecord> =
        pool.install(|| (0..config.trials).into_par_iter().map(run).collect::<Result<_>>())?;

    let roi = config.scenario.roi;
    let total = rmse(&trials)?;
    let converged: Vec<TrialRecord> = trials.iter().filter(|t| t.converged).cloned().collect();
    let d = curve_grid();
    let deltas: Vec<f64> = trials.iter().map(|t| t.delta).collect();
    let avg: Vec<f64> = trials.iter().map(|t| t.avg_error).collect();
    Ok(ExperimentResult {
        sweep_param: config.sweep_param,
        roi,
        rho: config.scenario.sensors as f64 / roi.area(),
        rmse: total,
        relative_rmse: relative_rmse(total, roi),
        failures: trials.len() - converged.len(),
        rmse_converged: rmse(&converged).ok(),
        mef: mef_curve(&deltas, roi, &d),
        cdf: cdf_curve(&avg, roi, &d),
        d,
        trials,
    })
}

/// Simulate, initialize, refine and score one deployment. Solver trouble
/// is recorded in the trial, never returned as an error.
pub fn run_trial(
    trial: usize,
    seed: u64,
    scenario: &crate::scenario::Scenario,
    grid: &crate::scenario::Grid,
    config: &ExperimentConfig,
) -> Result<TrialRecord> {
    let (obs, _) = simulate_rss(scenario, seed);
    let geometry = scenario.geometry();
    let k = scenario.sources.len();
    let init = srwac::initialize_detailed(&geometry, grid, &obs, k, &config.srwac, seed)?;

    let refined = FwParams::new(scenario.alpha, scenario.sigma_s).and_then(|params| {
        let problem = MleProblem::new(
            &scenario.sensors,
            &obs,
            params,
            scenario.roi,
            scenario.p_low,
            scenario.p_high,
        )?;
        mle::solve(&init.estimate.theta(), &problem, &config.solve)
    });
    let (estimate, iterations, converged, note) = match refined {
        Ok(report) => (
            report.theta.sources(),
            report.iterations,
            report.converged && init.qp_converged,
            None,
        ),
        Err(e) => (init.estimate.sources.clone(), 0, false, Some(e.to_string())),
    };
    let note = note.or_else(|| (!init.qp_converged).then(|| "sparse recovery hit its iteration cap".into()));
    TrialRecord::new(trial, seed, scenario.sources.clone(), estimate, iterations, converged, note)
}

pub const RESULTS_HEADER: &str =
    "sweep_param,trial,seed,rmse_m,rel_rmse,delta_rel,avg_err_rel,iterations,converged";
pub const CURVES_HEADER: &str = "sweep_param,d,mef,cdf";
pub const SUMMARY_HEADER: &str =
    "sweep_param,rho,trials,failures,rmse_m,rel_rmse,rmse_converged_m,rel_rmse_converged,cdf_avg_0_1";

/// Appends one row per trial, without a header.
pub fn write_results_rows<W: Write>(w: &mut W, r: &ExperimentResult) -> io::Result<()> {
    let scale = r.roi.area().sqrt();
    for t in &r.trials {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.sweep_param,
            t.trial,
            t.seed,
            t.rms,
            t.rms / scale,
            t.delta / scale,
            t.avg_error / scale,
            t.iterations,
            t.converged
        )?;
    }
    Ok(())
}

pub fn write_curve_rows<W: Write>(w: &mut W, r: &ExperimentResult) -> io::Result<()> {
    for ((d, mef), cdf) in r.d.iter().zip(&r.mef).zip(&r.cdf) {
        writeln!(w, "{},{d},{mef},{cdf}", r.sweep_param)?;
    }
    Ok(())
}

pub fn write_summary_row<W: Write>(w: &mut W, r: &ExperimentResult) -> io::Result<()> {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        r.sweep_param,
        r.rho,
        r.trials.len(),
        r.failures,
        r.rmse,
        r.relative_rmse,
        opt(r.rmse_converged),
        opt(r.rmse_converged.map(|x| relative_rmse(x, r.roi))),
        r.avg_error_cdf_at(0.1)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(u: f64, v: f64) -> Point2 {
        Point2::new(u, v)
    }

    fn record(errors: &[f64]) -> TrialRecord {
        let truth: Vec<Source> = errors
            .iter()
            .enumerate()
            .map(|(i, _)| Source { position: p(10_000.0 * i as f64, 0.0), power: 1.0 })
            .collect();
        let estimate = truth
            .iter()
            .zip(errors)
            .map(|(s, e)| Source { position: p(s.position.u, *e), power: 1.0 })
            .collect();
        TrialRecord::new(0, 0, truth, estimate, 0, true, None).unwrap()
    }

    const SQUARE: Roi = Roi { l: 2000.0, w: 2000.0 };

    #[test]
    fn matching_examples() {
        let m = match_sources(&[p(0.0, 0.0), p(1.0, 1.0)], &[p(1.0, 1.0), p(0.0, 0.0)]).unwrap();
        assert_eq!(m.permutation, vec![1, 0]);
        assert_eq!(m.errors, vec![0.0, 0.0]);

        let m = match_sources(&[p(0.0, 0.0), p(10.0, 0.0)], &[p(1.0, 0.0), p(9.0, 0.0)]).unwrap();
        assert_eq!(m.permutation, vec![0, 1]);
        assert_eq!(m.errors, vec![1.0, 1.0]);
    }

    #[test]
    fn matching_limits() {
        let nine = vec![p(0.0, 0.0); 9];
        assert!(matches!(match_sources(&nine, &nine), Err(Error::Unsupported(_))));
        assert!(match_sources(&[p(0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[record(&[0.0, 0.0, 0.0])]).unwrap(), 0.0);
        assert_eq!(rmse(&[record(&[5.0])]).unwrap(), 5.0);
        assert_eq!(rmse(&[record(&[3.0]), record(&[4.0])]).unwrap(), 3.5);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn relative_rmse_examples() {
        assert_eq!(relative_rmse(200.0, SQUARE), 0.1);
        assert_eq!(relative_rmse(0.0, SQUARE), 0.0);
        assert!((relative_rmse(104.0, SQUARE) - 0.052).abs() < 1e-15);
    }

    #[test]
    fn curve_examples() {
        let deltas = [0.05 * 2000.0, 0.15 * 2000.0, 0.2 * 2000.0];
        assert!((mef_curve(&deltas, SQUARE, &[0.1])[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mef_curve(&deltas, SQUARE, &[0.0]), vec![1.0]);
        assert_eq!(mef_curve(&deltas, SQUARE, &[f64::INFINITY]), vec![0.0]);

        let avg = [0.05 * 2000.0, 0.15 * 2000.0];
        assert_eq!(cdf_curve(&avg, SQUARE, &[0.1]), vec![0.5]);
        assert_eq!(cdf_curve(&avg, SQUARE, &[0.01]), vec![0.0]);
        assert_eq!(cdf_curve(&avg, SQUARE, &[0.2]), vec![1.0]);
    }

    #[test]
    fn curve_grid_layout() {
        let d = curve_grid();
        assert_eq!(d.len(), 200);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[199], 0.5);
    }

    #[test]
    fn trial_record_reorders_estimates() {
        let truth = vec![
            Source { position: p(0.0, 0.0), power: 1.0 },
            Source { position: p(100.0, 0.0), power: 2.0 },
        ];
        let est = vec![
            Source { position: p(103.0, 4.0), power: 5.0 },
            Source { position: p(0.0, 1.0), power: 6.0 },
        ];
        let r = TrialRecord::new(0, 0, truth, est, 3, true, None).unwrap();
        assert_eq!(r.estimate[0].power, 6.0);
        assert_eq!(r.errors, vec![1.0, 5.0]);
        assert_eq!(r.delta, 5.0);
        assert_eq!(r.avg_error, 3.0);
        assert_eq!(r.rms, 13f64.sqrt());
    }

    fn brute_force(truth: &[Point2], est: &[Point2]) -> f64 {
        // Independent enumeration by recursion over unused estimates.
        fn go(t: &[Point2], est: &[Point2], used: &mut Vec<bool>) -> f64 {
            let Some((&first, rest)) = t.split_first() else { return 0.0 };
            let mut best = f64::INFINITY;
            for i in 0..est.len() {
                if !used[i] {
                    used[i] = true;
                    let c = (first.u - est[i].u).powi(2) + (first.v - est[i].v).powi(2);
                    best = best.min(c + go(rest, est, used));
                    used[i] = false;
                }
            }
            best
        }
        go(truth, est, &mut vec![false; est.len()])
    }

    fn pts(n: usize) -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((0.0..2000.0f64, 0.0..2000.0f64).prop_map(|(u, v)| p(u, v)), n)
    }

    proptest! {
        #[test]
        fn matching_is_optimal((truth, est) in (1usize..=5).prop_flat_map(|k| (pts(k), pts(k)))) {
            let m = match_sources(&truth, &est).unwrap();
            let cost: f64 = m.errors.iter().map(|e| e * e).sum();
            prop_assert!((cost - brute_force(&truth, &est)).abs() <= 1e-9 * (1.0 + cost));
            let mut seen = m.permutation.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..truth.len()).collect::<Vec<_>>());
        }

        #[test]
        fn curves_monotone_and_complementary(deltas in prop::collection::vec(0.0..1500.0f64, 1..40)) {
            let d = curve_grid();
            let mef = mef_curve(&deltas, SQUARE, &d);
            let cdf = delta_cdf_curve(&deltas, SQUARE, &d);
            prop_assert!(mef.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
            for (m, c) in mef.iter().zip(&cdf) {
                prop_assert!((m + c - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn rmse_ignores_trial_order(errs in prop::collection::vec(prop::collection::vec(0.0..500.0f64, 3), 1..10)) {
            let mut records: Vec<TrialRecord> = errs.iter().map(|e| record(e)).collect();
            let a = rmse(&records).unwrap();
            records.reverse();
            let b = rmse(&records).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
            let same = vec![records[0].clone(); 4];
            prop_assert!((rmse(&same).unwrap() - records[0].rms).abs() <= 1e-12 * (1.0 + records[0].rms));
        }
    }

    fn small_config(trials: usize, threads: usize) -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                sensors: 40,
                sigma_s: 4.0,
                ..ScenarioConfig::default()
            },
            grid_n: 49,
            trials,
            master_seed: 11,
            threads: Some(threads),
            sweep_param: 4.0,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_is_thread_count_independent() {
        let a = run_experiment(&small_config(6, 1), None).unwrap();
        let b = run_experiment(&small_config(6, 3), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 6);
        assert!(a.trials.iter().enumerate().all(|(i, t)| t.trial == i));
        let mut out = Vec::new();
        write_results_rows(&mut out, &a).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 6);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_experiment(&small_config(0, 1), None).is_err());
    }

    #[test]
    fn fixed_geometry_reuses_deployment() {
        let cfg = ExperimentConfig {
            fixed_geometry: true,
            ..small_config(3, 1)
        };
        let r = run_experiment(&cfg, None).unwrap();
        assert!(r.trials.windows(2).all(|w| w[0].truth == w[1].truth));
        let r = run_experiment(&small_config(3, 1), None).unwrap();
        assert!(r.trials[0].truth != r.trials[1].truth);
    }

    #[test]
    fn noiseless_trials_skip_refinement() {
        let cfg = ExperimentConfig {
            scenario: ScenarioConfig {
                sigma_s: 0.0,
                ..small_config(2, 1).scenario
            },
            ..small_config(2, 1)
        };
        let r = run_experiment(&cfg, None).unwrap();
        assert!(r.trials.iter().all(|t| t.iterations == 0 && t.note.is_some()));
        assert_eq!(r.failures, 2);
    }
}
