//! Gradient projection for bound-constrained minimization.
//!
//! The feasible set `lower <= x <= upper` is written as `A x >= b` with
//! `A = (I; -I)` and `b = (lower; -upper)`. Each iteration
//!
//! 1. collects the active rows `A_1` (coordinates sitting on a bound),
//! 2. projects the negative gradient onto their null space,
//!    `d = -(I - M'(MM')^-1 M) grad f` with `M = A_1`,
//! 3. if `d` vanishes, computes the multipliers `(MM')^-1 M grad f`; stops at
//!    a KKT point when all are nonnegative, otherwise drops the row with the
//!    most negative multiplier and projects again,
//! 4. otherwise runs an Armijo line search on `[0, alpha_max]`, where
//!    `alpha_max` is the largest step keeping the inactive rows feasible.
//!
//! Because the rows of `A` are signed unit vectors, `MM'` is the identity
//! and the projector is a 0/1 diagonal: the projection reduces to zeroing
//! the active coordinates and each multiplier is a signed gradient entry.
//!
//! Coordinates are rescaled to the unit box before stepping so that
//! variables with very different units share conditioning. Trial steps
//! start from a Barzilai-Borwein estimate capped by `alpha_max`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GpOptions {
    pub max_iter: usize,
    /// Tolerance on the projected direction and on negative multipliers,
    /// relative to `1 + |f|`, in unit-box coordinates.
    pub kkt_tol: f64,
    /// Relative objective change treated as stagnation.
    pub stall_tol: f64,
    /// Consecutive stagnant iterations before the KKT test is forced.
    pub stall_iters: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            max_iter: 5000,
            kkt_tol: 1e-8,
            stall_tol: 1e-10,
            stall_iters: 5,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

/// Which side of the box a constraint row bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// A multiplier of an active row at termination, in objective units per
/// unit of the original coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub coord: usize,
    pub side: Side,
    pub value: f64,
}

impl Multiplier {
    /// Row index in the stacked `(I; -I)` constraint matrix.
    pub fn row(&self, dim: usize) -> usize {
        match self.side {
            Side::Lower => self.coord,
            Side::Upper => dim + self.coord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with `f(x0)`.
    pub trace: Vec<f64>,
    pub multipliers: Vec<Multiplier>,
}

/// Minimizes `f` over the box. `f` returns the value at `x` and writes the
/// gradient into its second argument.
// Negated comparisons below also reject NaN bounds.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn minimize<F>(
    mut f: F,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    opts: &GpOptions,
) -> Result<GpReport>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(invalid("bound and start dimensions disagree"));
    }
    for i in 0..n {
        if !(lower[i] <= upper[i]) {
            return Err(invalid(format!("empty box on coordinate {i}")));
        }
        if !(lower[i] <= x0[i] && x0[i] <= upper[i]) {
            return Err(invalid(format!(
                "start is infeasible on coordinate {i}: {} not in [{}, {}]",
                x0[i], lower[i], upper[i]
            )));
        }
    }
    let scaled = Scaled { lower, upper };

    let mut z: Vec<f64> = (0..n).map(|i| scaled.to_unit(i, x0[i])).collect();
    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gz = vec![0.0; n];
    let mut fz = scaled.eval(&mut f, &z, &mut x, &mut gx, &mut gz);
    if !fz.is_finite() {
        return Err(invalid("objective is not finite at the start point"));
    }
    let mut trace = vec![fz];

    let mut working: Vec<Option<Side>> = vec![None; n];
    let mut d = vec![0.0; n];
    let mut z_new = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut gx_new = vec![0.0; n];
    let mut gz_new = vec![0.0; n];
    let mut bb_step: Option<f64> = None;
    let mut stall = 0usize;
    let mut failed_searches = 0usize;
    let mut iterations = 0usize;

    let finish = |z: &[f64], fz: f64, gx: &[f64], working: &[Option<Side>], it, converged, trace| {
        let x = (0..n).map(|i| scaled.unscale(i, z[i])).collect();
        let multipliers = working
            .iter()
            .enumerate()
            .filter_map(|(i, side)| side.map(|side| (i, side)))
            .filter(|&(i, _)| !scaled.is_fixed(i))
            .map(|(coord, side)| Multiplier {
                coord,
                side,
                value: signed(side, gx[coord]),
            })
            .collect();
        Ok(GpReport {
            x,
            objective: fz,
            iterations: it,
            converged,
            trace,
            multipliers,
        })
    };

    loop {
        // Active rows at the current point.
        for i in 0..n {
            working[i] = if scaled.is_fixed(i) || z[i] <= 0.0 {
                Some(Side::Lower)
            } else if z[i] >= 1.0 {
                Some(Side::Upper)
            } else {
                None
            };
        }
        let tol = opts.kkt_tol * (1.0 + fz.abs());
        let mut force_kkt = stall >= opts.stall_iters || failed_searches > 0;

        loop {
            let mut dmax: f64 = 0.0;
            for i in 0..n {
                d[i] = if working[i].is_some() { 0.0 } else { -gz[i] };
                dmax = dmax.max(d[i].abs());
            }
            if dmax > tol && !force_kkt {
                break;
            }
            // The free subspace is exhausted: test the multipliers.
            let most_negative = working
                .iter()
                .enumerate()
                .filter(|&(i, _)| !scaled.is_fixed(i))
                .filter_map(|(i, side)| side.map(|s| (i, signed(s, gz[i]))))
                .filter(|&(_, lam)| lam < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match most_negative {
                None => return finish(&z, fz, &gx, &working, iterations, true, trace),
                Some((i, _)) => {
                    working[i] = None;
                    force_kkt = false;
                    stall = 0;
                }
            }
        }

        if iterations >= opts.max_iter {
            return finish(&z, fz, &gx, &working, iterations, false, trace);
        }
        iterations += 1;

        // Largest feasible step along d.
        let mut alpha_max = f64::INFINITY;
        let mut blocking = usize::MAX;
        for i in 0..n {
            let limit = if d[i] < 0.0 {
                z[i] / -d[i]
            } else if d[i] > 0.0 {
                (1.0 - z[i]) / d[i]
            } else {
                continue;
            };
            if limit < alpha_max {
                alpha_max = limit;
                blocking = i;
            }
        }

        let slope: f64 = -d.iter().map(|v| v * v).sum::<f64>();
        let mut t = bb_step.unwrap_or(1.0).min(alpha_max);
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            for i in 0..n {
                z_new[i] = (z[i] + t * d[i]).clamp(0.0, 1.0);
                if z_new[i] < 1e-13 && d[i] < 0.0 {
                    z_new[i] = 0.0;
                } else if z_new[i] > 1.0 - 1e-13 && d[i] > 0.0 {
                    z_new[i] = 1.0;
                }
            }
            if t == alpha_max && blocking < n {
                z_new[blocking] = if d[blocking] < 0.0 { 0.0 } else { 1.0 };
            }
            let f_trial = scaled.eval(&mut f, &z_new, &mut x_new, &mut gx_new, &mut gz_new);
            if f_trial.is_finite() && f_trial <= fz + opts.armijo_c1 * t * slope {
                accepted = Some(f_trial);
                break;
            }
            t *= opts.backtrack;
        }

        let Some(f_next) = accepted else {
            if failed_searches > 0 {
                // Second failure in a row after the KKT test released a
                // bound: no further progress is possible.
                return finish(&z, fz, &gx, &working, iterations, false, trace);
            }
            failed_searches += 1;
            continue;
        };
        failed_searches = 0;

        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let ds = z_new[i] - z[i];
            ss += ds * ds;
            sy += ds * (gz_new[i] - gz[i]);
        }
        bb_step = (sy > 0.0).then(|| ss / sy);

        if fz - f_next < opts.stall_tol * (1.0 + fz.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        std::mem::swap(&mut z, &mut z_new);
        std::mem::swap(&mut gx, &mut gx_new);
        std::mem::swap(&mut gz, &mut gz_new);
        fz = f_next;
        trace.push(fz);
    }
}

fn signed(side: Side, g: f64) -> f64 {
    match side {
        Side::Lower => g,
        Side::Upper => -g,
    }
}

struct Scaled<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Scaled<'_> {
    fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    fn is_fixed(&self, i: usize) -> bool {
        self.width(i) == 0.0
    }

    fn to_unit(&self, i: usize, x: f64) -> f64 {
        if x == self.upper[i] && !self.is_fixed(i) {
            1.0
        } else if self.is_fixed(i) {
            0.0
        } else {
            ((x - self.lower[i]) / self.width(i)).clamp(0.0, 1.0)
        }
    }

    fn unscale(&self, i: usize, z: f64) -> f64 {
        if z >= 1.0 {
            self.upper[i]
        } else if z <= 0.0 {
            self.lower[i]
        } else {
            (self.lower[i] + z * self.width(i)).clamp(self.lower[i], self.upper[i])
        }
    }

    fn eval<F>(&self, f: &mut F, z: &[f64], x: &mut [f64], gx: &mut [f64], gz: &mut [f64]) -> f64
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        for i in 0..z.len() {
            x[i] = self.unscale(i, z[i]);
        }
        let value = f(x, gx);
        for i in 0..z.len() {
            gz[i] = gx[i] * self.width(i);
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(center: f64) -> impl FnMut(&[f64], &mut [f64]) -> f64 {
        move |x, g| {
            g[0] = 2.0 * (x[0] - center);
            (x[0] - center).powi(2)
        }
    }

    #[test]
    fn interior_minimum_from_bound() {
        let r = minimize(quad(0.5), &[0.0], &[1.0], &[0.0], &GpOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.5).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn active_bound_with_nonnegative_multiplier() {
        let r = minimize(quad(-1.0), &[0.0], &[1.0], &[0.5], &GpOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 0.0);
        assert_eq!(r.multipliers.len(), 1);
        let m = r.multipliers[0];
        assert_eq!((m.coord, m.side), (0, Side::Lower));
        assert!((m.value - 2.0).abs() < 1e-12);
        assert_eq!(m.row(1), 0);
    }

    #[test]
    fn upper_bound_multiplier() {
        let r = minimize(quad(3.0), &[0.0], &[1.0], &[0.2], &GpOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 1.0);
        assert_eq!(r.multipliers[0].side, Side::Upper);
        assert!((r.multipliers[0].value - 4.0).abs() < 1e-12);
        assert_eq!(r.multipliers[0].row(1), 1);
    }

    #[test]
    fn anisotropic_box_and_trace_monotone() {
        // Rosenbrock-like valley over a box with mixed scales.
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0] / 1000.0, x[1] / 1000.0);
            let val = (1.0 - a).powi(2) + 10.0 * (b - a * a).powi(2);
            g[0] = (-2.0 * (1.0 - a) - 40.0 * a * (b - a * a)) / 1000.0;
            g[1] = 20.0 * (b - a * a) / 1000.0;
            val
        };
        let r = minimize(f, &[0.0, 0.0], &[800.0, 2000.0], &[100.0, 1500.0], &GpOptions::default())
            .unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 800.0);
        assert!((r.x[1] - 640.0).abs() < 1e-2, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_start_rejected() {
        assert!(minimize(quad(0.0), &[0.0], &[1.0], &[1.5], &GpOptions::default()).is_err());
    }

    #[test]
    fn fixed_coordinate_stays_put() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 0.3);
            g[1] = 2.0 * x[1];
            (x[0] - 0.3).powi(2) + x[1] * x[1]
        };
        let r = minimize(f, &[0.0, 5.0], &[1.0, 5.0], &[0.9, 5.0], &GpOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[1], 5.0);
        assert!((r.x[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let opts = GpOptions {
            max_iter: 1,
            ..GpOptions::default()
        };
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * x[0].powi(3) - 1.0;
            g[1] = 2.0 * (x[1] - 0.1);
            x[0].powi(4) - x[0] + (x[1] - 0.1).powi(2)
        };
        let r = minimize(f, &[-2.0, -2.0], &[2.0, 2.0], &[1.9, 1.9], &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.trace[1] < r.trace[0]);
    }
}
