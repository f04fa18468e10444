//! Convex quadratic programs over the unit box:
//!
//! ```text
//! minimize 0.5 s'Bs + c's   subject to 0 <= s_n <= 1
//! ```
//!
//! Solved by projected gradient with Barzilai-Borwein steps and a monotone
//! Armijo safeguard. The safeguard falls back to `1/L`, with `L` the
//! largest Gershgorin row bound of the (scaled) `B`, which always gives
//! sufficient decrease for a quadratic. Optimality is measured by the
//! projected gradient residual `||s - clip(s - (Bs + c))||_inf`.
//!
//! For an explicit `B` the iteration runs in the metric `D = diag(B)`:
//! steps are `clip(s - t D^-1 g)`. For a box the diagonal metric keeps the
//! projection a plain clip, and it removes the column-scale spread that
//! makes sparse-recovery problems badly conditioned.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

const ARMIJO_C1: f64 = 1e-4;

/// `B` symmetric PSD, `c` of matching length.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl QpProblem {
    pub fn new(b: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if !b.is_square() || b.nrows() != c.len() {
            return Err(invalid(format!(
                "QP dimensions disagree: B is {}x{}, c has {}",
                b.nrows(),
                b.ncols(),
                c.len()
            )));
        }
        if b.iter().chain(c.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("QP data must be finite"));
        }
        let scale = b.amax().max(1.0);
        for i in 0..b.nrows() {
            for j in 0..i {
                if (b[(i, j)] - b[(j, i)]).abs() > 1e-10 * scale {
                    return Err(invalid(format!("B is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(QpProblem { b, c })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, s: &[f64]) -> f64 {
        let s = DVector::from_column_slice(s);
        0.5 * s.dot(&(&self.b * &s)) + self.c.dot(&s)
    }

    /// Largest Gershgorin row bound `max_i sum_j |B_ij|`.
    pub fn gershgorin_bound(&self) -> f64 {
        self.b
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub s: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point, clipped into the box. Defaults to the origin.
    pub start: Option<Vec<f64>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-8,
            max_iter: 10_000,
            start: None,
        }
    }
}

/// Solves an explicit box QP. On hitting `max_iter` the error carries the
/// last iterate.
pub fn solve_box_qp(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let apply = |x: &[f64], out: &mut [f64]| {
        let y = &p.b * DVector::from_column_slice(x);
        out.copy_from_slice(y.as_slice());
    };
    let n = p.dim();
    let max_diag = p.b.diagonal().max();
    let metric: Vec<f64> = (0..n)
        .map(|i| {
            let d = p.b[(i, i)];
            if max_diag > 0.0 {
                d.max(1e-12 * max_diag)
            } else {
                1.0
            }
        })
        .collect();
    // Gershgorin bound of D^-1/2 B D^-1/2.
    let lipschitz = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| p.b[(i, j)].abs() / (metric[i] * metric[j]).sqrt())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    projected_gradient(apply, p.c.as_slice(), &metric, lipschitz, opts)
}

/// Solves a box QP given only the action `x -> Bx` of the quadratic term
/// and an upper bound `lipschitz` on its largest eigenvalue.
pub fn solve_box_qp_with<F>(
    apply: F,
    c: &[f64],
    lipschitz: f64,
    opts: &QpOptions,
) -> Result<QpSolution>
where
    F: Fn(&[f64], &mut [f64]),
{
    projected_gradient(apply, c, &vec![1.0; c.len()], lipschitz, opts)
}

/// `lipschitz` bounds the spectrum of `B` in the metric `diag(metric)`.
fn projected_gradient<F>(
    apply: F,
    c: &[f64],
    metric: &[f64],
    lipschitz: f64,
    opts: &QpOptions,
) -> Result<QpSolution>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = c.len();
    let lipschitz = lipschitz.max(1e-12);
    let min_step = 1.0 / lipschitz;

    let mut s: Vec<f64> = match &opts.start {
        Some(s0) => s0.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        None => vec![0.0; n],
    };
    let mut bs = vec![0.0; n];
    apply(&s, &mut bs);
    let mut grad: Vec<f64> = bs.iter().zip(c).map(|(a, b)| a + b).collect();
    let mut f = quad_value(&s, &bs, c);

    let mut step = min_step;
    let mut trial = vec![0.0; n];
    let mut b_trial = vec![0.0; n];

    let mut iterations = 0;
    loop {
        let residual = projected_residual(&s, &grad);
        if residual <= opts.tol || iterations >= opts.max_iter {
            return if residual <= opts.tol {
                Ok(QpSolution {
                    s,
                    objective: f,
                    kkt_residual: residual,
                    iterations,
                })
            } else {
                Err(Error::NotConverged {
                    iterations,
                    residual,
                    best: s,
                })
            };
        }
        iterations += 1;

        let mut t = step;
        let f_new = loop {
            let fallback = t <= min_step;
            if fallback {
                t = min_step;
            }
            for i in 0..n {
                trial[i] = (s[i] - t * grad[i] / metric[i]).clamp(0.0, 1.0);
            }
            apply(&trial, &mut b_trial);
            let f_trial = quad_value(&trial, &b_trial, c);
            let decrease: f64 = (0..n).map(|i| grad[i] * (trial[i] - s[i])).sum();
            if fallback || f_trial <= f + ARMIJO_C1 * decrease {
                break f_trial;
            }
            t *= 0.5;
        };

        // Barzilai-Borwein step from the accepted move.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let ds = trial[i] - s[i];
            let g_new = b_trial[i] + c[i];
            ss += ds * ds * metric[i];
            sy += ds * (g_new - grad[i]);
            grad[i] = g_new;
        }
        step = if sy > 0.0 { (ss / sy).max(min_step) } else { 1e12 * min_step };
        std::mem::swap(&mut s, &mut trial);
        std::mem::swap(&mut bs, &mut b_trial);
        // Monotone by construction; guard against round-off creep.
        f = f_new.min(f);
    }
}

fn quad_value(s: &[f64], bs: &[f64], c: &[f64]) -> f64 {
    s.iter()
        .zip(bs)
        .zip(c)
        .map(|((x, bx), ci)| x * (0.5 * bx + ci))
        .sum()
}

/// `||s - clip(s - g, 0, 1)||_inf`.
pub fn projected_residual(s: &[f64], grad: &[f64]) -> f64 {
    s.iter()
        .zip(grad)
        .map(|(x, g)| (x - (x - g).clamp(0.0, 1.0)).abs())
        .fold(0.0, f64::max)
}
