//! Log-domain Sinkhorn solver for the beta-weighted entropic transport
//! objective
//!
//!   min_pi  beta * <pi, C> + (1 - beta) * sum pi log pi
//!
//! over couplings with prescribed marginals. Dividing by beta reduces this to
//! standard entropic transport with scale lambda = (1 - beta) / beta, which is
//! what the iteration below solves. Updates run in log space so small lambda
//! does not underflow the Gibbs kernel, and lambda is annealed from a coarse
//! start down to its target value (warm-starting the potentials at each
//! level), which keeps the iteration count tractable in the near-exact
//! regime.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::plan::TransportPlan;

/// Default stopping tolerance on the worst marginal violation.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Marginal sums are validated against this slack before solving.
const MARGINAL_SUM_TOL: f64 = 1e-12;

/// Rows below this count run serially; above it, updates fan out.
const PAR_THRESHOLD: usize = 256;

/// Annealing: each level divides lambda by this ratio.
const ANNEAL_RATIO: f64 = 4.0;
/// Annealing starts no higher than max|C| / this factor.
const ANNEAL_START_DIV: f64 = 8.0;
/// Iteration budget per intermediate annealing level.
const ANNEAL_LEVEL_ITERS: usize = 60;

/// Dual potentials (divided by lambda) plus convergence diagnostics; the plan
/// entry (i, j) is `exp(fs[i] + gs[j] - c[i][j] / lambda)`.
pub(crate) struct SinkhornSolution {
    pub fs: Vec<f64>,
    pub gs: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
}

impl SinkhornSolution {
    #[inline]
    pub fn plan_entry(&self, c: &Matrix, i: usize, j: usize) -> f64 {
        let (fi, gj) = (self.fs[i], self.gs[j]);
        if fi == f64::NEG_INFINITY || gj == f64::NEG_INFINITY {
            0.0
        } else {
            (fi + gj - c.get(i, j) / self.lambda).exp()
        }
    }
}

fn validate_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!("{name} marginal has a negative or non-finite entry")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::Domain(format!("{name} marginal sums to {total}, expected 1")));
    }
    Ok(())
}

/// Entropic scale equivalent to the beta weighting: lambda = (1 - beta) / beta.
pub fn lambda_from_beta(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok((1.0 - beta) / beta)
}

/// Scaled-domain state for one annealing level: `cs = C / lambda` and the
/// potentials `fs = f / lambda`, `gs = g / lambda`.
struct Scaled<'a> {
    cs: &'a [f64],
    n: usize,
    m: usize,
}

impl Scaled<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.cs[i * self.m..(i + 1) * self.m]
    }
}

/// log(sum(exp(v))) with max shift over a cost row combined with potentials.
#[inline]
fn lse_row(row: &[f64], pots: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (c, &p) in row.iter().zip(pots) {
        let t = p - c;
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0;
    for (c, &p) in row.iter().zip(pots) {
        s += (p - c - max).exp();
    }
    max + s.ln()
}

fn update_rows(fs: &mut [f64], gs: &[f64], sc: &Scaled, log_a: &[f64], parallel: bool) {
    let body = |(i, fi): (usize, &mut f64)| {
        if log_a[i] == f64::NEG_INFINITY {
            *fi = f64::NEG_INFINITY;
        } else {
            *fi = log_a[i] - lse_row(sc.row(i), gs);
        }
    };
    if parallel {
        fs.par_iter_mut().enumerate().for_each(|(i, fi)| body((i, fi)));
    } else {
        fs.iter_mut().enumerate().for_each(body);
    }
}

/// Per-column streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LseAcc {
    max: f64,
    sum: f64,
}

impl LseAcc {
    const EMPTY: LseAcc = LseAcc { max: f64::NEG_INFINITY, sum: 0.0 };

    #[inline]
    fn push(&mut self, t: f64) {
        if t <= self.max {
            self.sum += (t - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        }
    }

    fn merge(self, other: LseAcc) -> LseAcc {
        if other.max == f64::NEG_INFINITY {
            return self;
        }
        if self.max == f64::NEG_INFINITY {
            return other;
        }
        let max = self.max.max(other.max);
        LseAcc {
            max,
            sum: self.sum * (self.max - max).exp() + other.sum * (other.max - max).exp(),
        }
    }

    fn value(self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Column update streams over the row-major cost to stay cache friendly;
/// in the parallel path each worker folds a row-chunk into per-column
/// accumulators which are then merged.
fn update_cols(gs: &mut [f64], fs: &[f64], sc: &Scaled, log_b: &[f64], parallel: bool) {
    let m = sc.m;
    let fold_chunk = |accs: &mut Vec<LseAcc>, rows: (usize, usize)| {
        for i in rows.0..rows.1 {
            let fi = fs[i];
            if fi == f64::NEG_INFINITY {
                continue;
            }
            let row = sc.row(i);
            for (acc, c) in accs.iter_mut().zip(row) {
                acc.push(fi - c);
            }
        }
    };
    let total: Vec<LseAcc> = if parallel {
        let workers = rayon::current_num_threads().max(1);
        let chunk = sc.n.div_ceil(workers);
        let bounds: Vec<(usize, usize)> =
            (0..sc.n).step_by(chunk.max(1)).map(|s| (s, (s + chunk).min(sc.n))).collect();
        bounds
            .into_par_iter()
            .map(|range| {
                let mut accs = vec![LseAcc::EMPTY; m];
                fold_chunk(&mut accs, range);
                accs
            })
            .reduce(
                || vec![LseAcc::EMPTY; m],
                |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
            )
    } else {
        let mut accs = vec![LseAcc::EMPTY; m];
        fold_chunk(&mut accs, (0, sc.n));
        accs
    };
    for (j, acc) in total.into_iter().enumerate() {
        gs[j] = if log_b[j] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            log_b[j] - acc.value()
        };
    }
}

/// Worst absolute marginal violation of the current plan. After a column
/// update the column marginals match by construction, so the row side
/// dominates; both are measured.
fn marginal_violation(
    fs: &[f64],
    gs: &[f64],
    sc: &Scaled,
    a: &[f64],
    b: &[f64],
    parallel: bool,
) -> f64 {
    let m = sc.m;
    let row_part = |i: usize| -> (f64, Vec<f64>) {
        let fi = fs[i];
        let mut row_sum = 0.0;
        let mut col_contrib = vec![0.0; m];
        if fi != f64::NEG_INFINITY {
            let row = sc.row(i);
            for (j, c) in row.iter().enumerate() {
                let gj = gs[j];
                if gj == f64::NEG_INFINITY {
                    continue;
                }
                let p = (fi + gj - c).exp();
                row_sum += p;
                col_contrib[j] = p;
            }
        }
        ((row_sum - a[i]).abs(), col_contrib)
    };
    let n = fs.len();
    let (mut worst, mut col_sums) = (0.0f64, vec![0.0f64; m]);
    if parallel {
        let parts: Vec<(f64, Vec<f64>)> = (0..n).into_par_iter().map(row_part).collect();
        for (viol, contrib) in parts {
            worst = worst.max(viol);
            for j in 0..m {
                col_sums[j] += contrib[j];
            }
        }
    } else {
        for i in 0..n {
            let (viol, contrib) = row_part(i);
            worst = worst.max(viol);
            for j in 0..m {
                col_sums[j] += contrib[j];
            }
        }
    }
    for j in 0..m {
        worst = worst.max((col_sums[j] - b[j]).abs());
    }
    worst
}

pub(crate) fn solve_potentials(
    c: &Matrix,
    a: &[f64],
    b: &[f64],
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornSolution> {
    let lambda = lambda_from_beta(beta)?;
    if c.rows() != a.len() || c.cols() != b.len() {
        return Err(Error::Shape(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            c.rows(),
            c.cols(),
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("marginals must be non-empty".into()));
    }
    validate_marginal("source", a)?;
    validate_marginal("target", b)?;
    if tol <= 0.0 {
        return Err(Error::Domain(format!("tol must be > 0, got {tol}")));
    }

    let (n, m) = (c.rows(), c.cols());
    let parallel = n.max(m) >= PAR_THRESHOLD;
    // checking marginals costs a full pass over C, so amortize on big instances
    let check_every = if parallel { 10 } else { 1 };

    let log_a: Vec<f64> = a.iter().map(|&v| if v == 0.0 { f64::NEG_INFINITY } else { v.ln() }).collect();
    let log_b: Vec<f64> = b.iter().map(|&v| if v == 0.0 { f64::NEG_INFINITY } else { v.ln() }).collect();

    // annealing schedule: coarse-to-fine, always ending exactly at lambda
    let mut levels = Vec::new();
    let mut level = c.max_abs() / ANNEAL_START_DIV;
    while level > lambda * ANNEAL_RATIO.sqrt() {
        levels.push(level);
        level /= ANNEAL_RATIO;
    }
    levels.push(lambda);

    let mut fs = vec![0.0f64; n];
    let mut gs = vec![0.0f64; m];
    let mut cs = vec![0.0f64; n * m];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut violation = f64::INFINITY;
    let mut prev_lambda = None::<f64>;
    'levels: for (li, &lam) in levels.iter().enumerate() {
        let last = li == levels.len() - 1;
        let inv = 1.0 / lam;
        for (dst, &src) in cs.iter_mut().zip(c.data()) {
            *dst = src * inv;
        }
        if let Some(prev) = prev_lambda {
            let rescale = prev / lam;
            for v in fs.iter_mut().chain(gs.iter_mut()) {
                if *v != f64::NEG_INFINITY {
                    *v *= rescale;
                }
            }
        }
        prev_lambda = Some(lam);
        let sc = Scaled { cs: &cs, n, m };
        let budget = if last { max_iter.saturating_sub(iterations).max(1) } else { ANNEAL_LEVEL_ITERS };
        for it in 0..budget {
            update_rows(&mut fs, &gs, &sc, &log_a, parallel);
            update_cols(&mut gs, &fs, &sc, &log_b, parallel);
            iterations += 1;
            if (it + 1) % check_every == 0 || it + 1 == budget {
                violation = marginal_violation(&fs, &gs, &sc, a, b, parallel);
                if violation < tol {
                    if last {
                        converged = true;
                        break 'levels;
                    }
                    break;
                }
            }
        }
    }
    if violation == f64::INFINITY {
        let inv = 1.0 / lambda;
        for (dst, &src) in cs.iter_mut().zip(c.data()) {
            *dst = src * inv;
        }
        let sc = Scaled { cs: &cs, n, m };
        violation = marginal_violation(&fs, &gs, &sc, a, b, parallel);
    }
    Ok(SinkhornSolution { fs, gs, lambda, iterations, converged, marginal_violation: violation })
}

/// Transport cost `<pi, C>` computed from potentials without materializing
/// the plan.
pub(crate) fn cost_from_potentials(sol: &SinkhornSolution, c: &Matrix) -> f64 {
    let n = sol.fs.len();
    let m = sol.gs.len();
    let inv = 1.0 / sol.lambda;
    let row_cost = |i: usize| -> f64 {
        let fi = sol.fs[i];
        if fi == f64::NEG_INFINITY {
            return 0.0;
        }
        let row = c.row(i);
        let mut s = 0.0;
        for j in 0..m {
            let gj = sol.gs[j];
            if gj == f64::NEG_INFINITY {
                continue;
            }
            s += (fi + gj - row[j] * inv).exp() * row[j];
        }
        s
    };
    if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(row_cost).sum()
    } else {
        (0..n).map(row_cost).sum()
    }
}

/// Solves the beta-weighted entropic transport problem and materializes the
/// coupling. `beta` must lie strictly inside (0, 1); the beta -> 1 limit
/// (exact, unregularized transport) is served by
/// [`exact_ot_small`](super::exact_ot_small) instead.
pub fn sinkhorn(
    c: &Matrix,
    a: &[f64],
    b: &[f64],
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    let sol = solve_potentials(c, a, b, beta, tol, max_iter)?;
    let mut plan = Matrix::zeros(c.rows(), c.cols());
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            plan.set(i, j, sol.plan_entry(c, i, j));
        }
    }
    plan.check_finite("sinkhorn plan")?;
    let transport_cost = cost_from_potentials(&sol, c);
    TransportPlan::new(
        plan,
        a.to_vec(),
        b.to_vec(),
        transport_cost,
        beta,
        sol.iterations,
        sol.converged,
        sol.marginal_violation,
    )
}

/// Sinkhorn with the default tolerance and iteration cap.
pub fn sinkhorn_default(c: &Matrix, a: &[f64], b: &[f64], beta: f64) -> Result<TransportPlan> {
    sinkhorn(c, a, b, beta, DEFAULT_TOL, DEFAULT_MAX_ITER)
}
