//! Gradient descent over point positions that pushes the identity pairing of
//! `(X, Y)` below both monotone rearrangements.
//!
//! With `G(X, Y) = (1/N^2) sum_ij ((x_i - x_j)^2 - (y_i - y_j)^2)^2`, the objective is
//! `F(X, Y) = G(X, Y) - min(G(sort X, sort Y), G(sort X, rev sort Y))`.
//! `F < 0` certifies that neither monotone rearrangement of the marginals is
//! GW-optimal. Sorting is differentiated with the permutation frozen at the
//! current point, which is exact away from ties.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gw::{gw_value, GwCostKind};
use crate::measures::{sorted_order, DiscreteMeasure};
use crate::transport::{monotone_plan, Monotone, TransportPlan};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub n_points: usize,
    pub n_iter: usize,
    pub step: f64,
    pub early_stop: f64,
    pub seed: u64,
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 4 {
            return Err(Error::InvalidParameter(format!(
                "n_points must be at least 4, got {}",
                self.n_points
            )));
        }
        if self.n_iter < 1 {
            return Err(Error::InvalidParameter("n_iter must be at least 1".into()));
        }
        // A zero step is accepted so that the descent can be frozen for diagnostics.
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid step {}", self.step)));
        }
        if self.early_stop.is_nan() {
            return Err(Error::InvalidParameter("early_stop is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub x_final: Vec<f64>,
    pub y_final: Vec<f64>,
    /// `F` at each visited point; the last entry belongs to the final positions.
    pub objective_trace: Vec<f64>,
    /// The final pair passes [`is_certificate`].
    pub success: bool,
    pub iterations_run: usize,
    pub seed: u64,
}

impl AdversarialResult {
    /// The identity pairing `(1/N) sum delta_{(x_i, y_i)}` with its marginals.
    pub fn plan(&self) -> Result<(DiscreteMeasure, DiscreteMeasure, TransportPlan)> {
        identity_pairing(&self.x_final, &self.y_final)
    }
}

fn identity_pairing(x: &[f64], y: &[f64]) -> Result<(DiscreteMeasure, DiscreteMeasure, TransportPlan)> {
    let mu = DiscreteMeasure::uniform_1d(x)?;
    let nu = DiscreteMeasure::uniform_1d(y)?;
    let id: Vec<usize> = (0..x.len()).collect();
    Ok((mu, nu, TransportPlan::from_permutation(&id)?))
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptySupport);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("positions"));
    }
    Ok(())
}

/// `G` for the pairing `x_i <-> y_i`, uniform masses.
fn pair_cost(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = (x[i] - x[j]).powi(2) - (y[i] - y[j]).powi(2);
            total += d * d;
        }
    }
    total / (n * n) as f64
}

/// `dG/dx_k = (8/N^2) sum_j D_kj (x_k - x_j)`, `dG/dy_k = -(8/N^2) sum_j D_kj (y_k - y_j)`.
fn pair_cost_grad(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let c = 8.0 / (n * n) as f64;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for k in 0..n {
        for j in 0..n {
            let (dx, dy) = (x[k] - x[j], y[k] - y[j]);
            let d = dx * dx - dy * dy;
            gx[k] += d * dx;
            gy[k] -= d * dy;
        }
        gx[k] *= c;
        gy[k] *= c;
    }
    (gx, gy)
}

/// Sorted copies and the frozen permutations; `reverse` selects the
/// non-increasing branch.
struct Branch {
    x_order: Vec<usize>,
    y_order: Vec<usize>,
    value: f64,
}

impl Branch {
    fn gather(v: &[f64], order: &[usize]) -> Vec<f64> {
        order.iter().map(|&i| v[i]).collect()
    }

    fn build(x: &[f64], y: &[f64], x_order: &[usize], y_sorted_order: &[usize], reverse: bool) -> Self {
        let mut y_order = y_sorted_order.to_vec();
        if reverse {
            y_order.reverse();
        }
        let value = pair_cost(&Self::gather(x, x_order), &Self::gather(y, &y_order));
        Self {
            x_order: x_order.to_vec(),
            y_order,
            value,
        }
    }
}

/// The monotone branch realizing the minimum; the non-decreasing one on ties.
fn best_branch(x: &[f64], y: &[f64]) -> Branch {
    let xo = sorted_order(x);
    let yo = sorted_order(y);
    let up = Branch::build(x, y, &xo, &yo, false);
    let down = Branch::build(x, y, &xo, &yo, true);
    if down.value < up.value {
        down
    } else {
        up
    }
}

/// `F(X, Y)` by direct summation over positions.
pub fn objective_f(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    Ok(pair_cost(x, y) - best_branch(x, y).value)
}

/// `F(X, Y)` through [`gw_value`] on explicit identity and monotone plans.
pub fn objective_f_via_plans(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let (mu, nu, id) = identity_pairing(x, y)?;
    let kind = GwCostKind::Quadratic;
    let g_id = gw_value(&id, &mu, &nu, kind)?;
    let up = gw_value(&monotone_plan(&mu, &nu, Monotone::NonDecreasing)?, &mu, &nu, kind)?;
    let down = gw_value(&monotone_plan(&mu, &nu, Monotone::NonIncreasing)?, &mu, &nu, kind)?;
    Ok(g_id - up.min(down))
}

/// Gradient of `F` with the sorting permutations and the min-branch frozen.
pub fn grad_f(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check(x, y)?;
    let (mut gx, mut gy) = pair_cost_grad(x, y);
    let branch = best_branch(x, y);
    let xs = Branch::gather(x, &branch.x_order);
    let ys = Branch::gather(y, &branch.y_order);
    let (bx, by) = pair_cost_grad(&xs, &ys);
    for p in 0..x.len() {
        gx[branch.x_order[p]] -= bx[p];
        gy[branch.y_order[p]] -= by[p];
    }
    Ok((gx, gy))
}

fn centered_uniform<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mean = Array1::from(v.clone()).mean().unwrap_or(0.0);
    v.into_iter().map(|t| t - mean).collect()
}

/// Initial positions used by [`descend`] for a given seed.
pub fn initial_positions(n_points: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = centered_uniform(&mut rng, n_points);
    let y = centered_uniform(&mut rng, n_points);
    (x, y)
}

/// Relative size below which a negative `F` is treated as rounding noise.
pub const SUCCESS_REL_TOL: f64 = 1e-9;

/// `(G(X, Y), min over the two monotone branches)`.
pub fn objective_parts(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check(x, y)?;
    Ok((pair_cost(x, y), best_branch(x, y).value))
}

/// Whether `(X, Y)` certifies that both monotone rearrangements are
/// suboptimal: `F < -SUCCESS_REL_TOL * (G(X, Y) + min branch)`.
pub fn is_certificate(x: &[f64], y: &[f64]) -> Result<bool> {
    let (g, b) = objective_parts(x, y)?;
    let f = g - b;
    Ok(f.is_finite() && f < -SUCCESS_REL_TOL * (g.abs() + b.abs()))
}

/// Plain gradient descent from random centered positions in `[0, 1]`.
///
/// Iteration `k` records `F(X_k, Y_k)`, stops if `F < early_stop` or the
/// budget is spent, and otherwise steps to `(X_{k+1}, Y_{k+1})`. The returned
/// positions are therefore the ones whose objective ends the trace. The run
/// also ends early if the iterates leave the finite range.
pub fn descend(cfg: &AdversarialConfig) -> Result<AdversarialResult> {
    cfg.validate()?;
    let (x, y) = initial_positions(cfg.n_points, cfg.seed);
    descend_from(cfg, x, y)
}

/// [`descend`] from given positions (the seed is only recorded).
pub fn descend_from(cfg: &AdversarialConfig, mut x: Vec<f64>, mut y: Vec<f64>) -> Result<AdversarialResult> {
    cfg.validate()?;
    check(&x, &y)?;
    let mut trace = Vec::with_capacity(cfg.n_iter);
    for k in 0..cfg.n_iter {
        let f = objective_f(&x, &y)?;
        trace.push(f);
        if !f.is_finite() || f < cfg.early_stop || k + 1 == cfg.n_iter {
            break;
        }
        let (gx, gy) = grad_f(&x, &y)?;
        let next_x: Vec<f64> = x.iter().zip(&gx).map(|(v, g)| v - cfg.step * g).collect();
        let next_y: Vec<f64> = y.iter().zip(&gy).map(|(v, g)| v - cfg.step * g).collect();
        if next_x.iter().chain(&next_y).any(|v| !v.is_finite()) {
            break;
        }
        x = next_x;
        y = next_y;
    }
    let success = is_certificate(&x, &y)?;
    Ok(AdversarialResult {
        x_final: x,
        y_final: y,
        iterations_run: trace.len(),
        objective_trace: trace,
        success,
        seed: cfg.seed,
    })
}

/// Common rescaling of `(X, Y)` to unit sup-norm. GW plans are unchanged and
/// `F` is multiplied by a positive factor, so certificates are preserved.
pub fn normalize_pair(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check(x, y)?;
    let r = x.iter().chain(y).fold(0.0, |a: f64, v| a.max(v.abs()));
    if r == 0.0 {
        return Ok((x.to_vec(), y.to_vec()));
    }
    Ok((x.iter().map(|v| v / r).collect(), y.iter().map(|v| v / r).collect()))
}

/// Outcome of independent restarts with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub runs: Vec<AdversarialResult>,
    /// Index in `runs` of the first successful restart.
    pub first_success: Option<usize>,
}

impl RestartOutcome {
    pub fn success(&self) -> Option<&AdversarialResult> {
        self.first_success.map(|i| &self.runs[i])
    }
}

/// Runs `restarts` descents concurrently. The outcome does not depend on
/// scheduling; with `stop_at_success` the runs after the first success are
/// dropped from the report.
pub fn descend_restarts(cfg: &AdversarialConfig, restarts: usize, stop_at_success: bool) -> Result<RestartOutcome> {
    cfg.validate()?;
    if restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart is required".into()));
    }
    let mut runs: Vec<AdversarialResult> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| {
            descend(&AdversarialConfig {
                seed: cfg.seed.wrapping_add(k),
                ..*cfg
            })
        })
        .collect::<Result<_>>()?;
    let first_success = runs.iter().position(|r| r.success);
    if stop_at_success {
        if let Some(i) = first_success {
            runs.truncate(i + 1);
        }
    }
    Ok(RestartOutcome { runs, first_success })
}
