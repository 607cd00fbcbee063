//! Gromov-Wasserstein functionals with squared loss.
//!
//! For a plan `P` between `mu` and `nu` the objective is
//! `sum_{ij,i'j'} P_ij P_i'j' (c_X(x_i, x_i') - c_Y(y_j, y_j'))^2`, and the
//! bilinear form `B(P, Q)` replaces the second copy of `P` by `Q`.
//!
//! Two evaluation routes are provided. The quadruple sum runs over the
//! nonzero entries of both plans. The factorized route expands the square
//! into moments of the marginals and of each plan, which costs `O(N M d^2)`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::measures::DiscreteMeasure;
use crate::transport::{solve_ot, CostMatrix, TransportPlan};
use crate::{Error, Result};

/// Plans with more than this many entries are evaluated by moment expansion.
pub const QUADRUPLE_SUM_LIMIT: usize = 4096;

/// Largest instance accepted by [`brute_force_qap`].
pub const QAP_MAX_POINTS: usize = 10;

/// Intra-space cost used on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GwCostKind {
    /// `c(x, x') = |x - x'|^2`.
    Quadratic,
    /// `c(x, x') = <x, x'>`.
    InnerProduct,
}

impl GwCostKind {
    pub fn intra(self, p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
        match self {
            GwCostKind::Quadratic => {
                let d = &p - &q;
                d.dot(&d)
            }
            GwCostKind::InnerProduct => p.dot(&q),
        }
    }

    /// Pairwise intra-space cost matrix of a measure.
    pub fn intra_matrix(self, mu: &DiscreteMeasure) -> Array2<f64> {
        let n = mu.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.intra(mu.point(i), mu.point(j)))
    }

    /// Constant of the null-marginal identity `B(alpha, alpha) = k ||sum m x (x) y||_F^2`.
    pub fn null_marginal_coefficient(self) -> f64 {
        match self {
            GwCostKind::Quadratic => -8.0,
            GwCostKind::InnerProduct => -2.0,
        }
    }
}

impl std::str::FromStr for GwCostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" | "q" => Ok(GwCostKind::Quadratic),
            "inner" | "inner_product" | "ip" => Ok(GwCostKind::InnerProduct),
            other => Err(Error::InvalidParameter(format!("unknown cost kind {other:?}"))),
        }
    }
}

/// Upper bound of the GW integrand, used to express tolerances relative to the instance.
pub fn gw_scale(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: GwCostKind) -> f64 {
    let spread = |m: &DiscreteMeasure| -> f64 {
        match kind {
            GwCostKind::Quadratic => m.diameter().powi(2),
            GwCostKind::InnerProduct => m.squared_norms().iter().fold(0.0, |a: f64, &v| a.max(v)),
        }
    };
    (spread(mu) + spread(nu)).powi(2).max(f64::MIN_POSITIVE)
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure, plan: &TransportPlan) -> Result<()> {
    plan.check_couples(mu, nu)
}

/// `GW(P) = B(P, P)`. Uses the quadruple sum up to [`QUADRUPLE_SUM_LIMIT`] entries.
pub fn gw_value(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<f64> {
    gw_bilinear(plan, plan, mu, nu, kind)
}

/// Symmetric bilinear form `B(P, Q) = int (c_X - c_Y)^2 dP (x) Q`.
pub fn gw_bilinear(
    pi: &TransportPlan,
    gamma: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<f64> {
    check_dims(mu, nu, pi)?;
    check_dims(mu, nu, gamma)?;
    if mu.len() * nu.len() > QUADRUPLE_SUM_LIMIT {
        Ok(bilinear_factorized(pi, gamma, mu, nu, kind))
    } else {
        Ok(bilinear_quadruple(pi, gamma, mu, nu, kind))
    }
}

/// Quadruple-sum evaluation of `B(P, Q)` over the nonzero entries of both plans.
pub fn gw_bilinear_quadruple(
    pi: &TransportPlan,
    gamma: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<f64> {
    check_dims(mu, nu, pi)?;
    check_dims(mu, nu, gamma)?;
    Ok(bilinear_quadruple(pi, gamma, mu, nu, kind))
}

/// Moment-expansion evaluation of `B(P, Q)`.
pub fn gw_bilinear_factorized(
    pi: &TransportPlan,
    gamma: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<f64> {
    check_dims(mu, nu, pi)?;
    check_dims(mu, nu, gamma)?;
    Ok(bilinear_factorized(pi, gamma, mu, nu, kind))
}

fn bilinear_quadruple(
    pi: &TransportPlan,
    gamma: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> f64 {
    let cx = kind.intra_matrix(mu);
    let cy = kind.intra_matrix(nu);
    let sp = pi.support(0.0);
    let sg = gamma.support(0.0);
    sp.par_iter()
        .map(|&(i, j, p)| {
            sg.iter()
                .map(|&(k, l, q)| {
                    let d = cx[[i, k]] - cy[[j, l]];
                    q * d * d
                })
                .sum::<f64>()
                * p
        })
        .sum()
}

/// Marginal moments shared by every plan between the same measures.
struct MarginalMoments {
    mean: Array1<f64>,
    second: Array2<f64>,
    sq_norm_mean: f64,
    fourth: f64,
    weighted_mean: Array1<f64>,
}

impl MarginalMoments {
    fn of(m: &DiscreteMeasure) -> Self {
        let w = m.weights();
        let pts = m.points();
        let sq = m.squared_norms();
        let weighted = &w.view() * &sq;
        Self {
            mean: w.dot(pts),
            second: pts.t().dot(&(pts * &w.view().insert_axis(Axis(1)))),
            sq_norm_mean: w.dot(&sq),
            fourth: w.dot(&(&sq * &sq)),
            weighted_mean: weighted.dot(pts),
        }
    }

    /// `int int |x - x'|^4 dmu dmu`.
    fn quartic_self(&self) -> f64 {
        2.0 * self.fourth + 2.0 * self.sq_norm_mean.powi(2) + 4.0 * frob2(&self.second)
            - 8.0 * self.weighted_mean.dot(&self.mean)
    }
}

/// Moments of a single plan.
struct PlanMoments {
    /// `sum P_ij |x_i|^2 |y_j|^2`
    sq_sq: f64,
    /// `sum P_ij |x_i|^2 y_j`
    xsq_y: Array1<f64>,
    /// `sum P_ij |y_j|^2 x_i`
    ysq_x: Array1<f64>,
    /// `sum P_ij x_i y_j^T`  (n x d)
    cross: Array2<f64>,
}

impl PlanMoments {
    fn of(plan: &TransportPlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        let p = plan.matrix();
        let x = mu.points();
        let y = nu.points();
        let xsq = mu.squared_norms();
        let ysq = nu.squared_norms();
        let p_ysq = p.dot(&ysq);
        let pt_xsq = p.t().dot(&xsq);
        Self {
            sq_sq: xsq.dot(&p_ysq),
            xsq_y: pt_xsq.dot(y),
            ysq_x: p_ysq.dot(x),
            cross: x.t().dot(&p.dot(y)),
        }
    }
}

fn frob2(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn frob_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| u * v).sum()
}

fn bilinear_factorized(
    pi: &TransportPlan,
    gamma: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> f64 {
    // The quadratic cost is translation invariant; centering first avoids
    // cancellation between the large raw moments.
    let centered;
    let (mu, nu) = match kind {
        GwCostKind::Quadratic => {
            centered = (mu.center(), nu.center());
            (&centered.0, &centered.1)
        }
        GwCostKind::InnerProduct => (mu, nu),
    };
    let mx = MarginalMoments::of(mu);
    let my = MarginalMoments::of(nu);
    let p = PlanMoments::of(pi, mu, nu);
    let q = PlanMoments::of(gamma, mu, nu);
    match kind {
        GwCostKind::InnerProduct => {
            frob2(&mx.second) + frob2(&my.second) - 2.0 * frob_inner(&p.cross, &q.cross)
        }
        GwCostKind::Quadratic => {
            let cross = p.sq_sq + q.sq_sq + 2.0 * mx.sq_norm_mean * my.sq_norm_mean
                - 2.0 * (&p.xsq_y + &q.xsq_y).dot(&my.mean)
                - 2.0 * (&p.ysq_x + &q.ysq_x).dot(&mx.mean)
                + 4.0 * frob_inner(&p.cross, &q.cross);
            mx.quartic_self() + my.quartic_self() - 2.0 * cross
        }
    }
}

/// Cross-correlation `M* = sum_ij P_ij y_j x_i^T` (`d x n`).
pub fn cross_matrix(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<Array2<f64>> {
    plan.check_couples(mu, nu)?;
    Ok(nu.points().t().dot(&plan.matrix().t().dot(mu.points())))
}

/// Reduced linearized cost together with the data it was built from.
#[derive(Debug, Clone)]
pub struct LinearizedCost {
    pub cost: CostMatrix,
    /// `M*` computed on the (possibly centered) measures.
    pub cross: Array2<f64>,
    /// Set when the quadratic kind had to center non-centered inputs.
    pub auto_centered: bool,
}

/// Linearization of GW around `pi_star`, up to plan-independent terms.
///
/// Inner product: `C_ij = -<M* x_i, y_j>`. Quadratic (centered measures):
/// `C_ij = -|x_i|^2 |y_j|^2 - 4 <M* x_i, y_j>`. The quadratic kind is
/// translation invariant, so non-centered inputs are centered first and
/// `auto_centered` is set.
pub fn linearized_cost(
    pi_star: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<LinearizedCost> {
    pi_star.check_couples(mu, nu)?;
    let (mu_c, nu_c, auto_centered) = match kind {
        GwCostKind::InnerProduct => (mu.clone(), nu.clone(), false),
        GwCostKind::Quadratic => {
            let tol = |m: &DiscreteMeasure| {
                1e-12 * (1.0 + m.points().iter().fold(0.0, |a: f64, v| a.max(v.abs())))
            };
            let centered = mu.is_centered(tol(mu)) && nu.is_centered(tol(nu));
            if centered {
                (mu.clone(), nu.clone(), false)
            } else {
                (mu.center(), nu.center(), true)
            }
        }
    };
    let m_star = cross_matrix(pi_star, &mu_c, &nu_c)?;
    // (M* x_i) . y_j for all pairs: X M*^T Y^T.
    let bilinear = mu_c.points().dot(&m_star.t()).dot(&nu_c.points().t());
    let entries = match kind {
        GwCostKind::InnerProduct => -bilinear,
        GwCostKind::Quadratic => {
            let xs = mu_c.squared_norms();
            let ys = nu_c.squared_norms();
            let outer = Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| xs[i] * ys[j]);
            -outer - 4.0 * bilinear
        }
    };
    Ok(LinearizedCost {
        cost: CostMatrix::new(entries)?,
        cross: m_star,
        auto_centered,
    })
}

/// 1D linearized quadratic cost at correlation `m`: `-x_i^2 y_j^2 - 4 m x_i y_j`.
pub fn cgw_m_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, m: f64) -> Result<CostMatrix> {
    let xs = mu.coords_1d()?;
    let ys = nu.coords_1d()?;
    CostMatrix::from_fn(xs.len(), ys.len(), |(i, j)| {
        let (x, y) = (xs[i], ys[j]);
        -x * x * y * y - 4.0 * m * x * y
    })
}

/// Exhaustive QAP optimum between two uniform measures of equal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QapSolution {
    /// `permutation[i]` is the atom of `nu` matched to atom `i` of `mu`.
    pub permutation: Vec<usize>,
    /// GW value of the permutation plan (uniform `1/N` masses).
    pub value: f64,
}

impl QapSolution {
    pub fn plan(&self) -> TransportPlan {
        TransportPlan::from_permutation(&self.permutation).expect("valid permutation")
    }
}

/// Minimizes `sum_ij (c_X(x_i, x_j) - c_Y(y_s(i), y_s(j)))^2 / N^2` over all
/// permutations `s`.
///
/// Permutations are explored in lexicographic order with branch-and-bound
/// (all terms are nonnegative). Among optima equal up to `1e-12 * scale`, the
/// lexicographically smallest permutation is returned. The first position is
/// split across worker threads and results are reduced in index order.
pub fn brute_force_qap(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<QapSolution> {
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: nu.len(),
        });
    }
    if n > QAP_MAX_POINTS {
        return Err(Error::TooLarge {
            n,
            max: QAP_MAX_POINTS,
        });
    }
    if !mu.is_uniform(1e-9) || !nu.is_uniform(1e-9) {
        return Err(Error::NonUniform);
    }
    let cx = kind.intra_matrix(mu);
    let cy = kind.intra_matrix(nu);
    let tie = 1e-12 * gw_scale(mu, nu, kind) * (n * n) as f64;
    let global = AtomicU64::new(f64::INFINITY.to_bits());

    let blocks: Vec<Option<(f64, Vec<usize>)>> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut search = QapSearch {
                n,
                cx: &cx,
                cy: &cy,
                tie,
                global: &global,
                perm: vec![first],
                used: {
                    let mut u = vec![false; n];
                    u[first] = true;
                    u
                },
                best: None,
            };
            let start = sq(cx[[0, 0]] - cy[[first, first]]);
            search.descend(start);
            search.best
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for cand in blocks.into_iter().flatten() {
        match &best {
            Some((v, _)) if !(cand.0 < *v - tie) => {}
            _ => best = Some(cand),
        }
    }
    let (total, permutation) = best.ok_or_else(|| Error::Solver("empty search".into()))?;
    Ok(QapSolution {
        permutation,
        value: total / (n * n) as f64,
    })
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

struct QapSearch<'a> {
    n: usize,
    cx: &'a Array2<f64>,
    cy: &'a Array2<f64>,
    tie: f64,
    global: &'a AtomicU64,
    perm: Vec<usize>,
    used: Vec<bool>,
    best: Option<(f64, Vec<usize>)>,
}

impl QapSearch<'_> {
    fn bound(&self) -> f64 {
        let g = f64::from_bits(self.global.load(Ordering::Relaxed));
        let local = self.best.as_ref().map_or(f64::INFINITY, |b| b.0);
        g.min(local)
    }

    fn descend(&mut self, partial: f64) {
        if partial > self.bound() + self.tie {
            return;
        }
        let k = self.perm.len();
        if k == self.n {
            let improves = match &self.best {
                None => true,
                Some((v, _)) => partial < *v - self.tie,
            };
            if improves {
                self.best = Some((partial, self.perm.clone()));
                self.global.fetch_min(partial.to_bits(), Ordering::Relaxed);
            }
            return;
        }
        for j in 0..self.n {
            if self.used[j] {
                continue;
            }
            // New terms: pairs (k, i) and (i, k) for assigned i, plus (k, k).
            let mut add = sq(self.cx[[k, k]] - self.cy[[j, j]]);
            for (i, &pi) in self.perm.iter().enumerate() {
                add += 2.0 * sq(self.cx[[k, i]] - self.cy[[j, pi]]);
            }
            self.used[j] = true;
            self.perm.push(j);
            self.descend(partial + add);
            self.perm.pop();
            self.used[j] = false;
        }
    }
}

/// Output of [`alternating_minimization`].
#[derive(Debug, Clone)]
pub struct AltMinResult {
    pub plan: TransportPlan,
    pub value: f64,
    /// GW value of the initial plan followed by one entry per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternating minimization: `P_{k+1}` solves the OT problem with cost
/// `linearized_cost(P_k)`. Stops when successive GW values differ by at most
/// `tol` or after `max_iter` linear solves.
pub fn alternating_minimization(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
    init: &TransportPlan,
    max_iter: usize,
    tol: f64,
) -> Result<AltMinResult> {
    init.check_couples(mu, nu)?;
    let mut plan = init.clone();
    let mut value = gw_value(&plan, mu, nu, kind)?;
    let mut trace = vec![value];
    let mut iterations = 0;
    for it in 1..=max_iter {
        let lin = linearized_cost(&plan, mu, nu, kind)?;
        let (next, _) = solve_ot(&lin.cost, mu.weights(), nu.weights())?;
        let next_value = gw_value(&next, mu, nu, kind)?;
        trace.push(next_value);
        let converged = (next_value - value).abs() <= tol;
        plan = next;
        value = next_value;
        iterations = it;
        if converged {
            break;
        }
    }
    Ok(AltMinResult {
        plan,
        value,
        trace,
        iterations,
    })
}

/// Finite signed measure on `X x Y` with null marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    points_x: Array2<f64>,
    points_y: Array2<f64>,
    masses: Array1<f64>,
}

impl SignedMeasure {
    /// Atoms `(x_k, y_k)` with mass `m_k`. Both marginals must vanish to `1e-12`
    /// (masses grouped by identical coordinates).
    pub fn new(points_x: Array2<f64>, points_y: Array2<f64>, masses: Array1<f64>) -> Result<Self> {
        let k = masses.len();
        if points_x.nrows() != k || points_y.nrows() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: points_x.nrows().min(points_y.nrows()),
            });
        }
        if masses.iter().chain(points_x.iter()).chain(points_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signed measure"));
        }
        let alpha = Self {
            points_x,
            points_y,
            masses,
        };
        let residual = marginal_residual(&alpha.points_x, &alpha.masses)
            .max(marginal_residual(&alpha.points_y, &alpha.masses));
        if residual > 1e-12 {
            return Err(Error::MarginalMismatch(residual));
        }
        Ok(alpha)
    }

    /// Signed measure on the grid `xs x ys` with mass matrix `masses`.
    pub fn on_grid(xs: &Array2<f64>, ys: &Array2<f64>, masses: &Array2<f64>) -> Result<Self> {
        let (p, q) = masses.dim();
        if xs.nrows() != p || ys.nrows() != q {
            return Err(Error::DimensionMismatch {
                expected: p * q,
                got: xs.nrows() * ys.nrows(),
            });
        }
        let mut px = Array2::zeros((p * q, xs.ncols()));
        let mut py = Array2::zeros((p * q, ys.ncols()));
        let mut m = Array1::zeros(p * q);
        for i in 0..p {
            for j in 0..q {
                let k = i * q + j;
                px.row_mut(k).assign(&xs.row(i));
                py.row_mut(k).assign(&ys.row(j));
                m[k] = masses[[i, j]];
            }
        }
        Self::new(px, py, m)
    }

    pub fn points_x(&self) -> &Array2<f64> {
        &self.points_x
    }

    pub fn points_y(&self) -> &Array2<f64> {
        &self.points_y
    }

    pub fn masses(&self) -> &Array1<f64> {
        &self.masses
    }

    /// `sum_k m_k x_k y_k^T`.
    pub fn moment(&self) -> Array2<f64> {
        let weighted = &self.points_x * &self.masses.view().insert_axis(Axis(1));
        weighted.t().dot(&self.points_y)
    }

    /// Scale of the quadruple sum: `(sum |m|)^2 (max c_X + max c_Y)^2`.
    pub fn scale(&self, kind: GwCostKind) -> f64 {
        let total: f64 = self.masses.iter().map(|m| m.abs()).sum();
        let spread = |pts: &Array2<f64>| -> f64 {
            let r = pts
                .rows()
                .into_iter()
                .map(|r| r.dot(&r))
                .fold(0.0, f64::max);
            match kind {
                GwCostKind::Quadratic => 4.0 * r,
                GwCostKind::InnerProduct => r,
            }
        };
        (total * (spread(&self.points_x) + spread(&self.points_y))).powi(2).max(f64::MIN_POSITIVE)
    }
}

fn marginal_residual(points: &Array2<f64>, masses: &Array1<f64>) -> f64 {
    let mut groups: Vec<(Vec<u64>, f64)> = Vec::new();
    for (k, row) in points.rows().into_iter().enumerate() {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match groups.iter_mut().find(|(g, _)| *g == key) {
            Some((_, s)) => *s += masses[k],
            None => groups.push((key, masses[k])),
        }
    }
    groups.iter().fold(0.0, |a: f64, (_, s)| a.max(s.abs()))
}

/// `int int (c_X(x, x') - c_Y(y, y'))^2 dalpha dalpha` by direct summation.
pub fn null_marginal_form(alpha: &SignedMeasure, kind: GwCostKind) -> f64 {
    let k = alpha.masses.len();
    let mut total = 0.0;
    for a in 0..k {
        let mut row = 0.0;
        for b in 0..k {
            let d = kind.intra(alpha.points_x.row(a), alpha.points_x.row(b))
                - kind.intra(alpha.points_y.row(a), alpha.points_y.row(b));
            row += alpha.masses[b] * d * d;
        }
        total += alpha.masses[a] * row;
    }
    total
}

/// Closed form of [`null_marginal_form`]: `-8 ||M||_F^2` for the quadratic
/// cost and `-2 ||M||_F^2` for the inner product, `M = sum m x (x) y`.
pub fn null_marginal_closed_form(alpha: &SignedMeasure, kind: GwCostKind) -> f64 {
    kind.null_marginal_coefficient() * frob2(&alpha.moment())
}
