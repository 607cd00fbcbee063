//! Discrete optimal transport on the transport polytope `U(a, b)`.

mod simplex;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use simplex::{solve_transport, PivotRule, SimplexOptions, SimplexStats};

use crate::measures::{sorted_order, DiscreteMeasure};
use crate::{Error, Result};

/// Relative marginal tolerance, scaled by the largest marginal weight.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Real `N x M` matrix of pairwise transport costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        Ok(Self(entries))
    }

    pub fn from_fn(n: usize, m: usize, f: impl FnMut((usize, usize)) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((n, m), f))
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Frobenius pairing `<C, P>`.
    pub fn pair(&self, plan: &Array2<f64>) -> f64 {
        (&self.0 * plan).sum()
    }
}

/// A coupling between two weight vectors: nonnegative matrix with prescribed marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    matrix: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    /// Validates marginals to `1e-9 * max weight` and clamps tiny negatives to zero.
    pub fn new(
        mut matrix: Array2<f64>,
        row_marginal: Array1<f64>,
        col_marginal: Array1<f64>,
    ) -> Result<Self> {
        let (n, m) = matrix.dim();
        if row_marginal.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row_marginal.len(),
            });
        }
        if col_marginal.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: col_marginal.len(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plan"));
        }
        if let Some(&v) = matrix.iter().find(|&&v| v < -1e-15) {
            return Err(Error::InvalidParameter(format!("negative plan entry {v:e}")));
        }
        matrix.mapv_inplace(|v| v.max(0.0));
        let plan = Self {
            matrix,
            row_marginal,
            col_marginal,
        };
        let residual = plan.marginal_residual();
        if residual > MARGINAL_TOL * plan.max_weight() {
            return Err(Error::MarginalMismatch(residual));
        }
        Ok(plan)
    }

    /// Plan with marginals read off the matrix itself.
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        let rows = matrix.sum_axis(ndarray::Axis(1));
        let cols = matrix.sum_axis(ndarray::Axis(0));
        Self::new(matrix, rows, cols)
    }

    /// Product coupling `a b^T`.
    pub fn product(a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let matrix = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j]);
        Self {
            matrix,
            row_marginal: a.clone(),
            col_marginal: b.clone(),
        }
    }

    /// Coupling `(1/N) sum_i delta_{(i, perm[i])}` between uniform weights.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        let mut matrix = Array2::zeros((n, n));
        for (i, &j) in perm.iter().enumerate() {
            if j >= n || seen[j] {
                return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation")));
            }
            seen[j] = true;
            matrix[[i, j]] = 1.0 / n as f64;
        }
        let u = Array1::from_elem(n, 1.0 / n as f64);
        Ok(Self {
            matrix,
            row_marginal: u.clone(),
            col_marginal: u,
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn row_marginal(&self) -> &Array1<f64> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Array1<f64> {
        &self.col_marginal
    }

    pub fn dim(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.t().to_owned(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }

    fn max_weight(&self) -> f64 {
        self.row_marginal
            .iter()
            .chain(self.col_marginal.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Largest absolute deviation between matrix sums and stored marginals.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.matrix.sum_axis(ndarray::Axis(1));
        let cols = self.matrix.sum_axis(ndarray::Axis(0));
        let r = (&rows - &self.row_marginal)
            .iter()
            .fold(0.0, |acc: f64, v| acc.max(v.abs()));
        let c = (&cols - &self.col_marginal)
            .iter()
            .fold(0.0, |acc: f64, v| acc.max(v.abs()));
        r.max(c)
    }

    /// Checks that the plan couples `mu` and `nu`.
    pub fn check_couples(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
        let (n, m) = self.dim();
        if n != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: n,
            });
        }
        if m != nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                got: m,
            });
        }
        let rows = self.matrix.sum_axis(ndarray::Axis(1));
        let cols = self.matrix.sum_axis(ndarray::Axis(0));
        let r = (&rows - mu.weights())
            .iter()
            .chain((&cols - nu.weights()).iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()));
        let wmax = mu
            .weights()
            .iter()
            .chain(nu.weights().iter())
            .fold(0.0, |acc: f64, &v| acc.max(v));
        if r > MARGINAL_TOL * wmax {
            return Err(Error::MarginalMismatch(r));
        }
        Ok(())
    }

    /// Nonzero entries `(i, j, mass)` in row-major order.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        self.matrix
            .indexed_iter()
            .filter(|(_, &v)| v > threshold)
            .map(|((i, j), &v)| (i, j, v))
            .collect()
    }
}

/// Checks that `a` and `b` are probability vectors matching the cost shape.
fn check_marginals(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<()> {
    let (n, m) = cost.dim();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.len(),
        });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    for (index, &value) in a.iter().chain(b.iter()).enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("marginals"));
        }
        if value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
    }
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) || sa <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "marginals must have equal positive mass, got {sa} and {sb}"
        )));
    }
    Ok(())
}

/// Exact OT: a vertex of `U(a, b)` minimizing `<C, P>`, and the optimal value.
pub fn solve_ot(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<(TransportPlan, f64)> {
    solve_ot_with(cost, a, b, &SimplexOptions::default())
}

pub fn solve_ot_with(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    opts: &SimplexOptions,
) -> Result<(TransportPlan, f64)> {
    check_marginals(cost, a, b)?;
    let (matrix, _) = solve_transport(
        cost.entries(),
        a.as_slice().expect("contiguous"),
        b.as_slice().expect("contiguous"),
        opts,
    )?;
    let value = cost.pair(&matrix);
    let plan = TransportPlan::new(matrix, a.clone(), b.clone())?;
    Ok((plan, value))
}

/// Direction of a monotone rearrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    NonDecreasing,
    NonIncreasing,
}

/// Quantile coupling of two 1D measures (north-west corner on sorted supports).
///
/// For [`Monotone::NonIncreasing`] the sorted order of `nu` is reversed first.
pub fn monotone_plan(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    direction: Monotone,
) -> Result<TransportPlan> {
    let xs = mu.coords_1d()?.to_vec();
    let ys = nu.coords_1d()?.to_vec();
    let xo = sorted_order(&xs);
    let mut yo = sorted_order(&ys);
    if direction == Monotone::NonIncreasing {
        yo.reverse();
    }
    let a = mu.weights();
    let b = nu.weights();
    let mut matrix = Array2::zeros((xs.len(), ys.len()));
    let (mut i, mut j) = (0, 0);
    let mut ra = a[xo[0]];
    let mut rb = b[yo[0]];
    while i < xo.len() && j < yo.len() {
        if ra <= rb {
            matrix[[xo[i], yo[j]]] += ra;
            rb -= ra;
            i += 1;
            if i < xo.len() {
                ra = a[xo[i]];
            }
        } else {
            matrix[[xo[i], yo[j]]] += rb;
            ra -= rb;
            j += 1;
            if j < yo.len() {
                rb = b[yo[j]];
            }
        }
    }
    TransportPlan::new(matrix, a.clone(), b.clone())
}

/// Correlation `m(P) = sum_ij P_ij x_i y_j` of a plan between 1D measures.
pub fn correlation(plan: &TransportPlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    plan.check_couples(mu, nu)?;
    let xs = mu.coords_1d()?;
    let ys = nu.coords_1d()?;
    Ok(xs.dot(&plan.matrix().dot(&ys)))
}

/// `(m_min, m_max)`: extreme correlations over `U(a, b)`, attained by the
/// non-increasing and non-decreasing rearrangements respectively.
pub fn correlation_bounds(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, f64)> {
    let lo = monotone_plan(mu, nu, Monotone::NonIncreasing)?;
    let hi = monotone_plan(mu, nu, Monotone::NonDecreasing)?;
    Ok((correlation(&lo, mu, nu)?, correlation(&hi, mu, nu)?))
}

/// Sub-plan supported on a mask, with its induced (unnormalized) marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanFragment {
    pub matrix: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
}

impl PlanFragment {
    pub fn mass(&self) -> f64 {
        self.matrix.sum()
    }
}

/// Zeroes every entry `(i, j)` outside `mask`.
pub fn restrict(plan: &TransportPlan, mask: impl Fn(usize, usize) -> bool) -> PlanFragment {
    let matrix = Array2::from_shape_fn(plan.dim(), |(i, j)| {
        if mask(i, j) {
            plan.matrix()[[i, j]]
        } else {
            0.0
        }
    });
    let row_marginal = matrix.sum_axis(ndarray::Axis(1));
    let col_marginal = matrix.sum_axis(ndarray::Axis(0));
    PlanFragment {
        matrix,
        row_marginal,
        col_marginal,
    }
}

/// Random feasible plan: Sinkhorn scaling of a random positive matrix.
pub fn random_plan<R: Rng + ?Sized>(
    a: &Array1<f64>,
    b: &Array1<f64>,
    rng: &mut R,
) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    let mut k = Array2::from_shape_fn((n, m), |_| rng.random::<f64>() + 1e-3);
    for _ in 0..10_000 {
        for (i, mut row) in k.rows_mut().into_iter().enumerate() {
            let s = row.sum();
            if s > 0.0 {
                row *= a[i] / s;
            }
        }
        for (j, mut col) in k.columns_mut().into_iter().enumerate() {
            let s = col.sum();
            if s > 0.0 {
                col *= b[j] / s;
            }
        }
        let rows = k.sum_axis(ndarray::Axis(1));
        let err = (&rows - a).iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
        if err < 1e-14 {
            break;
        }
    }
    TransportPlan::new(k, a.clone(), b.clone())
}
