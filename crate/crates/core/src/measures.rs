//! Finitely supported probability measures on `R^d`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Atoms lighter than this after renormalization are removed.
pub const MIN_ATOM_WEIGHT: f64 = 1e-15;

/// A probability measure `sum_i w_i delta_{x_i}` with `x_i in R^d`.
///
/// Points are stored row-wise in an `N x d` array. Duplicate points are kept
/// as separate atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from an `N x d` point array and `N` nonnegative weights.
    ///
    /// Weights are renormalized to unit mass and atoms whose normalized weight
    /// falls below [`MIN_ATOM_WEIGHT`] are dropped.
    pub fn new(points: Array2<f64>, weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        if points.nrows() == 0 || weights.is_empty() {
            return Err(Error::EmptySupport);
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidParameter("points must have dimension >= 1".into()));
        }
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("points"));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("weights"));
            }
            if value < 0.0 {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        let total: f64 = weights.sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let normalized = &weights / total;
        let keep: Vec<usize> = (0..normalized.len())
            .filter(|&i| normalized[i] >= MIN_ATOM_WEIGHT)
            .collect();
        if keep.len() == normalized.len() {
            return Ok(Self {
                points,
                weights: normalized,
            });
        }
        let points = points.select(Axis(0), &keep);
        let kept = normalized.select(Axis(0), &keep);
        let total = kept.sum();
        Ok(Self {
            points,
            weights: kept / total,
        })
    }

    /// Builds a measure from nested point vectors; rejects ragged input.
    pub fn from_points(points: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let d = points.first().ok_or(Error::EmptySupport)?.len();
        let mut flat = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        let arr = Array2::from_shape_vec((points.len(), d), flat)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::new(arr, Array1::from(weights.to_vec()))
    }

    /// One-dimensional measure with the given atoms and weights.
    pub fn from_1d(xs: &[f64], weights: &[f64]) -> Result<Self> {
        let pts = Array2::from_shape_vec((xs.len(), 1), xs.to_vec())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::new(pts, Array1::from(weights.to_vec()))
    }

    /// One-dimensional measure with uniform weights.
    pub fn uniform_1d(xs: &[f64]) -> Result<Self> {
        Self::from_1d(xs, &vec![1.0; xs.len()])
    }

    /// Uniform measure on the rows of `points`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, Array1::from_elem(n, 1.0))
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_points(&[point.to_vec()], &[1.0])
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Atom positions of a one-dimensional measure.
    pub fn coords_1d(&self) -> Result<ArrayView1<'_, f64>> {
        if self.dim() != 1 {
            return Err(Error::NotOneDimensional(self.dim()));
        }
        Ok(self.points.column(0))
    }

    pub fn barycenter(&self) -> Array1<f64> {
        self.weights.dot(&self.points)
    }

    /// Squared norms `|x_i|^2` of every atom.
    pub fn squared_norms(&self) -> Array1<f64> {
        self.points.map_axis(Axis(1), |row| row.dot(&row))
    }

    /// Largest distance between two atoms.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let d = &self.point(i) - &self.point(j);
                best = best.max(d.dot(&d));
            }
        }
        best.sqrt()
    }

    /// True when all weights agree to `tol` (relative to `1/N`).
    pub fn is_uniform(&self, tol: f64) -> bool {
        let target = 1.0 / self.len() as f64;
        self.weights
            .iter()
            .all(|&w| (w - target).abs() <= tol * target)
    }

    /// Same weights, points shifted by `shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: shift.len(),
            });
        }
        let mut points = self.points.clone();
        for mut row in points.rows_mut() {
            for (v, s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        Ok(Self {
            points,
            weights: self.weights.clone(),
        })
    }

    /// Same weights, new point array with the same number of rows.
    pub fn with_points(&self, points: Array2<f64>) -> Result<Self> {
        if points.nrows() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: points.nrows(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("points"));
        }
        Ok(Self {
            points,
            weights: self.weights.clone(),
        })
    }

    /// Translates the measure so that its barycenter is the origin.
    pub fn center(&self) -> Self {
        let bar = self.barycenter();
        let mut points = &self.points - &bar.view().insert_axis(Axis(0));
        // A second pass removes the rounding residue of the first subtraction.
        let residue = self.weights.dot(&points);
        points -= &residue.view().insert_axis(Axis(0));
        Self {
            points,
            weights: self.weights.clone(),
        }
    }

    pub fn is_centered(&self, tol: f64) -> bool {
        self.barycenter().iter().all(|v| v.abs() <= tol)
    }
}

/// Gaussian convolution parameters for [`gaussian_smooth`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Standard deviation of the kernel.
    pub sigma: f64,
    /// Number of grid nodes.
    pub n_grid: usize,
    /// Grid extension beyond the support, in multiples of `sigma`.
    pub truncation_radius: f64,
}

impl SmoothingConfig {
    pub const DEFAULT_TRUNCATION: f64 = 4.0;

    pub fn new(sigma: f64, n_grid: usize) -> Result<Self> {
        Self::with_truncation(sigma, n_grid, Self::DEFAULT_TRUNCATION)
    }

    pub fn with_truncation(sigma: f64, n_grid: usize, truncation_radius: f64) -> Result<Self> {
        let cfg = Self {
            sigma,
            n_grid,
            truncation_radius,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.n_grid < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_grid must be at least 2, got {}",
                self.n_grid
            )));
        }
        if !(self.truncation_radius > 0.0 && self.truncation_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "truncation radius must be positive, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }
}

/// Regular grid of `n` nodes on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
                .collect()
        }
    }
}

/// Convolves a 1D measure with a Gaussian and samples the density on a grid.
///
/// The grid covers `[min x - r sigma, max x + r sigma]` with `cfg.n_grid`
/// nodes; each node receives the mixture density evaluated at that node.
/// Nodes whose normalized weight underflows [`MIN_ATOM_WEIGHT`] are dropped.
pub fn gaussian_smooth(mu: &DiscreteMeasure, cfg: &SmoothingConfig) -> Result<DiscreteMeasure> {
    cfg.validate()?;
    let xs = mu.coords_1d()?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = cfg.truncation_radius * cfg.sigma;
    let grid = linspace(lo - pad, hi + pad, cfg.n_grid);
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let weights: Vec<f64> = grid
        .iter()
        .map(|&g| {
            xs.iter()
                .zip(mu.weights())
                .map(|(&x, &w)| w * (-(g - x) * (g - x) * inv).exp())
                .sum()
        })
        .collect();
    DiscreteMeasure::from_1d(&grid, &weights)
}

/// Squared 2-Wasserstein distance between two 1D measures (quantile coupling).
pub fn wasserstein2_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let xs = mu.coords_1d()?.to_vec();
    let ys = nu.coords_1d()?.to_vec();
    let xo = sorted_order(&xs);
    let yo = sorted_order(&ys);
    let (mut i, mut j) = (0, 0);
    let mut ra = mu.weights()[xo[0]];
    let mut rb = nu.weights()[yo[0]];
    let mut total = 0.0;
    while i < xo.len() && j < yo.len() {
        let d = xs[xo[i]] - ys[yo[j]];
        let mass = ra.min(rb);
        total += mass * d * d;
        if ra <= rb {
            rb -= ra;
            i += 1;
            if i < xo.len() {
                ra = mu.weights()[xo[i]];
            }
        } else {
            ra -= rb;
            j += 1;
            if j < yo.len() {
                rb = nu.weights()[yo[j]];
            }
        }
    }
    Ok(total.max(0.0))
}

/// Indices sorting `values` increasingly; ties keep input order.
pub fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Atom positions of the Beinert-type counterexample with `n` points and gap `eps`.
///
/// `x = (-1, (i - (n+1)/2) eps for i = 2..n-1, 1)` and
/// `y = (-1, -1 + eps, (i - 2) eps for i = 3..n)`, both with uniform weights.
pub fn beinert_points(n: usize, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 7 {
        return Err(Error::InvalidParameter(format!("n must be at least 7, got {n}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let half = (n as f64 + 1.0) / 2.0;
    let xs: Vec<f64> = (1..=n)
        .map(|i| match i {
            1 => -1.0,
            i if i == n => 1.0,
            i => (i as f64 - half) * eps,
        })
        .collect();
    let ys: Vec<f64> = (1..=n)
        .map(|i| match i {
            1 => -1.0,
            2 => -1.0 + eps,
            i => (i as f64 - 2.0) * eps,
        })
        .collect();
    Ok((xs, ys))
}

/// Counterexample pair with `eps = 1/n^2`, whose monotone rearrangements are never optimal.
pub fn beinert_counterexample(n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let eps = 1.0 / (n as f64 * n as f64);
    beinert_with_eps(n, eps)
}

/// Counterexample pair with an arbitrary gap `eps`.
pub fn beinert_with_eps(n: usize, eps: f64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let (xs, ys) = beinert_points(n, eps)?;
    Ok((DiscreteMeasure::uniform_1d(&xs)?, DiscreteMeasure::uniform_1d(&ys)?))
}

/// Two-component measures `(1-t) mu1 + t (mu2 + K)` and `(1-t) nu1 + t (nu2 + K)`.
///
/// All four inputs must be 1D; `A` is the smallest interval containing their
/// supports and `K` must exceed its diameter.
pub fn two_component(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    nu1: &DiscreteMeasure,
    nu2: &DiscreteMeasure,
    t: f64,
    k: f64,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!("t must lie in (0, 1), got {t}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in [mu1, mu2, nu1, nu2] {
        for &x in m.coords_1d()?.iter() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let diam = hi - lo;
    if !(k > diam) {
        return Err(Error::InvalidParameter(format!(
            "K = {k} must exceed the support diameter {diam}"
        )));
    }
    let join = |a: &DiscreteMeasure, b: &DiscreteMeasure| -> Result<DiscreteMeasure> {
        let mut xs: Vec<f64> = a.coords_1d()?.to_vec();
        xs.extend(b.coords_1d()?.iter().map(|x| x + k));
        let mut ws: Vec<f64> = a.weights().iter().map(|w| (1.0 - t) * w).collect();
        ws.extend(b.weights().iter().map(|w| t * w));
        DiscreteMeasure::from_1d(&xs, &ws)
    };
    Ok((join(mu1, mu2)?, join(nu1, nu2)?))
}
