//! Exhaustive scan of the correlation parameter in one dimension.
//!
//! On centered 1D measures, every GW optimizer solves the OT problem with cost
//! `-x^2 y^2 - 4 m x y` for its own correlation `m`, and that correlation lies in
//! `[m_min, m_max]` (the correlations of the two monotone rearrangements).
//! Scanning a grid of `m`, solving each linear problem exactly and keeping the
//! plan with the smallest true GW value gives a global optimizer up to the
//! grid resolution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gw::{cgw_m_matrix, gw_value, GwCostKind};
use crate::measures::{linspace, DiscreteMeasure};
use crate::transport::{correlation_bounds, solve_ot, TransportPlan};
use crate::{Error, Result};

/// Scan parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Number of grid values of `m`, endpoints included.
    pub n_dm: usize,
    /// One extra zoom on `[m_{b-1}, m_{b+1}]` around the winner, with `n_dm` points.
    pub refine: bool,
    /// Keep the LP plan of every grid point in [`ScanResult::plans`].
    pub keep_plans: bool,
}

impl ScanOptions {
    pub fn new(n_dm: usize) -> Self {
        Self {
            n_dm,
            refine: false,
            keep_plans: false,
        }
    }

    pub fn keep_plans(mut self, keep: bool) -> Self {
        self.keep_plans = keep;
        self
    }

    pub fn refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub m_grid: Vec<f64>,
    pub gw_values: Vec<f64>,
    pub m_min: f64,
    pub m_max: f64,
    pub best_index: usize,
    pub best_plan: TransportPlan,
    pub best_value: f64,
    /// Set when the inputs were not centered and had to be.
    pub auto_centered: bool,
    /// Per-grid LP plans, only with [`ScanOptions::keep_plans`].
    #[serde(skip)]
    pub plans: Option<Vec<TransportPlan>>,
}

impl ScanResult {
    pub fn best_m(&self) -> f64 {
        self.m_grid[self.best_index]
    }
}

fn centered_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> (DiscreteMeasure, DiscreteMeasure, bool) {
    let tol = |m: &DiscreteMeasure| {
        1e-12 * (1.0 + m.points().iter().fold(0.0, |a: f64, v| a.max(v.abs())))
    };
    if mu.is_centered(tol(mu)) && nu.is_centered(tol(nu)) {
        (mu.clone(), nu.clone(), false)
    } else {
        (mu.center(), nu.center(), true)
    }
}

fn solve_at(mu: &DiscreteMeasure, nu: &DiscreteMeasure, m: f64) -> Result<(TransportPlan, f64)> {
    let cost = cgw_m_matrix(mu, nu, m)?;
    let (plan, _) = solve_ot(&cost, mu.weights(), nu.weights())?;
    let value = gw_value(&plan, mu, nu, GwCostKind::Quadratic)?;
    Ok((plan, value))
}

fn scan_grid(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &[f64],
    keep: bool,
) -> Result<(Vec<f64>, Option<Vec<TransportPlan>>)> {
    let solved: Vec<(f64, Option<TransportPlan>)> = grid
        .par_iter()
        .map(|&m| solve_at(mu, nu, m).map(|(p, v)| (v, keep.then_some(p))))
        .collect::<Result<_>>()?;
    let values = solved.iter().map(|s| s.0).collect();
    let plans = keep.then(|| solved.into_iter().map(|s| s.1.expect("kept")).collect());
    Ok((values, plans))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Scans `n_dm` equispaced correlations in `[m_min, m_max]` (inclusive).
///
/// Plans are computed on centered copies of the inputs; GW values are
/// translation invariant, and the returned plan indexes the original atoms.
/// Ties in GW value are resolved towards the smallest `m`.
pub fn mscan(mu: &DiscreteMeasure, nu: &DiscreteMeasure, opts: &ScanOptions) -> Result<ScanResult> {
    if opts.n_dm < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_dm must be at least 2, got {}",
            opts.n_dm
        )));
    }
    mu.coords_1d()?;
    nu.coords_1d()?;
    let (mu_c, nu_c, auto_centered) = centered_pair(mu, nu);
    let (m_min, m_max) = correlation_bounds(&mu_c, &nu_c)?;
    let mut m_grid = linspace(m_min, m_max, opts.n_dm);
    let (mut gw_values, mut plans) = scan_grid(&mu_c, &nu_c, &m_grid, opts.keep_plans)?;

    if opts.refine && m_max > m_min {
        let b = argmin(&gw_values);
        let lo = m_grid[b.saturating_sub(1)];
        let hi = m_grid[(b + 1).min(m_grid.len() - 1)];
        let zoom: Vec<f64> = linspace(lo, hi, opts.n_dm)
            .into_iter()
            .filter(|m| m_grid.binary_search_by(|g| g.total_cmp(m)).is_err())
            .collect();
        let (zoom_values, zoom_plans) = scan_grid(&mu_c, &nu_c, &zoom, opts.keep_plans)?;
        let mut merged: Vec<(f64, f64, Option<TransportPlan>)> = Vec::new();
        let mut old_plans = plans.map(|p| p.into_iter().map(Some).collect::<Vec<_>>());
        let mut new_plans = zoom_plans.map(|p| p.into_iter().map(Some).collect::<Vec<_>>());
        for (i, (&m, &v)) in m_grid.iter().zip(&gw_values).enumerate() {
            let p = old_plans.as_mut().and_then(|ps| ps[i].take());
            merged.push((m, v, p));
        }
        for (i, (&m, &v)) in zoom.iter().zip(&zoom_values).enumerate() {
            let p = new_plans.as_mut().and_then(|ps| ps[i].take());
            merged.push((m, v, p));
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        m_grid = merged.iter().map(|e| e.0).collect();
        gw_values = merged.iter().map(|e| e.1).collect();
        plans = opts
            .keep_plans
            .then(|| merged.into_iter().map(|e| e.2.expect("kept")).collect());
    }

    let best_index = argmin(&gw_values);
    let best_plan = match &plans {
        Some(ps) => ps[best_index].clone(),
        None => solve_at(&mu_c, &nu_c, m_grid[best_index])?.0,
    };
    Ok(ScanResult {
        best_value: gw_values[best_index],
        m_grid,
        gw_values,
        m_min,
        m_max,
        best_index,
        best_plan,
        auto_centered,
        plans,
    })
}

/// `(m, gw_value)` pairs of a scan, in grid order.
pub fn gw_profile(scan: &ScanResult) -> Vec<(f64, f64)> {
    scan.m_grid
        .iter()
        .copied()
        .zip(scan.gw_values.iter().copied())
        .collect()
}

/// Rows (and columns) whose images split into several separated clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BimapReport {
    pub row_flags: Vec<bool>,
    pub col_flags: Vec<bool>,
    /// Largest number of image clusters found in a row.
    pub max_row_clusters: usize,
    pub is_map: bool,
    pub is_bimap: bool,
}

pub const DEFAULT_MASS_TOL: f64 = 1e-6;
pub const DEFAULT_GAP_FACTOR: f64 = 3.0;

fn median_spacing(coords: &[f64]) -> f64 {
    let mut s = coords.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut gaps: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    let k = gaps.len();
    if k % 2 == 1 {
        gaps[k / 2]
    } else {
        0.5 * (gaps[k / 2 - 1] + gaps[k / 2])
    }
}

fn count_clusters(mut ys: Vec<f64>, threshold: f64) -> usize {
    if ys.is_empty() {
        return 0;
    }
    ys.sort_by(f64::total_cmp);
    1 + ys.windows(2).filter(|w| w[1] - w[0] > threshold).count()
}

fn cluster_counts(
    matrix: &ndarray::Array2<f64>,
    targets: &[f64],
    mass_tol: f64,
    gap_factor: f64,
) -> Vec<usize> {
    let threshold = gap_factor * median_spacing(targets);
    matrix
        .rows()
        .into_iter()
        .map(|row| {
            let mass: f64 = row.sum();
            if mass <= mass_tol {
                return 0;
            }
            let images = row
                .iter()
                .zip(targets)
                .filter(|(&p, _)| p > mass_tol * mass)
                .map(|(_, &y)| y)
                .collect();
            count_clusters(images, threshold)
        })
        .collect()
}

/// Flags atoms whose images form at least two clusters separated by more than
/// `gap_factor` median grid spacings of the target support.
pub fn detect_bimap(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    mass_tol: f64,
    gap_factor: f64,
) -> Result<BimapReport> {
    plan.check_couples(mu, nu)?;
    let xs = mu.coords_1d()?.to_vec();
    let ys = nu.coords_1d()?.to_vec();
    let rows = cluster_counts(plan.matrix(), &ys, mass_tol, gap_factor);
    let cols = cluster_counts(&plan.matrix().t().to_owned(), &xs, mass_tol, gap_factor);
    let row_flags: Vec<bool> = rows.iter().map(|&c| c >= 2).collect();
    let col_flags = cols.iter().map(|&c| c >= 2).collect();
    let is_bimap = row_flags.iter().any(|&f| f);
    Ok(BimapReport {
        max_row_clusters: rows.iter().copied().max().unwrap_or(0),
        row_flags,
        col_flags,
        is_map: !is_bimap,
        is_bimap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{monotone_plan, Monotone};
    use ndarray::Array2;

    fn u1(xs: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform_1d(xs).unwrap()
    }

    #[test]
    fn rejects_tiny_grid() {
        let mu = u1(&[-1.0, 1.0]);
        assert!(mscan(&mu, &mu, &ScanOptions::new(1)).is_err());
    }

    #[test]
    fn isometric_supports_reach_zero() {
        let mu = u1(&[-1.0, 0.2, 0.8]);
        let scan = mscan(&mu, &mu, &ScanOptions::new(50)).unwrap();
        assert!(scan.best_value.abs() < 1e-12);
        assert_eq!(scan.m_grid.first(), Some(&scan.m_min));
        assert_eq!(scan.m_grid.last(), Some(&scan.m_max));
    }

    #[test]
    fn non_centered_inputs_are_centered() {
        let mu = u1(&[1.0, 2.0, 4.0]);
        let nu = u1(&[0.0, 5.0, 6.0]);
        let a = mscan(&mu, &nu, &ScanOptions::new(40)).unwrap();
        let b = mscan(&mu.center(), &nu.center(), &ScanOptions::new(40)).unwrap();
        assert!(a.auto_centered && !b.auto_centered);
        assert!((a.best_value - b.best_value).abs() < 1e-12);
    }

    #[test]
    fn refinement_keeps_endpoints() {
        let mu = u1(&[-1.0, -0.3, 0.1, 1.2]);
        let nu = u1(&[-0.7, 0.0, 0.2, 0.5]);
        let plain = mscan(&mu, &nu, &ScanOptions::new(20)).unwrap();
        let zoom = mscan(&mu, &nu, &ScanOptions::new(20).refine(true).keep_plans(true)).unwrap();
        assert_eq!(zoom.m_grid[0], plain.m_min);
        assert_eq!(*zoom.m_grid.last().unwrap(), plain.m_max);
        assert!(zoom.m_grid.windows(2).all(|w| w[0] < w[1]));
        assert!(zoom.best_value <= plain.best_value);
        assert_eq!(zoom.plans.as_ref().unwrap().len(), zoom.m_grid.len());
    }

    #[test]
    fn monotone_plan_is_a_map() {
        let xs = linspace(-1.0, 1.0, 30);
        let mu = u1(&xs);
        let p = monotone_plan(&mu, &mu, Monotone::NonDecreasing).unwrap();
        let r = detect_bimap(&p, &mu, &mu, DEFAULT_MASS_TOL, DEFAULT_GAP_FACTOR).unwrap();
        assert!(r.is_map && !r.is_bimap);
    }

    #[test]
    fn split_row_is_flagged() {
        let n = 21;
        let grid = linspace(-1.0, 1.0, n);
        let mu = u1(&grid);
        let nu = u1(&grid);
        let mut m = Array2::eye(n) / n as f64;
        // First and last atoms each send half their mass to both tails.
        for i in [0, n - 1] {
            m[[i, 0]] = 0.5 / n as f64;
            m[[i, n - 1]] = 0.5 / n as f64;
        }
        let plan = TransportPlan::from_matrix(m).unwrap();
        let r = detect_bimap(&plan, &mu, &nu, DEFAULT_MASS_TOL, DEFAULT_GAP_FACTOR).unwrap();
        assert!(r.row_flags[0] && r.row_flags[n - 1]);
        assert!(!r.row_flags[1]);
        assert!(r.col_flags[0]);
        assert_eq!(r.max_row_clusters, 2);
        assert!(r.is_bimap && !r.is_map);
    }
}
