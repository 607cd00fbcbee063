//! Structure diagnostics for GW-optimal plans.
//!
//! The rank of the cross-correlation `M*` predicts whether an optimal plan can
//! be a map, a bi-map, or a map/anti-map. This module also carries the reduced
//! cost `c~` and its exponential map, the sub/supermodularity regions of the 1D
//! linearized cost, the two-component separation threshold, and the residuals
//! of the bi-convex relaxation.

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::gw::{gw_bilinear, GwCostKind};
use crate::measures::DiscreteMeasure;
use crate::mscan::BimapReport;
use crate::transport::TransportPlan;
use crate::{Error, Result};

pub use crate::gw::cross_matrix;

/// Default relative threshold for the numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Default mass below which cells are ignored by [`verify_monotone_on_region`].
pub const DEFAULT_CROSSING_TOL: f64 = 1e-10;

/// Structure predicted from the rank `h` of `M*` (`d x n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureClass {
    /// Quadratic cost, `h = d`: a bi-map that is also a map or anti-map.
    MapAntiMapOrBimap,
    /// Quadratic cost, `h = d - 1`.
    Bimap,
    /// Quadratic cost with `h <= d - 2`, or the inner-product cost.
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub m_star: Array2<f64>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub predicted_class: StructureClass,
    /// Rows are left singular vectors (`O_Y`, in `R^d`).
    pub frame_y: Array2<f64>,
    /// Rows are right singular vectors (`O_X`, in `R^n`), first nonzero entry positive.
    pub frame_x: Array2<f64>,
    pub empirical: Option<BimapReport>,
}

impl StructureReport {
    pub fn with_empirical(mut self, report: BimapReport) -> Self {
        self.empirical = Some(report);
        self
    }
}

/// SVD of `M*`, numerical rank and predicted class.
///
/// A singular value counts towards the rank when it exceeds
/// `rank_tol * max(sigma_1, 1)`.
pub fn classify_structure(m_star: &Array2<f64>, kind: GwCostKind, rank_tol: f64) -> Result<StructureReport> {
    if m_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("M*"));
    }
    let (d, n) = m_star.dim();
    let k = d.min(n);
    let (mut sv, mut left, mut right) = (Vec::new(), Array2::zeros((k, d)), Array2::zeros((k, n)));
    if k > 0 {
        let m = DMatrix::from_fn(d, n, |i, j| m_star[[i, j]]);
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested");
        let v_t = svd.v_t.expect("requested");
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for (r, &c) in order.iter().enumerate() {
            sv.push(svd.singular_values[c]);
            let mut sign = 1.0;
            if let Some(first) = (0..n).map(|j| v_t[(c, j)]).find(|v| v.abs() > 1e-14) {
                sign = first.signum();
            }
            for j in 0..n {
                right[[r, j]] = sign * v_t[(c, j)];
            }
            for i in 0..d {
                left[[r, i]] = sign * u[(i, c)];
            }
        }
    }
    let floor = sv.first().copied().unwrap_or(0.0).max(1.0);
    let rank = sv.iter().filter(|&&s| s > rank_tol * floor).count();
    let predicted_class = match kind {
        GwCostKind::InnerProduct => StructureClass::Map,
        GwCostKind::Quadratic if rank == d => StructureClass::MapAntiMapOrBimap,
        GwCostKind::Quadratic if rank + 1 == d => StructureClass::Bimap,
        GwCostKind::Quadratic => StructureClass::Map,
    };
    Ok(StructureReport {
        m_star: m_star.clone(),
        singular_values: sv,
        rank,
        predicted_class,
        frame_y: left,
        frame_x: right,
        empirical: None,
    })
}

fn split(u: &[f64], h: usize, what: &str) -> Result<(Vec<f64>, f64)> {
    if u.len() != h + 1 {
        return Err(Error::InvalidParameter(format!(
            "{what} must have length {} (h + 1), got {}",
            h + 1,
            u.len()
        )));
    }
    Ok((u[..h].to_vec(), u[h]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c~` evaluated as a polynomial, without the `u_+, v_+ >= 0` domain check.
pub fn ctilde_polynomial(u: &[f64], v: &[f64], sigma: &[f64]) -> Result<f64> {
    let h = sigma.len();
    let (uh, up) = split(u, h, "u")?;
    let (vh, vp) = split(v, h, "v")?;
    let (nu2, nv2) = (dot(&uh, &uh), dot(&vh, &vh));
    let twist: f64 = (0..h).map(|i| sigma[i] * uh[i] * vh[i]).sum();
    Ok(-nu2 * nv2 - nu2 * vp - up * nv2 - up * vp - twist)
}

/// Reduced quadratic cost on `R^h x R_+`:
/// `-|u_H|^2 |v_H|^2 - |u_H|^2 v_+ - u_+ |v_H|^2 - u_+ v_+ - <S u_H, v_H>`.
pub fn ctilde(u: &[f64], v: &[f64], sigma: &[f64]) -> Result<f64> {
    let h = sigma.len();
    let (_, up) = split(u, h, "u")?;
    let (_, vp) = split(v, h, "v")?;
    if up < 0.0 || vp < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "the last coordinates must be nonnegative, got {up} and {vp}"
        )));
    }
    ctilde_polynomial(u, v, sigma)
}

/// Gradient of `c~` in its first argument `(u_H, u_+)`.
pub fn ctilde_grad_u(u: &[f64], v: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    let h = sigma.len();
    let (uh, _) = split(u, h, "u")?;
    let (vh, vp) = split(v, h, "v")?;
    let nv2 = dot(&vh, &vh);
    let mut g: Vec<f64> = (0..h)
        .map(|i| -2.0 * uh[i] * nv2 - 2.0 * uh[i] * vp - sigma[i] * vh[i])
        .collect();
    g.push(-nv2 - vp);
    Ok(g)
}

/// Lift `x in R^n` to `(x_H, |x_perp|^2)` with `x_H` the first `h` coordinates.
pub fn lift(x: &[f64], h: usize) -> Result<Vec<f64>> {
    if h > x.len() {
        return Err(Error::InvalidParameter(format!("h = {h} exceeds dimension {}", x.len())));
    }
    let mut out = x[..h].to_vec();
    out.push(dot(&x[h..], &x[h..]));
    Ok(out)
}

/// Exponential map of `c~`: the `v` with `grad_u c~((u, u_+), v) + p = 0`,
/// `v_H = S^{-1}(p_H - 2 p_+ u)`, `v_+ = p_+ - |v_H|^2`.
pub fn ctilde_exp(u: &[f64], p: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    let h = sigma.len();
    if u.len() != h {
        return Err(Error::DimensionMismatch { expected: h, got: u.len() });
    }
    let (ph, pp) = split(p, h, "p")?;
    let scale = sigma.iter().fold(0.0, |a: f64, s| a.max(s.abs())).max(1.0);
    if sigma.iter().any(|&s| !(s.abs() > 1e-14 * scale) || !s.is_finite()) {
        return Err(Error::Singular);
    }
    let vh: Vec<f64> = (0..h).map(|i| (ph[i] - 2.0 * pp * u[i]) / sigma[i]).collect();
    let vp = pp - dot(&vh, &vh);
    let mut v = vh;
    v.push(vp);
    Ok(v)
}

/// `max |grad_u c~((u, u_plus), ctilde_exp(u, p)) + p|`.
pub fn ctilde_exp_residual(u: &[f64], u_plus: f64, p: &[f64], sigma: &[f64]) -> Result<f64> {
    let v = ctilde_exp(u, p, sigma)?;
    let mut full = u.to_vec();
    full.push(u_plus);
    let g = ctilde_grad_u(&full, &v, sigma)?;
    Ok(g.iter().zip(p).fold(0.0, |a: f64, (g, p)| a.max((g + p).abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modularity {
    Submodular,
    Supermodular,
    Boundary,
}

/// Sign of `d^2/dxdy (-x^2 y^2 - 4 m x y) = -4xy - 4m`.
pub fn submodularity_sign(x: f64, y: f64, m: f64) -> Modularity {
    let mixed = -4.0 * x * y - 4.0 * m;
    if mixed <= -1e-14 {
        Modularity::Submodular
    } else if mixed >= 1e-14 {
        Modularity::Supermodular
    } else {
        Modularity::Boundary
    }
}

/// Two support cells `(i, j)` and `(k, l)` of a plan that cross.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub first: (usize, usize),
    pub second: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub holds: bool,
    pub violations: Vec<Crossing>,
}

fn crossings(cells: &[(usize, usize)], xs: &[f64], ys: &[f64], increasing: bool) -> Vec<Crossing> {
    let mut out = Vec::new();
    for (a, &(i, j)) in cells.iter().enumerate() {
        for &(k, l) in &cells[a + 1..] {
            let (first, second) = if xs[i] < xs[k] {
                ((i, j), (k, l))
            } else if xs[k] < xs[i] {
                ((k, l), (i, j))
            } else {
                continue;
            };
            let (y0, y1) = (ys[first.1], ys[second.1]);
            let bad = if increasing { y0 > y1 } else { y0 < y1 };
            if bad {
                out.push(Crossing { first, second });
            }
        }
    }
    out
}

/// Checks that the plan restricted to the region where the cost `c_m` is
/// sub- (resp. super-) modular is non-decreasing (resp. non-increasing).
///
/// `m > 0`: region `{xy >= -m}`, non-decreasing. `m < 0`: region `{xy < -m}`,
/// non-increasing. `m = 0`: each open quadrant separately, non-decreasing on
/// `{x > 0, y > 0}` and `{x < 0, y < 0}`, non-increasing on the other two.
/// Cells with mass at most `tol` are ignored.
pub fn verify_monotone_on_region(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    m: f64,
    tol: f64,
) -> Result<MonotoneCheck> {
    plan.check_couples(mu, nu)?;
    let xs = mu.coords_1d()?.to_vec();
    let ys = nu.coords_1d()?.to_vec();
    let support: Vec<(usize, usize)> = plan
        .support(tol)
        .into_iter()
        .map(|(i, j, _)| (i, j))
        .collect();
    let select = |pred: &dyn Fn(f64, f64) -> bool| -> Vec<(usize, usize)> {
        support
            .iter()
            .copied()
            .filter(|&(i, j)| pred(xs[i], ys[j]))
            .collect()
    };
    let violations = if m > 0.0 {
        crossings(&select(&|x, y| x * y >= -m), &xs, &ys, true)
    } else if m < 0.0 {
        crossings(&select(&|x, y| x * y < -m), &xs, &ys, false)
    } else {
        let mut v = crossings(&select(&|x, y| x > 0.0 && y > 0.0), &xs, &ys, true);
        v.extend(crossings(&select(&|x, y| x < 0.0 && y < 0.0), &xs, &ys, true));
        v.extend(crossings(&select(&|x, y| x < 0.0 && y > 0.0), &xs, &ys, false));
        v.extend(crossings(&select(&|x, y| x > 0.0 && y < 0.0), &xs, &ys, false));
        v
    };
    Ok(MonotoneCheck {
        holds: violations.is_empty(),
        violations,
    })
}

/// Threshold beyond which two well-separated components are matched
/// component-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationBound {
    pub delta: f64,
    pub k0: f64,
    /// Coefficients of the bound in `K`, highest degree first.
    pub polynomial_coeffs: Vec<f64>,
}

impl SeparationBound {
    pub fn evaluate(&self, k: f64) -> f64 {
        self.polynomial_coeffs.iter().fold(0.0, |acc, c| acc * k + c)
    }
}

/// `2 (K^2 - D^2)^2 - D^4 - 2 (2 K D + D^2)^2`, the comparison bound at the
/// worst-case cross mass.
pub fn separation_polynomial(delta: f64, k: f64) -> f64 {
    let d2 = delta * delta;
    2.0 * (k * k - d2).powi(2) - d2 * d2 - 2.0 * (2.0 * k * delta + d2).powi(2)
}

/// Largest root of [`separation_polynomial`] by bisection on `[D, 1e6 D]`.
///
/// Expanded, the bound is `2K^4 - 12 D^2 K^2 - 8 D^3 K - D^4`, which has a
/// single positive root, negative at `K = D`.
pub fn separation_k0(delta: f64) -> Result<SeparationBound> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let f = |k: f64| separation_polynomial(delta, k);
    let (mut lo, mut hi) = (delta, 1e6 * delta);
    debug_assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let d = delta;
    Ok(SeparationBound {
        delta,
        k0: 0.5 * (lo + hi),
        polynomial_coeffs: vec![2.0, 0.0, -12.0 * d * d, -8.0 * d * d * d, -d.powi(4)],
    })
}

/// `(|B(pi, pi) - B(gamma, gamma)|, |B(pi, pi) - B(pi, gamma)|)`.
pub fn tightness_residuals(
    pi_star: &TransportPlan,
    gamma_star: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
) -> Result<(f64, f64)> {
    let pp = gw_bilinear(pi_star, pi_star, mu, nu, kind)?;
    let gg = gw_bilinear(gamma_star, gamma_star, mu, nu, kind)?;
    let pg = gw_bilinear(pi_star, gamma_star, mu, nu, kind)?;
    Ok(((pp - gg).abs(), (pp - pg).abs()))
}

/// Structure report of a plan: `M*` on centered copies (quadratic cost) plus
/// the bi-map diagnostic when both measures are 1D.
pub fn analyze_plan(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kind: GwCostKind,
    rank_tol: f64,
) -> Result<StructureReport> {
    let (mu_c, nu_c) = match kind {
        GwCostKind::Quadratic => (mu.center(), nu.center()),
        GwCostKind::InnerProduct => (mu.clone(), nu.clone()),
    };
    let m_star = cross_matrix(plan, &mu_c, &nu_c)?;
    let report = classify_structure(&m_star, kind, rank_tol)?;
    if mu.dim() == 1 && nu.dim() == 1 {
        let b = crate::mscan::detect_bimap(
            plan,
            mu,
            nu,
            crate::mscan::DEFAULT_MASS_TOL,
            crate::mscan::DEFAULT_GAP_FACTOR,
        )?;
        Ok(report.with_empirical(b))
    } else {
        Ok(report)
    }
}

/// Zero-padded `diag(sigma)` applied to `x`; helper for the `c~` lift identity.
pub fn padded_sigma_apply(sigma: &[f64], x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, v)| sigma.get(i).copied().unwrap_or(0.0) * v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{monotone_plan, Monotone};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cross_matrix_examples() {
        let mu = DiscreteMeasure::uniform_1d(&[-1.0, 0.0, 1.0]).unwrap();
        let prod = TransportPlan::product(mu.weights(), mu.weights());
        assert!(cross_matrix(&prod, &mu, &mu).unwrap().iter().all(|v| v.abs() < 1e-15));
        let id = TransportPlan::from_permutation(&[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(cross_matrix(&id, &mu, &mu).unwrap()[[0, 0]], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn classification_cases() {
        let r = classify_structure(&array![[0.5]], GwCostKind::Quadratic, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.rank, 1);
        assert_eq!(r.predicted_class, StructureClass::MapAntiMapOrBimap);
        let z = classify_structure(&Array2::zeros((2, 2)), GwCostKind::Quadratic, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.rank, 0);
        assert_eq!(z.predicted_class, StructureClass::Map);
        let b = classify_structure(&array![[1.0, 0.0], [0.0, 0.0]], GwCostKind::Quadratic, DEFAULT_RANK_TOL)
            .unwrap();
        assert_eq!(b.predicted_class, StructureClass::Bimap);
        let ip = classify_structure(&array![[3.0, 1.0], [0.0, 2.0]], GwCostKind::InnerProduct, DEFAULT_RANK_TOL)
            .unwrap();
        assert_eq!(ip.predicted_class, StructureClass::Map);
        assert!(ip.singular_values[0] >= ip.singular_values[1]);
    }

    #[test]
    fn svd_frames_reconstruct() {
        let m = array![[1.0, -2.0, 0.5], [0.3, 0.0, -1.0]];
        let r = classify_structure(&m, GwCostKind::Quadratic, DEFAULT_RANK_TOL).unwrap();
        let mut rebuilt = Array2::<f64>::zeros((2, 3));
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    rebuilt[[i, j]] += r.singular_values[k] * r.frame_y[[k, i]] * r.frame_x[[k, j]];
                }
            }
            let first = r.frame_x.row(k).iter().copied().find(|v| v.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
        for (a, b) in rebuilt.iter().zip(m.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn ctilde_examples() {
        assert_eq!(ctilde(&[0.0, 0.0], &[0.0, 0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(ctilde(&[1.0, 0.0], &[1.0, 0.0], &[1.0]).unwrap(), -2.0);
        assert!(ctilde(&[1.0, -1.0], &[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn ctilde_exp_examples() {
        assert_eq!(ctilde_exp(&[0.0], &[0.0, 0.0], &[1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(ctilde_exp(&[0.0], &[1.0, 0.0], &[1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(ctilde_exp(&[0.0], &[1.0, 0.0], &[0.0]), Err(Error::Singular)));
        assert!(ctilde_exp_residual(&[0.3], 0.2, &[1.0, 0.5], &[2.0]).unwrap() < 1e-14);
    }

    #[test]
    fn modularity_examples() {
        assert_eq!(submodularity_sign(1.0, 1.0, 1.0), Modularity::Submodular);
        assert_eq!(submodularity_sign(1.0, -2.0, 1.0), Modularity::Supermodular);
        assert_eq!(submodularity_sign(1.0, 1.0, 0.0), Modularity::Submodular);
        assert_eq!(submodularity_sign(1.0, -1.0, 0.0), Modularity::Supermodular);
        assert_eq!(submodularity_sign(1.0, -1.0, 1.0), Modularity::Boundary);
    }

    #[test]
    fn monotone_region_checks() {
        let mu = DiscreteMeasure::uniform_1d(&[0.1, 0.5, 0.9]).unwrap();
        let up = monotone_plan(&mu, &mu, Monotone::NonDecreasing).unwrap();
        assert!(verify_monotone_on_region(&up, &mu, &mu, 0.5, 1e-10).unwrap().holds);
        let down = monotone_plan(&mu, &mu, Monotone::NonIncreasing).unwrap();
        let check = verify_monotone_on_region(&down, &mu, &mu, 0.5, 1e-10).unwrap();
        assert!(!check.holds);
        assert_eq!(check.violations.len(), 3);
    }

    #[test]
    fn separation_bound() {
        let b = separation_k0(1.0).unwrap();
        assert!(separation_polynomial(1.0, b.k0).abs() < 1e-8);
        assert!(separation_polynomial(1.0, b.k0 * (1.0 + 1e-3)) > 0.0);
        assert!(separation_polynomial(1.0, 1.0) < 0.0);
        assert_abs_diff_eq!(b.evaluate(2.0), separation_polynomial(1.0, 2.0), epsilon = 1e-12);
        let scaled = separation_k0(3.5).unwrap();
        assert!((scaled.k0 - 3.5 * b.k0).abs() <= 1e-9 * scaled.k0);
        assert!(separation_k0(0.0).is_err());
    }

    #[test]
    fn tightness_of_identical_plans() {
        let mu = DiscreteMeasure::uniform_1d(&[0.0, 1.0, 3.0]).unwrap();
        let p = TransportPlan::from_permutation(&[2, 0, 1]).unwrap();
        assert_eq!(tightness_residuals(&p, &p, &mu, &mu, GwCostKind::Quadratic).unwrap(), (0.0, 0.0));
    }
}
