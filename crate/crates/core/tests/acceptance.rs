//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use gwlab::adversarial::{
    descend_restarts, grad_f, normalize_pair, objective_f, AdversarialConfig, RestartOutcome,
};
use gwlab::analysis::{ctilde_exp_residual, separation_k0, tightness_residuals, verify_monotone_on_region};
use gwlab::gw::{
    brute_force_qap, gw_scale, gw_value, linearized_cost, null_marginal_form, SignedMeasure,
};
use gwlab::measures::{beinert_counterexample, beinert_with_eps, gaussian_smooth, two_component, SmoothingConfig};
use gwlab::mscan::{detect_bimap, gw_profile, mscan, ScanOptions, ScanResult, DEFAULT_GAP_FACTOR, DEFAULT_MASS_TOL};
use gwlab::transport::{monotone_plan, solve_ot, Monotone};
use gwlab::{DiscreteMeasure, GwCostKind, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scan vs exhaustive search, relative to `gw_scale`.
const ORACLE_TOL: f64 = 1e-8;
/// Equality of values that should coincide up to rounding, relative to `gw_scale`.
const TIE_TOL: f64 = 1e-12;
const STRICT_GAP: f64 = 1e-12;
const KERNEL_SIGN_TOL: f64 = 1e-10;
const KERNEL_FORM_TOL: f64 = 1e-8;
const TIGHTNESS_TOL: f64 = 1e-8;
const PLAN_MASS_TOL: f64 = 1e-12;
const GRAD_REL_TOL: f64 = 1e-5;
const EXP_RESIDUAL_TOL: f64 = 1e-8;
const PROFILE_TOL: f64 = 1e-9;

type Verdict = (bool, String);

fn uniform_pair(rng: &mut ChaCha8Rng, n: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random::<f64>()).collect() };
    let xs = draw();
    let ys = draw();
    (DiscreteMeasure::uniform_1d(&xs).unwrap(), DiscreteMeasure::uniform_1d(&ys).unwrap())
}

fn monotone_values(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, f64)> {
    let k = GwCostKind::Quadratic;
    let up = monotone_plan(mu, nu, Monotone::NonDecreasing)?;
    let down = monotone_plan(mu, nu, Monotone::NonIncreasing)?;
    Ok((gw_value(&up, mu, nu, k)?, gw_value(&down, mu, nu, k)?))
}

/// The 20 desk-scale instances shared by criteria 1, 7 and 8.
struct DeskInstance {
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    scan: ScanResult,
}

fn desk_instances() -> Result<Vec<DeskInstance>> {
    (0..20u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
            let (mu, nu) = uniform_pair(&mut rng, 4 + (k as usize % 4));
            let scan = mscan(&mu, &nu, &ScanOptions::new(2000).keep_plans(true))?;
            Ok(DeskInstance { mu, nu, scan })
        })
        .collect()
}

fn c1_oracle_equivalence(desk: &[DeskInstance]) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for d in desk {
        let brute = brute_force_qap(&d.mu, &d.nu, GwCostKind::Quadratic)?;
        let scale = gw_scale(&d.mu, &d.nu, GwCostKind::Quadratic);
        worst = worst.max((d.scan.best_value - brute.value).abs() / scale);
    }
    Ok((worst <= ORACLE_TOL, format!("max |scan - brute| / scale = {worst:.3e} over {} pairs", desk.len())))
}

fn c2_small_n_monotone() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for k in 0..200 {
        let (mu, nu) = uniform_pair(&mut rng, 1 + k % 3);
        let brute = brute_force_qap(&mu, &nu, GwCostKind::Quadratic)?;
        let (up, down) = monotone_values(&mu, &nu)?;
        if up.min(down) - brute.value > TIE_TOL * gw_scale(&mu, &nu, GwCostKind::Quadratic) {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{failures} of 200 pairs with a non-monotone optimum")))
}

fn c3_beinert() -> Result<Verdict> {
    let (mu, nu) = beinert_counterexample(7)?;
    let kind = GwCostKind::Quadratic;
    let scale = gw_scale(&mu, &nu, kind);
    let brute = brute_force_qap(&mu, &nu, kind)?;
    let (up, down) = monotone_values(&mu, &nu)?;
    let gap = up.min(down) - brute.value;
    let scan = mscan(&mu, &nu, &ScanOptions::new(2000))?;
    let diff = (scan.best_value - brute.value).abs();
    Ok((
        gap > STRICT_GAP * scale && diff <= ORACLE_TOL,
        format!(
            "brute {:.10} monotone {:.10}/{:.10} gap {gap:.3e}, |scan - brute| = {diff:.2e}",
            brute.value, up, down
        ),
    ))
}

fn adversarial_runs() -> Result<RestartOutcome> {
    let cfg = AdversarialConfig {
        n_points: 122,
        n_iter: 200,
        step: 26.0,
        early_stop: -2.0,
        seed: 0,
    };
    descend_restarts(&cfg, 5, false)
}

fn c4_adversarial(out: &RestartOutcome) -> Result<Verdict> {
    let mut lines = Vec::new();
    let mut successes = 0;
    for r in &out.runs {
        let f = *r.objective_trace.last().unwrap();
        if r.success && f < 0.0 {
            successes += 1;
        }
        lines.push(format!("seed {}: F {:.3e}{}", r.seed, f, if r.success { " *" } else { "" }));
    }
    Ok((successes >= 1, format!("{successes}/5 certified; {}", lines.join(", "))))
}

fn c5_bimap(out: &RestartOutcome) -> Result<Verdict> {
    let Some(run) = out.success() else {
        return Ok((false, "no adversarial pair to smooth".into()));
    };
    let (x, y) = normalize_pair(&run.x_final, &run.y_final)?;
    let cfg = SmoothingConfig::new(5e-3, 150)?;
    let mu = gaussian_smooth(&DiscreteMeasure::uniform_1d(&x)?, &cfg)?;
    let nu = gaussian_smooth(&DiscreteMeasure::uniform_1d(&y)?, &cfg)?;
    let scan = mscan(&mu, &nu, &ScanOptions::new(200))?;
    let (up, down) = monotone_values(&mu, &nu)?;
    let report = detect_bimap(&scan.best_plan, &mu, &nu, DEFAULT_MASS_TOL, DEFAULT_GAP_FACTOR)?;
    let below = scan.best_value < up && scan.best_value < down;
    Ok((
        below && report.is_bimap,
        format!(
            "seed {} on {}x{} atoms: best {:.4e} vs monotone {:.4e}/{:.4e}, is_bimap {}",
            run.seed,
            mu.len(),
            nu.len(),
            scan.best_value,
            up,
            down,
            report.is_bimap
        ),
    ))
}

fn c6_kernel_negativity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_sign, mut worst_form) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let (dx, dy) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (p, q) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let xs = Array2::from_shape_fn((p, dx), |_| rng.random_range(-1.0..1.0));
        let ys = Array2::from_shape_fn((q, dy), |_| rng.random_range(-1.0..1.0));
        let raw = Array2::from_shape_fn((p, q), |_| rng.random_range(-1.0..1.0));
        let rows = raw.mean_axis(ndarray::Axis(1)).unwrap();
        let cols = raw.mean_axis(ndarray::Axis(0)).unwrap();
        let all = raw.mean().unwrap();
        let masses = Array2::from_shape_fn((p, q), |(i, j)| raw[[i, j]] - rows[i] - cols[j] + all);
        let alpha = SignedMeasure::on_grid(&xs, &ys, &masses)?;
        let scale = alpha.scale(GwCostKind::Quadratic);
        let form = null_marginal_form(&alpha, GwCostKind::Quadratic);
        // Independent closed form: -8 ||sum m x y^T||_F^2 built from the grid directly.
        let mut moment = Array2::<f64>::zeros((dx, dy));
        for i in 0..p {
            for j in 0..q {
                for a in 0..dx {
                    for b in 0..dy {
                        moment[[a, b]] += masses[[i, j]] * xs[[i, a]] * ys[[j, b]];
                    }
                }
            }
        }
        let closed = -8.0 * moment.iter().map(|v| v * v).sum::<f64>();
        worst_sign = worst_sign.max(form / scale);
        worst_form = worst_form.max((form - closed).abs() / scale);
    }
    Ok((
        worst_sign <= KERNEL_SIGN_TOL && worst_form <= KERNEL_FORM_TOL,
        format!("max form/scale {worst_sign:.3e}, max |form + 8|M|^2| / scale {worst_form:.3e}"),
    ))
}

fn c7_tightness(desk: &[DeskInstance]) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for d in desk {
        for kind in [GwCostKind::Quadratic, GwCostKind::InnerProduct] {
            let pi = brute_force_qap(&d.mu, &d.nu, kind)?.plan();
            let lin = linearized_cost(&pi, &d.mu, &d.nu, kind)?;
            let (gamma, _) = solve_ot(&lin.cost, d.mu.weights(), d.nu.weights())?;
            let (r1, r2) = tightness_residuals(&pi, &gamma, &d.mu, &d.nu, kind)?;
            worst = worst.max(r1.max(r2) / gw_scale(&d.mu, &d.nu, kind));
        }
    }
    Ok((worst <= TIGHTNESS_TOL, format!("max residual / scale {worst:.3e} (both kinds)")))
}

fn c8_monotone_on_region(desk: &[DeskInstance]) -> Result<Verdict> {
    let (mut checked, mut bad) = (0, 0);
    for d in desk {
        let (mu, nu) = (d.mu.center(), d.nu.center());
        let plans = d.scan.plans.as_ref().expect("scans keep their plans");
        for (plan, &m) in plans.iter().zip(&d.scan.m_grid) {
            checked += 1;
            if !verify_monotone_on_region(plan, &mu, &nu, m, PLAN_MASS_TOL)?.holds {
                bad += 1;
            }
        }
    }
    Ok((bad == 0, format!("{bad} violations among {checked} grid plans")))
}

fn c9_separation() -> Result<Verdict> {
    let k = 1.1 * separation_k0(1.0)?.k0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    for _ in 0..20 {
        let mut part = || -> Result<DiscreteMeasure> {
            let xs: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            DiscreteMeasure::uniform_1d(&xs)
        };
        let (mu1, mu2, nu1, nu2) = (part()?, part()?, part()?, part()?);
        let (mu, nu) = two_component(&mu1, &mu2, &nu1, &nu2, 0.5, k)?;
        let brute = brute_force_qap(&mu, &nu, GwCostKind::Quadratic)?;
        let (up, down) = monotone_values(&mu, &nu)?;
        if up.min(down) - brute.value > TIE_TOL * gw_scale(&mu, &nu, GwCostKind::Quadratic) {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("K = {k:.4}, {failures} of 20 optima not monotone")))
}

/// `(1/N^2) sum_ij ((x_i - x_j)^2 - (y_i - y_j)^2)^2`.
fn pair_cost(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = (x[i] - x[j]).powi(2) - (y[i] - y[j]).powi(2);
            s += d * d;
        }
    }
    s / (n * n) as f64
}

fn c10_gradient() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < 20 {
        let n = 4 + accepted % 5;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        // Tie-free: well separated coordinates and a clear winning branch.
        let min_gap = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        };
        let mut xs = x.clone();
        let mut ys = y.clone();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let up = pair_cost(&xs, &ys);
        ys.reverse();
        let branch_gap = (up - pair_cost(&xs, &ys)).abs();
        if min_gap(&x) < 1e-3 || min_gap(&y) < 1e-3 || branch_gap < 1e-6 {
            continue;
        }
        accepted += 1;
        let (gx, gy) = grad_f(&x, &y)?;
        let h = 1e-6;
        let mut fd = Vec::with_capacity(2 * n);
        for which in 0..2 {
            for i in 0..n {
                let (mut xp, mut yp) = (x.clone(), y.clone());
                let (mut xm, mut ym) = (x.clone(), y.clone());
                if which == 0 {
                    xp[i] += h;
                    xm[i] -= h;
                } else {
                    yp[i] += h;
                    ym[i] -= h;
                }
                fd.push((objective_f(&xp, &yp)? - objective_f(&xm, &ym)?) / (2.0 * h));
            }
        }
        let g: Vec<f64> = gx.into_iter().chain(gy).collect();
        let norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (u, v)| a.max((u - v).abs())) / norm;
        worst = worst.max(err);
    }
    Ok((worst <= GRAD_REL_TOL, format!("max relative error {worst:.3e} over 20 point sets")))
}

fn c11_ctilde_exp() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let h = 1 + k % 3;
        let u: Vec<f64> = (0..h).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..=h).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma: Vec<f64> = (0..h).map(|_| rng.random_range(0.1..4.0)).collect();
        let u_plus = rng.random_range(0.0..2.0);
        worst = worst.max(ctilde_exp_residual(&u, u_plus, &p, &sigma)?);
    }
    Ok((worst <= EXP_RESIDUAL_TOL, format!("max residual {worst:.3e}")))
}

/// `(interior minimum strictly below both endpoints, endpoints match the monotone plans)`.
fn profile_shape(mu: &DiscreteMeasure, nu: &DiscreteMeasure, sigma: f64) -> Result<(bool, bool, String)> {
    let cfg = SmoothingConfig::new(sigma, 100)?;
    let (ms, ns) = (gaussian_smooth(mu, &cfg)?, gaussian_smooth(nu, &cfg)?);
    let scan = mscan(&ms, &ns, &ScanOptions::new(150))?;
    let profile = gw_profile(&scan);
    let tol = PROFILE_TOL * gw_scale(&ms, &ns, GwCostKind::Quadratic);
    let ends = profile[0].1.min(profile[profile.len() - 1].1);
    let interior = profile[1..profile.len() - 1].iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let (up, down) = monotone_values(&ms, &ns)?;
    let ends_ok = (profile[0].1 - down).abs() <= 1e-8 && (profile[profile.len() - 1].1 - up).abs() <= 1e-8;
    let is_interior = interior < ends - tol;
    Ok((
        is_interior,
        ends_ok,
        format!("sigma {sigma:.0e}: interior min {interior:.6} endpoints {ends:.6}"),
    ))
}

fn c12_profile() -> Result<Verdict> {
    let (mu, nu) = beinert_counterexample(7)?;
    let (a_int, a_ends, a) = profile_shape(&mu, &nu, 8e-3)?;
    let (b_int, b_ends, b) = profile_shape(&mu, &nu, 3e-2)?;
    Ok((a_int && !b_int && a_ends && b_ends, format!("{a} (interior {a_int}); {b} (interior {b_int})")))
}

/// Same profile on the eps = 1e-2 variant of the counterexample; informational.
fn c12_variant() -> Result<String> {
    let (mu, nu) = beinert_with_eps(7, 1e-2)?;
    let (_, _, a) = profile_shape(&mu, &nu, 8e-3)?;
    let (_, _, b) = profile_shape(&mu, &nu, 3e-2)?;
    Ok(format!("{a}; {b}"))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Result<Verdict>) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    println!(
        "criterion {id:>2} {} {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture or test filters are accepted and ignored.
    let start = Instant::now();
    let desk = match desk_instances() {
        Ok(d) => d,
        Err(e) => {
            println!("could not build the shared instances: {e}");
            return ExitCode::FAILURE;
        }
    };
    let adversarial = adversarial_runs();
    let mut passed = Vec::new();
    passed.push(run(1, "oracle equivalence", || c1_oracle_equivalence(&desk)));
    passed.push(run(2, "small-N monotonicity", c2_small_n_monotone));
    passed.push(run(3, "counterexample n=7", c3_beinert));
    match &adversarial {
        Ok(out) => {
            passed.push(run(4, "adversarial descent", || c4_adversarial(out)));
            passed.push(run(5, "bi-map emergence", || c5_bimap(out)));
        }
        Err(e) => {
            let msg = e.to_string();
            passed.push(run(4, "adversarial descent", || Err(gwlab::Error::Solver(msg.clone()))));
            passed.push(run(5, "bi-map emergence", || Err(gwlab::Error::Solver(msg))));
        }
    }
    passed.push(run(6, "kernel negativity", c6_kernel_negativity));
    passed.push(run(7, "relaxation tightness", || c7_tightness(&desk)));
    passed.push(run(8, "monotone on region", || c8_monotone_on_region(&desk)));
    passed.push(run(9, "two-component separation", c9_separation));
    passed.push(run(10, "gradient", c10_gradient));
    passed.push(run(11, "c~-exp identity", c11_ctilde_exp));
    passed.push(run(12, "instability profile", c12_profile));
    match c12_variant() {
        Ok(s) => println!("   note: eps = 1e-2 variant: {s}"),
        Err(e) => println!("   note: eps = 1e-2 variant failed: {e}"),
    }
    let n_pass = passed.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {n_pass}/{} criteria passed in {:.1}s",
        passed.len(),
        start.elapsed().as_secs_f64()
    );
    if n_pass == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
