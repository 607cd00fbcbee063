//! Subcommand implementations. Each returns the manifest of the run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gwlab::adversarial::{descend_restarts, normalize_pair, objective_parts, AdversarialConfig};
use gwlab::analysis::{
    analyze_plan, separation_k0, tightness_residuals, verify_monotone_on_region, MonotoneCheck,
    StructureReport, DEFAULT_CROSSING_TOL, DEFAULT_RANK_TOL,
};
use gwlab::gw::{alternating_minimization, brute_force_qap, gw_value, linearized_cost};
use gwlab::io::{
    profile_to_csv, read_measure, read_plan, trace_to_csv, write_json, write_measure, write_plan,
};
use gwlab::measures::{gaussian_smooth, SmoothingConfig};
use gwlab::mscan::{detect_bimap, gw_profile, mscan, ScanOptions, DEFAULT_GAP_FACTOR, DEFAULT_MASS_TOL};
use gwlab::transport::{correlation, monotone_plan, solve_ot, Monotone};
use gwlab::{DiscreteMeasure, Error, GwCostKind, Result, TransportPlan};

use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Quadratic,
    Inner,
}

impl KindArg {
    fn kind(self) -> GwCostKind {
        match self {
            KindArg::Quadratic => GwCostKind::Quadratic,
            KindArg::Inner => GwCostKind::InnerProduct,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KindArg::Quadratic => "quadratic",
            KindArg::Inner => "inner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Alternating linearization.
    Alt,
    /// Exhaustive search over permutations (uniform weights, N <= 10).
    Brute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    /// Independent coupling.
    Product,
    /// Better of the two monotone rearrangements (1D only).
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Smooth {
    Both,
    First,
    None,
}

impl Smooth {
    fn name(self) -> &'static str {
        match self {
            Smooth::Both => "both",
            Smooth::First => "first",
            Smooth::None => "none",
        }
    }
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    read_measure(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidParameter(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn best_monotone(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: GwCostKind) -> Result<(TransportPlan, f64)> {
    let up = monotone_plan(mu, nu, Monotone::NonDecreasing)?;
    let down = monotone_plan(mu, nu, Monotone::NonIncreasing)?;
    let vu = gw_value(&up, mu, nu, kind)?;
    let vd = gw_value(&down, mu, nu, kind)?;
    Ok(if vd < vu { (down, vd) } else { (up, vu) })
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Source measure (JSON).
    pub mu: PathBuf,
    /// Target measure (JSON).
    pub nu: PathBuf,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "alt")]
    pub method: Method,
    #[arg(long, value_enum, default_value = "product")]
    pub init: Init,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    kind: &'a str,
    method: &'a str,
    value: f64,
    iterations: Option<usize>,
    trace: Option<Vec<f64>>,
    permutation: Option<Vec<usize>>,
}

pub fn solve(args: &SolveArgs) -> Result<RunManifest> {
    if !(args.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be nonnegative, got {}", args.tol)));
    }
    let mu = load_measure(&args.mu)?;
    let nu = load_measure(&args.nu)?;
    let kind = args.kind.kind();
    let (plan, summary) = match args.method {
        Method::Brute => {
            let sol = brute_force_qap(&mu, &nu, kind)?;
            let summary = SolveSummary {
                kind: args.kind.name(),
                method: "brute",
                value: sol.value,
                iterations: None,
                trace: None,
                permutation: Some(sol.permutation.clone()),
            };
            (sol.plan(), summary)
        }
        Method::Alt => {
            let init = match args.init {
                Init::Product => TransportPlan::product(mu.weights(), nu.weights()),
                Init::Monotone => best_monotone(&mu, &nu, kind)?.0,
            };
            let res = alternating_minimization(&mu, &nu, kind, &init, args.max_iter, args.tol)?;
            let summary = SolveSummary {
                kind: args.kind.name(),
                method: "alt",
                value: res.value,
                iterations: Some(res.iterations),
                trace: Some(res.trace.clone()),
                permutation: None,
            };
            (res.plan, summary)
        }
    };
    create_dir(&args.out)?;
    let plan_path = args.out.join("plan.csv");
    let result_path = args.out.join("result.json");
    write_plan(&plan_path, &plan)?;
    write_json(&result_path, &summary)?;
    println!("value {}", gwlab::io::fmt_f64(summary.value));

    let mut m = RunManifest::new("solve", args.seed);
    m.param("kind", args.kind.name())
        .param("method", summary.method)
        .param("init", format!("{:?}", args.init).to_lowercase())
        .param("max_iter", args.max_iter)
        .param("tol", args.tol)
        .input(&args.mu)
        .input(&args.nu)
        .output(&plan_path)
        .output(&result_path);
    Ok(m)
}

#[derive(Debug, Args)]
pub struct MscanArgs {
    pub mu: PathBuf,
    pub nu: PathBuf,
    /// Gaussian width; required unless `--smooth none`.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Grid size of the smoothing (N_dx).
    #[arg(long, default_value_t = 150)]
    pub n_grid: usize,
    /// Number of correlation values scanned (N_dm).
    #[arg(long, default_value_t = 2000)]
    pub n_dm: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub smooth: Smooth,
    /// Refine the grid around the best value.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct ScanSummary {
    best_m: f64,
    best_value: f64,
    best_index: usize,
    m_min: f64,
    m_max: f64,
    auto_centered: bool,
    monotone_up: f64,
    monotone_down: f64,
    n_source: usize,
    n_target: usize,
}

pub fn run_mscan(args: &MscanArgs) -> Result<RunManifest> {
    if args.n_dm < 2 {
        return Err(Error::InvalidParameter(format!("--n-dm must be at least 2, got {}", args.n_dm)));
    }
    let mu = load_measure(&args.mu)?;
    let nu = load_measure(&args.nu)?;
    let smoothing = match (args.smooth, args.sigma) {
        (Smooth::None, _) => None,
        (_, Some(sigma)) => Some(SmoothingConfig::new(sigma, args.n_grid)?),
        (_, None) => return Err(Error::InvalidParameter("--sigma is required unless --smooth none".into())),
    };
    let (mu_s, nu_s) = match (&smoothing, args.smooth) {
        (Some(cfg), Smooth::Both) => (gaussian_smooth(&mu, cfg)?, gaussian_smooth(&nu, cfg)?),
        (Some(cfg), Smooth::First) => (gaussian_smooth(&mu, cfg)?, nu.clone()),
        _ => (mu.clone(), nu.clone()),
    };
    let scan = mscan(&mu_s, &nu_s, &ScanOptions::new(args.n_dm).refine(args.refine))?;
    let kind = GwCostKind::Quadratic;
    let up = monotone_plan(&mu_s, &nu_s, Monotone::NonDecreasing)?;
    let down = monotone_plan(&mu_s, &nu_s, Monotone::NonIncreasing)?;
    let bimap = detect_bimap(&scan.best_plan, &mu_s, &nu_s, DEFAULT_MASS_TOL, DEFAULT_GAP_FACTOR)?;
    let summary = ScanSummary {
        best_m: scan.best_m(),
        best_value: scan.best_value,
        best_index: scan.best_index,
        m_min: scan.m_min,
        m_max: scan.m_max,
        auto_centered: scan.auto_centered,
        monotone_up: gw_value(&up, &mu_s, &nu_s, kind)?,
        monotone_down: gw_value(&down, &mu_s, &nu_s, kind)?,
        n_source: mu_s.len(),
        n_target: nu_s.len(),
    };

    let dir = &args.out_dir;
    create_dir(dir)?;
    let paths = [
        "profile.csv",
        "best_plan.csv",
        "bimap.json",
        "scan.json",
        "mu_scan.json",
        "nu_scan.json",
    ]
    .map(|f| dir.join(f));
    fs::write(&paths[0], profile_to_csv(&gw_profile(&scan))?)?;
    write_plan(&paths[1], &scan.best_plan)?;
    write_json(&paths[2], &bimap)?;
    write_json(&paths[3], &summary)?;
    write_measure(&paths[4], &mu_s)?;
    write_measure(&paths[5], &nu_s)?;
    println!(
        "best m {} value {} (monotone {} / {}) bimap {}",
        gwlab::io::fmt_f64(summary.best_m),
        gwlab::io::fmt_f64(summary.best_value),
        gwlab::io::fmt_f64(summary.monotone_up),
        gwlab::io::fmt_f64(summary.monotone_down),
        bimap.is_bimap
    );

    let mut m = RunManifest::new("mscan", args.seed);
    m.param("smooth", args.smooth.name())
        .param("sigma", args.sigma)
        .param("n_grid", args.n_grid)
        .param("n_dm", args.n_dm)
        .param("refine", args.refine)
        .input(&args.mu)
        .input(&args.nu);
    for p in &paths {
        m.output(p);
    }
    Ok(m)
}

#[derive(Debug, Args)]
pub struct AdversarialArgs {
    #[arg(long, default_value_t = 122)]
    pub n: usize,
    #[arg(long, default_value_t = 26.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 200)]
    pub n_iter: usize,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub early_stop: f64,
    /// Number of restarts; restart k uses seed `seed + k`.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    success: bool,
    iterations: usize,
    initial_f: f64,
    final_f: f64,
    g_identity: f64,
    g_branch: f64,
}

pub fn adversarial(args: &AdversarialArgs) -> Result<RunManifest> {
    let cfg = AdversarialConfig {
        n_points: args.n,
        n_iter: args.n_iter,
        step: args.eta,
        early_stop: args.early_stop,
        seed: args.seed,
    };
    let outcome = descend_restarts(&cfg, args.seeds, true)?;
    let dir = &args.out_dir;
    create_dir(dir)?;
    let mut outputs = Vec::new();
    let mut runs = Vec::new();
    for run in &outcome.runs {
        let trace = dir.join(format!("trace_seed{}.csv", run.seed));
        fs::write(&trace, trace_to_csv(&run.objective_trace)?)?;
        let (mu, nu, _) = run.plan()?;
        let mu_path = dir.join(format!("mu_seed{}.json", run.seed));
        let nu_path = dir.join(format!("nu_seed{}.json", run.seed));
        write_measure(&mu_path, &mu)?;
        write_measure(&nu_path, &nu)?;
        outputs.extend([trace, mu_path, nu_path]);
        let (g_identity, g_branch) = objective_parts(&run.x_final, &run.y_final)?;
        runs.push(RunSummary {
            seed: run.seed,
            success: run.success,
            iterations: run.iterations_run,
            initial_f: run.objective_trace[0],
            final_f: *run.objective_trace.last().expect("trace is never empty"),
            g_identity,
            g_branch,
        });
    }
    let success_seed = outcome.success().map(|r| r.seed);
    if let Some(run) = outcome.success() {
        // Rescaled copy of the certificate, ready for smoothing on a fixed grid.
        let (x, y) = normalize_pair(&run.x_final, &run.y_final)?;
        let mu_path = dir.join("mu.json");
        let nu_path = dir.join("nu.json");
        write_measure(&mu_path, &DiscreteMeasure::uniform_1d(&x)?)?;
        write_measure(&nu_path, &DiscreteMeasure::uniform_1d(&y)?)?;
        outputs.extend([mu_path, nu_path]);
    }
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &json!({ "success_seed": success_seed, "runs": runs }))?;
    outputs.push(summary_path);
    match success_seed {
        Some(s) => println!("success with seed {s}"),
        None => println!("no success in {} restarts", args.seeds),
    }

    let mut m = RunManifest::new("adversarial", args.seed);
    m.param("n", args.n)
        .param("eta", args.eta)
        .param("n_iter", args.n_iter)
        .param("early_stop", args.early_stop)
        .param("seeds", args.seeds);
    for p in &outputs {
        m.output(p);
    }
    Ok(m)
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Plan CSV to analyze.
    #[arg(long, requires_all = ["mu", "nu"], conflicts_with = "k0")]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<PathBuf>,
    #[arg(long)]
    pub nu: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Compute the separation threshold K0 instead of analyzing a plan.
    #[arg(long, requires = "delta")]
    pub k0: bool,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the report and manifest; the report is printed otherwise.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct PlanAnalysis {
    kind: &'static str,
    structure: StructureReport,
    /// 1D only: correlation of the plan on centered supports.
    correlation: Option<f64>,
    monotone_on_region: Option<MonotoneCheck>,
    gw_value: f64,
    /// Residuals against an LP solution of the problem linearized at this plan.
    tightness: [f64; 2],
}

pub fn analyze(args: &AnalyzeArgs) -> Result<Option<RunManifest>> {
    let mut m = RunManifest::new("analyze", args.seed);
    let (name, report) = if args.k0 {
        let delta = args.delta.expect("clap enforces --delta");
        let bound = separation_k0(delta)?;
        println!("K0 {}", gwlab::io::fmt_f64(bound.k0));
        m.param("k0", true).param("delta", delta);
        ("separation.json", serde_json::to_value(&bound)?)
    } else {
        let (Some(plan_path), Some(mu_path), Some(nu_path)) = (&args.plan, &args.mu, &args.nu) else {
            return Err(Error::InvalidParameter("either --plan with --mu and --nu, or --k0 --delta".into()));
        };
        let mu = load_measure(mu_path)?;
        let nu = load_measure(nu_path)?;
        let plan = read_plan(plan_path, &mu, &nu)?;
        let kind = args.kind.kind();
        let structure = analyze_plan(&plan, &mu, &nu, kind, args.rank_tol)?;
        let (correlation, monotone) = if mu.dim() == 1 && nu.dim() == 1 && kind == GwCostKind::Quadratic {
            let (mc, nc) = (mu.center(), nu.center());
            let c = correlation(&plan, &mc, &nc)?;
            (Some(c), Some(verify_monotone_on_region(&plan, &mc, &nc, c, DEFAULT_CROSSING_TOL)?))
        } else {
            (None, None)
        };
        let lin = linearized_cost(&plan, &mu, &nu, kind)?;
        let (gamma, _) = solve_ot(&lin.cost, mu.weights(), nu.weights())?;
        let (r1, r2) = tightness_residuals(&plan, &gamma, &mu, &nu, kind)?;
        let analysis = PlanAnalysis {
            kind: args.kind.name(),
            gw_value: gw_value(&plan, &mu, &nu, kind)?,
            correlation,
            monotone_on_region: monotone,
            tightness: [r1, r2],
            structure,
        };
        let flags = analysis.structure.empirical.as_ref();
        println!(
            "rank {} class {:?} is_map {} is_bimap {}",
            analysis.structure.rank,
            analysis.structure.predicted_class,
            flags.map_or("n/a".to_string(), |b| b.is_map.to_string()),
            flags.map_or("n/a".to_string(), |b| b.is_bimap.to_string()),
        );
        m.param("kind", args.kind.name()).param("rank_tol", args.rank_tol);
        m.input(plan_path).input(mu_path).input(nu_path);
        ("analysis.json", serde_json::to_value(&analysis)?)
    };
    match &args.out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(name);
            write_json(&path, &report)?;
            m.output(&path);
            Ok(Some(m))
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(None)
        }
    }
}
