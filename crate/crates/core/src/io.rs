//! File formats: measures as JSON, plans and curves as CSV.
//!
//! Floats are written with 17 significant digits so that values round-trip
//! exactly.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::measures::DiscreteMeasure;
use crate::transport::TransportPlan;
use crate::{Error, Result};

/// Entries at or below this mass are omitted from plan files.
pub const PLAN_MASS_FLOOR: f64 = 1e-15;

/// Round-trip decimal representation of a double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureFile {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

pub fn measure_from_json(text: &str) -> Result<DiscreteMeasure> {
    let file: MeasureFile = serde_json::from_str(text)?;
    DiscreteMeasure::from_points(&file.points, &file.weights)
}

pub fn measure_to_json(mu: &DiscreteMeasure) -> Result<String> {
    let file = MeasureFile {
        points: mu.points().rows().into_iter().map(|r| r.to_vec()).collect(),
        weights: mu.weights().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn read_measure(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    measure_from_json(&fs::read_to_string(path)?)
}

pub fn write_measure(path: impl AsRef<Path>, mu: &DiscreteMeasure) -> Result<()> {
    fs::write(path, measure_to_json(mu)?)?;
    Ok(())
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// `i,j,mass` with one row per entry above [`PLAN_MASS_FLOOR`], row-major order.
pub fn plan_to_csv(plan: &TransportPlan) -> Result<String> {
    let rows = plan
        .support(PLAN_MASS_FLOOR)
        .into_iter()
        .map(|(i, j, m)| vec![i.to_string(), j.to_string(), fmt_f64(m)]);
    csv_string(&["i", "j", "mass"], rows)
}

/// Parses an `i,j,mass` table into a dense `n x m` matrix.
pub fn plan_matrix_from_csv(text: &str, n: usize, m: usize) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", "mass"] {
        return Err(Error::Parse(format!("unexpected plan header {headers:?}")));
    }
    let mut matrix = Array2::zeros((n, m));
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse(format!("short row {rec:?}")));
        let parse_idx = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let i = parse_idx(field(0)?)?;
        let j = parse_idx(field(1)?)?;
        let mass: f64 = field(2)?
            .parse()
            .map_err(|e| Error::Parse(format!("{:?}: {e}", rec.get(2))))?;
        if i >= n || j >= m {
            return Err(Error::Parse(format!("entry ({i}, {j}) outside a {n} x {m} plan")));
        }
        matrix[[i, j]] += mass;
    }
    Ok(matrix)
}

/// Reads a plan between `mu` and `nu` and checks its marginals.
pub fn plan_from_csv(text: &str, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    let matrix = plan_matrix_from_csv(text, mu.len(), nu.len())?;
    TransportPlan::new(matrix, mu.weights().clone(), nu.weights().clone())
}

pub fn read_plan(path: impl AsRef<Path>, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    plan_from_csv(&fs::read_to_string(path)?, mu, nu)
}

pub fn write_plan(path: impl AsRef<Path>, plan: &TransportPlan) -> Result<()> {
    fs::write(path, plan_to_csv(plan)?)?;
    Ok(())
}

/// `m,gw_value` curve.
pub fn profile_to_csv(profile: &[(f64, f64)]) -> Result<String> {
    csv_string(
        &["m", "gw_value"],
        profile.iter().map(|&(m, v)| vec![fmt_f64(m), fmt_f64(v)]),
    )
}

/// `iter,F` trace, iterations numbered from zero.
pub fn trace_to_csv(trace: &[f64]) -> Result<String> {
    csv_string(
        &["iter", "F"],
        trace.iter().enumerate().map(|(k, f)| vec![k.to_string(), fmt_f64(*f)]),
    )
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
