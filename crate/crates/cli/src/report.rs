//! Comparison tables between finished runs.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::ReportSolver;
use crate::io::{self, fmt};
use crate::run::{Ctx, Payload};
use crate::CliError;

fn read_result(dir: &Path) -> Result<Option<Value>, CliError> {
    let f = dir.join("result.json");
    if !f.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&f).map_err(|e| CliError::File { path: f.clone(), source: e })?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Writes `report.csv` (`run_a,run_b,linf,rmse` on `run_a`'s grid) and
/// `params.csv` (`run,param,estimate,truth,rel_error`) for every run that
/// recorded fitted parameters.
pub(crate) fn report(ctx: &Ctx) -> Result<Payload, CliError> {
    let s: ReportSolver = ctx.cfg.solver()?;
    if s.runs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    // labels as written in the config, so tables do not depend on where it lives
    let mut labels: Vec<String> = s.runs.iter().map(|p| p.display().to_string()).collect();
    let mut dirs: Vec<_> = s.runs.iter().map(|p| ctx.resolve(p)).collect();
    let pairs: Vec<(usize, usize)> = match &s.reference {
        Some(r) => {
            labels.insert(0, r.display().to_string());
            dirs.insert(0, ctx.resolve(r));
            (1..dirs.len()).map(|j| (0, j)).collect()
        }
        None => (0..dirs.len()).flat_map(|i| (i + 1..dirs.len()).map(move |j| (i, j))).collect(),
    };
    if pairs.is_empty() {
        return Err(CliError::Config("report needs two runs or a reference".into()));
    }
    let paths = dirs.iter().map(|d| io::read_path(&d.join("path.csv"))).collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (i, j) in pairs {
        let (linf, rmse) = paths[i].distance(&paths[j])?;
        rows.push(vec![labels[i].clone(), labels[j].clone(), fmt(linf), fmt(rmse)]);
        table.push(json!({"run_a": labels[i], "run_b": labels[j], "linf": linf, "rmse": rmse}));
    }
    io::write_table(&ctx.out.join("report.csv"), &["run_a", "run_b", "linf", "rmse"], &rows)?;

    let mut prows = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let Some(r) = read_result(d)? else { continue };
        let (Some(beta), Some(truth)) = (r["beta"].as_object(), r["truth"].as_object()) else { continue };
        for (name, est) in beta {
            let (Some(est), Some(t)) = (est.as_f64(), truth.get(name).and_then(Value::as_f64)) else { continue };
            let rel = if t == 0.0 { est.abs() } else { ((est - t) / t).abs() };
            prows.push(vec![labels[i].clone(), name.clone(), fmt(est), fmt(t), fmt(rel)]);
        }
    }
    io::write_table(&ctx.out.join("params.csv"), &["run", "param", "estimate", "truth", "rel_error"], &prows)?;

    let mut f = Map::new();
    f.insert("comparisons".into(), Value::Array(table));
    f.insert("report_file".into(), json!("report.csv"));
    f.insert("params_file".into(), json!("params.csv"));
    Ok(Payload { fields: f, failure: None })
}
