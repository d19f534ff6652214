//! CSV artifacts. Every numeric column is written with 17 significant
//! digits so values round-trip exactly.

use std::fs::File;
use std::path::Path;

use mptp_core::inverse::{DriftAnchor, NonParamRecord, ObservationSet, ParamRecord};
use mptp_core::pinn::TrainRecord;
use mptp_core::PathSample;

use crate::CliError;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |k| format!("{prefix}{k}"))
}

/// `t,z1,…,zd`
pub fn write_path(path: &Path, p: &PathSample) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("t".to_string()).chain(numbered("z", p.dim())).collect();
    w.write_record(&header)?;
    for i in 0..p.len() {
        w.write_record(std::iter::once(p.times()[i]).chain(p.state(i).iter().copied()).map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), line + 2)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_path(path: &Path) -> Result<PathSample, CliError> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
        return Err(CliError::Config(format!("{}: expected header `t,z1,...`", path.display())));
    }
    let times = rows.iter().map(|r| r[0]).collect();
    let states: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].to_vec()).collect();
    PathSample::from_rows(times, &states).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_observations(path: &Path) -> Result<ObservationSet, CliError> {
    let p = read_path(path)?;
    ObservationSet::from_path(&p).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `x1,…,xd,f1,…,fd`
pub fn write_anchors(path: &Path, anchors: &[DriftAnchor]) -> Result<(), CliError> {
    let d = anchors.first().map_or(1, |a| a.x.len());
    let mut w = writer(path)?;
    w.write_record(numbered("x", d).chain(numbered("f", d)))?;
    for a in anchors {
        w.write_record(a.x.iter().chain(&a.f).copied().map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_anchors(path: &Path) -> Result<Vec<DriftAnchor>, CliError> {
    let (header, rows) = read_table(path)?;
    if header.is_empty() || header.len() % 2 != 0 {
        return Err(CliError::Config(format!("{}: expected header `x1,...,xd,f1,...,fd`", path.display())));
    }
    let d = header.len() / 2;
    Ok(rows.into_iter().map(|r| DriftAnchor { x: r[..d].to_vec(), f: r[d..].to_vec() }).collect())
}

/// `iter,total,residual,boundary,regularizer`
pub fn write_forward_history(path: &Path, h: &[TrainRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["iter", "total", "residual", "boundary", "regularizer"])?;
    for r in h {
        w.write_record([r.iteration.to_string(), fmt(r.total), fmt(r.residual), fmt(r.boundary), fmt(r.regularizer)])?;
    }
    w.flush()?;
    Ok(())
}

/// `iter,total,residual,data,<β names>`
pub fn write_param_history(path: &Path, names: &[&str], h: &[ParamRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let header: Vec<String> =
        ["iter", "total", "residual", "data"].iter().chain(names).map(|s| s.to_string()).collect();
    w.write_record(&header)?;
    for r in h {
        let row = [r.iteration.to_string(), fmt(r.total), fmt(r.residual), fmt(r.data)]
            .into_iter()
            .chain(r.beta.iter().copied().map(fmt));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `iter,total,ode,drift,weight`
pub fn write_nonparam_history(path: &Path, h: &[NonParamRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["iter", "total", "ode", "drift", "weight"])?;
    for r in h {
        w.write_record([r.iteration.to_string(), fmt(r.total), fmt(r.ode), fmt(r.drift), fmt(r.weight)])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic table with a header row; used by the drift-curve and report
/// outputs.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.csv");
        let times = vec![0.0, 0.1, 1.0 / 3.0];
        let rows = vec![vec![-1.0, 1e-300], vec![std::f64::consts::PI, -0.0], vec![1.0 / 7.0, 123456.789]];
        let p = PathSample::from_rows(times, &rows).unwrap();
        write_path(&f, &p).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("t,z1,z2\n"));
        assert!(text.contains("3.1415926535897931e0"));
        assert_eq!(read_path(&f).unwrap(), p);
    }

    #[test]
    fn anchors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        let a = vec![DriftAnchor { x: vec![1.2], f: vec![-0.25] }, DriftAnchor { x: vec![3.0], f: vec![0.1] }];
        write_anchors(&f, &a).unwrap();
        assert!(std::fs::read_to_string(&f).unwrap().starts_with("x1,f1\n"));
        assert_eq!(read_anchors(&f).unwrap(), a);
    }

    #[test]
    fn malformed_numbers_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("bad.csv");
        std::fs::write(&f, "t,z1\n0,1\n0.5,abc\n").unwrap();
        let msg = read_path(&f).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        std::fs::write(&f, "time,z1\n0,1\n").unwrap();
        assert!(read_path(&f).is_err());
    }

    #[test]
    fn history_header() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("h.csv");
        let h = vec![TrainRecord { iteration: 0, total: 1.0, residual: 0.5, boundary: 0.5, regularizer: 0.0 }];
        write_forward_history(&f, &h).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert_eq!(text.lines().next(), Some("iter,total,residual,boundary,regularizer"));
        assert_eq!(text.lines().count(), 2);
    }
}
