//! Result serialization: metrics CSV, measurement files, CRB reports, and the
//! run manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! produced from identical in-memory values are byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::crb::CrbReport;
use crate::dcmodel::MeasurementSet;
use crate::estimators::RecoveryMethod;

use super::{ExperimentConfig, HarnessError, MetricsRow};

pub const RESULTS_HEADER: &str = "scenario,method,M,N,snr_db,sigma2,topology_mse,crb_trace,\
fscore,state_mse,oracle_state_mse,sigma2_hat,runtime_s,failures";

/// Write metrics rows as CSV with the fixed column order.
pub fn write_results(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::with_capacity(rows.len() * 128 + 128);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.scenario,
            row.method,
            row.m,
            row.n,
            row.snr_db,
            row.sigma2,
            row.topology_mse,
            row.crb_trace,
            row.fscore,
            row.state_mse,
            row.oracle_state_mse,
            row.sigma2_hat,
            row.runtime_s,
            row.failures
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Parse a results CSV back into rows.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RESULTS_HEADER => {}
        other => {
            return Err(HarnessError::Data(format!(
                "unexpected results header: {other:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(HarnessError::Data(format!(
                "row {}: expected 14 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64, HarnessError> {
            s.parse()
                .map_err(|_| HarnessError::Data(format!("row {}: bad float '{s}'", idx + 2)))
        };
        let parse_u = |s: &str| -> Result<usize, HarnessError> {
            s.parse()
                .map_err(|_| HarnessError::Data(format!("row {}: bad integer '{s}'", idx + 2)))
        };
        rows.push(MetricsRow {
            scenario: fields[0].to_string(),
            method: fields[1]
                .parse::<RecoveryMethod>()
                .map_err(HarnessError::Data)?,
            m: parse_u(fields[2])?,
            n: parse_u(fields[3])?,
            snr_db: parse_f(fields[4])?,
            sigma2: parse_f(fields[5])?,
            topology_mse: parse_f(fields[6])?,
            crb_trace: parse_f(fields[7])?,
            fscore: parse_f(fields[8])?,
            state_mse: parse_f(fields[9])?,
            oracle_state_mse: parse_f(fields[10])?,
            sigma2_hat: parse_f(fields[11])?,
            runtime_s: parse_f(fields[12])?,
            failures: parse_u(fields[13])?,
        });
    }
    Ok(rows)
}

/// Write measurements as CSV: header `bus_1..bus_M`, one row per time sample.
pub fn write_measurements(ms: &MeasurementSet, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let m = ms.bus_count();
    let header: Vec<String> = (1..=m).map(|i| format!("bus_{i}")).collect();
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..ms.sample_count() {
        let row: Vec<String> = (0..m).map(|i| ms.p()[(i, n)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Read a measurements CSV produced by [`write_measurements`].
pub fn read_measurements(path: impl AsRef<Path>) -> Result<MeasurementSet, HarnessError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Data("empty measurements file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let m = cols.len();
    for (i, col) in cols.iter().enumerate() {
        if *col != format!("bus_{}", i + 1) {
            return Err(HarnessError::Data(format!(
                "unexpected measurements header column '{col}'"
            )));
        }
    }
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m {
            return Err(HarnessError::Data(format!(
                "row {}: expected {m} fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        for f in fields {
            values
                .push(f.parse().map_err(|_| {
                    HarnessError::Data(format!("row {}: bad float '{f}'", idx + 2))
                })?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::Data(
            "measurements file has no samples".into(),
        ));
    }
    // Rows are samples; transpose into the M x N layout.
    let mut p = DMatrix::zeros(m, n);
    for (sample, chunk) in values.chunks(m).enumerate() {
        for (bus, &v) in chunk.iter().enumerate() {
            p[(bus, sample)] = v;
        }
    }
    Ok(MeasurementSet::new(p, false, 0))
}

/// Write a dense matrix as plain CSV (no header).
pub fn write_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Serialize a CRB report to JSON: vech index map, per-parameter diagonal
/// bounds, and the summary traces.
pub fn crb_report_to_json(report: &CrbReport) -> serde_json::Value {
    let d = report.b_crb.nrows();
    let diag: Vec<f64> = (0..d).map(|i| report.b_crb[(i, i)]).collect();
    let order: Vec<Vec<usize>> = report
        .vech_order
        .iter()
        .map(|&(r, c)| vec![r + 1, c + 1])
        .collect();
    serde_json::json!({
        "n_samples": report.n_samples,
        "parameter_count": d,
        "vech_order_1indexed": order,
        "diagonal_bounds": diag,
        "topology_bound_trace": report.topology_bound_trace,
        "noise_var_bound": report.noise_var_bound,
    })
}

/// Write the machine-readable run manifest.
pub fn write_manifest(
    cfg: &ExperimentConfig,
    failures_per_point: &[(String, usize)],
    flagged: &[String],
    path: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let failures: Vec<serde_json::Value> = failures_per_point
        .iter()
        .map(|(point, count)| serde_json::json!({"point": point, "failures": count}))
        .collect();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg.to_text(),
        "failures": failures,
        "flagged_points": flagged,
    });
    let body =
        serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Data(e.to_string()))?;
    write_atomic(path.as_ref(), body.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent()
        && !parent.as_os_str().is_empty()
    {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_round_trip() {
        let rows = vec![MetricsRow {
            scenario: "ieee14".into(),
            method: RecoveryMethod::TwoPhase,
            m: 14,
            n: 200,
            snr_db: 15.0,
            sigma2: 0.125,
            topology_mse: 1.5,
            crb_trace: 0.9,
            fscore: 0.8,
            state_mse: 0.01,
            oracle_state_mse: 0.009,
            sigma2_hat: 0.13,
            runtime_s: 0.0,
            failures: 0,
        }];
        let dir = std::env::temp_dir().join("mlbest_io_test");
        let path = dir.join("results.csv");
        write_results(&rows, &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].scenario, "ieee14");
        assert_eq!(back[0].sigma2, 0.125);
        assert_eq!(back[0].failures, 0);
        // Header-only file round-trips to an empty list.
        write_results(&[], &path).unwrap();
        assert!(read_results(&path).unwrap().is_empty());
        let _ = std::fs::remove_dir_all(dir);
    }

    #[test]
    fn measurements_round_trip() {
        let p = DMatrix::from_row_slice(2, 3, &[1.0, 2.5, -0.125, 0.0, -1.0, 3.5]);
        let ms = MeasurementSet::new(p.clone(), false, 0);
        let dir = std::env::temp_dir().join("mlbest_io_test_ms");
        let path = dir.join("measurements.csv");
        write_measurements(&ms, &path).unwrap();
        let back = read_measurements(&path).unwrap();
        assert_eq!(back.p(), &p);
        let _ = std::fs::remove_dir_all(dir);
    }
}
