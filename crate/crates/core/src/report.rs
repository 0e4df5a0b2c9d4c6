//! Machine-readable output: CSV emitters for fields, Green columns and
//! per-trial statistics, and JSON summaries of toppling runs.

use serde_json::json;

use crate::graph::Graph;
use crate::numeric::{det_max, det_min, det_sum};
use crate::sandpile::OdometerReport;

/// One row per vertex: `index, coordinates..., value`.
pub fn field_csv(graph: &Graph, values: &[f64]) -> String {
    let d = graph.coord(0).map_or(0, |c| c.coords.len());
    let mut out = String::new();
    out.push_str("index");
    for i in 0..d {
        out.push_str(&format!(",c{i}"));
    }
    out.push_str(",value\n");
    for (v, &val) in values.iter().enumerate() {
        out.push_str(&v.to_string());
        if let Some(c) = graph.coord(v) {
            for x in c.coords {
                out.push_str(&format!(",{x}"));
            }
        }
        out.push_str(&format!(",{val:.17e}\n"));
    }
    out
}

/// One row per lag: `coordinates..., norm2, value`; used for Green columns
/// and variogram tables.
pub fn lag_csv(lags: &[Vec<i64>], values: &[f64]) -> String {
    let d = lags.first().map_or(0, |c| c.len());
    let mut out = String::new();
    for i in 0..d {
        out.push_str(&format!("c{i},"));
    }
    out.push_str("norm2,value\n");
    for (lag, &val) in lags.iter().zip(values) {
        for x in lag {
            out.push_str(&format!("{x},"));
        }
        let norm2 = lag.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        out.push_str(&format!("{norm2:.17e},{val:.17e}\n"));
    }
    out
}

/// One row per trial: `trial, value`.
pub fn trials_csv(values: &[f64]) -> String {
    let mut out = String::from("trial,value\n");
    for (t, &v) in values.iter().enumerate() {
        out.push_str(&format!("{t},{v:.17e}\n"));
    }
    out
}

/// JSON summary of a toppling run: status, sweeps, ledgers and odometer
/// statistics (the full fields go to CSV, not JSON).
pub fn odometer_report_json(report: &OdometerReport) -> serde_json::Value {
    let u = &report.odometer;
    let n = u.len() as f64;
    json!({
        "status": report.status,
        "sweeps": report.sweeps,
        "mass_drift": report.mass_drift,
        "absorbed": report.absorbed,
        "max_residual_excess": report.max_residual_excess,
        "odometer": {
            "min": det_min(u),
            "max": det_max(u),
            "mean": det_sum(u) / n,
        },
        "final_mass_total": report.final_config.total_mass(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn field_csv_has_coords_and_header() {
        let g = Graph::torus(3, 2).unwrap();
        let values = vec![0.5; 9];
        let csv = field_csv(&g, &values);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "index,c0,c1,value");
        assert!(lines.next().unwrap().starts_with("0,0,0,"));
        assert_eq!(csv.lines().count(), 10);
    }

    #[test]
    fn lag_csv_norms() {
        let csv = lag_csv(&[vec![3, -4]], &[1.25]);
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("3,-4,5"));
    }
}
