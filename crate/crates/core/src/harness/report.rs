//! CSV output.
//!
//! `metrics.csv` holds only deterministic quantities so identical runs give
//! byte-identical files; wall-clock time and efficacy go to `timings.csv`.

use std::cmp::Ordering;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const METRICS_HEADER: [&str; 8] = [
    "model",
    "method",
    "reduced_dim",
    "regime",
    "error_q",
    "error_p",
    "fom_energy_error_max",
    "lifted_energy_drift_max",
];

pub const TIMINGS_HEADER: [&str; 6] = [
    "model",
    "method",
    "reduced_dim",
    "regime",
    "wall_seconds",
    "efficacy",
];

pub const OFFLINE_HEADER: [&str; 5] = ["model", "stage", "method", "reduced_dim", "seconds"];

/// One offline-cost measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineCost {
    pub model: String,
    /// `lifted-snapshots-svd`, `quadratic-projection` or `spdeim-jacobian-svd`.
    pub stage: &'static str,
    pub method: String,
    pub reduced_dim: usize,
    pub seconds: f64,
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn order(a: &MetricReport, b: &MetricReport) -> Ordering {
    (&a.model, &a.method, a.reduced_dim, a.regime).cmp(&(&b.model, &b.method, b.reduced_dim, b.regime))
}

pub fn sorted_reports(reports: &[MetricReport]) -> Vec<MetricReport> {
    let mut v = reports.to_vec();
    v.sort_by(order);
    v
}

fn write_rows<W: std::io::Write>(w: W, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, reports: &[MetricReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Empty("metric reports"));
    }
    let rows = sorted_reports(reports)
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.method.clone(),
                r.reduced_dim.to_string(),
                r.regime.to_string(),
                num(r.error_q),
                opt(r.error_p),
                opt(r.fom_energy_error),
                opt(r.lifted_energy_drift),
            ]
        })
        .collect();
    write_rows(w, &METRICS_HEADER, rows)
}

pub fn write_timings_csv<W: std::io::Write>(w: W, reports: &[MetricReport]) -> Result<()> {
    let rows = sorted_reports(reports)
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.method.clone(),
                r.reduced_dim.to_string(),
                r.regime.to_string(),
                num(r.wall_seconds),
                opt(r.efficacy),
            ]
        })
        .collect();
    write_rows(w, &TIMINGS_HEADER, rows)
}

pub fn write_offline_csv<W: std::io::Write>(w: W, costs: &[OfflineCost]) -> Result<()> {
    let rows = costs
        .iter()
        .map(|c| {
            vec![
                c.model.clone(),
                c.stage.to_string(),
                c.method.clone(),
                c.reduced_dim.to_string(),
                num(c.seconds),
            ]
        })
        .collect();
    write_rows(w, &OFFLINE_HEADER, rows)
}

/// Long-format `t,value` series.
pub fn write_series_csv<W: std::io::Write>(w: W, times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "series",
            expected: times.len(),
            found: values.len(),
        });
    }
    let rows = times
        .iter()
        .zip(values)
        .map(|(t, v)| vec![num(*t), num(*v)])
        .collect();
    write_rows(w, &["t", "value"], rows)
}

pub fn emit_metrics_csv(reports: &[MetricReport], path: &Path) -> Result<()> {
    write_metrics_csv(std::fs::File::create(path)?, reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Regime;

    fn report(method: &str, dim: usize, regime: Regime) -> MetricReport {
        MetricReport {
            model: "exp-wave".into(),
            method: method.into(),
            reduced_dim: dim,
            regime,
            error_q: 0.125,
            error_p: Some(1e-3),
            fom_energy_error: None,
            lifted_energy_drift: Some(2.5e-15),
            wall_seconds: 0.5,
            efficacy: Some(16.0),
        }
    }

    fn render(reports: &[MetricReport]) -> String {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, reports).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn one_cell_gives_two_rows_plus_header() {
        let text = render(&[report("lifting", 8, Regime::Test), report("lifting", 8, Regime::Train)]);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert_eq!(lines[1], "exp-wave,lifting,8,train,1.25e-1,1e-3,,2.5e-15");
        assert!(lines[2].contains(",test,"));
    }

    #[test]
    fn order_is_deterministic() {
        let a = vec![
            report("psd", 8, Regime::Train),
            report("lifting", 10, Regime::Train),
            report("lifting", 8, Regime::Test),
            report("lifting", 8, Regime::Train),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(render(&a), render(&b));
        let text = render(&a);
        let methods: Vec<_> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(methods, ["lifting", "lifting", "lifting", "psd"]);
    }

    #[test]
    fn empty_reports_are_rejected() {
        assert!(write_metrics_csv(Vec::new(), &[]).is_err());
    }

    #[test]
    fn series_is_long_format() {
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[0.0, 0.5], &[0.0, 1e-16]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,value\n0e0,0e0\n5e-1,1e-16\n");
        assert!(write_series_csv(Vec::new(), &[0.0], &[]).is_err());
    }
}
