use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};

use super::pipeline::RigidityReport;
use super::refine::RefinementTable;
use super::scan::ScanReport;

/// Columns of the one-row-per-run CSV summary.
pub const CSV_HEADER: [&str; 15] = [
    "family",
    "n",
    "resolution",
    "h_kind",
    "h_amp",
    "seed",
    "alpha",
    "el_residual",
    "lambda1",
    "normalized_lambda1",
    "sphere_bound",
    "gap",
    "multiplicity",
    "min_transversality",
    "verdict",
];

/// Pretty JSON whose floats always carry 17 significant digits.
struct PreciseFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for PreciseFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_float(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Scientific notation with 17 significant digits (exact round trip).
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// The CSV summary row of a report, matching [`CSV_HEADER`].
pub fn csv_row(report: &RigidityReport) -> Vec<String> {
    let c = &report.config;
    let min = report.minimizer.as_ref();
    let conf = report.spectrum.conformal.as_ref();
    vec![
        c.manifold.family_name().to_string(),
        c.manifold.dimension().to_string(),
        c.manifold.resolution_label(),
        c.h.kind_name().to_string(),
        format_float(c.h.amplitude()),
        c.seed.to_string(),
        opt(min.map(|m| m.alpha)),
        opt(min.map(|m| m.el_residual)),
        opt(conf.map(|s| s.lambda1)),
        opt(conf.map(|s| s.normalized_lambda1)),
        opt(conf.and_then(|s| s.sphere_bound)),
        opt(conf.and_then(|s| s.gap)),
        conf.map(|s| s.multiplicity.to_string()).unwrap_or_default(),
        opt(report.transversality.as_ref().map(|t| t.min_abs)),
        report.verdict.status.as_str().to_string(),
    ]
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, io::Error::other(format!("{other:?}"))),
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn spectrum_rows(report: &RigidityReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (metric, s) in [
        ("flat", report.spectrum.flat.as_ref()),
        ("conformal", report.spectrum.conformal.as_ref()),
    ] {
        if let Some(s) = s {
            let scale = s.volume.powf(2.0 / report.config.manifold.dimension() as f64);
            for (i, (l, r)) in s.eigenvalues.iter().zip(&s.residuals).enumerate() {
                rows.push(vec![
                    metric.to_string(),
                    i.to_string(),
                    format_float(*l),
                    format_float(l * scale),
                    format_float(*r),
                ]);
            }
        }
    }
    rows
}

/// Files written for one rigidity run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub report_json: PathBuf,
    pub summary_csv: PathBuf,
    pub j_trace_csv: PathBuf,
    pub spectrum_csv: PathBuf,
}

/// Writes `report.json`, `summary.csv`, `j_trace.csv` and `spectrum.csv`
/// into `dir` (created if needed).
pub fn emit_outputs(report: &RigidityReport, dir: &Path) -> Result<OutputPaths> {
    ensure_dir(dir)?;
    let paths = OutputPaths {
        report_json: dir.join("report.json"),
        summary_csv: dir.join("summary.csv"),
        j_trace_csv: dir.join("j_trace.csv"),
        spectrum_csv: dir.join("spectrum.csv"),
    };
    write_text(&paths.report_json, &to_json_string(report)?)?;
    write_csv(&paths.summary_csv, &CSV_HEADER, [csv_row(report)])?;
    let trace = report.minimizer.as_ref().map(|m| m.trace.as_slice()).unwrap_or(&[]);
    write_csv(
        &paths.j_trace_csv,
        &["step", "j"],
        trace.iter().enumerate().map(|(i, j)| vec![i.to_string(), format_float(*j)]),
    )?;
    write_csv(
        &paths.spectrum_csv,
        &["metric", "index", "eigenvalue", "normalized", "residual"],
        spectrum_rows(report),
    )?;
    Ok(paths)
}

/// Writes `scan.json`, `scan.csv` (one summary row per trial, in trial
/// order) and `scan_trials.csv` (trial, gap, multiplicity, transversality).
pub fn emit_scan(scan: &ScanReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let json = dir.join("scan.json");
    let rows = dir.join("scan.csv");
    let table = dir.join("scan_trials.csv");
    write_text(&json, &to_json_string(scan)?)?;
    write_csv(&rows, &CSV_HEADER, scan.trials.iter().map(|t| csv_row(&t.report)))?;
    write_csv(
        &table,
        &["trial", "perturbation_seed", "gap", "multiplicity", "min_transversality", "verdict"],
        scan.trials.iter().map(|t| {
            vec![
                t.trial.to_string(),
                t.perturbation_seed.to_string(),
                opt(t.gap()),
                t.multiplicity().map(|m| m.to_string()).unwrap_or_default(),
                opt(t.min_transversality()),
                t.report.verdict.status.as_str().to_string(),
            ]
        }),
    )?;
    Ok(vec![json, rows, table])
}

/// Writes `refinement.json` and `refinement.csv`.
pub fn emit_refinement(table: &RefinementTable, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let json = dir.join("refinement.json");
    let csv_path = dir.join("refinement.csv");
    write_text(&json, &to_json_string(table)?)?;
    write_csv(
        &csv_path,
        &[
            "level",
            "resolution",
            "nodes",
            "mesh_size",
            "lambda1",
            "lambda1_error",
            "identity_separable",
            "identity_coupled",
            "second_variation_gap",
        ],
        table.levels.iter().map(|r| {
            vec![
                r.level.to_string(),
                r.resolution.clone(),
                r.nodes.to_string(),
                format_float(r.mesh_size),
                opt(r.lambda1),
                opt(r.lambda1_error),
                opt(r.identity_separable),
                opt(r.identity_coupled),
                opt(r.second_variation_gap),
            ]
        }),
    )?;
    Ok(vec![json, csv_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, -1.0 / 3.0, 5.477904089531329, 1e-300, 6.02e23, 0.0] {
            let s = format_float(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let json = to_json_string(&x).unwrap();
            assert_eq!(from_json_str::<f64>(&json).unwrap(), x);
        }
    }

    #[test]
    fn non_finite_values_become_null() {
        let json = to_json_string(&vec![f64::NAN, 1.0]).unwrap();
        let back: Vec<Option<f64>> = from_json_str(&json).unwrap();
        assert_eq!(back, vec![None, Some(1.0)]);
    }

    #[test]
    fn unwritable_path_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = ensure_dir(&blocker.join("sub")).unwrap_err();
        assert!(matches!(&err, Error::Io { path, .. } if path.ends_with("sub")), "{err}");
    }
}
