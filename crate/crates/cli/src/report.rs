//! Tidy CSV and JSON outputs of a sweep, plus the median/band summary.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use dbss::Method;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::sweep::{SweepResult, SweepVariable};

pub const RAW_CSV: &str = "raw.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RESULT_JSON: &str = "sweep.json";

/// Fraction of realizations that may fail before a cell is marked failed.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

/// One realization of one method. Failed runs carry NaN criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub method: Method,
    pub n_channels: usize,
    pub variable: SweepVariable,
    pub value: f64,
    pub realization: usize,
    #[serde(rename = "delta_A")]
    pub delta_a: f64,
    pub sdr_db: f64,
    /// Worst per-source relative error, in percent.
    pub rel_err_pct: f64,
    pub seconds: f64,
}

impl RawRecord {
    pub fn failed(&self) -> bool {
        self.delta_a.is_nan() || self.sdr_db.is_nan()
    }
}

/// Median and central-60% band of the successful realizations of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub n_channels: usize,
    pub variable: SweepVariable,
    pub value: f64,
    pub n_realizations: usize,
    pub n_failed: usize,
    pub failed: bool,
    #[serde(rename = "delta_A_median")]
    pub delta_a_median: f64,
    #[serde(rename = "delta_A_low")]
    pub delta_a_low: f64,
    #[serde(rename = "delta_A_high")]
    pub delta_a_high: f64,
    pub sdr_db_median: f64,
    pub sdr_db_low: f64,
    pub sdr_db_high: f64,
    pub rel_err_pct_median: f64,
    pub rel_err_pct_low: f64,
    pub rel_err_pct_high: f64,
    pub seconds_total: f64,
}

/// Median with the mean of the two middle values for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Endpoints of the central 60%: the lowest and highest 20% of the ordered
/// values (rounded down) are dropped.
pub fn central_band(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let drop = v.len() / 5;
    (v[drop], v[v.len() - 1 - drop])
}

/// Groups records by (method, n_channels, variable, value) in order of first
/// appearance.
pub fn summarize(records: &[RawRecord], n_realizations: usize) -> Vec<CellSummary> {
    let mut cells: Vec<Vec<&RawRecord>> = Vec::new();
    for r in records {
        let same_cell = |c: &&mut Vec<&RawRecord>| {
            let head = c[0];
            head.method == r.method
                && head.n_channels == r.n_channels
                && head.variable == r.variable
                && head.value.to_bits() == r.value.to_bits()
        };
        match cells.iter_mut().find(same_cell) {
            Some(cell) => cell.push(r),
            None => cells.push(vec![r]),
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let head = cell[0];
            let ok: Vec<&RawRecord> = cell.iter().copied().filter(|r| !r.failed()).collect();
            let n_failed = cell.len() - ok.len();
            let total = n_realizations.max(cell.len());
            let column = |f: fn(&RawRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (delta, sdr, rel) = (
                column(|r| r.delta_a),
                column(|r| r.sdr_db),
                column(|r| r.rel_err_pct),
            );
            let (delta_lo, delta_hi) = central_band(&delta);
            let (sdr_lo, sdr_hi) = central_band(&sdr);
            let (rel_lo, rel_hi) = central_band(&rel);
            CellSummary {
                method: head.method,
                n_channels: head.n_channels,
                variable: head.variable,
                value: head.value,
                n_realizations: cell.len(),
                n_failed,
                failed: n_failed as f64 > MAX_FAILED_FRACTION * total as f64,
                delta_a_median: median(&delta),
                delta_a_low: delta_lo,
                delta_a_high: delta_hi,
                sdr_db_median: median(&sdr),
                sdr_db_low: sdr_lo,
                sdr_db_high: sdr_hi,
                rel_err_pct_median: median(&rel),
                rel_err_pct_low: rel_lo,
                rel_err_pct_high: rel_hi,
                seconds_total: cell.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(
    rows: &[T],
    header: &[&str],
    out: impl Write,
) -> Result<(), csv::Error> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub const RAW_COLUMNS: [&str; 9] = [
    "method",
    "n_channels",
    "variable",
    "value",
    "realization",
    "delta_A",
    "sdr_db",
    "rel_err_pct",
    "seconds",
];

pub const SUMMARY_COLUMNS: [&str; 17] = [
    "method",
    "n_channels",
    "variable",
    "value",
    "n_realizations",
    "n_failed",
    "failed",
    "delta_A_median",
    "delta_A_low",
    "delta_A_high",
    "sdr_db_median",
    "sdr_db_low",
    "sdr_db_high",
    "rel_err_pct_median",
    "rel_err_pct_low",
    "rel_err_pct_high",
    "seconds_total",
];

/// Raw records as CSV; an empty slice gives the header line only.
pub fn write_raw_csv(records: &[RawRecord], out: impl Write) -> Result<(), csv::Error> {
    write_rows(records, &RAW_COLUMNS, out)
}

pub fn write_summary_csv(summaries: &[CellSummary], out: impl Write) -> Result<(), csv::Error> {
    write_rows(summaries, &SUMMARY_COLUMNS, out)
}

pub fn read_raw_csv(input: impl Read) -> Result<Vec<RawRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => CliError::Parse {
            path: path.to_path_buf(),
            message: format!("{kind:?}"),
        },
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(CliError::io(path))
}

/// JSON mirror of everything the CSV files contain. Non-finite values become `null`.
#[derive(Debug, Serialize)]
struct JsonReport<'a> {
    spec: Option<&'a crate::sweep::SweepSpec>,
    records: &'a [RawRecord],
    summaries: &'a [CellSummary],
}

/// Writes `raw.csv`, `summary.csv` and `sweep.json` under `out_dir` and
/// returns their paths.
pub fn write_report(result: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    write_files(
        Some(&result.spec),
        &result.records,
        &result.summaries,
        out_dir,
    )
}

/// Re-renders the summary and JSON from an existing raw CSV.
pub fn rerender(raw_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let file = File::open(raw_csv).map_err(CliError::io(raw_csv))?;
    let records = read_raw_csv(file).map_err(|e| csv_error(raw_csv, e))?;
    let n_realizations = records.iter().map(|r| r.realization + 1).max().unwrap_or(0);
    let summaries = summarize(&records, n_realizations);
    write_files(None, &records, &summaries, out_dir)
}

fn write_files(
    spec: Option<&crate::sweep::SweepSpec>,
    records: &[RawRecord],
    summaries: &[CellSummary],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let raw = out_dir.join(RAW_CSV);
    write_raw_csv(records, create(&raw)?).map_err(|e| csv_error(&raw, e))?;
    let summary = out_dir.join(SUMMARY_CSV);
    write_summary_csv(summaries, create(&summary)?).map_err(|e| csv_error(&summary, e))?;
    let json = out_dir.join(RESULT_JSON);
    let mut file = create(&json)?;
    serde_json::to_writer_pretty(
        &mut file,
        &JsonReport {
            spec,
            records,
            summaries,
        },
    )
    .map_err(|e| CliError::Io {
        path: json.clone(),
        source: e.into(),
    })?;
    file.write_all(b"\n").map_err(CliError::io(&json))?;
    Ok(vec![raw, summary, json])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, value: f64, realization: usize, sdr: f64) -> RawRecord {
        RawRecord {
            method,
            n_channels: 20,
            variable: SweepVariable::ActiveFraction,
            value,
            realization,
            delta_a: sdr / 10.0,
            sdr_db: sdr,
            rel_err_pct: 100.0 / sdr,
            seconds: 0.5,
        }
    }

    #[test]
    fn median_and_band() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(central_band(&v), (2.0, 7.0));
        assert_eq!(central_band(&[5.0]), (5.0, 5.0));
    }

    #[test]
    fn empty_result_gives_header_only() {
        let mut buf = Vec::new();
        write_raw_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,n_channels,variable,value,realization,delta_A,sdr_db,rel_err_pct,seconds\n"
        );
    }

    #[test]
    fn csv_roundtrip() {
        let records = vec![
            record(Method::Decgmca, 0.5, 0, 31.25),
            record(Method::McGmca, 0.5, 0, 12.0),
            record(Method::Gmca, 0.9, 1, 7.5),
        ];
        let mut buf = Vec::new();
        write_raw_csv(&records, &mut buf).unwrap();
        assert_eq!(read_raw_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn failed_cells_are_flagged() {
        let mut records: Vec<RawRecord> = (0..5)
            .map(|r| record(Method::Decgmca, 0.3, r, 20.0 + r as f64))
            .collect();
        records[4].sdr_db = f64::NAN;
        records[4].delta_a = f64::NAN;
        let s = &summarize(&records, 5)[0];
        assert_eq!(s.n_failed, 1);
        assert!(!s.failed);
        assert_eq!(s.sdr_db_median, 21.5);
        records[3].sdr_db = f64::NAN;
        assert!(summarize(&records, 5)[0].failed);
    }

    #[test]
    fn summary_groups_in_first_appearance_order() {
        let records = vec![
            record(Method::Gmca, 0.9, 0, 5.0),
            record(Method::Decgmca, 0.9, 0, 30.0),
            record(Method::Gmca, 0.9, 1, 7.0),
        ];
        let s = summarize(&records, 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, Method::Gmca);
        assert_eq!(s[0].sdr_db_median, 6.0);
        assert_eq!(s[1].n_realizations, 1);
    }
}
