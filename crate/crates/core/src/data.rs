//! Domain types shared by every stage of the pipeline, plus CSV ingestion
//! and persistence for telemetry logs, RPT label files and dataset manifests.
//!
//! Time is always hours since beginning of life. Current is signed, negative
//! while discharging.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("time not strictly increasing at row {0}")]
    NonMonotonicTime(usize),
    #[error("file contains no valid rows")]
    EmptyFile,
    #[error("value out of range in row {row}: {field} = {value}")]
    ValueOutOfRange {
        row: usize,
        field: &'static str,
        value: f64,
    },
    #[error("invalid telemetry: {0}")]
    InvalidTelemetry(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Telemetry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Hours since beginning of life.
    pub t: f64,
    pub voltage: f64,
    /// Amperes, negative while discharging.
    pub current: f64,
}

/// Time-ordered voltage/current samples for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryLog {
    cell_id: String,
    samples: Vec<Sample>,
}

impl TelemetryLog {
    /// Validates ordering and finiteness.
    pub fn new(cell_id: impl Into<String>, samples: Vec<Sample>) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::EmptyFile);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.voltage.is_finite() && s.current.is_finite()) {
                return Err(DataError::InvalidTelemetry(format!("non-finite sample at index {i}")));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(DataError::NonMonotonicTime(i));
            }
        }
        Ok(Self {
            cell_id: cell_id.into(),
            samples,
        })
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn last_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }
}

/// Column layout of a telemetry CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetryFormat {
    /// Header `t_hours,voltage_v,current_a`.
    GenericCsv,
    /// ICL/Faraday cycling export. Columns are matched case-insensitively:
    /// time from `Test_Time(s)` / `Test Time (s)` / `Time(s)` (seconds) or
    /// `Time (h)` (hours); voltage from `Voltage(V)` / `Voltage (V)` /
    /// `Potential (V)`; current from `Current(A)` / `Current (A)`.
    IclCsv,
}

/// Outcome of reading a telemetry file.
#[derive(Debug, Clone)]
pub struct TelemetryIngest {
    pub log: TelemetryLog,
    /// Rows dropped because a value was missing or non-finite.
    pub rejected_rows: usize,
}

const ICL_TIME_SECONDS: &[&str] = &["test_time(s)", "test time (s)", "time(s)", "time (s)", "test_time_s"];
const ICL_TIME_HOURS: &[&str] = &["time (h)", "time(h)", "test_time(h)", "t_hours"];
const ICL_VOLTAGE: &[&str] = &["voltage(v)", "voltage (v)", "potential (v)", "voltage_v", "ecell/v"];
const ICL_CURRENT: &[&str] = &["current(a)", "current (a)", "current_a", "i/ma"];

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_field(record: &csv::StringRecord, idx: usize) -> Option<f64> {
    record
        .get(idx)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Reads a telemetry file. Rows with unparsable or non-finite values are
/// skipped and counted; a time value that is not strictly greater than the
/// last accepted one is an error reporting its 1-based data row.
pub fn ingest_telemetry(path: &Path, format: TelemetryFormat) -> Result<TelemetryIngest, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();

    let (t_idx, time_scale) = match format {
        TelemetryFormat::GenericCsv => (
            find_column(&headers, &["t_hours"]).ok_or_else(|| DataError::MissingColumn("t_hours".into()))?,
            1.0,
        ),
        TelemetryFormat::IclCsv => {
            if let Some(i) = find_column(&headers, ICL_TIME_HOURS) {
                (i, 1.0)
            } else if let Some(i) = find_column(&headers, ICL_TIME_SECONDS) {
                (i, 1.0 / 3600.0)
            } else {
                return Err(DataError::MissingColumn("time".into()));
            }
        }
    };
    let (v_names, i_names): (&[&str], &[&str]) = match format {
        TelemetryFormat::GenericCsv => (&["voltage_v"], &["current_a"]),
        TelemetryFormat::IclCsv => (ICL_VOLTAGE, ICL_CURRENT),
    };
    let v_idx = find_column(&headers, v_names).ok_or_else(|| DataError::MissingColumn(v_names[0].into()))?;
    let i_idx = find_column(&headers, i_names).ok_or_else(|| DataError::MissingColumn(i_names[0].into()))?;
    // The Biologic-style `I/mA` column is in milliamperes.
    let current_scale = match headers.get(i_idx).map(|h| h.trim().to_ascii_lowercase()) {
        Some(h) if h == "i/ma" => 1e-3,
        _ => 1.0,
    };

    let mut samples = Vec::new();
    let mut rejected = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let (Some(t), Some(v), Some(i)) = (
            parse_field(&record, t_idx),
            parse_field(&record, v_idx),
            parse_field(&record, i_idx),
        ) else {
            rejected += 1;
            continue;
        };
        let t = t * time_scale;
        if let Some(last) = samples.last() {
            let last: &Sample = last;
            if t <= last.t {
                return Err(DataError::NonMonotonicTime(row + 1));
            }
        }
        samples.push(Sample {
            t,
            voltage: v,
            current: i * current_scale,
        });
    }
    if samples.is_empty() {
        return Err(DataError::EmptyFile);
    }
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} rows with non-finite values", path.display());
    }
    let cell_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TelemetryIngest {
        log: TelemetryLog { cell_id, samples },
        rejected_rows: rejected,
    })
}

/// Writes the generic CSV layout. Floats use the shortest representation
/// that parses back to the identical value.
pub fn write_telemetry(path: &Path, log: &TelemetryLog) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "t_hours,voltage_v,current_a")?;
        for s in &log.samples {
            writeln!(w, "{},{},{}", s.t, s.voltage, s.current)?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Fractions of lithium inventory and active material lost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationState {
    pub lli: f64,
    pub lam_ne: f64,
    pub lam_pe: f64,
}

impl DegradationState {
    pub fn new(lli: f64, lam_ne: f64, lam_pe: f64) -> Result<Self, DataError> {
        for (field, value) in [("lli", lli), ("lam_ne", lam_ne), ("lam_pe", lam_pe)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DataError::ValueOutOfRange { row: 0, field, value });
            }
        }
        Ok(Self { lli, lam_ne, lam_pe })
    }

    pub fn get(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Lli => self.lli,
            Mode::LamNe => self.lam_ne,
            Mode::LamPe => self.lam_pe,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lli, self.lam_ne, self.lam_pe]
    }
}

/// The three degradation modes, each estimated by its own model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Lli,
    LamNe,
    LamPe,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Lli, Mode::LamNe, Mode::LamPe];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lli => "LLI",
            Mode::LamNe => "LAM_NE",
            Mode::LamPe => "LAM_PE",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One reference performance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RptRecord {
    pub t: f64,
    pub cumulative_charge: f64,
    /// Capacity as a fraction of nominal, in (0, 1.2].
    pub normalized_capacity: f64,
    pub modes: Option<DegradationState>,
}

/// RPT rows grouped by cell, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub cells: Vec<(String, Vec<RptRecord>)>,
    pub rejected_rows: usize,
}

impl LabelSet {
    pub fn get(&self, cell_id: &str) -> Option<&[RptRecord]> {
        self.cells
            .iter()
            .find(|(id, _)| id == cell_id)
            .map(|(_, r)| r.as_slice())
    }

    pub fn total_records(&self) -> usize {
        self.cells.iter().map(|(_, r)| r.len()).sum()
    }
}

/// Mode columns holding values above this are read as percentages.
const PERCENT_DETECT: f64 = 1.5;

/// Reads a labels CSV (`cell_id,t_hours,cum_charge_ah,capacity_norm[,lli,lam_ne,lam_pe]`).
///
/// Mode columns are optional as a group. If any mode value in the file
/// exceeds 1.5 the whole file's mode columns are taken as percentages.
/// Rows with empty mode fields get `modes = None`.
pub fn ingest_labels(path: &Path) -> Result<LabelSet, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| find_column(&headers, &[name]).ok_or_else(|| DataError::MissingColumn(name.into()));
    let id_idx = col("cell_id")?;
    let t_idx = col("t_hours")?;
    let q_idx = col("cum_charge_ah")?;
    let c_idx = col("capacity_norm")?;
    let mode_idx = match (
        find_column(&headers, &["lli"]),
        find_column(&headers, &["lam_ne"]),
        find_column(&headers, &["lam_pe"]),
    ) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(DataError::MissingColumn("lli/lam_ne/lam_pe".into())),
    };

    struct Row {
        line: usize,
        id: String,
        t: f64,
        q: f64,
        cap: f64,
        modes: Option<[f64; 3]>,
    }
    let mut rows = Vec::new();
    let mut rejected = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let line = line + 1;
        let id = record.get(id_idx).map(str::trim).unwrap_or("").to_string();
        let (Some(t), Some(q), Some(cap)) = (
            parse_field(&record, t_idx),
            parse_field(&record, q_idx),
            parse_field(&record, c_idx),
        ) else {
            rejected += 1;
            continue;
        };
        if id.is_empty() {
            rejected += 1;
            continue;
        }
        let modes = match mode_idx {
            Some(idx) => {
                let vals: Vec<Option<f64>> = idx.iter().map(|&i| parse_field(&record, i)).collect();
                match (vals[0], vals[1], vals[2]) {
                    (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                    _ => None,
                }
            }
            None => None,
        };
        rows.push(Row {
            line,
            id,
            t,
            q,
            cap,
            modes,
        });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile);
    }

    let percent = rows
        .iter()
        .filter_map(|r| r.modes)
        .any(|m| m.iter().any(|&v| v > PERCENT_DETECT));
    if percent {
        log::info!("{}: degradation modes read as percentages", path.display());
    }

    let mut cells: Vec<(String, Vec<RptRecord>)> = Vec::new();
    for r in rows {
        if !(r.cap > 0.0 && r.cap <= 1.2) {
            return Err(DataError::ValueOutOfRange {
                row: r.line,
                field: "capacity_norm",
                value: r.cap,
            });
        }
        let modes = match r.modes {
            Some(m) => {
                let scale = if percent { 0.01 } else { 1.0 };
                let [lli, lam_ne, lam_pe] = m.map(|v| v * scale);
                Some(DegradationState::new(lli, lam_ne, lam_pe).map_err(|e| match e {
                    DataError::ValueOutOfRange { field, value, .. } => DataError::ValueOutOfRange {
                        row: r.line,
                        field,
                        value,
                    },
                    other => other,
                })?)
            }
            None => None,
        };
        let record = RptRecord {
            t: r.t,
            cumulative_charge: r.q,
            normalized_capacity: r.cap,
            modes,
        };
        match cells.iter_mut().find(|(id, _)| *id == r.id) {
            Some((_, recs)) => {
                if recs.last().is_some_and(|prev: &RptRecord| record.t < prev.t) {
                    return Err(DataError::NonMonotonicTime(r.line));
                }
                recs.push(record);
            }
            None => cells.push((r.id, vec![record])),
        }
    }
    Ok(LabelSet {
        cells,
        rejected_rows: rejected,
    })
}

/// Writes a labels CSV. Mode columns are emitted when any record has modes;
/// records without modes leave them empty.
pub fn write_labels(path: &Path, cells: &[(String, Vec<RptRecord>)]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let with_modes = cells.iter().flat_map(|(_, r)| r).any(|r| r.modes.is_some());
    let mut body = || -> std::io::Result<()> {
        if with_modes {
            writeln!(w, "cell_id,t_hours,cum_charge_ah,capacity_norm,lli,lam_ne,lam_pe")?;
        } else {
            writeln!(w, "cell_id,t_hours,cum_charge_ah,capacity_norm")?;
        }
        for (id, records) in cells {
            for r in records {
                write!(w, "{id},{},{},{}", r.t, r.cumulative_charge, r.normalized_capacity)?;
                match (with_modes, r.modes) {
                    (true, Some(m)) => writeln!(w, ",{},{},{}", m.lli, m.lam_ne, m.lam_pe)?,
                    (true, None) => writeln!(w, ",,,")?,
                    (false, _) => writeln!(w)?,
                }
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Cell metadata and dataset manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Protocol cycling used for the phase classifier.
    SourceA,
    /// Protocol cycling used for the degradation-mode models.
    SourceB,
    /// Dynamic-discharge deployment scenario.
    Target,
}

impl Scenario {
    pub fn is_source(self) -> bool {
        matches!(self, Scenario::SourceA | Scenario::SourceB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempClass {
    Low,
    Medium,
    High,
}

impl TempClass {
    pub const ALL: [TempClass; 3] = [TempClass::Low, TempClass::Medium, TempClass::High];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KneeStatus {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellMeta {
    pub cell_id: String,
    pub scenario: Scenario,
    pub ambient_temp_class: TempClass,
    pub knee_occurred: KneeStatus,
}

/// One manifest entry: metadata plus file locations relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    #[serde(flatten)]
    pub meta: CellMeta,
    pub telemetry: PathBuf,
    #[serde(default = "default_format")]
    pub telemetry_format: TelemetryFormat,
}

fn default_format() -> TelemetryFormat {
    TelemetryFormat::GenericCsv
}

/// TOML file listing every cell in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub labels: PathBuf,
    #[serde(rename = "cell")]
    pub cells: Vec<ManifestCell>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m: Self = toml::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported schema version {}",
                m.schema_version
            )));
        }
        let mut ids: Vec<&str> = m.cells.iter().map(|c| c.meta.cell_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Manifest("duplicate cell_id".into()));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = toml::to_string(self).map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(io_err(path))
    }
}

/// A cell with everything loaded into memory.
#[derive(Debug, Clone)]
pub struct CellData {
    pub meta: CellMeta,
    pub log: TelemetryLog,
    pub rpts: Vec<RptRecord>,
}

/// Loads every cell listed in a manifest; paths resolve against the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<CellData>, DataError> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let labels = ingest_labels(&base.join(&manifest.labels))?;
    manifest
        .cells
        .iter()
        .map(|c| {
            let ingest = ingest_telemetry(&base.join(&c.telemetry), c.telemetry_format)?;
            let log = TelemetryLog {
                cell_id: c.meta.cell_id.clone(),
                samples: ingest.log.samples,
            };
            let rpts = labels
                .get(&c.meta.cell_id)
                .map(<[RptRecord]>::to_vec)
                .unwrap_or_default();
            Ok(CellData {
                meta: c.meta.clone(),
                log,
                rpts,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parses_three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "c.csv",
            "t_hours,voltage_v,current_a\n0,3.7,1.5\n0.5,3.8,1.5\n1.0,3.9,-5\n",
        );
        let ingest = ingest_telemetry(&p, TelemetryFormat::GenericCsv).unwrap();
        assert_eq!(ingest.log.len(), 3);
        assert_eq!(ingest.rejected_rows, 0);
        assert_eq!(ingest.log.samples()[2].current, -5.0);
    }

    #[test]
    fn decreasing_time_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "c.csv",
            "t_hours,voltage_v,current_a\n0,3.7,1\n1,3.7,1\n0.5,3.7,1\n",
        );
        let err = ingest_telemetry(&p, TelemetryFormat::GenericCsv).unwrap_err();
        assert!(matches!(err, DataError::NonMonotonicTime(3)), "{err}");
        let p = write_file(dir.path(), "d.csv", "t_hours,voltage_v,current_a\n1,3.7,1\n0.5,3.7,1\n");
        let err = ingest_telemetry(&p, TelemetryFormat::GenericCsv).unwrap_err();
        assert!(matches!(err, DataError::NonMonotonicTime(2)), "{err}");
    }

    #[test]
    fn missing_column_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "c.csv", "t_hours,voltage_v\n0,3.7\n");
        assert!(matches!(
            ingest_telemetry(&p, TelemetryFormat::GenericCsv),
            Err(DataError::MissingColumn(_))
        ));
        let p = write_file(dir.path(), "e.csv", "t_hours,voltage_v,current_a\n");
        assert!(matches!(
            ingest_telemetry(&p, TelemetryFormat::GenericCsv),
            Err(DataError::EmptyFile)
        ));
    }

    #[test]
    fn non_finite_rows_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "c.csv",
            "t_hours,voltage_v,current_a\n0,3.7,1\n1,NaN,1\n2,3.7,\n3,3.7,inf\n4,3.6,0\n",
        );
        let ingest = ingest_telemetry(&p, TelemetryFormat::GenericCsv).unwrap();
        assert_eq!(ingest.log.len(), 2);
        assert_eq!(ingest.rejected_rows, 3);
    }

    #[test]
    fn icl_adapter_converts_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "icl.csv",
            "Test_Time(s),Current(A),Voltage(V),Temperature\n0,1.5,3.6,25\n3600,-5,3.5,25\n",
        );
        let ingest = ingest_telemetry(&p, TelemetryFormat::IclCsv).unwrap();
        let s = ingest.log.samples();
        assert_eq!(s[1].t, 1.0);
        assert_eq!(s[1].current, -5.0);
        assert_eq!(s[1].voltage, 3.5);
    }

    #[test]
    fn labels_with_and_without_modes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "l.csv",
            "cell_id,t_hours,cum_charge_ah,capacity_norm,lli,lam_ne,lam_pe\nA,0,0,0.95,0.03,0.01,0.02\n",
        );
        let set = ingest_labels(&p).unwrap();
        let m = set.get("A").unwrap()[0].modes.unwrap();
        assert_eq!(m.lli, 0.03);
        assert_eq!(set.get("A").unwrap()[0].normalized_capacity, 0.95);

        let p = write_file(
            dir.path(),
            "m.csv",
            "cell_id,t_hours,cum_charge_ah,capacity_norm\nA,0,0,0.95\n",
        );
        assert_eq!(ingest_labels(&p).unwrap().get("A").unwrap()[0].modes, None);
    }

    #[test]
    fn lli_above_one_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "l.csv",
            "cell_id,t_hours,cum_charge_ah,capacity_norm,lli,lam_ne,lam_pe\nA,0,0,0.95,1.2,0.01,0.02\n",
        );
        assert!(matches!(
            ingest_labels(&p),
            Err(DataError::ValueOutOfRange {
                field: "lli",
                row: 1,
                ..
            })
        ));
    }

    #[test]
    fn percent_scale_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "l.csv",
            "cell_id,t_hours,cum_charge_ah,capacity_norm,lli,lam_ne,lam_pe\nA,0,0,0.95,3,1,2\nA,1,5,0.9,6,2,4\n",
        );
        let set = ingest_labels(&p).unwrap();
        let m = set.get("A").unwrap()[1].modes.unwrap();
        assert!((m.lli - 0.06).abs() < 1e-15);
        assert!((m.lam_pe - 0.04).abs() < 1e-15);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            labels: "labels.csv".into(),
            cells: vec![ManifestCell {
                meta: CellMeta {
                    cell_id: "E4B".into(),
                    scenario: Scenario::Target,
                    ambient_temp_class: TempClass::Low,
                    knee_occurred: KneeStatus::Unknown,
                },
                telemetry: "E4B.csv".into(),
                telemetry_format: TelemetryFormat::IclCsv,
            }],
        };
        let p = dir.path().join("m.toml");
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), m);
    }
}
