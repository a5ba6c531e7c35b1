//! Histogram features: cumulative time spent inside percentile-bounded
//! voltage and current ranges.
//!
//! Bins are left-closed. For bounds `(p01, p33, p67, p99)` bin 0 holds
//! values below `p01`, bin 1 `[p01, p33)`, bin 2 `[p33, p67)` and bin 3
//! everything from `p67` up. Sample `i` owns the interval `[t_i, t_{i+1})`;
//! the last sample owns nothing.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DegradationState, RptRecord, TelemetryLog};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least {needed} samples to compute bounds, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("window end {window_end} h is beyond the last sample at {last} h")]
    WindowBeyondData { window_end: f64, last: f64 },
    #[error("bounds are not ordered: {0:?}")]
    UnorderedBounds([f64; 4]),
    #[error("label point t = {t} h of cell {cell_id} is not covered by telemetry")]
    UncoveredLabelPoint { cell_id: String, t: f64 },
    #[error("column count mismatch: expected {expected}, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar error: {0}")]
    Sidecar(String),
}

pub const MIN_BOUND_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "voltage")]
    Voltage,
    #[serde(rename = "current")]
    Current,
}

/// 1st/33rd/67th/99th percentiles of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableBounds {
    pub variable: Variable,
    pub p01: f64,
    pub p33: f64,
    pub p67: f64,
    pub p99: f64,
}

impl VariableBounds {
    pub fn new(variable: Variable, p: [f64; 4]) -> Result<Self, FeatureError> {
        if !(p[0] <= p[1] && p[1] <= p[2] && p[2] <= p[3]) {
            return Err(FeatureError::UnorderedBounds(p));
        }
        Ok(Self {
            variable,
            p01: p[0],
            p33: p[1],
            p67: p[2],
            p99: p[3],
        })
    }

    #[inline]
    pub fn bin(&self, value: f64) -> usize {
        if value < self.p01 {
            0
        } else if value < self.p33 {
            1
        } else if value < self.p67 {
            2
        } else {
            3
        }
    }

    fn is_ordered(&self) -> bool {
        self.p01 <= self.p33 && self.p33 <= self.p67 && self.p67 <= self.p99
    }
}

/// Time-weighted percentiles of `variable` pooled over `logs`.
///
/// Each sample is weighted by the interval it holds. The result does not
/// depend on the order of `logs`.
pub fn compute_bounds(logs: &[&TelemetryLog], variable: Variable) -> Result<VariableBounds, FeatureError> {
    let total: usize = logs.iter().map(|l| l.len()).sum();
    if total < MIN_BOUND_SAMPLES {
        return Err(FeatureError::InsufficientData {
            needed: MIN_BOUND_SAMPLES,
            got: total,
        });
    }
    let mut pool: Vec<(f64, f64)> = Vec::with_capacity(total);
    for log in logs {
        let s = log.samples();
        for (i, sample) in s.iter().enumerate() {
            let w = s.get(i + 1).map_or(0.0, |next| next.t - sample.t);
            let v = match variable {
                Variable::Voltage => sample.voltage,
                Variable::Current => sample.current,
            };
            pool.push((v, w));
        }
    }
    pool.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let weight: f64 = pool.iter().map(|p| p.1).sum();
    if weight <= 0.0 {
        return Err(FeatureError::InsufficientData {
            needed: MIN_BOUND_SAMPLES,
            got: 0,
        });
    }
    let levels = [0.01, 0.33, 0.67, 0.99];
    let mut out = [pool[pool.len() - 1].0; 4];
    let mut level = 0;
    let mut acc = 0.0;
    for &(v, w) in &pool {
        acc += w;
        while level < 4 && acc >= levels[level] * weight {
            out[level] = v;
            level += 1;
        }
        if level == 4 {
            break;
        }
    }
    VariableBounds::new(variable, out)
}

// ---------------------------------------------------------------------------
// Feature sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SetKind {
    V3,
    V5,
    I3,
    I5,
    #[serde(rename = "IV17")]
    Iv17,
}

const BIN_TAGS: [&str; 4] = ["01", "12", "23", "34"];

const V3_NAMES: [&str; 3] = ["V12", "V23", "t"];
const V5_NAMES: [&str; 5] = ["V01", "V12", "V23", "V34", "t"];
const I3_NAMES: [&str; 3] = ["I12", "I23", "t"];
const I5_NAMES: [&str; 5] = ["I01", "I12", "I23", "I34", "t"];
const IV17_NAMES: [&str; 17] = [
    "I01V01", "I01V12", "I01V23", "I01V34", "I12V01", "I12V12", "I12V23", "I12V34", "I23V01", "I23V12", "I23V23",
    "I23V34", "I34V01", "I34V12", "I34V23", "I34V34", "t",
];

/// Histogram cells that count as extreme ranges (both variables in an outer bin).
pub const EXTREME_FEATURES: [&str; 4] = ["I01V01", "I01V34", "I34V01", "I34V34"];

impl SetKind {
    pub const ALL: [SetKind; 5] = [SetKind::V3, SetKind::V5, SetKind::I3, SetKind::I5, SetKind::Iv17];

    /// Feature names in storage order; calendar time `t` is always last.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            SetKind::V3 => &V3_NAMES,
            SetKind::V5 => &V5_NAMES,
            SetKind::I3 => &I3_NAMES,
            SetKind::I5 => &I5_NAMES,
            SetKind::Iv17 => &IV17_NAMES,
        }
    }

    pub fn len(self) -> usize {
        self.names().len()
    }

    /// Number of histogram features, excluding calendar time.
    pub fn histogram_len(self) -> usize {
        self.len() - 1
    }

    pub fn label(self) -> &'static str {
        match self {
            SetKind::V3 => "V3",
            SetKind::V5 => "V5",
            SetKind::I3 => "I3",
            SetKind::I5 => "I5",
            SetKind::Iv17 => "IV17",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SetKind::ALL.into_iter().find(|k| k.label().eq_ignore_ascii_case(s))
    }

    fn from_grid(self, grid: &BinGrid, t: f64) -> Vec<f64> {
        let v = grid.voltage_bins();
        let i = grid.current_bins();
        let mut out: Vec<f64> = match self {
            SetKind::V3 => vec![v[1], v[2]],
            SetKind::V5 => v.to_vec(),
            SetKind::I3 => vec![i[1], i[2]],
            SetKind::I5 => i.to_vec(),
            SetKind::Iv17 => grid.cells.iter().flatten().copied().collect(),
        };
        out.push(t);
        out
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Name of the 2D cell for current bin `ci` and voltage bin `vi`.
pub fn iv_name(ci: usize, vi: usize) -> String {
    format!("I{}V{}", BIN_TAGS[ci], BIN_TAGS[vi])
}

/// Time spent per (current bin, voltage bin).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BinGrid {
    cells: [[f64; 4]; 4],
}

impl BinGrid {
    /// Voltage-bin totals as sums over current bins, in current-bin order.
    fn voltage_bins(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (vi, o) in out.iter_mut().enumerate() {
            *o = self.cells[0][vi] + self.cells[1][vi] + self.cells[2][vi] + self.cells[3][vi];
        }
        out
    }

    fn current_bins(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (ci, o) in out.iter_mut().enumerate() {
            let r = &self.cells[ci];
            *o = r[0] + r[1] + r[2] + r[3];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub set_kind: SetKind,
    /// Aligned with `set_kind.names()`.
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn calendar_time(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.set_kind
            .names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    /// Histogram entries without calendar time.
    pub fn histogram(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.set_kind.names().iter().copied().zip(self.values.iter().copied())
    }
}

/// Features accumulated from the start of the log up to `window_end`.
pub fn extract_features(
    log: &TelemetryLog,
    v_bounds: &VariableBounds,
    i_bounds: &VariableBounds,
    set_kind: SetKind,
    window_end: f64,
) -> Result<FeatureVector, FeatureError> {
    Ok(extract_series(log, v_bounds, i_bounds, set_kind, &[window_end])?
        .pop()
        .expect("one window"))
}

/// Features at several window ends in a single sweep over the log.
///
/// Windows may come in any order; the output follows the input order.
pub fn extract_series(
    log: &TelemetryLog,
    v_bounds: &VariableBounds,
    i_bounds: &VariableBounds,
    set_kind: SetKind,
    window_ends: &[f64],
) -> Result<Vec<FeatureVector>, FeatureError> {
    for b in [v_bounds, i_bounds] {
        if !b.is_ordered() {
            return Err(FeatureError::UnorderedBounds([b.p01, b.p33, b.p67, b.p99]));
        }
    }
    let last = log.last_time();
    if let Some(&w) = window_ends.iter().find(|&&w| !(w <= last)) {
        return Err(FeatureError::WindowBeyondData { window_end: w, last });
    }
    let mut order: Vec<usize> = (0..window_ends.len()).collect();
    order.sort_by(|&a, &b| window_ends[a].total_cmp(&window_ends[b]));

    let s = log.samples();
    let mut grid = BinGrid::default();
    let mut out: Vec<Option<FeatureVector>> = vec![None; window_ends.len()];
    let mut i = 0usize;
    for &w_idx in &order {
        let w = window_ends[w_idx];
        // All intervals ending at or before w are complete.
        while i + 1 < s.len() && s[i + 1].t <= w {
            let ci = i_bounds.bin(s[i].current);
            let vi = v_bounds.bin(s[i].voltage);
            grid.cells[ci][vi] += s[i + 1].t - s[i].t;
            i += 1;
        }
        let mut snapshot = grid;
        if i + 1 < s.len() && s[i].t < w {
            let ci = i_bounds.bin(s[i].current);
            let vi = v_bounds.bin(s[i].voltage);
            snapshot.cells[ci][vi] += w - s[i].t;
        }
        out[w_idx] = Some(FeatureVector {
            set_kind,
            values: set_kind.from_grid(&snapshot, w),
        });
    }
    Ok(out.into_iter().map(|v| v.expect("filled")).collect())
}

// ---------------------------------------------------------------------------
// Design matrices and normalization
// ---------------------------------------------------------------------------

/// Per-column min-max scaling fitted on source rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self { min, max }
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Scales one row. Columns constant in the fitted data map to 0;
    /// values outside the fitted range are kept as-is.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.apply_one(j, v)).collect()
    }

    #[inline]
    pub fn apply_one(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v - self.min[j]) / range
        } else {
            0.0
        }
    }

    /// Column range used for scaling (zero for constant columns).
    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowKey {
    pub cell_id: String,
    pub t: f64,
}

/// Raw feature rows with their degradation targets; one row per (cell, RPT).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub set_kind: SetKind,
    pub keys: Vec<RowKey>,
    /// Raw (unnormalized) features, `t` last.
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<Option<DegradationState>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows belonging to `cell_id`, in time order.
    pub fn cell_rows(&self, cell_id: &str) -> Vec<usize> {
        self.keys
            .iter()
            .enumerate()
            .filter(|(_, k)| k.cell_id == cell_id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn concat(parts: &[&FeatureMatrix]) -> FeatureMatrix {
        let set_kind = parts.first().map_or(SetKind::V3, |p| p.set_kind);
        let mut out = FeatureMatrix {
            set_kind,
            keys: Vec::new(),
            rows: Vec::new(),
            targets: Vec::new(),
        };
        for p in parts {
            out.keys.extend(p.keys.iter().cloned());
            out.rows.extend(p.rows.iter().cloned());
            out.targets.extend(p.targets.iter().copied());
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            set_kind: self.set_kind,
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Normalized rows reordered as model inputs `[t, x_1, ..., x_m]`.
    pub fn model_inputs(&self, norm: &Normalizer) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| to_model_input(norm, r)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let io = |source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            write!(w, "cell_id")?;
            for n in self.set_kind.names() {
                write!(w, ",{n}")?;
            }
            writeln!(w, ",lli,lam_ne,lam_pe")?;
            for ((k, r), tgt) in self.keys.iter().zip(&self.rows).zip(&self.targets) {
                write!(w, "{}", k.cell_id)?;
                for v in r {
                    write!(w, ",{v}")?;
                }
                match tgt {
                    Some(m) => writeln!(w, ",{},{},{}", m.lli, m.lam_ne, m.lam_pe)?,
                    None => writeln!(w, ",,,")?,
                }
            }
            w.flush()
        };
        body().map_err(io)
    }

    pub fn read_csv(path: &Path, set_kind: SetKind) -> Result<FeatureMatrix, FeatureError> {
        let sidecar_err = |e: String| FeatureError::Sidecar(format!("{}: {e}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| sidecar_err(e.to_string()))?;
        let width = set_kind.len();
        let mut out = FeatureMatrix {
            set_kind,
            keys: Vec::new(),
            rows: Vec::new(),
            targets: Vec::new(),
        };
        for rec in reader.records() {
            let rec = rec.map_err(|e| sidecar_err(e.to_string()))?;
            if rec.len() != width + 4 {
                return Err(FeatureError::ColumnMismatch {
                    expected: width + 4,
                    got: rec.len(),
                });
            }
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| sidecar_err(e.to_string()));
            let row = (1..=width).map(num).collect::<Result<Vec<_>, _>>()?;
            let target = if rec[width + 1].is_empty() {
                None
            } else {
                Some(DegradationState {
                    lli: num(width + 1)?,
                    lam_ne: num(width + 2)?,
                    lam_pe: num(width + 3)?,
                })
            };
            out.keys.push(RowKey {
                cell_id: rec[0].to_string(),
                t: row[width - 1],
            });
            out.rows.push(row);
            out.targets.push(target);
        }
        Ok(out)
    }
}

/// Reorders a raw feature row `[x.., t]` into a normalized model input `[t, x..]`.
pub fn to_model_input(norm: &Normalizer, raw: &[f64]) -> Vec<f64> {
    let m = raw.len() - 1;
    let mut z = Vec::with_capacity(raw.len());
    z.push(norm.apply_one(m, raw[m]));
    z.extend((0..m).map(|j| norm.apply_one(j, raw[j])));
    z
}

/// Builds one row per (cell, RPT) with features evaluated at the RPT time.
pub fn feature_matrix(
    cells: &[(&TelemetryLog, &[RptRecord])],
    set_kind: SetKind,
    v_bounds: &VariableBounds,
    i_bounds: &VariableBounds,
) -> Result<FeatureMatrix, FeatureError> {
    let mut out = FeatureMatrix {
        set_kind,
        keys: Vec::new(),
        rows: Vec::new(),
        targets: Vec::new(),
    };
    for (log, rpts) in cells {
        let windows: Vec<f64> = rpts.iter().map(|r| r.t).collect();
        if let Some(r) = rpts.iter().find(|r| r.t > log.last_time() || r.t < log.first_time()) {
            return Err(FeatureError::UncoveredLabelPoint {
                cell_id: log.cell_id().to_string(),
                t: r.t,
            });
        }
        let series = extract_series(log, v_bounds, i_bounds, set_kind, &windows)?;
        for (fv, r) in series.into_iter().zip(rpts.iter()) {
            out.keys.push(RowKey {
                cell_id: log.cell_id().to_string(),
                t: r.t,
            });
            out.rows.push(fv.values);
            out.targets.push(r.modes);
        }
    }
    Ok(out)
}

/// Everything needed to rebuild model inputs for new telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub schema_version: u32,
    pub set_kind: SetKind,
    pub voltage_bounds: VariableBounds,
    pub current_bounds: VariableBounds,
    pub normalizer: Normalizer,
    /// Per-column standard deviation of the raw source rows.
    pub source_std: Vec<f64>,
    /// Cells whose data produced the bounds and statistics.
    pub provenance: Vec<String>,
}

pub const FEATURE_SCHEMA_VERSION: u32 = 1;

impl FeatureSpace {
    /// Fits normalization statistics on `source` rows.
    pub fn fit(
        source: &FeatureMatrix,
        voltage_bounds: VariableBounds,
        current_bounds: VariableBounds,
        provenance: Vec<String>,
    ) -> Self {
        let normalizer = Normalizer::fit(&source.rows);
        let n = source.rows.len().max(1) as f64;
        let width = normalizer.width();
        let source_std = (0..width)
            .map(|j| {
                let mean = source.rows.iter().map(|r| r[j]).sum::<f64>() / n;
                (source.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        Self {
            schema_version: FEATURE_SCHEMA_VERSION,
            set_kind: source.set_kind,
            voltage_bounds,
            current_bounds,
            normalizer,
            source_std,
            provenance,
        }
    }

    pub fn model_inputs(&self, m: &FeatureMatrix) -> Vec<Vec<f64>> {
        m.model_inputs(&self.normalizer)
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let text = toml::to_string(self).map_err(|e| FeatureError::Sidecar(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fs: Self = toml::from_str(&text).map_err(|e| FeatureError::Sidecar(e.to_string()))?;
        if fs.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(FeatureError::Sidecar(format!(
                "unsupported schema version {}",
                fs.schema_version
            )));
        }
        Ok(fs)
    }
}
