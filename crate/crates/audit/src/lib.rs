//! Reference oracles for battdiag. Each oracle recomputes a quantity by a
//! slow, direct method that shares no code with the routine under test.

pub mod confusion;
pub mod curvature;
pub mod fd;
pub mod percentile;
pub mod split_scan;

use std::fmt;

/// Pinned tolerances of every oracle.
pub mod tolerances {
    /// First-order derivatives and parameter gradients.
    pub const FIRST_ORDER_REL: f64 = 1e-5;
    /// `∂t²`, `∂t∂x` and loss terms built on them.
    pub const SECOND_ORDER_REL: f64 = 1e-4;
    /// Magnitudes below this are compared on an absolute scale of this size.
    pub const REL_FLOOR: f64 = 1e-6;
    /// Plain forward pass against the network's own.
    pub const FORWARD_ABS: f64 = 1e-12;
    /// Split gains recomputed from scratch.
    pub const SPLIT_GAIN_REL: f64 = 1e-9;
    /// Planted knee against the dense finite-difference curvature, in span.
    pub const PLANTED_B2_SPAN: f64 = 1e-3;
    /// Detected knee against the dense finite-difference curvature, in span.
    pub const DETECTED_B2_SPAN: f64 = 0.05;
    /// Minimum detected-knee hits out of the planted fades.
    pub const DETECTED_B2_HITS: usize = 48;
    /// Hand-worked confusion fixtures.
    pub const CONFUSION_ABS: f64 = 1e-12;
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Bound on `max_rel`, or on the oracle's own measure where noted.
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max_abs={:.3e} max_rel={:.3e} tol={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_abs,
            self.max_rel,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Largest absolute and relative deviations seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Deviation {
    pub max_abs: f64,
    pub max_rel: f64,
}

impl Deviation {
    pub fn record(&mut self, got: f64, want: f64) {
        let abs = (got - want).abs();
        let scale = got.abs().max(want.abs()).max(tolerances::REL_FLOOR);
        let rel = if abs.is_nan() { f64::INFINITY } else { abs / scale };
        self.max_abs = self.max_abs.max(if abs.is_nan() { f64::INFINITY } else { abs });
        self.max_rel = self.max_rel.max(rel);
    }

    pub fn report(&self, name: &str, tolerance: f64) -> OracleReport {
        OracleReport {
            name: name.into(),
            max_abs: self.max_abs,
            max_rel: self.max_rel,
            tolerance,
            pass: self.max_rel <= tolerance,
            detail: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Autodiff,
    SplitScan,
    Percentile,
    Curvature,
    Confusion,
    All,
}

impl Suite {
    fn includes(self, s: Suite) -> bool {
        self == Suite::All || self == s
    }
}

/// Runs the selected oracles with their default instance counts.
pub fn run_oracles(suite: Suite) -> Vec<OracleReport> {
    let mut out = Vec::new();
    if suite.includes(Suite::Autodiff) {
        out.extend(fd::autodiff_suite(100, 0));
    }
    if suite.includes(Suite::SplitScan) {
        out.extend(split_scan::split_suite(20, 30, 0));
    }
    if suite.includes(Suite::Percentile) {
        out.push(percentile::percentile_suite(20, 0));
    }
    if suite.includes(Suite::Curvature) {
        out.extend(curvature::curvature_suite(50, 77));
    }
    if suite.includes(Suite::Confusion) {
        out.push(confusion::confusion_suite());
    }
    out
}
