//! Hand-worked confusion-matrix fixtures.

use battdiag::pipeline::phase_metrics;

use crate::tolerances::CONFUSION_ABS;
use crate::{Deviation, OracleReport};

pub struct Fixture {
    pub name: &'static str,
    pub pred: Vec<u8>,
    pub truth: Vec<u8>,
    /// `confusion[truth - 1][pred - 1]`.
    pub confusion: [[usize; 3]; 3],
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub accuracy: f64,
}

pub fn fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "mixed",
            truth: vec![1, 1, 1, 2, 2, 3, 3, 3, 3, 1],
            pred: vec![1, 2, 1, 2, 3, 3, 3, 1, 3, 1],
            confusion: [[3, 1, 0], [0, 1, 1], [1, 0, 3]],
            precision: [0.75, 0.5, 0.75],
            recall: [0.75, 0.5, 0.75],
            f1: [0.75, 0.5, 0.75],
            accuracy: 0.7,
        },
        Fixture {
            // classes 2 and 3 never occur; empty ratios count as 0
            name: "absent_classes",
            truth: vec![1, 1, 1, 1],
            pred: vec![1, 1, 2, 2],
            confusion: [[2, 2, 0], [0, 0, 0], [0, 0, 0]],
            precision: [1.0, 0.0, 0.0],
            recall: [0.5, 0.0, 0.0],
            f1: [2.0 / 3.0, 0.0, 0.0],
            accuracy: 0.5,
        },
        Fixture {
            name: "asymmetric",
            truth: vec![1, 2, 2, 2, 3, 3],
            pred: vec![2, 2, 2, 3, 3, 3],
            confusion: [[0, 1, 0], [0, 2, 1], [0, 0, 2]],
            precision: [0.0, 2.0 / 3.0, 2.0 / 3.0],
            recall: [0.0, 2.0 / 3.0, 1.0],
            f1: [0.0, 2.0 / 3.0, 0.8],
            accuracy: 4.0 / 6.0,
        },
    ]
}

pub fn confusion_suite() -> OracleReport {
    let mut dev = Deviation::default();
    let mut wrong_counts = Vec::new();
    for f in fixtures() {
        let m = phase_metrics(&f.pred, &f.truth).unwrap();
        if m.confusion != f.confusion {
            wrong_counts.push(f.name);
        }
        for k in 0..3 {
            dev.record(m.precision[k], f.precision[k]);
            dev.record(m.recall[k], f.recall[k]);
            dev.record(m.f1[k], f.f1[k]);
        }
        dev.record(m.accuracy, f.accuracy);
    }
    let mut r = dev.report("metrics/confusion", CONFUSION_ABS);
    r.pass = wrong_counts.is_empty() && dev.max_abs <= CONFUSION_ABS;
    r.detail = format!("tolerance on max_abs, wrong confusion in {wrong_counts:?}");
    r
}
