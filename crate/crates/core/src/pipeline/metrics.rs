//! Regression and classification metrics with per-repeat aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError};
use crate::gbt::N_CLASSES;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, PipelineError> {
    if pred.len() != truth.len() {
        return Err(PipelineError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Per-class scores for phases 1..=3; a ratio with a zero denominator is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    /// `confusion[truth - 1][pred - 1]`.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    pub accuracy: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn phase_metrics(pred: &[u8], truth: &[u8]) -> Result<PhaseMetrics, PipelineError> {
    if pred.len() != truth.len() {
        return Err(PipelineError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (&p, &t) in pred.iter().zip(truth) {
        for l in [p, t] {
            if !(1..=N_CLASSES as u8).contains(&l) {
                return Err(PipelineError::InvalidLabel(l));
            }
        }
        confusion[t as usize - 1][p as usize - 1] += 1;
    }
    let mut precision = [0.0; N_CLASSES];
    let mut recall = [0.0; N_CLASSES];
    let mut f1 = [0.0; N_CLASSES];
    for k in 0..N_CLASSES {
        let tp = confusion[k][k] as f64;
        let predicted: usize = (0..N_CLASSES).map(|t| confusion[t][k]).sum();
        let actual: usize = confusion[k].iter().sum();
        precision[k] = ratio(tp, predicted as f64);
        recall[k] = ratio(tp, actual as f64);
        f1[k] = ratio(2.0 * precision[k] * recall[k], precision[k] + recall[k]);
    }
    let correct: usize = (0..N_CLASSES).map(|k| confusion[k][k]).sum();
    Ok(PhaseMetrics {
        confusion,
        precision,
        recall,
        f1,
        accuracy: correct as f64 / pred.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub repeat: usize,
    /// RMSE for LLI, LAM_NE, LAM_PE.
    pub mode_rmse: [f64; 3],
    pub phase: PhaseMetrics,
}

/// `pred_modes[k]` and `true_modes[k]` hold one mode across all rows.
pub fn compute_metrics(
    repeat: usize,
    pred_modes: &[Vec<f64>; 3],
    true_modes: &[Vec<f64>; 3],
    pred_phases: &[u8],
    true_phases: &[u8],
) -> Result<RepeatMetrics, PipelineError> {
    let mut mode_rmse = [0.0; 3];
    for k in 0..3 {
        mode_rmse[k] = rmse(&pred_modes[k], &true_modes[k])?;
    }
    Ok(RepeatMetrics {
        repeat,
        mode_rmse,
        phase: phase_metrics(pred_phases, true_phases)?,
    })
}

/// Per-repeat metrics and their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub per_repeat: Vec<RepeatMetrics>,
    pub mean_mode_rmse: [f64; 3],
    pub mean_precision: [f64; N_CLASSES],
    pub mean_recall: [f64; N_CLASSES],
    pub mean_f1: [f64; N_CLASSES],
    pub mean_accuracy: f64,
}

impl MetricsReport {
    pub fn from_repeats(label: impl Into<String>, per_repeat: Vec<RepeatMetrics>) -> Self {
        let n = per_repeat.len().max(1) as f64;
        let mean3 = |f: &dyn Fn(&RepeatMetrics) -> [f64; 3]| {
            let mut out = [0.0; 3];
            for r in &per_repeat {
                let v = f(r);
                for k in 0..3 {
                    out[k] += v[k] / n;
                }
            }
            out
        };
        let mean_mode_rmse = mean3(&|r| r.mode_rmse);
        let mean_precision = mean3(&|r| r.phase.precision);
        let mean_recall = mean3(&|r| r.phase.recall);
        let mean_f1 = mean3(&|r| r.phase.f1);
        let mean_accuracy = per_repeat.iter().map(|r| r.phase.accuracy).sum::<f64>() / n;
        Self {
            label: label.into(),
            per_repeat,
            mean_mode_rmse,
            mean_precision,
            mean_recall,
            mean_f1,
            mean_accuracy,
        }
    }

    /// Mean RMSE over the three modes.
    pub fn mean_rmse(&self) -> f64 {
        self.mean_mode_rmse.iter().sum::<f64>() / 3.0
    }

    /// Mean F1 over the three phases.
    pub fn macro_f1(&self) -> f64 {
        self.mean_f1.iter().sum::<f64>() / N_CLASSES as f64
    }
}

const METRICS_HEADER: [&str; 15] = [
    "label",
    "repeat",
    "rmse_lli",
    "rmse_lam_ne",
    "rmse_lam_pe",
    "precision_1",
    "precision_2",
    "precision_3",
    "recall_1",
    "recall_2",
    "recall_3",
    "f1_1",
    "f1_2",
    "f1_3",
    "accuracy",
];

/// One row per repeat plus a `mean` row for every report.
pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let row = |label: &str, rep: String, rm: &[f64; 3], p: &[f64; 3], r: &[f64; 3], f: &[f64; 3], acc: f64| {
        let mut v = vec![label.to_string(), rep];
        v.extend(rm.iter().chain(p).chain(r).chain(f).map(|x| x.to_string()));
        v.push(acc.to_string());
        v
    };
    let mut rows = vec![METRICS_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for rep in reports {
        for r in &rep.per_repeat {
            rows.push(row(
                &rep.label,
                r.repeat.to_string(),
                &r.mode_rmse,
                &r.phase.precision,
                &r.phase.recall,
                &r.phase.f1,
                r.phase.accuracy,
            ));
        }
        rows.push(row(
            &rep.label,
            "mean".into(),
            &rep.mean_mode_rmse,
            &rep.mean_precision,
            &rep.mean_recall,
            &rep.mean_f1,
            rep.mean_accuracy,
        ));
    }
    for r in rows {
        w.write_record(&r).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(confusion: [[usize; 3]; 3]) -> (Vec<u8>, Vec<u8>) {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for (ti, row) in confusion.iter().enumerate() {
            for (pi, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    t.push(ti as u8 + 1);
                    p.push(pi as u8 + 1);
                }
            }
        }
        (p, t)
    }

    #[test]
    fn hand_confusion_matrix() {
        let c = [[2, 1, 0], [0, 3, 0], [1, 0, 3]];
        let (p, t) = labels(c);
        let m = phase_metrics(&p, &t).unwrap();
        assert_eq!(m.confusion, c);
        let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        close(m.precision[0], 2.0 / 3.0);
        close(m.precision[1], 3.0 / 4.0);
        close(m.precision[2], 1.0);
        close(m.recall[0], 2.0 / 3.0);
        close(m.recall[1], 1.0);
        close(m.recall[2], 3.0 / 4.0);
        close(m.f1[1], 2.0 * 0.75 / 1.75);
        close(m.accuracy, 0.8);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let m = phase_metrics(&[1, 1, 2], &[1, 3, 2]).unwrap();
        assert_eq!(m.precision[2], 0.0);
        assert_eq!(m.recall[2], 0.0);
        assert_eq!(m.f1[2], 0.0);
        let m = phase_metrics(&[1, 2], &[1, 2]).unwrap();
        assert_eq!((m.precision[2], m.recall[2], m.f1[2]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(PipelineError::LengthMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(rmse(&[], &[]), Err(PipelineError::EmptyEvaluation)));
        assert!(matches!(
            phase_metrics(&[1, 4], &[1, 1]),
            Err(PipelineError::InvalidLabel(4))
        ));
        assert!(matches!(
            phase_metrics(&[1], &[1, 2]),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn report_means() {
        let (p, t) = labels([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let good = phase_metrics(&p, &t).unwrap();
        let bad = phase_metrics(&[2, 3, 1], &t).unwrap();
        let r = MetricsReport::from_repeats(
            "x",
            vec![
                RepeatMetrics {
                    repeat: 0,
                    mode_rmse: [0.1, 0.2, 0.3],
                    phase: good,
                },
                RepeatMetrics {
                    repeat: 1,
                    mode_rmse: [0.3, 0.2, 0.1],
                    phase: bad,
                },
            ],
        );
        assert_eq!(r.mean_mode_rmse, [0.2, 0.2, 0.2]);
        assert_eq!(r.mean_accuracy, 0.5);
        assert_eq!(r.mean_f1, [0.5, 0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn scores_bounded_and_rows_sum(pairs in prop::collection::vec((1u8..=3, 1u8..=3), 1..60)) {
            let (p, t): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let m = phase_metrics(&p, &t).unwrap();
            let total: usize = m.confusion.iter().flatten().sum();
            prop_assert_eq!(total, p.len());
            for k in 0..3 {
                let actual = t.iter().filter(|&&l| l as usize == k + 1).count();
                prop_assert_eq!(m.confusion[k].iter().sum::<usize>(), actual);
                for v in [m.precision[k], m.recall[k], m.f1[k]] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(m.f1[k] <= m.precision[k].max(m.recall[k]) + 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
        }

        #[test]
        fn rmse_nonnegative_and_zero_on_self(v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            prop_assert_eq!(rmse(&v, &v).unwrap(), 0.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
            prop_assert!((rmse(&v, &shifted).unwrap() - 0.5).abs() < 1e-12);
        }
    }
}
