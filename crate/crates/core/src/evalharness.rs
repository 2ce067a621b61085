//! Stratified k-fold plans, confusion-matrix metrics and mean ± std summaries.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::synthlabel::QualityClass;

const N: usize = QualityClass::COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub quota: Option<usize>,
    /// Test indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// Indices never tested; with a quota these only ever train.
    pub train_only: Vec<usize>,
}

impl FoldPlan {
    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Everything outside the fold's test set, ascending.
    pub fn train(&self, fold: usize) -> Vec<usize> {
        let n = self.folds.iter().map(Vec::len).sum::<usize>() + self.train_only.len();
        let mut in_test = vec![false; n];
        for &i in &self.folds[fold] {
            in_test[i] = true;
        }
        (0..n).filter(|&i| !in_test[i]).collect()
    }
}

/// Seeded stratified split. Each class's indices are shuffled, then dealt
/// round-robin, the starting fold rotating across classes so fold sizes stay
/// within one of each other. With `quota = Some(q)` each fold receives exactly
/// `q` images per class and the remainder is train-only.
pub fn kfold_split(
    labels: &[QualityClass],
    k: usize,
    seed: u64,
    quota: Option<usize>,
) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::InsufficientData(format!(
            "k = {k}, need at least 2 folds"
        )));
    }
    if labels.len() < k {
        return Err(EvalError::InsufficientData(format!(
            "{} images for {k} folds",
            labels.len()
        )));
    }
    let mut by_class: [Vec<usize>; N] = Default::default();
    for (i, c) in labels.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    if let Some(q) = quota {
        if q == 0 {
            return Err(EvalError::InsufficientData("quota must be positive".into()));
        }
        for (c, idx) in by_class.iter().enumerate() {
            if idx.len() < k * q {
                return Err(EvalError::InsufficientData(format!(
                    "class {c} has {} images, quota needs {}",
                    idx.len(),
                    k * q
                )));
            }
        }
    }
    let mut stream = rng::stream(seed);
    let mut folds = vec![Vec::new(); k];
    let mut train_only = Vec::new();
    let mut offset = 0;
    for idx in &mut by_class {
        idx.shuffle(&mut stream);
        let dealt = quota.map_or(idx.len(), |q| k * q);
        for (j, &i) in idx.iter().enumerate() {
            if j < dealt {
                folds[(offset + j) % k].push(i);
            } else {
                train_only.push(i);
            }
        }
        offset = (offset + dealt) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    train_only.sort_unstable();
    Ok(FoldPlan {
        k,
        seed,
        quota,
        folds,
        train_only,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the labels.
    pub per_class: [Option<f64>; N],
    pub support: [usize; N],
    /// Rows are true classes, columns predictions.
    pub confusion: [[usize; N]; N],
}

pub fn evaluate_classifier(
    predictions: &[QualityClass],
    labels: &[QualityClass],
) -> Result<ClassificationReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut confusion = [[0usize; N]; N];
    for (p, l) in predictions.iter().zip(labels) {
        confusion[l.index()][p.index()] += 1;
    }
    Ok(report_from_confusion(confusion))
}

pub fn report_from_confusion(confusion: [[usize; N]; N]) -> ClassificationReport {
    let support: [usize; N] = std::array::from_fn(|c| confusion[c].iter().sum());
    let n: usize = support.iter().sum();
    let trace: usize = (0..N).map(|c| confusion[c][c]).sum();
    ClassificationReport {
        n,
        accuracy: if n == 0 { 0.0 } else { trace as f64 / n as f64 },
        per_class: std::array::from_fn(|c| {
            (support[c] > 0).then(|| confusion[c][c] as f64 / support[c] as f64)
        }),
        support,
        confusion,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (divisor n − 1).
    pub std: f64,
}

pub fn summarize_runs(per_fold: &[f64]) -> Result<RunSummary, EvalError> {
    if per_fold.len() < 2 {
        return Err(EvalError::TooFewRuns(per_fold.len()));
    }
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let var = per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RunSummary {
        per_fold: per_fold.to_vec(),
        mean,
        std: var.sqrt(),
    })
}

/// `"99.06 ± 0.66%"`; inputs already in percent.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}%")
}

impl RunSummary {
    /// Formats accuracies given as fractions in percent.
    pub fn percent(&self) -> String {
        format_mean_std(self.mean * 100.0, self.std * 100.0)
    }
}

/// One method's row in the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub summary: RunSummary,
    /// Confusion pooled over all test folds.
    pub pooled: ClassificationReport,
}

/// Aligned `method | accuracy` table with "mean ± std %" cells.
pub fn render_summary_table(rows: &[MethodResult]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.chars().count())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = format!("{:<width$}  Accuracy\n", "Method");
    out.push_str(&format!("{}  {}\n", "-".repeat(width), "-".repeat(16)));
    for r in rows {
        out.push_str(&format!("{:<width$}  {}\n", r.method, r.summary.percent()));
    }
    out
}

/// Per-class accuracy (pooled over folds) with one column per method.
pub fn render_class_table(rows: &[MethodResult]) -> String {
    let cls_w = QualityClass::ALL
        .iter()
        .map(|c| c.name().len())
        .max()
        .unwrap_or(0)
        .max("Class".len());
    let col_w = rows
        .iter()
        .map(|r| r.method.chars().count())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = format!("{:<cls_w$}", "Class");
    for r in rows {
        out.push_str(&format!("  {:>col_w$}", r.method));
    }
    out.push('\n');
    for c in QualityClass::ALL {
        out.push_str(&format!("{:<cls_w$}", c.name()));
        for r in rows {
            let cell = r.pooled.per_class[c.index()]
                .map_or("-".to_string(), |a| format!("{:.2}%", a * 100.0));
            out.push_str(&format!("  {cell:>col_w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use QualityClass::*;

    fn uniform_labels(per_class: usize) -> Vec<QualityClass> {
        QualityClass::ALL
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, per_class))
            .collect()
    }

    #[test]
    fn folds_without_quota() {
        let plan = kfold_split(&uniform_labels(100), 10, 1, None).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 50));
        assert!(plan.train_only.is_empty());
        assert_eq!(plan.train(0).len(), 450);
    }

    #[test]
    fn folds_with_quota() {
        let labels = uniform_labels(120);
        let plan = kfold_split(&labels, 10, 1, Some(10)).unwrap();
        for f in &plan.folds {
            assert_eq!(f.len(), 50);
            for c in QualityClass::ALL {
                assert_eq!(f.iter().filter(|&&i| labels[i] == c).count(), 10);
            }
        }
        assert_eq!(plan.train_only.len(), 100);
    }

    #[test]
    fn too_few_images() {
        assert!(matches!(
            kfold_split(&uniform_labels(1), 10, 0, None),
            Err(EvalError::InsufficientData(_))
        ));
        assert!(kfold_split(&uniform_labels(10), 5, 0, Some(3)).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let labels = uniform_labels(30);
        assert_eq!(
            kfold_split(&labels, 5, 9, None),
            kfold_split(&labels, 5, 9, None)
        );
        assert_ne!(
            kfold_split(&labels, 5, 9, None),
            kfold_split(&labels, 5, 10, None)
        );
    }

    #[test]
    fn classifier_metrics() {
        let labels = uniform_labels(4);
        let perfect = evaluate_classifier(&labels, &labels).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        for (r, row) in perfect.confusion.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(v, if r == c { 4 } else { 0 });
            }
        }
        let zeros = vec![Normal; labels.len()];
        let r = evaluate_classifier(&zeros, &labels).unwrap();
        assert!((r.accuracy - 0.2).abs() < 1e-12);
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[3], Some(0.0));
        assert!(matches!(
            evaluate_classifier(&zeros[1..], &labels),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn run_summary() {
        let s = summarize_runs(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(summarize_runs(&[0.5; 4]).unwrap().std, 0.0);
        assert_eq!(summarize_runs(&[1.0]), Err(EvalError::TooFewRuns(1)));
        assert_eq!(format_mean_std(99.06, 0.66), "99.06 ± 0.66%");
    }

    #[test]
    fn tables_render() {
        let labels = uniform_labels(2);
        let row = MethodResult {
            method: "Stacked fusion".into(),
            summary: summarize_runs(&[0.9, 1.0]).unwrap(),
            pooled: evaluate_classifier(&labels, &labels).unwrap(),
        };
        let t = render_summary_table(std::slice::from_ref(&row));
        assert!(t.contains("Stacked fusion  95.00 ± 7.07%"), "{t}");
        let c = render_class_table(&[row]);
        assert_eq!(c.lines().count(), 6);
        assert!(c.contains("100.00%"));
    }

    #[test]
    fn report_json_round_trip() {
        let labels = uniform_labels(3);
        let mut preds = labels.clone();
        preds[0] = Damaged;
        let r = evaluate_classifier(&preds, &labels).unwrap();
        let back: ClassificationReport =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
