//! Binary classification scores for survival predictions. Label 1 (alive)
//! is the positive class; a case is predicted positive when its probability
//! reaches the decision threshold.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClsError {
    #[error("no predictions")]
    EmptyInput,
    #[error("both labels must be present")]
    SingleClassInput,
    #[error("probability {prob} of case '{case_id}' is outside [0, 1]")]
    InvalidProbability { case_id: String, prob: f64 },
    #[error("label {label} of case '{case_id}' is not 0 or 1")]
    InvalidLabel { case_id: String, label: i64 },
    #[error("case id '{0}' appears more than once")]
    DuplicateCase(String),
    #[error("weights must be five non-negative numbers summing to 1, got {0:?}")]
    InvalidWeights([f64; 5]),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub case_id: String,
    pub prob: f64,
    /// 1 = alive, 0 = deceased.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    rows: Vec<Prediction>,
    pub threshold: f64,
}

impl PredictionSet {
    pub fn new(rows: Vec<Prediction>) -> Result<Self, ClsError> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !(0.0..=1.0).contains(&r.prob) {
                return Err(ClsError::InvalidProbability {
                    case_id: r.case_id.clone(),
                    prob: r.prob,
                });
            }
            if r.label > 1 {
                return Err(ClsError::InvalidLabel {
                    case_id: r.case_id.clone(),
                    label: r.label as i64,
                });
            }
            if !seen.insert(r.case_id.as_str()) {
                return Err(ClsError::DuplicateCase(r.case_id.clone()));
            }
        }
        Ok(PredictionSet {
            rows,
            threshold: 0.5,
        })
    }

    /// Builds a set with generated case ids.
    pub fn from_scores(probs: &[f64], labels: &[u8]) -> Result<Self, ClsError> {
        let rows = probs
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&prob, &label))| Prediction {
                case_id: format!("case{i}"),
                prob,
                label,
            })
            .collect();
        Self::new(rows)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn rows(&self) -> &[Prediction] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads `case_id,prob,label` rows with a header line.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, ClsError> {
        #[derive(Deserialize)]
        struct Row {
            case_id: String,
            prob: f64,
            label: i64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            let row = rec.map_err(|e| ClsError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            if !(row.label == 0 || row.label == 1) {
                return Err(ClsError::InvalidLabel {
                    case_id: row.case_id,
                    label: row.label,
                });
            }
            rows.push(Prediction {
                case_id: row.case_id,
                prob: row.prob,
                label: row.label as u8,
            });
        }
        Self::new(rows)
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label == 1).count();
        (pos, self.rows.len() - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsReport {
    pub acc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: f64,
    pub overall: f64,
}

/// Composite weights in report order: acc, auc, sensitivity, specificity, f1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeWeights(pub [f64; 5]);

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights([0.2; 5])
    }
}

impl CompositeWeights {
    pub fn new(w: [f64; 5]) -> Result<Self, ClsError> {
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ClsError::InvalidWeights(w));
        }
        Ok(CompositeWeights(w))
    }
}

/// Area under the ROC curve as the probability that a random positive
/// outscores a random negative, ties counting one half. Uses midranks.
pub fn auc(preds: &PredictionSet) -> Result<f64, ClsError> {
    if preds.is_empty() {
        return Err(ClsError::EmptyInput);
    }
    let (n_pos, n_neg) = preds.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(ClsError::SingleClassInput);
    }
    let mut order: Vec<&Prediction> = preds.rows.iter().collect();
    order.sort_by(|a, b| a.prob.total_cmp(&b.prob));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].prob == order[i].prob {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|r| r.label == 1).count();
        pos_rank_sum += mid * pos as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points from (0,0) to (1,1), one per distinct score, with tied
/// scores moving diagonally.
pub fn roc_curve(preds: &PredictionSet) -> Result<Vec<(f64, f64)>, ClsError> {
    if preds.is_empty() {
        return Err(ClsError::EmptyInput);
    }
    let (n_pos, n_neg) = preds.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(ClsError::SingleClassInput);
    }
    let mut order: Vec<&Prediction> = preds.rows.iter().collect();
    order.sort_by(|a, b| b.prob.total_cmp(&a.prob));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].prob == order[i].prob {
            if order[j].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(pts)
}

/// Trapezoidal area under a polyline of (fpr, tpr) points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn binary_counts(preds: &PredictionSet, threshold: f64) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for r in &preds.rows {
        match (r.prob >= threshold, r.label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub fn classification_report(
    preds: &PredictionSet,
    weights: CompositeWeights,
) -> Result<ClsReport, ClsError> {
    let auc = auc(preds)?;
    let c = binary_counts(preds, preds.threshold);
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            0.0
        } else {
            a as f64 / (a + b) as f64
        }
    };
    let acc = (c.tp + c.tn) as f64 / preds.len() as f64;
    let sensitivity = ratio(c.tp, c.fn_);
    let specificity = ratio(c.tn, c.fp);
    let precision = ratio(c.tp, c.fp);
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    let w = weights.0;
    let overall = w[0] * acc + w[1] * auc + w[2] * sensitivity + w[3] * specificity + w[4] * f1;
    Ok(ClsReport {
        acc,
        sensitivity,
        specificity,
        f1,
        auc,
        overall,
    })
}

/// Threshold (among the observed scores and +∞) with the highest accuracy,
/// and that accuracy. Ties keep the lowest threshold.
pub fn best_accuracy_threshold(preds: &PredictionSet) -> Result<(f64, f64), ClsError> {
    if preds.is_empty() {
        return Err(ClsError::EmptyInput);
    }
    let mut cands: Vec<f64> = preds.rows.iter().map(|r| r.prob).collect();
    cands.push(f64::INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (cands[0], -1.0);
    for t in cands {
        let c = binary_counts(preds, t);
        let acc = (c.tp + c.tn) as f64 / preds.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best)
}

pub fn write_roc_csv<W: Write>(points: &[(f64, f64)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr"])?;
    for (f, t) in points {
        w.write_record([format!("{f:.6}"), format!("{t:.6}")])?;
    }
    w.flush()?;
    Ok(())
}
