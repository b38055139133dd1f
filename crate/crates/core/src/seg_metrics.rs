//! Segmentation scores for a (prediction, ground truth) mask pair: voxel
//! overlap, leakage and miss ratios, branch and length detection, and the
//! overall accuracy average.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::morphology::{skeletonize, MorphologyError};
use crate::tree::{build_tree, AirwayTree, Branch, SizeClass, TreeError, TreeOptions};
use crate::volume::VoxelGrid;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and ground truth geometries differ")]
    GeometryMismatch,
    #[error("ground truth mask is empty")]
    EmptyGroundTruth,
    #[error("ground truth tree has no branches")]
    EmptyTree,
    #[error("detection threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Morphology(#[from] MorphologyError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// |X|, the predicted foreground count.
    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    /// |Y|, the ground-truth foreground count.
    pub fn actual(&self) -> u64 {
        self.tp + self.fn_
    }
}

pub fn confusion_counts(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<ConfusionCounts, MetricsError> {
    if !pred.is_aligned(gt) {
        return Err(MetricsError::GeometryMismatch);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapMetrics {
    pub counts: ConfusionCounts,
    pub iou: f64,
    pub precision: f64,
    pub alr: f64,
    pub amr: f64,
    /// Prediction had no foreground; precision is reported as 0.
    pub empty_prediction: bool,
}

impl OverlapMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Result<Self, MetricsError> {
        let y = counts.actual();
        if y == 0 {
            return Err(MetricsError::EmptyGroundTruth);
        }
        let (tp, fp, fn_) = (counts.tp as f64, counts.fp as f64, counts.fn_ as f64);
        let x = counts.predicted();
        Ok(OverlapMetrics {
            counts,
            iou: tp / (tp + fp + fn_),
            precision: if x == 0 { 0.0 } else { tp / x as f64 },
            alr: fp / y as f64,
            amr: fn_ / y as f64,
            empty_prediction: x == 0,
        })
    }
}

pub fn overlap_metrics(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<OverlapMetrics, MetricsError> {
    OverlapMetrics::from_counts(confusion_counts(pred, gt)?)
}

/// Fraction of the branch's centerline voxels inside `pred`.
pub fn branch_coverage(branch: &Branch, pred: &VoxelGrid) -> f64 {
    if branch.voxels.is_empty() {
        return 0.0;
    }
    let inside = branch
        .voxels
        .iter()
        .filter(|v| pred.get(v[0], v[1], v[2]))
        .count();
    inside as f64 / branch.voxels.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchDetection {
    pub dlr: f64,
    pub dbr: f64,
    /// Detection rate per size class; classes without ground-truth branches are absent.
    pub per_size_dbr: BTreeMap<SizeClass, f64>,
    /// Ids of detected ground-truth branches.
    pub detected: Vec<usize>,
    /// Coverage of every ground-truth branch, indexed like `tree.branches`.
    pub coverage: Vec<f64>,
}

/// Scores `pred` against the branches of a ground-truth tree. A branch is
/// detected when its centerline coverage is at least `threshold`.
pub fn branch_detection(
    tree: &AirwayTree,
    pred: &VoxelGrid,
    threshold: f64,
) -> Result<BranchDetection, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    if !tree.geometry.is_aligned(pred.geometry()) {
        return Err(MetricsError::GeometryMismatch);
    }
    if tree.branches.is_empty() {
        return Err(MetricsError::EmptyTree);
    }
    let coverage: Vec<f64> = tree
        .branches
        .iter()
        .map(|b| branch_coverage(b, pred))
        .collect();
    let detected: Vec<usize> = tree
        .branches
        .iter()
        .zip(&coverage)
        .filter(|(_, &c)| c >= threshold)
        .map(|(b, _)| b.id)
        .collect();
    let dbr = detected.len() as f64 / tree.branches.len() as f64;

    let mut per_class: BTreeMap<SizeClass, (usize, usize)> = BTreeMap::new();
    for (b, &c) in tree.branches.iter().zip(&coverage) {
        let e = per_class.entry(b.size_class).or_insert((0, 0));
        e.1 += 1;
        if c >= threshold {
            e.0 += 1;
        }
    }
    let per_size_dbr = per_class
        .into_iter()
        .map(|(k, (hit, n))| (k, hit as f64 / n as f64))
        .collect();

    let mut inside_len = 0.0;
    let mut total_len = 0.0;
    let mut inside_vox = 0usize;
    let mut total_vox = 0usize;
    for b in &tree.branches {
        for (v, &w) in b.voxels.iter().zip(&b.weights) {
            let hit = pred.get(v[0], v[1], v[2]);
            total_len += w;
            total_vox += 1;
            if hit {
                inside_len += w;
                inside_vox += 1;
            }
        }
    }
    let dlr = if total_len > 0.0 {
        (inside_len / total_len).min(1.0)
    } else if total_vox > 0 {
        inside_vox as f64 / total_vox as f64
    } else {
        0.0
    };

    Ok(BranchDetection {
        dlr,
        dbr,
        per_size_dbr,
        detected,
        coverage,
    })
}

/// Overall accuracy: the mean of IoU, precision, DBR and DLR.
pub fn ovacc(iou: f64, precision: f64, dbr: f64, dlr: f64) -> f64 {
    (iou + precision + dbr + dlr) / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Minimum centerline coverage for a branch to count as detected.
    pub threshold: f64,
    pub tree: TreeOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.8,
            tree: TreeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub iou: f64,
    pub precision: f64,
    pub alr: f64,
    pub amr: f64,
    pub dlr: f64,
    pub dbr: f64,
    pub ovacc: f64,
    pub per_size_dbr: BTreeMap<SizeClass, f64>,
    pub counts: ConfusionCounts,
    pub empty_prediction: bool,
    pub gt_branches: usize,
    pub detected_branches: usize,
}

/// Skeleton tree of a ground-truth mask.
pub fn ground_truth_tree(gt: &VoxelGrid, options: TreeOptions) -> Result<AirwayTree, MetricsError> {
    if gt.is_all_background() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let skeleton = skeletonize(gt)?;
    Ok(build_tree(&skeleton, gt, options)?)
}

pub fn case_metrics(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<CaseMetrics, MetricsError> {
    case_metrics_with(pred, gt, &EvalOptions::default())
}

/// Full per-case evaluation. The masks are compared as given, with no
/// component filtering.
///
/// The pair is first brought to a canonical orientation (the smallest of
/// its eight axis flips), so every score is unchanged when both masks are
/// flipped together.
pub fn case_metrics_with(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    options: &EvalOptions,
) -> Result<CaseMetrics, MetricsError> {
    if !pred.is_aligned(gt) {
        return Err(MetricsError::GeometryMismatch);
    }
    let overlap = overlap_metrics(pred, gt)?;
    let flips = canonical_flips(gt, pred);
    let (pred_c, gt_c);
    let (pred, gt) = if flips == [false; 3] {
        (pred, gt)
    } else {
        pred_c = pred.flipped_axes(flips);
        gt_c = gt.flipped_axes(flips);
        (&pred_c, &gt_c)
    };
    let tree = ground_truth_tree(gt, options.tree)?;
    let det = branch_detection(&tree, pred, options.threshold)?;
    Ok(CaseMetrics {
        iou: overlap.iou,
        precision: overlap.precision,
        alr: overlap.alr,
        amr: overlap.amr,
        dlr: det.dlr,
        dbr: det.dbr,
        ovacc: ovacc(overlap.iou, overlap.precision, det.dbr, det.dlr),
        per_size_dbr: det.per_size_dbr,
        counts: overlap.counts,
        empty_prediction: overlap.empty_prediction,
        gt_branches: tree.branch_count(),
        detected_branches: det.detected.len(),
    })
}

/// Flip combination whose image of (`a`, `b`) is lexicographically
/// smallest in scan order, `a` compared before `b`.
pub(crate) fn canonical_flips(a: &VoxelGrid, b: &VoxelGrid) -> [bool; 3] {
    let mut best = [false; 3];
    for code in 1..8u8 {
        let cand = [code & 1 != 0, code & 2 != 0, code & 4 != 0];
        if compare_flipped(a, b, cand, best) == std::cmp::Ordering::Less {
            best = cand;
        }
    }
    best
}

fn compare_flipped(a: &VoxelGrid, b: &VoxelGrid, f: [bool; 3], g: [bool; 3]) -> std::cmp::Ordering {
    let [nx, ny, nz] = a.dims();
    let map = |flip: [bool; 3], x: usize, y: usize, z: usize| {
        let sx = if flip[0] { nx - 1 - x } else { x };
        let sy = if flip[1] { ny - 1 - y } else { y };
        let sz = if flip[2] { nz - 1 - z } else { z };
        sx + nx * (sy + ny * sz)
    };
    for grid in [a, b] {
        let d = grid.data();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (u, v) = (d[map(f, x, y, z)], d[map(g, x, y, z)]);
                    if u != v {
                        // foreground sorts first
                        return if u {
                            std::cmp::Ordering::Less
                        } else {
                            std::cmp::Ordering::Greater
                        };
                    }
                }
            }
        }
    }
    std::cmp::Ordering::Equal
}

/// Column order of the per-case CSV.
pub fn case_csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "case_id",
        "iou",
        "precision",
        "alr",
        "amr",
        "dlr",
        "dbr",
        "ovacc",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(SizeClass::ALL.iter().map(|c| format!("dbr_{c}")));
    h
}

pub fn case_csv_row(case_id: &str, m: &CaseMetrics) -> Vec<String> {
    let mut row = vec![case_id.to_string()];
    row.extend(
        [m.iou, m.precision, m.alr, m.amr, m.dlr, m.dbr, m.ovacc]
            .iter()
            .map(|v| format!("{v:.6}")),
    );
    row.extend(SizeClass::ALL.iter().map(|c| {
        m.per_size_dbr
            .get(c)
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default()
    }));
    row
}

/// Writes per-case rows; size classes absent from a case are left blank.
pub fn write_case_csv<W: Write>(rows: &[(String, CaseMetrics)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(case_csv_header())?;
    for (id, m) in rows {
        w.write_record(case_csv_row(id, m))?;
    }
    w.flush()?;
    Ok(())
}
