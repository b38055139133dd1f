use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use airway_core::morphology::{largest_component, Connectivity};
use airway_core::seg_metrics::{
    case_csv_header, case_csv_row, case_metrics_with, CaseMetrics, EvalOptions,
};
use airway_core::tree::{SizeClass, TreeOptions};
use airway_core::volume::read_mask;
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::{pair_dirs, read_manifest, with_jobs, CasePair};
use crate::config::{echo, require_path, resolve};

/// Score predicted airway masks against ground truth.
#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Folder of predicted masks.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Folder of ground-truth masks.
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// CSV `case_id,pred,gt` pairing files explicitly; replaces basename pairing.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Centerline coverage needed to count a branch as detected [default: 0.8].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Skeleton spurs shorter than this many voxels are pruned [default: 2].
    #[arg(long)]
    pub prune_voxels: Option<usize>,
    /// Keep only the largest 26-connected component of each prediction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub largest_component: Option<bool>,
    /// Abort when any case is missing or unreadable.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// Worker threads, 0 for all cores [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub pred_dir: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threshold: f64,
    pub prune_voxels: usize,
    pub largest_component: bool,
    pub strict: bool,
    pub jobs: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let eval = EvalOptions::default();
        EvaluateConfig {
            pred_dir: None,
            gt_dir: None,
            manifest: None,
            out_dir: None,
            threshold: eval.threshold,
            prune_voxels: eval.tree.prune_voxels,
            largest_component: false,
            strict: false,
            jobs: 1,
        }
    }
}

fn score(
    pair: &CasePair,
    cfg: &EvaluateConfig,
    options: &EvalOptions,
) -> Result<CaseMetrics, String> {
    let pred_path = pair.pred.as_ref().ok_or("no prediction")?;
    let gt = read_mask(&pair.gt).map_err(|e| format!("ground truth: {e}"))?;
    let mut pred = read_mask(pred_path).map_err(|e| format!("prediction: {e}"))?;
    if cfg.largest_component && !pred.is_all_background() {
        pred = largest_component(&pred, Connectivity::TwentySix).map_err(|e| e.to_string())?;
    }
    case_metrics_with(&pred, &gt, options).map_err(|e| e.to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summary_row(rows: &[(String, CaseMetrics)]) -> Vec<String> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut row = vec!["mean".to_string()];
    let fields: [fn(&CaseMetrics) -> f64; 7] = [
        |m| m.iou,
        |m| m.precision,
        |m| m.alr,
        |m| m.amr,
        |m| m.dlr,
        |m| m.dbr,
        |m| m.ovacc,
    ];
    for f in fields {
        row.push(fmt(mean(rows.iter().map(|(_, m)| f(m)))));
    }
    for c in SizeClass::ALL {
        row.push(fmt(mean(
            rows.iter()
                .filter_map(|(_, m)| m.per_size_dbr.get(&c).copied()),
        )));
    }
    row
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let cfg: EvaluateConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let (pairs, orphans) = match &cfg.manifest {
        Some(m) => (read_manifest(m)?, Vec::new()),
        None => pair_dirs(
            require_path(&cfg.pred_dir, "pred_dir")?,
            require_path(&cfg.gt_dir, "gt_dir")?,
        )?,
    };
    if pairs.is_empty() {
        bail!("no cases matched: the ground-truth folder or manifest lists no cases");
    }
    if cfg.strict {
        if let Some(p) = pairs.iter().find(|p| p.pred.is_none()) {
            bail!("case '{}' has no prediction", p.case_id);
        }
    }
    echo(out_dir, &cfg)?;
    let options = EvalOptions {
        threshold: cfg.threshold,
        tree: TreeOptions {
            prune_voxels: cfg.prune_voxels,
        },
    };
    let results: Vec<Result<CaseMetrics, String>> = with_jobs(cfg.jobs, || {
        pairs.par_iter().map(|p| score(p, &cfg, &options)).collect()
    })?;

    let mut scored = Vec::new();
    let mut missing: BTreeMap<String, String> = BTreeMap::new();
    for (pair, res) in pairs.iter().zip(results) {
        match res {
            Ok(m) => scored.push((pair.case_id.clone(), m)),
            Err(reason) if cfg.strict => bail!("case '{}': {reason}", pair.case_id),
            Err(reason) => {
                missing.insert(pair.case_id.clone(), reason);
            }
        }
    }
    write_outputs(out_dir, &scored, &missing, &orphans)?;
    for (id, reason) in &missing {
        eprintln!("warning: case '{id}' not scored: {reason}");
    }
    Ok(())
}

fn write_outputs(
    out_dir: &Path,
    scored: &[(String, CaseMetrics)],
    missing: &BTreeMap<String, String>,
    orphans: &[String],
) -> Result<()> {
    let path = out_dir.join("metrics.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(case_csv_header())?;
    for (id, m) in scored {
        w.write_record(case_csv_row(id, m))?;
    }
    if !scored.is_empty() {
        w.write_record(summary_row(scored))?;
    }
    w.flush()?;

    let path = out_dir.join("missing.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["case_id", "reason"])?;
    for (id, reason) in missing {
        w.write_record([id.as_str(), reason.as_str()])?;
    }
    for id in orphans {
        w.write_record([id.as_str(), "prediction without ground truth"])?;
    }
    w.flush()?;
    Ok(())
}
