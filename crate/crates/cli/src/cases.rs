//! Case discovery, pairing by basename and manifest overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use airway_core::ranking::case_id_of;
use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

fn is_nifti(path: &Path) -> bool {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// NIfTI files of `dir` keyed by case id (file name without extension).
pub fn scan_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && is_nifti(&path) {
            let id = case_id_of(&path);
            if let Some(prev) = out.insert(id.clone(), path.clone()) {
                bail!(
                    "case '{id}' appears twice in {}: {} and {}",
                    dir.display(),
                    prev.display(),
                    path.display()
                );
            }
        }
    }
    Ok(out)
}

/// A case whose files were located, with any that are absent left `None`.
#[derive(Debug, Clone)]
pub struct CasePair {
    pub case_id: String,
    pub pred: Option<PathBuf>,
    pub gt: PathBuf,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    case_id: String,
    pred: String,
    gt: String,
}

/// Reads `case_id,pred,gt`; relative paths resolve against the manifest's folder.
pub fn read_manifest(path: &Path) -> Result<Vec<CasePair>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening manifest {}", path.display()))?;
    let mut out: Vec<CasePair> = Vec::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            anyhow!("{}: line {line}: {e}", path.display())
        })?;
        if out.iter().any(|c| c.case_id == row.case_id) {
            bail!("{}: duplicate case '{}'", path.display(), row.case_id);
        }
        let pred = base.join(&row.pred);
        out.push(CasePair {
            case_id: row.case_id,
            pred: pred.exists().then_some(pred),
            gt: base.join(&row.gt),
        });
    }
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(out)
}

/// Pairs every ground-truth case with the prediction of the same basename.
/// Returns the pairs and prediction ids that have no ground truth.
pub fn pair_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<(Vec<CasePair>, Vec<String>)> {
    let preds = scan_dir(pred_dir)?;
    let gts = scan_dir(gt_dir)?;
    let pairs = gts
        .iter()
        .map(|(id, gt)| CasePair {
            case_id: id.clone(),
            pred: preds.get(id).cloned(),
            gt: gt.clone(),
        })
        .collect();
    let orphans = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .cloned()
        .collect();
    Ok((pairs, orphans))
}

/// Runs `f` on a pool of `jobs` threads (0 = all cores).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")?;
    Ok(pool.install(f))
}
