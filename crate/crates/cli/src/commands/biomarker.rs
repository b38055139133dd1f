use std::path::{Path, PathBuf};

use airway_core::analysis::{biomarker_csv_header, biomarker_csv_row, biomarkers};
use airway_core::seg_metrics::ground_truth_tree;
use airway_core::tree::TreeOptions;
use airway_core::volume::{read_mask, read_volume};
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::{scan_dir, with_jobs};
use crate::config::{echo, require_path, resolve};

/// Airway biomarkers: TAV, tree length and counts, intensity and shape features.
#[derive(Debug, Args, Serialize)]
pub struct BiomarkerArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Folder of airway masks.
    #[arg(long)]
    pub airway_dir: Option<PathBuf>,
    /// Folder of lung masks (same basenames); enables TAV.
    #[arg(long)]
    pub lung_dir: Option<PathBuf>,
    /// Folder of CT scans (same basenames); enables intensity features.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub prune_voxels: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiomarkerConfig {
    pub airway_dir: Option<PathBuf>,
    pub lung_dir: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub prune_voxels: usize,
    pub jobs: usize,
}

impl Default for BiomarkerConfig {
    fn default() -> Self {
        BiomarkerConfig {
            airway_dir: None,
            lung_dir: None,
            image_dir: None,
            out_dir: None,
            prune_voxels: TreeOptions::default().prune_voxels,
            jobs: 1,
        }
    }
}

fn companion(dir: &Option<PathBuf>, case_id: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    let found = scan_dir(dir)?.remove(case_id);
    match found {
        Some(p) => Ok(Some(p)),
        None => bail!("case '{case_id}' has no file in {}", dir.display()),
    }
}

fn one(case_id: &str, airway_path: &Path, cfg: &BiomarkerConfig) -> Result<Vec<String>> {
    let airway =
        read_mask(airway_path).with_context(|| format!("reading {}", airway_path.display()))?;
    let lung = companion(&cfg.lung_dir, case_id)?
        .map(read_mask)
        .transpose()?;
    let image = companion(&cfg.image_dir, case_id)?
        .map(read_volume)
        .transpose()?;
    let tree = ground_truth_tree(
        &airway,
        TreeOptions {
            prune_voxels: cfg.prune_voxels,
        },
    )?;
    let b = biomarkers(&airway, &tree, lung.as_ref(), image.as_ref())?;
    Ok(biomarker_csv_row(case_id, &b))
}

pub fn run(args: &BiomarkerArgs) -> Result<()> {
    let cfg: BiomarkerConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let cases: Vec<(String, PathBuf)> = scan_dir(require_path(&cfg.airway_dir, "airway_dir")?)?
        .into_iter()
        .collect();
    if cases.is_empty() {
        bail!("no airway masks found");
    }
    echo(out_dir, &cfg)?;
    let rows: Vec<Result<Vec<String>>> = with_jobs(cfg.jobs, || {
        cases
            .par_iter()
            .map(|(id, p)| one(id, p, &cfg).with_context(|| format!("case '{id}'")))
            .collect()
    })?;
    let path = out_dir.join("biomarkers.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(biomarker_csv_header())?;
    for row in rows {
        w.write_record(row?)?;
    }
    w.flush()?;
    Ok(())
}
