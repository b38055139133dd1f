use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use airway_core::analysis::{residual_heatmap, HeatmapGrid};
use airway_core::volume::{read_mask, Axis};
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::{pair_dirs, read_manifest, with_jobs, CasePair};
use crate::config::{echo, require_path, resolve};

/// Project gt − pred residuals onto a plane, per case and summed.
#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// CSV `case_id,pred,gt`; replaces basename pairing.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Projection axis [default: z].
    #[arg(long)]
    pub axis: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub pred_dir: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub axis: String,
    pub jobs: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            pred_dir: None,
            gt_dir: None,
            manifest: None,
            out_dir: None,
            axis: "z".into(),
            jobs: 1,
        }
    }
}

fn one(pair: &CasePair, axis: Axis) -> Result<HeatmapGrid> {
    let pred_path = pair
        .pred
        .as_ref()
        .with_context(|| format!("case '{}' has no prediction", pair.case_id))?;
    let pred = read_mask(pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
    let gt = read_mask(&pair.gt).with_context(|| format!("reading {}", pair.gt.display()))?;
    residual_heatmap(&pred, &gt, axis).with_context(|| format!("case '{}'", pair.case_id))
}

fn save(map: &HeatmapGrid, dir: &Path, stem: &str) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    map.write_csv(BufWriter::new(
        File::create(&csv).with_context(|| format!("writing {}", csv.display()))?,
    ))?;
    let pgm = dir.join(format!("{stem}.pgm"));
    map.write_pgm(BufWriter::new(
        File::create(&pgm).with_context(|| format!("writing {}", pgm.display()))?,
    ))?;
    Ok(())
}

pub fn run(args: &HeatmapArgs) -> Result<()> {
    let cfg: HeatmapConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let axis: Axis = cfg.axis.parse().map_err(anyhow::Error::msg)?;
    let pairs = match &cfg.manifest {
        Some(m) => read_manifest(m)?,
        None => {
            pair_dirs(
                require_path(&cfg.pred_dir, "pred_dir")?,
                require_path(&cfg.gt_dir, "gt_dir")?,
            )?
            .0
        }
    };
    if pairs.is_empty() {
        bail!("no cases matched");
    }
    echo(out_dir, &cfg)?;
    let maps: Vec<Result<HeatmapGrid>> = with_jobs(cfg.jobs, || {
        pairs.par_iter().map(|p| one(p, axis)).collect()
    })?;
    let mut total: Option<HeatmapGrid> = None;
    let mut same_shape = true;
    for (pair, map) in pairs.iter().zip(maps) {
        let map = map?;
        save(&map, out_dir, &format!("{}_{axis}", pair.case_id))?;
        match &mut total {
            None => total = Some(map),
            Some(t) if t.width == map.width && t.height == map.height => {
                for (a, b) in t.values.iter_mut().zip(&map.values) {
                    *a += b;
                }
            }
            Some(_) => same_shape = false,
        }
    }
    match (total, same_shape) {
        (Some(t), true) => save(&t, out_dir, &format!("sum_{axis}"))?,
        _ => eprintln!("warning: cases differ in shape, no summed heatmap written"),
    }
    Ok(())
}
