use std::path::PathBuf;

use airway_core::synth::{corrupt, fixture_spec, generate_tree, CorruptMode, SynthError};
use airway_core::volume::write_mask;
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{echo, require_path, resolve};

/// Generate synthetic airway trees with known branch tables, plus corrupted predictions.
#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of trees [default: 4].
    #[arg(long)]
    pub count: Option<usize>,
    /// First seed; seeds whose tree leaves the grid are skipped [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bifurcation depth for every tree; cycles 0..=3 when unset.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Also write corrupted predictions (erase, leak, break in turn) [default: true].
    #[arg(long)]
    pub corrupt: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub out_dir: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub depth: Option<usize>,
    pub corrupt: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            out_dir: None,
            count: 4,
            seed: 0,
            depth: None,
            corrupt: true,
        }
    }
}

const MODES: [(&str, CorruptMode); 3] = [
    ("erase_branch", CorruptMode::EraseBranch),
    ("leak_blob", CorruptMode::AddLeakBlob { radius: 3.0 }),
    ("break_segment", CorruptMode::BreakSegment { fraction: 0.3 }),
];

pub fn run(args: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    if cfg.count == 0 {
        bail!("count must be at least 1");
    }
    echo(out_dir, &cfg)?;
    let gt_dir = out_dir.join("gt");
    let pred_dir = out_dir.join("pred");
    std::fs::create_dir_all(&pred_dir)?;
    let mut log = csv::Writer::from_path(out_dir.join("cases.csv"))?;
    log.write_record([
        "case_id",
        "seed",
        "depth",
        "branches",
        "corruption",
        "branch",
        "changed_voxels",
    ])?;
    let mut seed = cfg.seed;
    let mut made = 0;
    let mut attempts = 0;
    while made < cfg.count {
        attempts += 1;
        if attempts > cfg.count * 20 + 100 {
            bail!("could not fit {} trees in the grid", cfg.count);
        }
        let depth = cfg.depth.unwrap_or((seed % 4) as usize);
        let tree = match generate_tree(&fixture_spec(seed, depth)) {
            Ok(t) => t,
            Err(SynthError::OutOfBounds { .. }) => {
                seed += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let id = format!("case_{made:03}");
        tree.write_fixture(&gt_dir, &id)?;
        let mut row = vec![
            id.clone(),
            seed.to_string(),
            depth.to_string(),
            tree.branches.len().to_string(),
        ];
        if cfg.corrupt {
            let (name, mode) = MODES[made % MODES.len()];
            let c = corrupt(&tree, mode, seed).with_context(|| format!("corrupting {id}"))?;
            write_mask(&c.mask, pred_dir.join(format!("{id}.nii.gz")))?;
            row.extend([
                name.to_string(),
                c.branch.map(|b| b.to_string()).unwrap_or_default(),
                c.changed_voxels.to_string(),
            ]);
        } else {
            write_mask(&tree.mask, pred_dir.join(format!("{id}.nii.gz")))?;
            row.extend(["none".to_string(), String::new(), "0".to_string()]);
        }
        log.write_record(&row)?;
        made += 1;
        seed += 1;
    }
    log.flush()?;
    Ok(())
}
