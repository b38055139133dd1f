use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use airway_core::perturb::{PerturbKind, PerturbSpec, DEFAULT_SIGMA_HU};
use airway_core::volume::{read_mask, read_volume, write_mask, write_volume, Axis};
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::{scan_dir, with_jobs};
use crate::config::{echo, require_path, resolve};

const ALL_KINDS: [&str; 5] = ["flipx", "flipy", "flipz", "noise", "downsample"];

/// Write flipped, noisy and slice-reduced variants of scans and masks.
#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Folder of CT scans.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Folder of masks that follow the same geometric changes.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Variants to produce (flipx, flipy, flipz, noise, downsample) [default: all].
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Noise standard deviation in HU [default: 50].
    #[arg(long)]
    pub sigma_hu: Option<f64>,
    /// Fixed slice ratio in [0.5, 1]; drawn per case from the seed when unset.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Base seed; every case and variant derives its own stream from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub image_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub kinds: Vec<String>,
    pub sigma_hu: f64,
    pub ratio: Option<f64>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            image_dir: None,
            mask_dir: None,
            out_dir: None,
            kinds: ALL_KINDS.iter().map(|s| s.to_string()).collect(),
            sigma_hu: DEFAULT_SIGMA_HU,
            ratio: None,
            seed: 0,
            jobs: 1,
        }
    }
}

fn parse_kind(name: &str, cfg: &PerturbConfig) -> Result<PerturbKind> {
    Ok(match name {
        "flipx" => PerturbKind::Flip(Axis::X),
        "flipy" => PerturbKind::Flip(Axis::Y),
        "flipz" => PerturbKind::Flip(Axis::Z),
        "noise" => PerturbKind::Noise {
            sigma_hu: cfg.sigma_hu,
        },
        "downsample" => PerturbKind::Downsample { ratio: cfg.ratio },
        other => bail!(
            "unknown perturbation '{other}', expected one of {}",
            ALL_KINDS.join(", ")
        ),
    })
}

/// Stable 64-bit FNV-1a, used to give each case its own seed.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

pub fn case_seed(base: u64, case_id: &str, kind: &str) -> u64 {
    base ^ fnv1a(&format!("{case_id}/{kind}"))
}

struct Job {
    case_id: String,
    kind: String,
    spec: PerturbSpec,
    image: Option<PathBuf>,
    mask: Option<PathBuf>,
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn apply(job: &Job, out_dir: &Path) -> Result<[String; 2]> {
    let dir = out_dir.join(&job.kind);
    let mut written = [String::new(), String::new()];
    if let Some(src) = &job.image {
        let vol = read_volume(src).with_context(|| format!("reading {}", src.display()))?;
        let out = dir.join("images").join(format!("{}.nii.gz", job.case_id));
        std::fs::create_dir_all(out.parent().unwrap())?;
        write_volume(&job.spec.apply_image(&vol)?, &out)?;
        written[0] = relative(&out, out_dir);
    }
    if let Some(src) = &job.mask {
        let mask = read_mask(src).with_context(|| format!("reading {}", src.display()))?;
        let out = dir.join("masks").join(format!("{}.nii.gz", job.case_id));
        std::fs::create_dir_all(out.parent().unwrap())?;
        write_mask(&job.spec.apply_mask(&mask)?, &out)?;
        written[1] = relative(&out, out_dir);
    }
    Ok(written)
}

pub fn run(args: &PerturbArgs) -> Result<()> {
    let cfg: PerturbConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    if cfg.image_dir.is_none() && cfg.mask_dir.is_none() {
        bail!("give at least one of image_dir and mask_dir");
    }
    let images = cfg
        .image_dir
        .as_deref()
        .map(scan_dir)
        .transpose()?
        .unwrap_or_default();
    let masks = cfg
        .mask_dir
        .as_deref()
        .map(scan_dir)
        .transpose()?
        .unwrap_or_default();
    let ids: BTreeSet<&String> = images.keys().chain(masks.keys()).collect();
    if ids.is_empty() {
        bail!("no input volumes found");
    }
    let mut jobs = Vec::new();
    for name in &cfg.kinds {
        let kind = parse_kind(name, &cfg)?;
        for id in &ids {
            let seed = case_seed(cfg.seed, id, name);
            jobs.push(Job {
                case_id: id.to_string(),
                kind: name.clone(),
                spec: PerturbSpec::new(kind, seed)?,
                image: images.get(*id).cloned(),
                mask: masks.get(*id).cloned(),
            });
        }
    }
    echo(out_dir, &cfg)?;
    let results: Vec<Result<[String; 2]>> = with_jobs(cfg.jobs, || {
        jobs.par_iter().map(|j| apply(j, out_dir)).collect()
    })?;

    let path = out_dir.join("manifest.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["case_id", "kind", "params", "seed", "image", "mask"])?;
    for (job, res) in jobs.iter().zip(results) {
        let [image, mask] = res.with_context(|| format!("case '{}', {}", job.case_id, job.kind))?;
        w.write_record([
            job.case_id.clone(),
            job.kind.clone(),
            job.spec.params(),
            job.spec.seed.to_string(),
            image,
            mask,
        ])?;
    }
    w.flush()?;
    Ok(())
}
