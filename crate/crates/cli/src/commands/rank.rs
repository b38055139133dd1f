use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use airway_core::ranking::{rank_teams, read_team_results, write_leaderboard_csv, TeamResult};
use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{echo, require_path, resolve};

/// Build the leaderboard from accuracy and inference time.
#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV with `team,ovacc,time_s` rows.
    #[arg(long)]
    pub teams: Option<PathBuf>,
    /// Folder of per-team metrics CSVs (`<team>.csv`, as written by `evaluate`).
    #[arg(long)]
    pub metrics_dir: Option<PathBuf>,
    /// CSV with `team,time_s` rows; used with --metrics-dir.
    #[arg(long)]
    pub times: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub teams: Option<PathBuf>,
    pub metrics_dir: Option<PathBuf>,
    pub times: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Mean of the `ovacc` column over case rows (the `mean` summary row is skipped).
fn mean_ovacc(path: &Path) -> Result<f64> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr
        .headers()
        .with_context(|| format!("{}: line 1", path.display()))?
        .clone();
    let id_col = headers.iter().position(|h| h == "case_id");
    let col = headers
        .iter()
        .position(|h| h == "ovacc")
        .ok_or_else(|| anyhow!("{}: line 1: no ovacc column", path.display()))?;
    let (mut sum, mut n) = (0.0, 0usize);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            anyhow!(
                "{}: line {}: {e}",
                path.display(),
                e.position().map(|p| p.line()).unwrap_or(0)
            )
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if id_col.and_then(|c| rec.get(c)) == Some("mean") {
            continue;
        }
        let v: f64 = rec.get(col).unwrap_or("").parse().map_err(|_| {
            anyhow!(
                "{}: line {line}: ovacc '{}' is not a number",
                path.display(),
                rec.get(col).unwrap_or("")
            )
        })?;
        sum += v;
        n += 1;
    }
    if n == 0 {
        bail!("{}: no case rows", path.display());
    }
    Ok(sum / n as f64)
}

#[derive(Deserialize)]
struct TimeRow {
    team: String,
    time_s: f64,
}

fn read_times(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<TimeRow>() {
        let row = row.map_err(|e| {
            anyhow!(
                "{}: line {}: {e}",
                path.display(),
                e.position().map(|p| p.line()).unwrap_or(0)
            )
        })?;
        out.insert(row.team, row.time_s);
    }
    Ok(out)
}

fn collect_teams(cfg: &RankConfig) -> Result<Vec<TeamResult>> {
    if let Some(path) = &cfg.teams {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return read_team_results(file).with_context(|| format!("reading {}", path.display()));
    }
    let dir = require_path(&cfg.metrics_dir, "metrics_dir")?;
    let times = read_times(require_path(&cfg.times, "times")?)?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let team = f
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let time = *times
            .get(&team)
            .ok_or_else(|| anyhow!("no time recorded for team '{team}'"))?;
        out.push(TeamResult::new(team, mean_ovacc(&f)?, time));
    }
    Ok(out)
}

pub fn run(args: &RankArgs) -> Result<()> {
    let cfg: RankConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let teams = collect_teams(&cfg)?;
    let board = rank_teams(&teams)?;
    echo(out_dir, &cfg)?;
    let path = out_dir.join("leaderboard.csv");
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    write_leaderboard_csv(&board, file)?;
    Ok(())
}
