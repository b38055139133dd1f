use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use airway_core::survival::{
    binary_labels, cox_model_suite, read_survival_csv, wilcoxon_signed_rank, write_suite_csv,
    CoxOptions, Ties, WilcoxonMode,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{echo, require_path, resolve};

/// Cox proportional-hazards models over covariate sets.
#[derive(Debug, Args, Serialize)]
pub struct SurvivalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV with `id,time_weeks,event` and covariate columns.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Covariates of one model joined by `+`; repeat for more models
    /// [default: one model per covariate column].
    #[arg(long = "model")]
    pub models: Option<Vec<String>>,
    /// Tie handling: breslow or efron [default: breslow].
    #[arg(long)]
    pub ties: Option<String>,
    /// Fit on z-scored covariates (hazard ratios per standard deviation).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    /// Horizon for the alive/deceased labels, in weeks [default: 63].
    #[arg(long)]
    pub horizon_weeks: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub models: Vec<String>,
    pub ties: String,
    pub standardize: bool,
    pub horizon_weeks: f64,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        SurvivalConfig {
            input: None,
            out_dir: None,
            models: Vec::new(),
            ties: "breslow".into(),
            standardize: false,
            horizon_weeks: 63.0,
        }
    }
}

pub fn run(args: &SurvivalArgs) -> Result<()> {
    let cfg: SurvivalConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let input = require_path(&cfg.input, "input")?;
    let records = read_survival_csv(
        File::open(input).with_context(|| format!("opening {}", input.display()))?,
    )
    .with_context(|| format!("reading {}", input.display()))?;
    if records.is_empty() {
        bail!("{} has no subjects", input.display());
    }
    let ties = match cfg.ties.to_ascii_lowercase().as_str() {
        "breslow" => Ties::Breslow,
        "efron" => Ties::Efron,
        other => bail!("unknown ties method '{other}', expected breslow or efron"),
    };
    let specs: Vec<Vec<String>> = if cfg.models.is_empty() {
        let names: BTreeSet<&String> = records.iter().flat_map(|r| r.covariates.keys()).collect();
        names.into_iter().map(|n| vec![n.clone()]).collect()
    } else {
        cfg.models
            .iter()
            .map(|m| {
                m.split('+')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .collect()
    };
    if specs.is_empty() {
        bail!("no covariates to model");
    }
    echo(out_dir, &cfg)?;
    let options = CoxOptions {
        ties,
        standardize: cfg.standardize,
        ..CoxOptions::default()
    };
    let suite = cox_model_suite(&records, &specs, &options);
    write_suite_csv(&suite, File::create(out_dir.join("cox.csv"))?)?;
    for e in &suite {
        if let Err(err) = &e.result {
            eprintln!("warning: model {} failed: {err}", e.covariates.join("+"));
        }
    }

    let mut w = csv::Writer::from_path(out_dir.join("labels.csv"))?;
    w.write_record(["id", "alive_at_horizon"])?;
    for (id, label) in binary_labels(&records, cfg.horizon_weeks) {
        w.write_record([id, label.map(|l| l.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// Paired Wilcoxon signed-rank tests between CSV columns.
#[derive(Debug, Args, Serialize)]
pub struct WilcoxonArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV with one row per case and a column per condition.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Column pairs `a:b`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pairs: Option<Vec<String>>,
    /// exact, normal or auto [default: auto].
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WilcoxonConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub pairs: Vec<String>,
    pub mode: String,
}

impl Default for WilcoxonConfig {
    fn default() -> Self {
        WilcoxonConfig {
            input: None,
            out_dir: None,
            pairs: Vec::new(),
            mode: "auto".into(),
        }
    }
}

fn column(path: &std::path::Path, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("{}: line 1: no column '{name}'", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw = rec.get(col).unwrap_or("");
        out.push(raw.parse().map_err(|_| {
            anyhow!(
                "{}: line {line}: '{raw}' in column {name} is not a number",
                path.display()
            )
        })?);
    }
    Ok(out)
}

pub fn run_wilcoxon(args: &WilcoxonArgs) -> Result<()> {
    let cfg: WilcoxonConfig = resolve(args.config.as_deref(), args)?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let input = require_path(&cfg.input, "input")?;
    let mode = match cfg.mode.as_str() {
        "auto" => WilcoxonMode::Auto,
        "exact" => WilcoxonMode::Exact,
        "normal" => WilcoxonMode::Normal,
        other => bail!("unknown mode '{other}', expected auto, exact or normal"),
    };
    if cfg.pairs.is_empty() {
        bail!("no column pairs given");
    }
    echo(out_dir, &cfg)?;
    let mut w = csv::Writer::from_path(out_dir.join("wilcoxon.csv"))?;
    w.write_record(["a", "b", "n", "statistic", "p", "method"])?;
    for pair in &cfg.pairs {
        let (a, b) = pair
            .split_once(':')
            .ok_or_else(|| anyhow!("pair '{pair}' must look like a:b"))?;
        let r = wilcoxon_signed_rank(&column(input, a)?, &column(input, b)?, mode)?;
        let method = if r.all_zero {
            "all-zero"
        } else if r.exact {
            "exact"
        } else {
            "normal"
        };
        w.write_record([
            a.to_string(),
            b.to_string(),
            r.n.to_string(),
            format!("{}", r.statistic),
            format!("{:.6e}", r.p),
            method.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
