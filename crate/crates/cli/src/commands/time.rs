use std::path::PathBuf;
use std::time::Duration;

use airway_core::ranking::{time_runner, timeout_from_env, CaseStatus, RunnerOptions};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::cases::scan_dir;
use crate::config::{echo, require, require_path, resolve};

/// Time a segmentation command over every case, one case at a time.
#[derive(Debug, Args, Serialize)]
pub struct TimeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Shell command with `{input}` and `{output}` placeholders.
    #[arg(long)]
    pub command: Option<String>,
    /// Folder of input scans.
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    /// Receives `<case>.nii.gz` outputs, the timing table and the config echo.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Per-case limit in seconds; falls back to AIRWAY_CASE_TIMEOUT.
    #[arg(long)]
    pub timeout_s: Option<f64>,
    /// Stop at the first failed or missing case.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub command: Option<String>,
    pub input_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub timeout_s: Option<f64>,
    pub strict: bool,
}

pub fn run(args: &TimeArgs) -> Result<()> {
    let cfg: TimeConfig = resolve(args.config.as_deref(), args)?;
    let template = require(&cfg.command, "command")?;
    let out_dir = require_path(&cfg.out_dir, "out_dir")?;
    let inputs: Vec<PathBuf> = scan_dir(require_path(&cfg.input_dir, "input_dir")?)?
        .into_values()
        .collect();
    if inputs.is_empty() {
        bail!("no input scans found");
    }
    let timeout = match cfg.timeout_s {
        Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
        Some(s) => bail!("timeout_s must be positive, got {s}"),
        None => timeout_from_env(),
    };
    echo(out_dir, &cfg)?;
    let options = RunnerOptions {
        strict: cfg.strict,
        timeout,
        output_dir: out_dir.to_path_buf(),
    };
    let report = time_runner(template, &inputs, &options)?;

    let path = out_dir.join("timing.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["case_id", "seconds", "status"])?;
    for c in &report.cases {
        let status = match &c.status {
            CaseStatus::Ok => "ok".to_string(),
            CaseStatus::Missing(reason) => format!("missing: {reason}"),
        };
        w.write_record([c.case_id.clone(), format!("{:.4}", c.wall_seconds), status])?;
    }
    w.write_record([
        "mean".to_string(),
        report
            .mean_seconds
            .map(|m| format!("{m:.4}"))
            .unwrap_or_default(),
        String::new(),
    ])?;
    w.flush()?;
    for c in report.missing() {
        eprintln!("warning: case '{}' missing", c.case_id);
    }
    Ok(())
}
