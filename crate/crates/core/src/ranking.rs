//! Leaderboard aggregation and wall-clock timing of external inference
//! commands.
//!
//! Teams are ranked by mean overall accuracy (descending) and mean time per
//! scan (ascending); the combined score is `0.7 * rank_acc + 0.3 * rank_time`
//! and lower is better. Ties share the average of the ranks they span.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;
use wait_timeout::ChildExt;

/// Environment variable holding the per-case timeout in seconds.
pub const CASE_TIMEOUT_ENV: &str = "AIRWAY_CASE_TIMEOUT";

pub const ACCURACY_WEIGHT: f64 = 0.7;
pub const TIME_WEIGHT: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("no teams to rank")]
    Empty,
    #[error("team '{0}' appears more than once")]
    DuplicateTeamName(String),
    #[error("team '{team}': {message}")]
    InvalidEntry { team: String, message: String },
    #[error("case '{case_id}' failed: {reason}")]
    ProcessFailure { case_id: String, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TeamResult {
    pub team: String,
    pub ovacc: f64,
    pub time_s: f64,
}

impl TeamResult {
    pub fn new(team: impl Into<String>, ovacc: f64, time_s: f64) -> Self {
        TeamResult {
            team: team.into(),
            ovacc,
            time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    pub team: String,
    pub ovacc_mean: f64,
    pub time_s: f64,
    pub rank_acc: f64,
    pub rank_time: f64,
    pub combined_r: f64,
    pub final_position: usize,
}

/// 1-based fractional ranks of `values` under `better`, which must order
/// the best value first.
pub fn fractional_ranks(
    values: &[f64],
    better: impl Fn(f64, f64) -> std::cmp::Ordering,
) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| better(values[a], values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Orders teams by combined rank; ties go to higher accuracy, then team name.
pub fn rank_teams(entries: &[TeamResult]) -> Result<Vec<LeaderboardEntry>, RankingError> {
    if entries.is_empty() {
        return Err(RankingError::Empty);
    }
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.team.as_str()) {
            return Err(RankingError::DuplicateTeamName(e.team.clone()));
        }
        if !e.ovacc.is_finite() {
            return Err(RankingError::InvalidEntry {
                team: e.team.clone(),
                message: format!("ovacc must be finite, got {}", e.ovacc),
            });
        }
        if !(e.time_s.is_finite() && e.time_s > 0.0) {
            return Err(RankingError::InvalidEntry {
                team: e.team.clone(),
                message: format!("time must be positive, got {}", e.time_s),
            });
        }
    }
    let acc: Vec<f64> = entries.iter().map(|e| e.ovacc).collect();
    let time: Vec<f64> = entries.iter().map(|e| e.time_s).collect();
    let rank_acc = fractional_ranks(&acc, |a, b| b.total_cmp(&a));
    let rank_time = fractional_ranks(&time, |a, b| a.total_cmp(&b));
    let mut board: Vec<LeaderboardEntry> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| LeaderboardEntry {
            team: e.team.clone(),
            ovacc_mean: e.ovacc,
            time_s: e.time_s,
            rank_acc: rank_acc[i],
            rank_time: rank_time[i],
            combined_r: ACCURACY_WEIGHT * rank_acc[i] + TIME_WEIGHT * rank_time[i],
            final_position: 0,
        })
        .collect();
    board.sort_by(|a, b| {
        a.combined_r
            .total_cmp(&b.combined_r)
            .then(b.ovacc_mean.total_cmp(&a.ovacc_mean))
            .then_with(|| a.team.cmp(&b.team))
    });
    for (i, e) in board.iter_mut().enumerate() {
        e.final_position = i + 1;
    }
    Ok(board)
}

/// Reads `team,ovacc,time_s` rows with a header line.
pub fn read_team_results<R: Read>(input: R) -> Result<Vec<TeamResult>, RankingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<TeamResult>() {
        out.push(rec.map_err(|e| RankingError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_leaderboard_csv<W: Write>(board: &[LeaderboardEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "team",
        "ovacc",
        "time_s",
        "rank_acc",
        "rank_time",
        "R",
        "position",
    ])?;
    for e in board {
        w.write_record([
            e.team.clone(),
            format!("{:.6}", e.ovacc_mean),
            format!("{:.3}", e.time_s),
            format!("{}", e.rank_acc),
            format!("{}", e.rank_time),
            format!("{:.3}", e.combined_r),
            e.final_position.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseStatus {
    Ok,
    /// Command failed, timed out or produced no output.
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseTiming {
    pub case_id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub wall_seconds: f64,
    pub status: CaseStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub cases: Vec<CaseTiming>,
    /// Mean over successful cases; `None` when none succeeded.
    pub mean_seconds: Option<f64>,
}

impl TimingReport {
    pub fn missing(&self) -> impl Iterator<Item = &CaseTiming> {
        self.cases.iter().filter(|c| c.status != CaseStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerOptions {
    /// Abort on the first failing case instead of flagging it.
    pub strict: bool,
    pub timeout: Option<Duration>,
    pub output_dir: PathBuf,
}

impl RunnerOptions {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunnerOptions {
            strict: false,
            timeout: timeout_from_env(),
            output_dir: output_dir.into(),
        }
    }
}

/// Per-case timeout from [`CASE_TIMEOUT_ENV`], if set to a positive number.
pub fn timeout_from_env() -> Option<Duration> {
    std::env::var(CASE_TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s > 0.0)
        .map(Duration::from_secs_f64)
}

/// File name without `.nii` / `.nii.gz`.
pub fn case_id_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs `template` once per case through `sh -c`, substituting `{input}`
/// and `{output}` with quoted paths, and times each run. Cases run one at a
/// time. Output files are `<output_dir>/<case_id>.nii.gz`.
pub fn time_runner(
    template: &str,
    cases: &[PathBuf],
    options: &RunnerOptions,
) -> Result<TimingReport, RankingError> {
    std::fs::create_dir_all(&options.output_dir)?;
    let mut out = Vec::with_capacity(cases.len());
    for input in cases {
        let case_id = case_id_of(input);
        let output = options.output_dir.join(format!("{case_id}.nii.gz"));
        let cmd = template
            .replace("{input}", &shell_quote(&input.to_string_lossy()))
            .replace("{output}", &shell_quote(&output.to_string_lossy()));
        let start = Instant::now();
        let status = run_one(&cmd, options.timeout, &output);
        let wall_seconds = start.elapsed().as_secs_f64();
        if let (true, CaseStatus::Missing(reason)) = (options.strict, &status) {
            return Err(RankingError::ProcessFailure {
                case_id,
                reason: reason.clone(),
            });
        }
        out.push(CaseTiming {
            case_id,
            input: input.clone(),
            output,
            wall_seconds,
            status,
        });
    }
    let ok: Vec<f64> = out
        .iter()
        .filter(|c| c.status == CaseStatus::Ok)
        .map(|c| c.wall_seconds)
        .collect();
    let mean_seconds = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    Ok(TimingReport {
        cases: out,
        mean_seconds,
    })
}

fn run_one(cmd: &str, timeout: Option<Duration>, output: &Path) -> CaseStatus {
    let mut child = match Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return CaseStatus::Missing(format!("could not start: {e}")),
    };
    let status = match timeout {
        Some(t) => match child.wait_timeout(t) {
            Ok(Some(s)) => s,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return CaseStatus::Missing(format!("timed out after {:.1} s", t.as_secs_f64()));
            }
            Err(e) => return CaseStatus::Missing(e.to_string()),
        },
        None => match child.wait() {
            Ok(s) => s,
            Err(e) => return CaseStatus::Missing(e.to_string()),
        },
    };
    if !status.success() {
        return CaseStatus::Missing(format!("exit status {status}"));
    }
    if !output.exists() {
        return CaseStatus::Missing("no output written".into());
    }
    CaseStatus::Ok
}
