//! Cox proportional-hazards regression and the Wilcoxon signed-rank test.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("no events in the data")]
    NoEvents,
    #[error("information matrix is singular (collinear or constant covariates)")]
    SingularInformation,
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("record '{id}': {message}")]
    InvalidRecord { id: String, message: String },
    #[error("need more subjects ({n}) than covariates ({p})")]
    TooFewSubjects { n: usize, p: usize },
    #[error("samples have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub id: String,
    /// Follow-up time in weeks.
    pub time: f64,
    /// True when death was observed, false when censored.
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

impl SurvivalRecord {
    pub fn new(id: impl Into<String>, time: f64, event: bool) -> Self {
        SurvivalRecord {
            id: id.into(),
            time,
            event,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.covariates.insert(name.to_string(), value);
        self
    }
}

/// Reads `id,time_weeks,event,<covariates...>`; every extra column is a covariate.
pub fn read_survival_csv<R: Read>(input: R) -> Result<Vec<SurvivalRecord>, SurvivalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let parse_err = |line: u64, message: String| SurvivalError::Parse { line, message };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(ct), Some(ce)) = (col("id"), col("time_weeks"), col("event")) else {
        return Err(parse_err(
            1,
            "header must contain id, time_weeks and event".into(),
        ));
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize, what: &str| -> Result<f64, SurvivalError> {
            rec.get(i).unwrap_or("").parse::<f64>().map_err(|_| {
                parse_err(
                    line,
                    format!("{what} '{}' is not a number", rec.get(i).unwrap_or("")),
                )
            })
        };
        let id = rec.get(ci).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate id '{id}'")));
        }
        let event = match rec.get(ce).unwrap_or("") {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("event '{other}' must be 0 or 1"))),
        };
        let mut r = SurvivalRecord::new(id, num(ct, "time")?, event);
        for (i, h) in headers.iter().enumerate() {
            if i != ci && i != ct && i != ce {
                let v = rec.get(i).unwrap_or("");
                if !v.is_empty() {
                    r.covariates.insert(h.to_string(), num(i, h)?);
                }
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Alive at `horizon_weeks` → 1, died before it → 0, censored before it → unknown.
pub fn binary_labels(records: &[SurvivalRecord], horizon_weeks: f64) -> Vec<(String, Option<u8>)> {
    records
        .iter()
        .map(|r| {
            let label = if r.time >= horizon_weeks {
                Some(1)
            } else if r.event {
                Some(0)
            } else {
                None
            };
            (r.id.clone(), label)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub ties: Ties,
    /// Fit on z-scored covariates, so hazard ratios are per standard deviation.
    pub standardize: bool,
    pub max_iter: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            ties: Ties::Breslow,
            standardize: false,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxCoef {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub coefs: Vec<CoxCoef>,
    pub log_partial_likelihood: f64,
    pub null_log_partial_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    pub events: usize,
}

/// Design data sorted by descending time, with covariates centered.
struct Design {
    time: Vec<f64>,
    event: Vec<bool>,
    x: Vec<Vec<f64>>,
    p: usize,
}

impl Design {
    fn build(
        records: &[SurvivalRecord],
        names: &[String],
        standardize: bool,
    ) -> Result<Self, SurvivalError> {
        let p = names.len();
        if records.len() <= p {
            return Err(SurvivalError::TooFewSubjects {
                n: records.len(),
                p,
            });
        }
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(SurvivalError::InvalidRecord {
                    id: r.id.clone(),
                    message: format!("time must be positive, got {}", r.time),
                });
            }
            let mut x = Vec::with_capacity(p);
            for n in names {
                match r.covariates.get(n) {
                    Some(v) if v.is_finite() => x.push(*v),
                    Some(v) => {
                        return Err(SurvivalError::InvalidRecord {
                            id: r.id.clone(),
                            message: format!("covariate {n} is not finite ({v})"),
                        })
                    }
                    None => {
                        return Err(SurvivalError::InvalidRecord {
                            id: r.id.clone(),
                            message: format!("missing covariate {n}"),
                        })
                    }
                }
            }
            rows.push((r.time, r.event, x));
        }
        if !rows.iter().any(|r| r.1) {
            return Err(SurvivalError::NoEvents);
        }
        let n = rows.len() as f64;
        for j in 0..p {
            let mean = rows.iter().map(|r| r.2[j]).sum::<f64>() / n;
            for r in rows.iter_mut() {
                r.2[j] -= mean;
            }
            if standardize {
                let sd = (rows.iter().map(|r| r.2[j] * r.2[j]).sum::<f64>() / (n - 1.0)).sqrt();
                if sd > 0.0 {
                    for r in rows.iter_mut() {
                        r.2[j] /= sd;
                    }
                }
            }
        }
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(Design {
            time: rows.iter().map(|r| r.0).collect(),
            event: rows.iter().map(|r| r.1).collect(),
            x: rows.into_iter().map(|r| r.2).collect(),
            p,
        })
    }

    /// Log partial likelihood, score and information at `beta`.
    fn evaluate(&self, beta: &[f64], ties: Ties) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        // running risk-set sums over subjects with time >= current
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let n = self.time.len();
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let mut j = i;
            // tied-death sums
            let mut d = 0usize;
            let mut d0 = 0.0;
            let mut d1 = vec![0.0; p];
            let mut d2 = vec![0.0; p * p];
            let mut xsum = vec![0.0; p];
            while j < n && self.time[j] == t {
                let x = &self.x[j];
                let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                let w = eta.exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * x[a];
                    for b in 0..p {
                        s2[a * p + b] += w * x[a] * x[b];
                    }
                }
                if self.event[j] {
                    d += 1;
                    ll += eta;
                    d0 += w;
                    for a in 0..p {
                        xsum[a] += x[a];
                        d1[a] += w * x[a];
                        for b in 0..p {
                            d2[a * p + b] += w * x[a] * x[b];
                        }
                    }
                }
                j += 1;
            }
            if d > 0 {
                for a in 0..p {
                    score[a] += xsum[a];
                }
                let steps = match ties {
                    Ties::Breslow => vec![0.0; d],
                    Ties::Efron => (0..d).map(|k| k as f64 / d as f64).collect(),
                };
                for f in steps {
                    let z0 = s0 - f * d0;
                    ll -= z0.ln();
                    for a in 0..p {
                        let m_a = (s1[a] - f * d1[a]) / z0;
                        score[a] -= m_a;
                        for b in 0..p {
                            let m_b = (s1[b] - f * d1[b]) / z0;
                            info[(a, b)] += (s2[a * p + b] - f * d2[a * p + b]) / z0 - m_a * m_b;
                        }
                    }
                }
            }
            i = j;
        }
        (ll, score, info)
    }
}

fn is_singular(info: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(info.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::MAX, |m, &v| m.min(v));
    !(max > 0.0) || min <= 1e-10 * max
}

/// Log partial likelihood at `beta` (original covariate scale).
pub fn cox_log_likelihood(
    records: &[SurvivalRecord],
    names: &[String],
    beta: &[f64],
    ties: Ties,
) -> Result<f64, SurvivalError> {
    let design = Design::build(records, names, false)?;
    Ok(design.evaluate(beta, ties).0)
}

/// Two-sided normal tail probability of `z`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Fits the model by Newton iterations from beta = 0.
pub fn cox_fit(
    records: &[SurvivalRecord],
    names: &[String],
    options: &CoxOptions,
) -> Result<CoxFit, SurvivalError> {
    let design = Design::build(records, names, options.standardize)?;
    let p = design.p;
    let mut beta = vec![0.0; p];
    let (null_ll, mut score, mut info) = design.evaluate(&beta, options.ties);
    let mut ll = null_ll;
    let mut iterations = 0;
    let mut converged = false;
    let mut polish = 0;
    while iterations < options.max_iter {
        if is_singular(&info) {
            return Err(SurvivalError::SingularInformation);
        }
        let max_score = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_score < 1e-8 && !converged {
            converged = true;
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&score),
            None => return Err(SurvivalError::SingularInformation),
        };
        let step_norm = step.norm();
        if step_norm < 1e-10 {
            converged = true;
        }
        let beta_max = beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        // flat likelihood with a Newton step that is still large: coefficient runs off
        if converged && step_norm > 1e-4 * (1.0 + beta_max) {
            return Err(SurvivalError::NonConvergence(
                "monotone likelihood, coefficient diverges".into(),
            ));
        }
        // a few extra Newton steps after convergence reach full precision
        if converged {
            if polish >= 3 || step_norm <= 1e-15 * (1.0 + beta_max) {
                break;
            }
            polish += 1;
        }
        iterations += 1;
        let mut factor = 1.0;
        loop {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + factor * s)
                .collect();
            let (cll, cscore, cinfo) = design.evaluate(&cand, options.ties);
            if cll.is_finite() && (cll >= ll - 1e-12 * ll.abs().max(1.0) || factor < 1e-6) {
                beta = cand;
                ll = cll;
                score = cscore;
                info = cinfo;
                break;
            }
            factor /= 2.0;
        }
    }
    if !converged {
        return Err(SurvivalError::NonConvergence(format!(
            "no convergence in {} iterations",
            options.max_iter
        )));
    }
    // divergent coefficient: monotone likelihood / separation
    for j in 0..p {
        let range = design
            .x
            .iter()
            .map(|x| x[j])
            .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if (beta[j] * (range.1 - range.0)).abs() > 30.0 {
            return Err(SurvivalError::NonConvergence(format!(
                "coefficient of {} diverges (monotone likelihood)",
                names[j]
            )));
        }
    }
    let cov = info
        .clone()
        .try_inverse()
        .ok_or(SurvivalError::SingularInformation)?;
    let events = design.event.iter().filter(|&&e| e).count();
    let coefs = (0..p)
        .map(|j| {
            let b = beta[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = b / se;
            CoxCoef {
                name: names[j].clone(),
                beta: b,
                se,
                hr: b.exp(),
                ci_low: (b - 1.96 * se).exp(),
                ci_high: (b + 1.96 * se).exp(),
                z,
                p: normal_two_sided_p(z),
            }
        })
        .collect();
    Ok(CoxFit {
        coefs,
        log_partial_likelihood: ll,
        null_log_partial_likelihood: null_ll,
        iterations,
        converged,
        n: design.time.len(),
        events,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub covariates: Vec<String>,
    pub result: Result<CoxFit, SurvivalError>,
}

/// Fits each covariate list; failures are kept per model.
pub fn cox_model_suite(
    records: &[SurvivalRecord],
    specs: &[Vec<String>],
    options: &CoxOptions,
) -> Vec<SuiteEntry> {
    specs
        .iter()
        .map(|names| SuiteEntry {
            covariates: names.clone(),
            result: cox_fit(records, names, options),
        })
        .collect()
}

/// One row per (model, variable): p value and hazard ratio with 95% CI.
pub fn write_suite_csv<W: Write>(suite: &[SuiteEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model", "variable", "beta", "se", "hr", "ci_low", "ci_high", "p", "status",
    ])?;
    for e in suite {
        let model = e.covariates.join("+");
        match &e.result {
            Ok(fit) => {
                for c in &fit.coefs {
                    w.write_record([
                        model.clone(),
                        c.name.clone(),
                        format!("{:.6}", c.beta),
                        format!("{:.6}", c.se),
                        format!("{:.4}", c.hr),
                        format!("{:.4}", c.ci_low),
                        format!("{:.4}", c.ci_high),
                        format_p(c.p),
                        "ok".to_string(),
                    ])?;
                }
            }
            Err(err) => {
                w.write_record([
                    model.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    err.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn format_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMode {
    Exact,
    Normal,
    /// Exact up to 20 non-zero differences, normal approximation beyond.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub statistic: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p: f64,
    pub exact: bool,
    /// Every difference was zero; `p` is 1.
    pub all_zero: bool,
}

/// Ranks of |d| (1-based, ties averaged).
fn abs_ranks(d: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && d[order[j]].abs() == d[order[i]].abs() {
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

/// Paired two-sided signed-rank test on `a - b`.
pub fn wilcoxon_signed_rank(
    a: &[f64],
    b: &[f64],
    mode: WilcoxonMode,
) -> Result<WilcoxonResult, SurvivalError> {
    if a.len() != b.len() {
        return Err(SurvivalError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    if d.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            n: 0,
            p: 1.0,
            exact: true,
            all_zero: true,
        });
    }
    let ranks = abs_ranks(&d);
    let w: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let exact = match mode {
        WilcoxonMode::Exact => true,
        WilcoxonMode::Normal => false,
        WilcoxonMode::Auto => d.len() <= 20,
    };
    let p = if exact {
        exact_p(&ranks, w)
    } else {
        normal_p(&ranks, w)
    };
    Ok(WilcoxonResult {
        statistic: w,
        n: d.len(),
        p,
        exact,
        all_zero: false,
    })
}

/// P(|W − E| ≥ |w − E|) under independent fair signs, from the exact
/// distribution of twice the statistic (ranks are multiples of 1/2).
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = r2.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &r2 {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (2.0 * w).round() as i64;
    let dev = (2 * w2 - total as i64).abs();
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    (hits / 2f64.powi(ranks.len() as i32)).min(1.0)
}

/// Normal approximation with tie-aware variance and continuity correction.
fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    let dev = ((w - mean).abs() - 0.5).max(0.0);
    if var == 0.0 {
        return 1.0;
    }
    normal_two_sided_p(dev / var.sqrt())
}
