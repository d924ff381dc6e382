//! End-to-end computation of the QCM series of a return series.
//!
//! 1. Fit every (family, level) CAViaR model.
//! 2. Screen each fitted path with the in-sample DQ test at `p_star`.
//! 3. Pool the surviving paths at each timepoint.
//! 4. Fit the CF regression per timepoint and map it to moments.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caviar::{self, CaviarSpec, EstimateOptions, Family, DEFAULT_ADAP_N};
use crate::cf::{self, CfRegression, QcmTriple, ThetaEstimate};
use crate::dq;
use crate::error::{QcmError, Result};
use crate::rng::{job_rng, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintPolicy {
    /// Report whether the moment constraint holds.
    #[default]
    Check,
    /// Refit violating timepoints by constrained least squares.
    Enforce,
}

impl std::str::FromStr for ConstraintPolicy {
    type Err = QcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "check" | "check-only" => Ok(Self::Check),
            "enforce" => Ok(Self::Enforce),
            other => Err(QcmError::Config(format!("unknown constraint policy '{other}'"))),
        }
    }
}

/// `0.01, 0.02, …, 0.99`.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Parses `start:step:end` (inclusive end).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || QcmError::Config(format!("grid '{spec}' is not of the form start:step:end"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let (start, step, end) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    // Rounded to 12 decimals so that 0.01 + 2·0.01 prints and compares as 0.03.
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub grid: Vec<f64>,
    pub families: Vec<Family>,
    pub p_star: f64,
    pub constraint_policy: ConstraintPolicy,
    pub seed: u64,
    pub adap_n: f64,
    pub estimate: EstimateOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            families: Family::ALL.to_vec(),
            p_star: 0.1,
            constraint_policy: ConstraintPolicy::Check,
            seed: 0,
            adap_n: DEFAULT_ADAP_N,
            estimate: EstimateOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(QcmError::Config("empty quantile grid".into()));
        }
        if self.grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(QcmError::Config("grid levels must lie in (0, 1)".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QcmError::Config("grid must be strictly increasing".into()));
        }
        if self.families.is_empty() {
            return Err(QcmError::Config("no CAViaR families selected".into()));
        }
        if !(0.0..1.0).contains(&self.p_star) {
            return Err(QcmError::Config(format!("p* = {} is outside [0, 1)", self.p_star)));
        }
        if !(self.adap_n > 0.0 && self.adap_n.is_finite()) {
            return Err(QcmError::Config("ADAP smoothing constant must be positive".into()));
        }
        if self.estimate.n_refine == 0 || self.estimate.max_iter == 0 {
            return Err(QcmError::Config("optimizer needs at least one refinement".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QcmRecord {
    /// 1-based timepoint.
    pub t: usize,
    pub h: f64,
    pub s: f64,
    pub k: f64,
    pub constraint_ok: bool,
    pub n0: usize,
    pub beta0: f64,
    /// Coefficients came from constrained least squares.
    pub constrained: bool,
    /// `beta1` collapsed to zero; `s` and `k` are NaN.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct QcmSeries {
    pub records: Vec<QcmRecord>,
}

impl QcmSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn h(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h).collect()
    }

    pub fn s(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.s).collect()
    }

    pub fn k(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.k).collect()
    }
}

/// CF stage for one pool of quantiles: OLS, or the constrained fit when
/// `β̂1` is not safely positive or `Enforce` meets a violation. Returns the
/// coefficients, the moments (`None` if degenerate) and whether the
/// constrained fit was used.
pub fn fit_timepoint(
    reg: &CfRegression,
    values: &[f64],
    policy: ConstraintPolicy,
) -> Result<(ThetaEstimate, Option<QcmTriple>, bool)> {
    let eps = cf::epsilon_beta(values);
    let ols = reg.ols(values);
    let needs_constrained = ols.beta1 <= eps
        || (policy == ConstraintPolicy::Enforce && !cf::moment_constraint_holds(&ols));
    let (theta, constrained) = if needs_constrained {
        (reg.constrained(values)?, true)
    } else {
        (ols, false)
    };
    let triple = cf::qcm_from_theta_with(&theta, eps).ok();
    Ok((theta, triple, constrained))
}

/// Per-timepoint CF regressions over pooled paths (`paths[i][t]` is the
/// estimate at `levels[i]` and timepoint `t`).
pub fn qcm_series(levels: &[f64], paths: &[Vec<f64>], policy: ConstraintPolicy) -> Result<QcmSeries> {
    crate::error::check_len("levels and paths", levels.len(), paths.len())?;
    let reg = CfRegression::new(levels)?;
    let t_len = paths.first().map_or(0, Vec::len);
    if paths.iter().any(|p| p.len() != t_len) {
        return Err(QcmError::Config("pooled paths differ in length".into()));
    }
    let n0 = levels.len();
    let records = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let values: Vec<f64> = paths.iter().map(|p| p[t]).collect();
            let (theta, triple, constrained) = fit_timepoint(&reg, &values, policy)?;
            Ok(match triple {
                Some(q) => QcmRecord {
                    t: t + 1,
                    h: q.h,
                    s: q.s,
                    k: q.k,
                    constraint_ok: q.constraint_ok,
                    n0,
                    beta0: theta.beta0,
                    constrained,
                    degenerate: false,
                },
                None => QcmRecord {
                    t: t + 1,
                    h: theta.beta1 * theta.beta1,
                    s: f64::NAN,
                    k: f64::NAN,
                    constraint_ok: false,
                    n0,
                    beta0: theta.beta0,
                    constrained,
                    degenerate: true,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QcmSeries { records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub family: Family,
    pub level: f64,
    pub psi: Vec<f64>,
    pub loss: f64,
    pub hit_rate: f64,
    pub dq_statistic: f64,
    pub dq_pvalue: f64,
    pub dq_degenerate: bool,
    pub kept: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Timings {
    pub caviar_secs: f64,
    pub dq_secs: f64,
    pub cf_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub paths: Vec<PathReport>,
    pub n0: usize,
    pub n_constrained: usize,
    pub n_constraint_violations: usize,
    pub n_degenerate: usize,
    #[serde(skip)]
    pub timings: Timings,
}

/// All fitted CAViaR paths of a run, before screening.
pub fn fit_all(y: &[f64], cfg: &PipelineConfig) -> Vec<(Family, f64, Result<caviar::CaviarFit>)> {
    let jobs: Vec<(Family, usize, f64)> = cfg
        .families
        .iter()
        .flat_map(|&f| cfg.grid.iter().enumerate().map(move |(i, &a)| (f, i, a)))
        .collect();
    jobs.into_par_iter()
        .map(|(family, li, alpha)| {
            let fit = CaviarSpec::with_adap_n(family, alpha, cfg.adap_n).and_then(|spec| {
                let mut rng = job_rng(cfg.seed, &[tag::CAVIAR, family.index(), li as u64]);
                caviar::estimate(&spec, y, &cfg.estimate, &mut rng)
            });
            (family, alpha, fit)
        })
        .collect()
}

/// Surviving paths of a run with the per-path report.
#[derive(Debug, Clone, PartialEq)]
pub struct Screened {
    pub levels: Vec<f64>,
    pub sources: Vec<Family>,
    /// `paths[i][t]`, aligned with `levels`.
    pub paths: Vec<Vec<f64>>,
    pub reports: Vec<PathReport>,
    pub timings: Timings,
}

/// Fits every CAViaR path and keeps those passing the DQ screen.
pub fn fit_and_screen(y: &[f64], cfg: &PipelineConfig) -> Result<Screened> {
    cfg.validate()?;
    if y.len() < caviar::MIN_SERIES {
        return Err(QcmError::Domain(format!(
            "series has {} observations, at least {} needed",
            y.len(),
            caviar::MIN_SERIES
        )));
    }
    let mut timings = Timings::default();

    let clock = Instant::now();
    let fits = fit_all(y, cfg);
    timings.caviar_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let decisions: Vec<Option<dq::DqResult>> = fits
        .par_iter()
        .map(|(_, level, fit)| match fit {
            Ok(f) => dq::dq_insample(&dq::hits(y, &f.q_path, *level)?).map(Some),
            Err(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    timings.dq_secs = clock.elapsed().as_secs_f64();

    let mut out = Screened {
        levels: Vec::new(),
        sources: Vec::new(),
        paths: Vec::new(),
        reports: Vec::with_capacity(fits.len()),
        timings,
    };
    for ((family, level, fit), dq) in fits.into_iter().zip(decisions) {
        let report = match (fit, dq) {
            (Ok(f), Some(dq)) => {
                let kept = dq.pvalue >= cfg.p_star;
                let report = PathReport {
                    family,
                    level,
                    psi: f.psi,
                    loss: f.loss,
                    hit_rate: f.hit_rate,
                    dq_statistic: dq.statistic,
                    dq_pvalue: dq.pvalue,
                    dq_degenerate: dq.degenerate,
                    kept,
                    error: None,
                };
                if kept {
                    out.levels.push(level);
                    out.sources.push(family);
                    out.paths.push(f.q_path);
                }
                report
            }
            (fit, _) => PathReport {
                family,
                level,
                psi: Vec::new(),
                loss: f64::NAN,
                hit_rate: f64::NAN,
                dq_statistic: f64::NAN,
                dq_pvalue: f64::NAN,
                dq_degenerate: false,
                kept: false,
                error: fit.err().map(|e| e.to_string()),
            },
        };
        out.reports.push(report);
    }

    if out.levels.len() < cf::MIN_POOL {
        return Err(QcmError::InsufficientPool {
            n0: out.levels.len(),
            required: cf::MIN_POOL,
        });
    }
    Ok(out)
}

pub fn run(y: &[f64], cfg: &PipelineConfig) -> Result<(QcmSeries, RunReport)> {
    let screened = fit_and_screen(y, cfg)?;
    let mut timings = screened.timings;
    let clock = Instant::now();
    let series = qcm_series(&screened.levels, &screened.paths, cfg.constraint_policy)?;
    timings.cf_secs = clock.elapsed().as_secs_f64();

    let report = RunReport {
        paths: screened.reports,
        n0: screened.levels.len(),
        n_constrained: series.records.iter().filter(|r| r.constrained).count(),
        n_constraint_violations: series.records.iter().filter(|r| !r.constraint_ok).count(),
        n_degenerate: series.records.iter().filter(|r| r.degenerate).count(),
        timings,
    };
    Ok((series, report))
}
