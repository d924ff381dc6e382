use std::path::Path;

use qcm_core::caviar::EstimateOptions;
use qcm_core::dgp::{run_campaign, CampaignConfig, ErrorCase};
use qcm_core::diagnostics::{
    descriptive_stats, descriptive_table, ljung_box, qcm_stats_table, validity_table, validity_ttests,
    Descriptive, LjungBox, VarianceEstimator, DEFAULT_LB_LAGS,
};
use qcm_core::io::{
    campaign_summary_csv, delta_summary_csv, dq_report_csv, load_returns, qcm_csv, read_qcm_csv, write_file,
    ReturnSeries,
};
use qcm_core::nic::{adj_r2_table, curve_table, estimates_table, nic_study};
use qcm_core::pipeline::{self, parse_grid, PipelineConfig};
use qcm_core::{QcmError, Result};
use serde_json::json;

use crate::{ComputeArgs, NicArgs, PipelineArgs, SimulateArgs};

fn pipeline_config(a: &PipelineArgs, seed: u64) -> Result<PipelineConfig> {
    let cfg = PipelineConfig {
        grid: parse_grid(&a.grid)?,
        families: a.families.clone(),
        p_star: a.pstar,
        constraint_policy: a.constraint,
        seed,
        estimate: EstimateOptions {
            n_random: a.n_random,
            ..EstimateOptions::default()
        },
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| QcmError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| QcmError::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn load(path: &Path, mode: qcm_core::io::InputMode) -> Result<ReturnSeries> {
    if !path.exists() {
        return Err(QcmError::Io {
            path: path.display().to_string(),
            message: "file not found".into(),
        });
    }
    load_returns(path, mode)
}

fn finite(x: &[f64]) -> Vec<f64> {
    x.iter().copied().filter(|v| v.is_finite()).collect()
}

/// Descriptive statistics plus Ljung-Box at up to 20 lags.
fn stats_with_lb(x: &[f64]) -> Result<(Descriptive, LjungBox)> {
    let x = finite(x);
    let d = descriptive_stats(&x)?;
    let lags = DEFAULT_LB_LAGS.min(x.len().div_ceil(4).saturating_sub(1)).max(1);
    Ok((d, ljung_box(&x, lags)?))
}

pub fn compute(a: &ComputeArgs) -> Result<()> {
    let cfg = pipeline_config(&a.pipeline, a.seed)?;
    let data = load(&a.input, a.mode)?;
    prepare_out(&a.out)?;
    let (series, report) = pipeline::run(&data.values, &cfg)?;

    write_file(&a.out.join("qcm.csv"), &qcm_csv(&series, Some(&data.dates)))?;
    write_file(&a.out.join("dq_report.csv"), &dq_report_csv(&report.paths))?;
    write_file(
        &a.out.join("descriptive.csv"),
        &descriptive_table(&[("y", descriptive_stats(&data.values)?)]),
    )?;
    let (h, s, k) = (stats_with_lb(&series.h())?, stats_with_lb(&series.s())?, stats_with_lb(&series.k())?);
    write_file(
        &a.out.join("qcm_stats.csv"),
        &qcm_stats_table(&[("h", h.0, h.1), ("s", s.0, s.1), ("k", k.0, k.1)]),
    )?;

    let mut run = json!({
        "command": "compute",
        "input": a.input.display().to_string(),
        "mode": a.mode,
        "config": cfg,
        "summary": {
            "n": series.len(),
            "n0": report.n0,
            "n_constrained": report.n_constrained,
            "n_constraint_violations": report.n_constraint_violations,
            "n_degenerate": report.n_degenerate,
        },
    });
    if a.timings {
        run["timings"] = json!(report.timings);
    }
    write_json(&a.out.join("run.json"), &run)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let cases = a
        .cases
        .iter()
        .map(|&c| ErrorCase::from_id(c))
        .collect::<Result<Vec<_>>>()?;
    let cfg = CampaignConfig {
        pipeline: pipeline_config(&a.pipeline, a.seed)?,
        ..CampaignConfig::new(a.dgp, cases, a.reps, a.length, a.seed)
    };
    cfg.validate()?;
    prepare_out(&a.out)?;
    let result = run_campaign(&cfg)?;
    write_file(&a.out.join("delta_summary.csv"), &delta_summary_csv(&result))?;
    write_file(&a.out.join("campaign_summary.csv"), &campaign_summary_csv(&result))?;
    write_json(
        &a.out.join("simulate.json"),
        &json!({ "command": "simulate", "config": cfg }),
    )
}

pub fn nic(a: &NicArgs) -> Result<()> {
    let data = load(&a.input, a.mode)?;
    if !a.qcm.exists() {
        return Err(QcmError::Io {
            path: a.qcm.display().to_string(),
            message: "file not found".into(),
        });
    }
    let table = read_qcm_csv(&a.qcm)?;
    if table.h.len() != data.len() {
        return Err(QcmError::LengthMismatch {
            what: "returns and QCM rows",
            left: data.len(),
            right: table.h.len(),
        });
    }
    prepare_out(&a.out)?;
    let study = nic_study(&data.values, &table.h, &table.s, &table.k, a.tar_order, !a.no_prune)?;
    for m in &study.moments {
        write_file(&a.out.join(format!("curves_{}.csv", m.moment.name())), &curve_table(m))?;
    }
    write_file(&a.out.join("nic_estimates.csv"), &estimates_table(&study))?;
    write_file(&a.out.join("adj_r2.csv"), &adj_r2_table(&study))?;

    // Validity of the QCMs against the TAR conditional mean.
    let mu = study.tar.mean_path();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&t| mu[t].is_finite() && table.h[t] > 0.0 && table.s[t].is_finite() && table.k[t].is_finite())
        .collect();
    let pick = |v: &[f64]| keep.iter().map(|&t| v[t]).collect::<Vec<f64>>();
    let v = validity_ttests(
        &pick(&data.values),
        &pick(&mu),
        &pick(&table.h),
        &pick(&table.s),
        &pick(&table.k),
        VarianceEstimator::NeweyWest,
    )?;
    write_file(&a.out.join("validity.csv"), &validity_table(&[("y", v)]))?;

    write_json(
        &a.out.join("nic.json"),
        &json!({
            "command": "nic",
            "input": a.input.display().to_string(),
            "mode": a.mode,
            "qcm": a.qcm.display().to_string(),
            "tar_order": a.tar_order,
            "prune": !a.no_prune,
            "tar": { "lower": study.tar.lower, "upper": study.tar.upper },
        }),
    )
}
