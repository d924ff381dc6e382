//! Return-series ingestion and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dgp::{CampaignResult, Moment};
use crate::error::{QcmError, Result};
use crate::pipeline::{PathReport, QcmSeries};

/// Minimum number of price rows, giving at least 100 returns.
pub const MIN_PRICE_ROWS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Prices,
    Returns,
}

impl std::str::FromStr for InputMode {
    type Err = QcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prices" => Ok(Self::Prices),
            "returns" => Ok(Self::Returns),
            other => Err(QcmError::Config(format!("unknown input mode '{other}'"))),
        }
    }
}

/// Dated percent log-returns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReturnSeries {
    pub dates: Vec<String>,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Formats like C's `%.9e` (`1.234567890e-02`); `nan`, `inf`, `-inf` for
/// non-finite values.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.9e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn parse_date(s: &str) -> Option<NaiveDateTime> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok())
}

fn parse_err(row: usize, message: impl Into<String>) -> QcmError {
    QcmError::Parse {
        row,
        message: message.into(),
    }
}

/// Reads `(date, value)` rows. A first row whose value does not parse as a
/// number is taken as a header. Row numbers in errors are 1-based file lines.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    read_rows(path).map(|(d, v, _)| (d, v))
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<usize>)> {
    let io_err = |e: &dyn std::fmt::Display| QcmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(&e))?;
    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut rows = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let row = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(row, format!("expected 2 fields (date, value), found {}", rec.len())));
        }
        let value = match rec[1].parse::<f64>() {
            Ok(v) => v,
            Err(_) if row == 1 => continue,
            Err(_) => return Err(parse_err(row, format!("value '{}' is not a number", &rec[1]))),
        };
        if !value.is_finite() {
            return Err(parse_err(row, "value is not finite"));
        }
        let date = parse_date(&rec[0])
            .ok_or_else(|| parse_err(row, format!("'{}' is not an ISO-8601 date", &rec[0])))?;
        if last.is_some_and(|prev| date <= prev) {
            return Err(parse_err(row, format!("date {} is not after the previous row", &rec[0])));
        }
        last = Some(date);
        dates.push(rec[0].to_string());
        values.push(value);
        rows.push(row);
    }
    Ok((dates, values, rows))
}

/// `y_t = 100·ln(P_t/P_{t−1})`, dated at the later observation.
pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| 100.0 * (w[1] / w[0]).ln()).collect()
}

pub fn load_returns(path: &Path, mode: InputMode) -> Result<ReturnSeries> {
    let (dates, values, rows) = read_rows(path)?;
    match mode {
        InputMode::Returns => Ok(ReturnSeries { dates, values }),
        InputMode::Prices => {
            if values.len() < MIN_PRICE_ROWS {
                return Err(QcmError::Domain(format!(
                    "{}: {} price rows, at least {MIN_PRICE_ROWS} needed",
                    path.display(),
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|p| !(*p > 0.0)) {
                return Err(parse_err(rows[i], format!("nonpositive price {}", values[i])));
            }
            Ok(ReturnSeries {
                dates: dates[1..].to_vec(),
                values: log_returns(&values),
            })
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| QcmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub const QCM_HEADER: &str = "t,date,h,s,k,constraint_ok,n0";

/// `t,date,h,s,k,constraint_ok,n0`; `date` is empty when no dates are given.
pub fn qcm_csv(series: &QcmSeries, dates: Option<&[String]>) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(QCM_HEADER);
    out.push('\n');
    for (i, r) in series.records.iter().enumerate() {
        let date = dates.and_then(|d| d.get(i)).map_or("", String::as_str);
        let _ = writeln!(
            out,
            "{},{date},{},{},{},{},{}",
            r.t,
            fmt_num(r.h),
            fmt_num(r.s),
            fmt_num(r.k),
            r.constraint_ok,
            r.n0
        );
    }
    out
}

/// QCM columns read back from a `qcm.csv` file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QcmTable {
    pub t: Vec<usize>,
    pub dates: Vec<String>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
}

pub fn read_qcm_csv(path: &Path) -> Result<QcmTable> {
    let io_err = |e: &dyn std::fmt::Display| QcmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(&e))?;
    let headers = reader.headers().map_err(|e| io_err(&e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
    };
    let (ct, cd, ch, cs, ck) = (col("t")?, col("date")?, col("h")?, col("s")?, col("k")?);
    let mut table = QcmTable::default();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let num = |c: usize| {
            rec.get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| parse_err(row, format!("column {} is not a number", c + 1)))
        };
        table.t.push(
            rec.get(ct)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(row, "t is not an integer"))?,
        );
        table.dates.push(rec.get(cd).unwrap_or("").to_string());
        table.h.push(num(ch)?);
        table.s.push(num(cs)?);
        table.k.push(num(ck)?);
    }
    Ok(table)
}

pub fn dq_report_csv(reports: &[PathReport]) -> String {
    let mut out = String::from("family,level,psi,loss,hit_rate,dq_statistic,dq_pvalue,dq_degenerate,kept,error\n");
    for r in reports {
        let psi: Vec<String> = r.psi.iter().map(|v| fmt_num(*v)).collect();
        let error = r.error.as_deref().unwrap_or("").replace(['"', ','], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.family,
            r.level,
            psi.join(";"),
            fmt_num(r.loss),
            fmt_num(r.hit_rate),
            fmt_num(r.dq_statistic),
            fmt_num(r.dq_pvalue),
            r.dq_degenerate,
            r.kept,
            error
        );
    }
    out
}

pub const DELTA_HEADER: &str =
    "case,moment,t,n,min,q1,median,q3,max,lower_whisker,upper_whisker,n_outliers,outliers";

/// Per-timepoint boxplot statistics of Δ across replications, one row per
/// (case, moment, t). Outliers are `;`-joined.
pub fn delta_summary_csv(result: &CampaignResult) -> String {
    let mut out = String::from(DELTA_HEADER);
    out.push('\n');
    for case in &result.cases {
        let len = case.reps.first().map_or(0, |r| r.delta.dh.len());
        for m in Moment::ALL {
            for t in 0..len {
                let Some(b) = case.box_at(m, t) else {
                    let _ = writeln!(out, "{},{},{},0,nan,nan,nan,nan,nan,nan,nan,0,", case.case.id(), m.name(), t + 1);
                    continue;
                };
                let outliers: Vec<String> = b.outliers.iter().map(|v| fmt_num(*v)).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    case.case.id(),
                    m.name(),
                    t + 1,
                    b.n,
                    fmt_num(b.min),
                    fmt_num(b.q1),
                    fmt_num(b.median),
                    fmt_num(b.q3),
                    fmt_num(b.max),
                    fmt_num(b.lower_whisker),
                    fmt_num(b.upper_whisker),
                    b.outliers.len(),
                    outliers.join(";")
                );
            }
        }
    }
    out
}

/// Per-case constraint rates and pool sizes of a campaign.
pub fn campaign_summary_csv(result: &CampaignResult) -> String {
    let mut out = String::from("case,reps,constraint_rate,constraint_rate_enforced,mean_n0,degenerate\n");
    for case in &result.cases {
        let reps = case.reps.len();
        let mean_n0 = case.reps.iter().map(|r| r.n0 as f64).sum::<f64>() / reps.max(1) as f64;
        let degenerate: usize = case.reps.iter().map(|r| r.degenerate).sum();
        let _ = writeln!(
            out,
            "{},{reps},{},{},{},{degenerate}",
            case.case.id(),
            fmt_num(case.constraint_rate(false)),
            fmt_num(case.constraint_rate(true)),
            fmt_num(mean_n0)
        );
    }
    out
}
