//! Descriptive statistics, Ljung-Box tests and moment-validity t-tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{check_len, QcmError, Result};
use crate::io::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// With the `1/(n−1)` normalization.
    pub variance: f64,
    pub skewness: f64,
    /// Standardized fourth central moment (not excess).
    pub kurtosis: f64,
    pub max: f64,
    pub min: f64,
    /// Zero variance; skewness and kurtosis are NaN.
    pub degenerate: bool,
}

pub fn descriptive_stats(x: &[f64]) -> Result<Descriptive> {
    let n = x.len();
    if n < 4 {
        return Err(QcmError::Domain(format!("descriptive statistics need at least 4 values, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QcmError::Domain("series contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (nf - 1.0);
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let degenerate = !(m2 > 0.0);
    let (skewness, kurtosis) = if degenerate {
        (f64::NAN, f64::NAN)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    };
    Ok(Descriptive {
        n,
        mean,
        variance,
        skewness,
        kurtosis,
        max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: x.iter().copied().fold(f64::INFINITY, f64::min),
        degenerate,
    })
}

pub const DEFAULT_LB_LAGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub lags: usize,
    pub pvalue: f64,
    /// Constant series; reported with p-value 1.
    pub degenerate: bool,
}

/// Sample autocorrelations `ρ̂_1..ρ̂_lags`; `None` for a constant series.
pub fn autocorrelations(x: &[f64], lags: usize) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return None;
    }
    Some(
        (1..=lags)
            .map(|j| d[j..].iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / denom)
            .collect(),
    )
}

/// `Q = n(n+2) Σ ρ̂_j²/(n−j)` against χ²_lags.
pub fn ljung_box(x: &[f64], lags: usize) -> Result<LjungBox> {
    let n = x.len();
    if lags == 0 || 4 * lags >= n {
        return Err(QcmError::Domain(format!(
            "Ljung-Box needs 0 < lags < n/4 (lags = {lags}, n = {n})"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QcmError::Domain("series contains non-finite values".into()));
    }
    let Some(rho) = autocorrelations(x, lags) else {
        return Ok(LjungBox {
            statistic: 0.0,
            lags,
            pvalue: 1.0,
            degenerate: true,
        });
    };
    let nf = n as f64;
    let q = nf * (nf + 2.0) * rho.iter().enumerate().map(|(i, r)| r * r / (nf - (i + 1) as f64)).sum::<f64>();
    let chi = ChiSquared::new(lags as f64).map_err(|e| QcmError::Domain(e.to_string()))?;
    Ok(LjungBox {
        statistic: q,
        lags,
        pvalue: chi.sf(q),
        degenerate: false,
    })
}

/// Moment residuals of a return series against its QCMs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentResiduals {
    pub e_h: Vec<f64>,
    pub e_s: Vec<f64>,
    pub e_k: Vec<f64>,
}

impl MomentResiduals {
    pub fn new(y: &[f64], mu: &[f64], h: &[f64], s: &[f64], k: &[f64]) -> Result<Self> {
        check_len("returns and conditional means", y.len(), mu.len())?;
        check_len("returns and variances", y.len(), h.len())?;
        check_len("returns and skewness", y.len(), s.len())?;
        check_len("returns and kurtosis", y.len(), k.len())?;
        let mut out = Self {
            e_h: Vec::with_capacity(y.len()),
            e_s: Vec::with_capacity(y.len()),
            e_k: Vec::with_capacity(y.len()),
        };
        for t in 0..y.len() {
            if !(h[t] > 0.0) {
                return Err(QcmError::Domain(format!("nonpositive variance at t = {}", t + 1)));
            }
            let d = y[t] - mu[t];
            let z = d / h[t].sqrt();
            out.e_h.push(d * d - h[t]);
            out.e_s.push(z * z * z - s[t]);
            out.e_k.push(z * z * z * z - k[t]);
        }
        let all = out.e_h.iter().chain(&out.e_s).chain(&out.e_k);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(QcmError::Domain("moment residuals are not finite".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanTest {
    pub statistic: f64,
    pub pvalue: f64,
    /// Zero variance; reported with p-value 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityTests {
    pub h: MeanTest,
    pub s: MeanTest,
    pub k: MeanTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum VarianceEstimator {
    /// Bartlett-weighted long-run variance with `⌊T^{1/3}⌋` lags.
    #[default]
    NeweyWest,
    Iid,
}

pub fn newey_west_lag(n: usize) -> usize {
    // Guard against cbrt landing just below an integer.
    ((n as f64).cbrt() + 1e-9).floor() as usize
}

/// Long-run variance of `x` around its mean.
pub fn long_run_variance(x: &[f64], lags: usize) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma = |j: usize| d[j..].iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / n;
    let mut lrv = gamma(0);
    for j in 1..=lags.min(x.len() - 1) {
        lrv += 2.0 * (1.0 - j as f64 / (lags as f64 + 1.0)) * gamma(j);
    }
    lrv
}

/// Two-sided test of zero mean with Student-t reference law on `n − 1`
/// degrees of freedom.
pub fn mean_zero_test(x: &[f64], estimator: VarianceEstimator) -> Result<MeanTest> {
    let n = x.len();
    if n < 2 {
        return Err(QcmError::Domain("mean test needs at least two values".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = match estimator {
        VarianceEstimator::NeweyWest => long_run_variance(x, newey_west_lag(n)),
        VarianceEstimator::Iid => x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0),
    };
    if !(var > 0.0) {
        return Ok(MeanTest {
            statistic: 0.0,
            pvalue: 1.0,
            degenerate: true,
        });
    }
    let statistic = mean / (var / nf).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| QcmError::Domain(e.to_string()))?;
    Ok(MeanTest {
        statistic,
        pvalue: (2.0 * t.sf(statistic.abs())).min(1.0),
        degenerate: false,
    })
}

pub fn validity_ttests(
    y: &[f64],
    mu: &[f64],
    h: &[f64],
    s: &[f64],
    k: &[f64],
    estimator: VarianceEstimator,
) -> Result<ValidityTests> {
    let r = MomentResiduals::new(y, mu, h, s, k)?;
    Ok(ValidityTests {
        h: mean_zero_test(&r.e_h, estimator)?,
        s: mean_zero_test(&r.e_s, estimator)?,
        k: mean_zero_test(&r.e_k, estimator)?,
    })
}

/// Descriptive statistics of named series as CSV.
pub fn descriptive_table(rows: &[(&str, Descriptive)]) -> String {
    let mut out = String::from("series,n,mean,variance,skewness,kurtosis,max,min\n");
    for (name, d) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            d.n,
            fmt_num(d.mean),
            fmt_num(d.variance),
            fmt_num(d.skewness),
            fmt_num(d.kurtosis),
            fmt_num(d.max),
            fmt_num(d.min)
        ));
    }
    out
}

/// Descriptive statistics with Ljung-Box p-values for QCM series as CSV.
pub fn qcm_stats_table(rows: &[(&str, Descriptive, LjungBox)]) -> String {
    let mut out = String::from("series,n,mean,variance,skewness,kurtosis,max,min,lb_lags,lb_pvalue\n");
    for (name, d, lb) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{}\n",
            d.n,
            fmt_num(d.mean),
            fmt_num(d.variance),
            fmt_num(d.skewness),
            fmt_num(d.kurtosis),
            fmt_num(d.max),
            fmt_num(d.min),
            lb.lags,
            fmt_num(lb.pvalue)
        ));
    }
    out
}

/// Validity-test p-values as CSV.
pub fn validity_table(rows: &[(&str, ValidityTests)]) -> String {
    let mut out = String::from("series,t_h,p_h,t_s,p_s,t_k,p_k\n");
    for (name, v) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            fmt_num(v.h.statistic),
            fmt_num(v.h.pvalue),
            fmt_num(v.s.statistic),
            fmt_num(v.s.pvalue),
            fmt_num(v.k.statistic),
            fmt_num(v.k.pvalue)
        ));
    }
    out
}
