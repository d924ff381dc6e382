//! News impact curves of the quantiled moments.
//!
//! A threshold autoregression supplies the conditional mean and the shocks.
//! Each moment series is then fitted as `m_t = θ m_{t−1} + g(driver_{t−1})`,
//! nonparametrically with Robinson's partially linear estimator and
//! parametrically with the usual polynomial news impact forms.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dgp::sorted_quantile;
use crate::error::{check_len, QcmError, Result};
use crate::io::fmt_num;
use crate::linalg::{rows_to_matrix, LeastSquares};

pub const GRID_POINTS: usize = 201;
pub const CV_CANDIDATES: usize = 30;
pub const CV_SPAN: (f64, f64) = (0.1, 3.0);
pub const MIN_CV_OBS: usize = 50;
pub const MIN_ROBINSON_OBS: usize = 100;
/// Grid points with kernel mass below `SUPPORT_FLOOR · n` are unsupported.
pub const SUPPORT_FLOOR: f64 = 1e-8;
const PRUNE_LEVEL: f64 = 0.05;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

// ---------------------------------------------------------------- TAR

/// Coefficients of one regime: intercept then the `p` autoregressive slopes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeFit {
    pub coef: Vec<f64>,
    /// False where pruning dropped the coefficient (it is then exactly 0).
    pub kept: Vec<bool>,
    pub nobs: usize,
}

/// Two-regime TAR(p) with threshold 0 on `y_{t−1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TarFit {
    pub order: usize,
    /// Regime `y_{t−1} ≤ 0`.
    pub lower: RegimeFit,
    /// Regime `y_{t−1} > 0`.
    pub upper: RegimeFit,
    /// Index of the first fitted observation; equals `order`.
    pub start: usize,
    /// `μ̂_t` for `t ≥ start`.
    pub fitted: Vec<f64>,
    /// `ε̂_t = y_t − μ̂_t` for `t ≥ start`.
    pub residuals: Vec<f64>,
}

impl TarFit {
    /// Shocks aligned with the input series, NaN before `start`.
    pub fn shocks(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.start];
        out.extend_from_slice(&self.residuals);
        out
    }

    /// Conditional mean aligned with the input series, NaN before `start`.
    pub fn mean_path(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.start];
        out.extend_from_slice(&self.fitted);
        out
    }
}

fn tar_row(y: &[f64], t: usize, p: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(p + 1);
    row.push(1.0);
    row.extend((1..=p).map(|l| y[t - l]));
    row
}

fn fit_regime(rows: &[Vec<f64>], target: &[f64], prune: bool) -> Result<RegimeFit> {
    let k = rows[0].len();
    let singular = |condition: f64| QcmError::SingularDesign {
        condition,
        levels: Vec::new(),
    };
    let ls = LeastSquares::from_rows(rows).map_err(singular)?;
    let coef = ls.solve(target);
    let mut fit = RegimeFit {
        coef,
        kept: vec![true; k],
        nobs: rows.len(),
    };
    if !prune {
        return Ok(fit);
    }
    let n = rows.len();
    let df = (n - k) as f64;
    let ssr: f64 = rows
        .iter()
        .zip(target)
        .map(|(r, y)| (y - r.iter().zip(&fit.coef).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    let sigma2 = ssr / df;
    let crit = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| QcmError::Estimation(e.to_string()))?
        .inverse_cdf(1.0 - PRUNE_LEVEL / 2.0);
    let inv = ls.xtx_inv();
    for j in 0..k {
        let se = (sigma2 * inv[(j, j)]).sqrt();
        // A perfect fit has se = 0 and every coefficient is significant.
        fit.kept[j] = !(fit.coef[j].abs() < crit * se);
    }
    if fit.kept.iter().all(|&b| b) {
        return Ok(fit);
    }
    let cols: Vec<usize> = (0..k).filter(|&j| fit.kept[j]).collect();
    let mut coef = vec![0.0; k];
    if !cols.is_empty() {
        let sub: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
        let b = LeastSquares::from_rows(&sub).map_err(singular)?.solve(target);
        for (&j, v) in cols.iter().zip(b) {
            coef[j] = v;
        }
    }
    fit.coef = coef;
    Ok(fit)
}

/// Least-squares TAR(p) with regimes split on the sign of `y_{t−1}`.
/// With `prune`, one pass drops coefficients whose two-sided i.i.d. t test
/// is insignificant at 5% and refits the rest.
pub fn fit_tar(y: &[f64], p: usize, prune: bool) -> Result<TarFit> {
    if p == 0 {
        return Err(QcmError::InvalidParameter("TAR order must be at least 1".into()));
    }
    if y.len() <= 10 * p {
        return Err(QcmError::Domain(format!(
            "TAR({p}) needs more than {} observations, got {}",
            10 * p,
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(QcmError::Domain("series contains non-finite values".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(QcmError::Degenerate("constant series has no TAR fit".into()));
    }
    let (mut lo_rows, mut lo_y, mut hi_rows, mut hi_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in p..y.len() {
        if y[t - 1] <= 0.0 {
            lo_rows.push(tar_row(y, t, p));
            lo_y.push(y[t]);
        } else {
            hi_rows.push(tar_row(y, t, p));
            hi_y.push(y[t]);
        }
    }
    for (name, n) in [("lower", lo_rows.len()), ("upper", hi_rows.len())] {
        if n < p + 2 {
            return Err(QcmError::Estimation(format!(
                "TAR {name} regime has {n} observations, at least {} needed",
                p + 2
            )));
        }
    }
    let lower = fit_regime(&lo_rows, &lo_y, prune)?;
    let upper = fit_regime(&hi_rows, &hi_y, prune)?;
    let mut fitted = Vec::with_capacity(y.len() - p);
    let mut residuals = Vec::with_capacity(y.len() - p);
    for t in p..y.len() {
        let reg = if y[t - 1] <= 0.0 { &lower } else { &upper };
        let mu: f64 = tar_row(y, t, p).iter().zip(&reg.coef).map(|(a, b)| a * b).sum();
        fitted.push(mu);
        residuals.push(y[t] - mu);
    }
    Ok(TarFit {
        order: p,
        lower,
        upper,
        start: p,
        fitted,
        residuals,
    })
}

// ---------------------------------------------------------------- kernels

#[inline]
fn kernel_b(u: f64, b: f64) -> f64 {
    let z = u / b;
    (-0.5 * z * z).exp() * INV_SQRT_2PI / b
}

/// A Nadaraya-Watson curve on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub grid: Vec<f64>,
    /// NaN where unsupported.
    pub values: Vec<f64>,
    pub supported: Vec<bool>,
}

fn nw_point(x: &[f64], target: &[f64], b: f64, at: f64) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(target) {
        let w = kernel_b(at - xi, b);
        num += w * yi;
        den += w;
    }
    (num, den)
}

/// `Σ K_b(g − x_i) y_i / Σ K_b(g − x_i)` at each grid point, with a Gaussian
/// kernel. Points with too little kernel mass come back unsupported.
pub fn nw_regress(x: &[f64], target: &[f64], bandwidth: f64, grid: &[f64]) -> Result<Curve> {
    check_len("driver and target", x.len(), target.len())?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(QcmError::InvalidParameter(format!("bandwidth {bandwidth} must be positive")));
    }
    if x.is_empty() {
        return Err(QcmError::Domain("kernel regression needs data".into()));
    }
    let floor = SUPPORT_FLOOR * x.len() as f64;
    let (values, supported) = grid
        .par_iter()
        .map(|&g| {
            let (num, den) = nw_point(x, target, bandwidth, g);
            if den >= floor && den > 0.0 {
                (num / den, true)
            } else {
                (f64::NAN, false)
            }
        })
        .unzip();
    Ok(Curve {
        grid: grid.to_vec(),
        values,
        supported,
    })
}

/// `0.9 · min(sd, IQR/1.34) · n^{−1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let s = sorted(x);
    let iqr = sorted_quantile(&s, 0.75) - sorted_quantile(&s, 0.25);
    let sd = sample_sd(x);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// The 30 log-spaced candidates over `[0.1, 3] ×` the Silverman bandwidth.
pub fn bandwidth_candidates(x: &[f64]) -> Vec<f64> {
    let r = silverman_bandwidth(x);
    let (lo, hi) = CV_SPAN;
    let step = (hi / lo).ln() / (CV_CANDIDATES - 1) as f64;
    (0..CV_CANDIDATES).map(|i| r * lo * (step * i as f64).exp()).collect()
}

/// Mean leave-one-out squared error of the NW fit. A point whose leave-one-out
/// kernel mass falls under the support floor is predicted by the target mean.
pub fn loo_score(x: &[f64], target: &[f64], b: f64) -> f64 {
    let n = x.len();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = kernel_b(x[i] - x[j], b);
            num[i] += w * target[j];
            den[i] += w;
            num[j] += w * target[i];
            den[j] += w;
        }
    }
    let mean = target.iter().sum::<f64>() / n as f64;
    let floor = SUPPORT_FLOOR * (n - 1) as f64;
    let sse: f64 = (0..n)
        .map(|i| {
            let pred = if den[i] >= floor && den[i] > 0.0 { num[i] / den[i] } else { mean };
            (target[i] - pred).powi(2)
        })
        .sum();
    sse / n as f64
}

/// Leave-one-out cross-validated bandwidth over [`bandwidth_candidates`].
/// Ties go to the smaller candidate.
pub fn cv_bandwidth(x: &[f64], target: &[f64]) -> Result<f64> {
    check_len("driver and target", x.len(), target.len())?;
    if x.len() < MIN_CV_OBS {
        return Err(QcmError::InvalidParameter(format!(
            "cross-validation needs at least {MIN_CV_OBS} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(QcmError::Domain("cross-validation data must be finite".into()));
    }
    let cands = bandwidth_candidates(x);
    if !(cands[0] > 0.0 && cands[0].is_finite()) {
        return Err(QcmError::Degenerate("driver has no spread".into()));
    }
    let scores: Vec<f64> = cands.par_iter().map(|&b| loo_score(x, target, b)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(cands[best])
}

/// `GRID_POINTS` equally spaced points from the 1st to the 99th percentile.
pub fn evaluation_grid(driver: &[f64]) -> Vec<f64> {
    let s = sorted(driver);
    let lo = sorted_quantile(&s, 0.01);
    let hi = sorted_quantile(&s, 0.99);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

// ---------------------------------------------------------------- Robinson

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    /// `ε̂_{t−1}`, used for the variance.
    Shock,
    /// `ϱ̂_{t−1} = ε̂_{t−1}/√ĥ_{t−1}`, used for skewness and kurtosis.
    RescaledShock,
}

/// Aligned triples `(m_t, m_{t−1}, driver_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct NicData {
    pub current: Vec<f64>,
    pub lagged: Vec<f64>,
    pub driver: Vec<f64>,
    pub kind: DriverKind,
}

impl NicData {
    /// Pairs `response[t]` with `response[t−1]` and `driver[t−1]`, both
    /// indexed like the response. Triples with any non-finite entry are
    /// dropped.
    pub fn align(response: &[f64], driver: &[f64], kind: DriverKind) -> Result<Self> {
        check_len("response and driver", response.len(), driver.len())?;
        let mut d = NicData {
            current: Vec::new(),
            lagged: Vec::new(),
            driver: Vec::new(),
            kind,
        };
        for t in 1..response.len() {
            let (c, l, x) = (response[t], response[t - 1], driver[t - 1]);
            if c.is_finite() && l.is_finite() && x.is_finite() {
                d.current.push(c);
                d.lagged.push(l);
                d.driver.push(x);
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }
}

/// `ε̂_t / √ĥ_t`; NaN where either is missing or `ĥ_t ≤ 0`.
pub fn rescaled_shocks(shocks: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_len("shocks and variance", shocks.len(), h.len())?;
    Ok(shocks
        .iter()
        .zip(h)
        .map(|(&e, &v)| if v > 0.0 { e / v.sqrt() } else { f64::NAN })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NicEstimate {
    pub theta: f64,
    pub curve: Curve,
    /// `(b₁, b₂, b₃)`: lagged response, current response, partial residual.
    pub bandwidths: [f64; 3],
    pub kind: DriverKind,
    pub nobs: usize,
}

/// Robinson's estimator: `θ̂` from the residuals of the kernel regressions of
/// `m_{t−1}` and `m_t` on the driver, then `ĝ` as the kernel regression of
/// `m_t − θ̂ m_{t−1}` on the driver.
pub fn robinson_fit(data: &NicData) -> Result<NicEstimate> {
    let n = data.len();
    check_len("current and lagged response", n, data.lagged.len())?;
    check_len("response and driver", n, data.driver.len())?;
    if n < MIN_ROBINSON_OBS {
        return Err(QcmError::Domain(format!(
            "partially linear fit needs at least {MIN_ROBINSON_OBS} points, got {n}"
        )));
    }
    if data.current.iter().all(|&v| v == data.current[0]) || data.lagged.iter().all(|&v| v == data.lagged[0]) {
        return Err(QcmError::Degenerate("constant response".into()));
    }
    let x = &data.driver;
    let b1 = cv_bandwidth(x, &data.lagged)?;
    let b2 = cv_bandwidth(x, &data.current)?;
    // Every data point carries its own kernel weight, so no guard is needed here.
    let phi = |target: &[f64], b: f64| -> Vec<f64> {
        x.par_iter()
            .map(|&xi| {
                let (num, den) = nw_point(x, target, b, xi);
                num / den
            })
            .collect()
    };
    let phi1 = phi(&data.lagged, b1);
    let phi2 = phi(&data.current, b2);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        let u = data.lagged[i] - phi1[i];
        sxy += u * (data.current[i] - phi2[i]);
        sxx += u * u;
    }
    let scale: f64 = data.lagged.iter().map(|v| v * v).sum();
    if !(sxx > 1e-14 * scale) {
        return Err(QcmError::Degenerate(
            "lagged response is explained by the driver; theta is not identified".into(),
        ));
    }
    let theta = sxy / sxx;
    let partial: Vec<f64> = data.current.iter().zip(&data.lagged).map(|(c, l)| c - theta * l).collect();
    let b3 = cv_bandwidth(x, &partial)?;
    let curve = nw_regress(x, &partial, b3, &evaluation_grid(x))?;
    Ok(NicEstimate {
        theta,
        curve,
        bandwidths: [b1, b2, b3],
        kind: data.kind,
        nobs: n,
    })
}

// ---------------------------------------------------------------- parametric

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NicForm {
    /// `ϑ₀ + ϑ₁x²`.
    #[serde(rename = "quadratic")]
    Quadratic,
    /// `ϑ₀ + ϑ₁x² + ϑ₂x²I(x<0)`.
    #[serde(rename = "leverage")]
    Leverage,
    /// `ϑ₀ + ϑ₁x³`.
    #[serde(rename = "cubic")]
    Cubic,
    /// `ϑ₀ + ϑ₁x⁴`.
    #[serde(rename = "quartic")]
    Quartic,
}

impl NicForm {
    pub const ALL: [NicForm; 4] = [NicForm::Quadratic, NicForm::Leverage, NicForm::Cubic, NicForm::Quartic];

    pub fn name(self) -> &'static str {
        match self {
            NicForm::Quadratic => "quadratic",
            NicForm::Leverage => "leverage",
            NicForm::Cubic => "cubic",
            NicForm::Quartic => "quartic",
        }
    }

    /// The non-constant terms of `g(x)`.
    pub fn terms(self, x: f64) -> Vec<f64> {
        match self {
            NicForm::Quadratic => vec![x * x],
            NicForm::Leverage => vec![x * x, if x < 0.0 { x * x } else { 0.0 }],
            NicForm::Cubic => vec![x * x * x],
            NicForm::Quartic => vec![x * x * x * x],
        }
    }
}

impl fmt::Display for NicForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NicForm {
    type Err = QcmError;

    fn from_str(s: &str) -> Result<Self> {
        NicForm::ALL
            .into_iter()
            .find(|f| f.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| QcmError::Config(format!("unknown NIC form '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametricNicFit {
    pub form: NicForm,
    pub theta: f64,
    /// `ϑ₀, ϑ₁, …` in the order of the form.
    pub vartheta: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub nobs: usize,
}

impl ParametricNicFit {
    pub fn g(&self, x: f64) -> f64 {
        self.vartheta[0]
            + self
                .form
                .terms(x)
                .iter()
                .zip(&self.vartheta[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

/// Least squares of `m_t` on `(1, m_{t−1}, form terms of driver_{t−1})`.
/// Adjusted R² counts the `k` non-constant regressors.
pub fn fit_parametric_nic(form: NicForm, data: &NicData) -> Result<ParametricNicFit> {
    let n = data.len();
    check_len("current and lagged response", n, data.lagged.len())?;
    check_len("response and driver", n, data.driver.len())?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![1.0, data.lagged[i]];
            r.extend(form.terms(data.driver[i]));
            r
        })
        .collect();
    let k = rows.first().map_or(0, |r| r.len() - 1);
    if n <= k + 1 {
        return Err(QcmError::Domain(format!("{n} observations cannot fit {} parameters", k + 1)));
    }
    let ls = LeastSquares::new(&rows_to_matrix(&rows)).map_err(|condition| QcmError::SingularDesign {
        condition,
        levels: Vec::new(),
    })?;
    let beta = ls.solve(&data.current);
    let mean = data.current.iter().sum::<f64>() / n as f64;
    let sst: f64 = data.current.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(QcmError::Degenerate("constant response".into()));
    }
    let ssr: f64 = rows
        .iter()
        .zip(&data.current)
        .map(|(r, y)| (y - r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    let r2 = 1.0 - ssr / sst;
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - k - 1) as f64;
    let mut vartheta = vec![beta[0]];
    vartheta.extend_from_slice(&beta[2..]);
    Ok(ParametricNicFit {
        form,
        theta: beta[1],
        vartheta,
        r2,
        adj_r2,
        nobs: n,
    })
}

// ---------------------------------------------------------------- study

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentKind {
    H,
    S,
    K,
}

impl MomentKind {
    pub const ALL: [MomentKind; 3] = [MomentKind::H, MomentKind::S, MomentKind::K];

    pub fn name(self) -> &'static str {
        match self {
            MomentKind::H => "h",
            MomentKind::S => "s",
            MomentKind::K => "k",
        }
    }

    pub fn driver(self) -> DriverKind {
        match self {
            MomentKind::H => DriverKind::Shock,
            _ => DriverKind::RescaledShock,
        }
    }

    /// The parametric forms compared against `ĝ` for this moment.
    pub fn forms(self) -> &'static [NicForm] {
        match self {
            MomentKind::H => &[NicForm::Quadratic, NicForm::Leverage],
            MomentKind::S => &[NicForm::Cubic],
            MomentKind::K => &[NicForm::Quartic],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentNic {
    pub moment: MomentKind,
    pub estimate: NicEstimate,
    pub parametric: Vec<ParametricNicFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NicStudy {
    pub tar: TarFit,
    pub moments: Vec<MomentNic>,
}

/// TAR mean, shocks and rescaled shocks, then the nonparametric and
/// parametric news impact fits for each of `h`, `s`, `k`.
pub fn nic_study(y: &[f64], h: &[f64], s: &[f64], k: &[f64], order: usize, prune: bool) -> Result<NicStudy> {
    check_len("returns and h", y.len(), h.len())?;
    check_len("returns and s", y.len(), s.len())?;
    check_len("returns and k", y.len(), k.len())?;
    let tar = fit_tar(y, order, prune)?;
    let shocks = tar.shocks();
    let rescaled = rescaled_shocks(&shocks, h)?;
    let moments = MomentKind::ALL
        .iter()
        .map(|&m| {
            let (series, driver) = match m {
                MomentKind::H => (h, &shocks),
                MomentKind::S => (s, &rescaled),
                MomentKind::K => (k, &rescaled),
            };
            let data = NicData::align(series, driver, m.driver())?;
            let estimate = robinson_fit(&data)?;
            let parametric = m
                .forms()
                .iter()
                .map(|&f| fit_parametric_nic(f, &data))
                .collect::<Result<Vec<_>>>()?;
            Ok(MomentNic {
                moment: m,
                estimate,
                parametric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NicStudy { tar, moments })
}

/// Grid, `ĝ`, support flag and one overlay column per parametric form.
pub fn curve_table(m: &MomentNic) -> String {
    let mut out = String::from("x,g_hat,supported");
    for p in &m.parametric {
        out.push_str(&format!(",g_{}", p.form));
    }
    out.push('\n');
    let c = &m.estimate.curve;
    for i in 0..c.grid.len() {
        out.push_str(&format!(
            "{},{},{}",
            fmt_num(c.grid[i]),
            fmt_num(c.values[i]),
            u8::from(c.supported[i])
        ));
        for p in &m.parametric {
            out.push(',');
            out.push_str(&fmt_num(p.g(c.grid[i])));
        }
        out.push('\n');
    }
    out
}

/// `θ̂` and bandwidths of the nonparametric fits, plus every parametric fit.
pub fn estimates_table(study: &NicStudy) -> String {
    let mut out = String::from("moment,model,driver,n,theta,b1,b2,b3,vartheta0,vartheta1,vartheta2,r2,adj_r2\n");
    let driver_name = |d: DriverKind| match d {
        DriverKind::Shock => "shock",
        DriverKind::RescaledShock => "rescaled-shock",
    };
    let nan = fmt_num(f64::NAN);
    for m in &study.moments {
        let e = &m.estimate;
        out.push_str(&format!(
            "{},robinson,{},{},{},{},{},{},{nan},{nan},{nan},{nan},{nan}\n",
            m.moment.name(),
            driver_name(e.kind),
            e.nobs,
            fmt_num(e.theta),
            fmt_num(e.bandwidths[0]),
            fmt_num(e.bandwidths[1]),
            fmt_num(e.bandwidths[2]),
        ));
        for p in &m.parametric {
            let v = |i: usize| p.vartheta.get(i).map_or(nan.clone(), |&x| fmt_num(x));
            out.push_str(&format!(
                "{},{},{},{},{},{nan},{nan},{nan},{},{},{},{},{}\n",
                m.moment.name(),
                p.form,
                driver_name(e.kind),
                p.nobs,
                fmt_num(p.theta),
                v(0),
                v(1),
                v(2),
                fmt_num(p.r2),
                fmt_num(p.adj_r2)
            ));
        }
    }
    out
}

/// Adjusted R² per moment and parametric form.
pub fn adj_r2_table(study: &NicStudy) -> String {
    let mut out = String::from("moment,form,adj_r2\n");
    for m in &study.moments {
        for p in &m.parametric {
            out.push_str(&format!("{},{},{}\n", m.moment.name(), p.form, fmt_num(p.adj_r2)));
        }
    }
    out
}
