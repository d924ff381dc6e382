//! Simulation designs with known conditional moments and quantiles, error
//! injection into true quantiles, and Δ precision metrics.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{check_len, QcmError, Result};
use crate::normal;
use crate::pipeline::{self, ConstraintPolicy, PipelineConfig, QcmSeries};
use crate::rng::{job_rng, tag};

/// Pre-sample points discarded before the kept sample.
pub const BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GarchParams {
    fn default() -> Self {
        Self {
            omega: 0.1,
            alpha: 0.1,
            beta: 0.8,
        }
    }
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(QcmError::Config("GARCH needs ω > 0 and α, β ≥ 0".into()));
        }
        if !(self.alpha + self.beta < 1.0) {
            return Err(QcmError::Config(format!(
                "GARCH is not covariance stationary: α + β = {}",
                self.alpha + self.beta
            )));
        }
        Ok(())
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Innovation {
    Normal,
    /// Standardized Student-t with degrees of freedom drawn from U[5, 20]
    /// afresh at every timepoint.
    StudentT,
    /// `η ≡ 0`; the variance recursion runs to its fixed point.
    Zero,
}

pub const NU_RANGE: (f64, f64) = (5.0, 20.0);

/// Standardized-t quantile `√((ν−2)/ν)·t_ν⁻¹(α)`.
pub fn standardized_t_quantile(alpha: f64, nu: f64) -> f64 {
    if alpha == 0.5 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, nu).expect("ν > 2");
    ((nu - 2.0) / nu).sqrt() * t.inverse_cdf(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchTruth {
    pub params: GarchParams,
    pub innovation: Innovation,
    pub y: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// Per-timepoint degrees of freedom for Student-t innovations.
    pub nu: Option<Vec<f64>>,
}

impl GarchTruth {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn kurtosis(&self, t: usize) -> f64 {
        match &self.nu {
            Some(nu) => 6.0 / (nu[t] - 4.0) + 3.0,
            None => 3.0,
        }
    }

    pub fn quantile(&self, t: usize, alpha: f64) -> f64 {
        let sd = self.sigma2[t].sqrt();
        match &self.nu {
            Some(nu) => sd * standardized_t_quantile(alpha, nu[t]),
            None => sd * normal::quantile_unchecked(alpha),
        }
    }
}

pub fn simulate_garch<R: Rng + ?Sized>(
    len: usize,
    params: GarchParams,
    innovation: Innovation,
    rng: &mut R,
) -> Result<GarchTruth> {
    params.validate()?;
    let nu_law = Uniform::new_inclusive(NU_RANGE.0, NU_RANGE.1).expect("valid range");
    let mut sigma2_prev = params.unconditional_variance();
    let mut y_prev = 0.0;
    let mut y = Vec::with_capacity(len);
    let mut sigma2 = Vec::with_capacity(len);
    let mut nus = Vec::with_capacity(len);
    for i in 0..BURN_IN + len {
        let s2 = params.omega + params.alpha * y_prev * y_prev + params.beta * sigma2_prev;
        let (eta, nu) = match innovation {
            Innovation::Normal => (StandardNormal.sample(rng), f64::NAN),
            Innovation::StudentT => {
                let nu = nu_law.sample(rng);
                let t: f64 = StudentT::new(nu).expect("ν > 0").sample(rng);
                (t * ((nu - 2.0) / nu).sqrt(), nu)
            }
            Innovation::Zero => (0.0, f64::NAN),
        };
        let yt = eta * s2.sqrt();
        if i >= BURN_IN {
            y.push(yt);
            sigma2.push(s2);
            nus.push(nu);
        }
        y_prev = yt;
        sigma2_prev = s2;
    }
    Ok(GarchTruth {
        params,
        innovation,
        y,
        sigma2,
        nu: (innovation == Innovation::StudentT).then_some(nus),
    })
}

/// A two-component normal mixture `λ₁N(τ₁, v₁) + λ₂N(τ₂, v₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub lambda1: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub var1: f64,
    pub var2: f64,
}

impl Mixture {
    pub fn lambda2(&self) -> f64 {
        1.0 - self.lambda1
    }

    pub fn cdf(&self, q: f64) -> f64 {
        self.lambda1 * normal::cdf((q - self.tau1) / self.var1.sqrt())
            + self.lambda2() * normal::cdf((q - self.tau2) / self.var2.sqrt())
    }

    pub fn pdf(&self, q: f64) -> f64 {
        let (s1, s2) = (self.var1.sqrt(), self.var2.sqrt());
        self.lambda1 * normal::pdf((q - self.tau1) / s1) / s1
            + self.lambda2() * normal::pdf((q - self.tau2) / s2) / s2
    }

    pub fn mean(&self) -> f64 {
        self.lambda1 * self.tau1 + self.lambda2() * self.tau2
    }

    /// Variance, skewness and (non-excess) kurtosis.
    pub fn moments(&self) -> (f64, f64, f64) {
        let m = self.mean();
        let central = |w: f64, tau: f64, v: f64| {
            let d = tau - m;
            (
                w * (d * d + v),
                w * (d.powi(3) + 3.0 * d * v),
                w * (d.powi(4) + 6.0 * d * d * v + 3.0 * v * v),
            )
        };
        let a = central(self.lambda1, self.tau1, self.var1);
        let b = central(self.lambda2(), self.tau2, self.var2);
        let h = a.0 + b.0;
        (h, (a.1 + b.1) / h.powf(1.5), (a.2 + b.2) / (h * h))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        if rng.random::<f64>() < self.lambda1 {
            self.tau1 + self.var1.sqrt() * z
        } else {
            self.tau2 + self.var2.sqrt() * z
        }
    }
}

/// Solves `F(q) = α` for the mixture CDF `F` to `|F(q) − α| ≤ 1e-10`.
pub fn mn_quantile(alpha: f64, mix: &Mixture) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QcmError::Domain(format!("quantile level {alpha} is outside (0, 1)")));
    }
    let spread = mix.var1.sqrt().max(mix.var2.sqrt());
    let mut lo = mix.tau1.min(mix.tau2) - 40.0 * spread;
    let mut hi = mix.tau1.max(mix.tau2) + 40.0 * spread;
    // Start from the normal with matching mean and variance.
    let (h, _, _) = mix.moments();
    let mut q = mix.mean() + h.sqrt() * normal::quantile_unchecked(alpha);
    for _ in 0..200 {
        let f = mix.cdf(q) - alpha;
        if f.abs() <= 1e-10 {
            return Ok(q);
        }
        if f < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let next = q - f / mix.pdf(q);
        q = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * q.abs().max(1.0) {
            break;
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnGarchParams {
    pub lambda1: f64,
    pub tau1: f64,
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub c10: f64,
    pub c20: f64,
    pub c11: f64,
    pub c21: f64,
    pub c12: f64,
    pub c22: f64,
}

impl Default for MnGarchParams {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            tau1: 0.4,
            a0: 0.5,
            a1: 0.4,
            b1: -0.3,
            c10: 0.1,
            c20: 0.3,
            c11: 0.05,
            c21: 0.1,
            c12: 0.85,
            c22: 0.8,
        }
    }
}

impl MnGarchParams {
    /// `τ₂ = −(λ₁/λ₂)τ₁`, which centers the mixture at zero.
    pub fn tau2(&self) -> f64 {
        -(self.lambda1 / (1.0 - self.lambda1)) * self.tau1
    }

    /// Transition matrix of the expected component variances.
    fn variance_transition(&self) -> [[f64; 2]; 2] {
        let l2 = 1.0 - self.lambda1;
        [
            [self.c11 * self.lambda1 + self.c12, self.c11 * l2],
            [self.c21 * self.lambda1, self.c21 * l2 + self.c22],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1 < 1.0) {
            return Err(QcmError::Config(format!(
                "mixture weight λ₁ = {} is outside (0, 1)",
                self.lambda1
            )));
        }
        let nonneg = [self.c11, self.c21, self.c12, self.c22];
        if !(self.c10 > 0.0 && self.c20 > 0.0) || nonneg.iter().any(|c| !(*c >= 0.0)) {
            return Err(QcmError::Config("component GARCH needs c₀ > 0 and c₁, c₂ ≥ 0".into()));
        }
        let m = self.variance_transition();
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let radius = 0.5 * (tr.abs() + disc);
        if !(radius < 1.0) {
            return Err(QcmError::Config(format!(
                "component GARCH recursions are not stationary (spectral radius {radius})"
            )));
        }
        Ok(())
    }

    /// Long-run expected component variances.
    fn stationary_variances(&self) -> (f64, f64) {
        let m = self.variance_transition();
        let tau2 = self.tau2();
        let shift = self.lambda1 * self.tau1 * self.tau1 + (1.0 - self.lambda1) * tau2 * tau2;
        let r = [self.c10 + self.c11 * shift, self.c20 + self.c21 * shift];
        let a = [[1.0 - m[0][0], -m[0][1]], [-m[1][0], 1.0 - m[1][1]]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        (
            (r[0] * a[1][1] - a[0][1] * r[1]) / det,
            (a[0][0] * r[1] - a[1][0] * r[0]) / det,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnGarchTruth {
    pub params: MnGarchParams,
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
    pub sigma2_1: Vec<f64>,
    pub sigma2_2: Vec<f64>,
}

impl MnGarchTruth {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mixture(&self, t: usize) -> Mixture {
        Mixture {
            lambda1: self.params.lambda1,
            tau1: self.params.tau1,
            tau2: self.params.tau2(),
            var1: self.sigma2_1[t],
            var2: self.sigma2_2[t],
        }
    }

    pub fn quantile(&self, t: usize, alpha: f64) -> f64 {
        self.mu[t] + mn_quantile(alpha, &self.mixture(t)).expect("level in (0, 1)")
    }
}

pub fn simulate_mn_garch<R: Rng + ?Sized>(
    len: usize,
    params: MnGarchParams,
    rng: &mut R,
) -> Result<MnGarchTruth> {
    params.validate()?;
    let (mut v1, mut v2) = params.stationary_variances();
    let tau2 = params.tau2();
    let mut eps_prev = 0.0;
    let mut y_prev = params.a0 / (1.0 - params.a1);
    let mut out = MnGarchTruth {
        params,
        y: Vec::with_capacity(len),
        eps: Vec::with_capacity(len),
        mu: Vec::with_capacity(len),
        h: Vec::with_capacity(len),
        s: Vec::with_capacity(len),
        k: Vec::with_capacity(len),
        sigma2_1: Vec::with_capacity(len),
        sigma2_2: Vec::with_capacity(len),
    };
    for i in 0..BURN_IN + len {
        v1 = params.c10 + params.c11 * eps_prev * eps_prev + params.c12 * v1;
        v2 = params.c20 + params.c21 * eps_prev * eps_prev + params.c22 * v2;
        let mix = Mixture {
            lambda1: params.lambda1,
            tau1: params.tau1,
            tau2,
            var1: v1,
            var2: v2,
        };
        let mu = params.a0 + params.a1 * y_prev + params.b1 * eps_prev;
        let eps = mix.sample(rng);
        let y = mu + eps;
        if i >= BURN_IN {
            let (h, s, k) = mix.moments();
            out.y.push(y);
            out.eps.push(eps);
            out.mu.push(mu);
            out.h.push(h);
            out.s.push(s);
            out.k.push(k);
            out.sigma2_1.push(v1);
            out.sigma2_2.push(v2);
        }
        y_prev = y;
        eps_prev = eps;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    GarchNormal,
    GarchT,
    ArmaMnGarch,
}

impl DgpKind {
    pub const ALL: [DgpKind; 3] = [DgpKind::GarchNormal, DgpKind::GarchT, DgpKind::ArmaMnGarch];

    pub fn name(self) -> &'static str {
        match self {
            DgpKind::GarchNormal => "garch-normal",
            DgpKind::GarchT => "garch-t",
            DgpKind::ArmaMnGarch => "arma-mn-garch",
        }
    }

    fn index(self) -> u64 {
        match self {
            DgpKind::GarchNormal => 0,
            DgpKind::GarchT => 1,
            DgpKind::ArmaMnGarch => 2,
        }
    }
}

impl std::fmt::Display for DgpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DgpKind {
    type Err = QcmError;

    fn from_str(s: &str) -> Result<Self> {
        DgpKind::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| QcmError::Config(format!("unknown DGP '{s}'")))
    }
}

/// A simulated sample together with its true conditional law.
#[derive(Debug, Clone, PartialEq)]
pub enum SimTruth {
    Garch(GarchTruth),
    MnGarch(MnGarchTruth),
}

impl SimTruth {
    pub fn simulate<R: Rng + ?Sized>(kind: DgpKind, len: usize, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            DgpKind::GarchNormal => {
                SimTruth::Garch(simulate_garch(len, GarchParams::default(), Innovation::Normal, rng)?)
            }
            DgpKind::GarchT => {
                SimTruth::Garch(simulate_garch(len, GarchParams::default(), Innovation::StudentT, rng)?)
            }
            DgpKind::ArmaMnGarch => SimTruth::MnGarch(simulate_mn_garch(len, MnGarchParams::default(), rng)?),
        })
    }

    pub fn y(&self) -> &[f64] {
        match self {
            SimTruth::Garch(g) => &g.y,
            SimTruth::MnGarch(m) => &m.y,
        }
    }

    pub fn len(&self) -> usize {
        self.y().len()
    }

    pub fn is_empty(&self) -> bool {
        self.y().is_empty()
    }

    pub fn mu(&self) -> Vec<f64> {
        match self {
            SimTruth::Garch(g) => vec![0.0; g.len()],
            SimTruth::MnGarch(m) => m.mu.clone(),
        }
    }

    pub fn h(&self) -> Vec<f64> {
        match self {
            SimTruth::Garch(g) => g.sigma2.clone(),
            SimTruth::MnGarch(m) => m.h.clone(),
        }
    }

    pub fn s(&self) -> Vec<f64> {
        match self {
            SimTruth::Garch(g) => vec![0.0; g.len()],
            SimTruth::MnGarch(m) => m.s.clone(),
        }
    }

    pub fn k(&self) -> Vec<f64> {
        match self {
            SimTruth::Garch(g) => (0..g.len()).map(|t| g.kurtosis(t)).collect(),
            SimTruth::MnGarch(m) => m.k.clone(),
        }
    }

    pub fn quantile(&self, t: usize, alpha: f64) -> f64 {
        match self {
            SimTruth::Garch(g) => g.quantile(t, alpha),
            SimTruth::MnGarch(m) => m.quantile(t, alpha),
        }
    }

    /// True quantile paths, one per level.
    pub fn quantile_paths(&self, levels: &[f64]) -> Vec<Vec<f64>> {
        levels
            .iter()
            .map(|&a| (0..self.len()).map(|t| self.quantile(t, a)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCase {
    /// True quantiles.
    NoError,
    /// True quantiles plus zero-mean noise.
    ZeroMean,
    /// True quantiles plus biased noise.
    Biased,
    /// CAViaR estimates on the simulated series.
    Caviar,
}

impl ErrorCase {
    pub const ALL: [ErrorCase; 4] = [ErrorCase::NoError, ErrorCase::ZeroMean, ErrorCase::Biased, ErrorCase::Caviar];

    pub fn id(self) -> u8 {
        match self {
            ErrorCase::NoError => 1,
            ErrorCase::ZeroMean => 2,
            ErrorCase::Biased => 3,
            ErrorCase::Caviar => 4,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        ErrorCase::ALL
            .into_iter()
            .find(|c| c.id() == id)
            .ok_or_else(|| QcmError::Config(format!("error case must be 1, 2, 3 or 4, got {id}")))
    }
}

/// Base variance of the injected noise.
pub const NOISE_SIGMA2: f64 = 0.2;

/// `σ²(α) = 0.5σ² + |α − 0.5|σ²`.
pub fn noise_variance(alpha: f64) -> f64 {
    0.5 * NOISE_SIGMA2 + (alpha - 0.5).abs() * NOISE_SIGMA2
}

/// Mean of the biased noise: `exp(−200α)` below the median and the mirror
/// image `exp(−200(1 − α))` at or above it.
pub fn noise_mean(alpha: f64) -> f64 {
    if alpha < 0.5 {
        (-200.0 * alpha).exp()
    } else {
        (-200.0 * (1.0 - alpha)).exp()
    }
}

/// Adds case noise to true quantile paths (`truth[i][t]` at `levels[i]`),
/// independently across levels and timepoints.
pub fn inject_errors<R: Rng + ?Sized>(
    truth: &[Vec<f64>],
    levels: &[f64],
    case: ErrorCase,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_len("levels and quantile paths", levels.len(), truth.len())?;
    let biased = match case {
        ErrorCase::NoError => return Ok(truth.to_vec()),
        ErrorCase::ZeroMean => false,
        ErrorCase::Biased => true,
        ErrorCase::Caviar => {
            return Err(QcmError::Config(
                "CAViaR-estimated quantiles are not produced by noise injection".into(),
            ))
        }
    };
    Ok(truth
        .iter()
        .zip(levels)
        .map(|(path, &a)| {
            let sd = noise_variance(a).sqrt();
            let mean = if biased { noise_mean(a) } else { 0.0 };
            path.iter()
                .map(|q| {
                    let z: f64 = StandardNormal.sample(rng);
                    q + mean + sd * z
                })
                .collect()
        })
        .collect())
}

/// Estimate-minus-truth per timepoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DeltaSeries {
    pub dh: Vec<f64>,
    pub ds: Vec<f64>,
    pub dk: Vec<f64>,
}

pub fn delta_metrics(qcm: &QcmSeries, h: &[f64], s: &[f64], k: &[f64]) -> Result<DeltaSeries> {
    check_len("QCM series and true variances", qcm.len(), h.len())?;
    check_len("QCM series and true skewness", qcm.len(), s.len())?;
    check_len("QCM series and true kurtosis", qcm.len(), k.len())?;
    let diff = |est: Vec<f64>, truth: &[f64]| est.iter().zip(truth).map(|(e, t)| e - t).collect();
    Ok(DeltaSeries {
        dh: diff(qcm.h(), h),
        ds: diff(qcm.s(), s),
        dk: diff(qcm.k(), k),
    })
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boxplot summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// `None` when no finite values are present; NaNs are skipped.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q1 = sorted_quantile(&v, 0.25);
        let q3 = sorted_quantile(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
        Some(Self {
            n: v.len(),
            min: v[0],
            q1,
            median: sorted_quantile(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            lower_whisker: inside.first().copied().unwrap_or(q1),
            upper_whisker: inside.last().copied().unwrap_or(q3),
            outliers: v.iter().copied().filter(|x| *x < lo_fence || *x > hi_fence).collect(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Moment {
    H,
    S,
    K,
}

impl Moment {
    pub const ALL: [Moment; 3] = [Moment::H, Moment::S, Moment::K];

    pub fn name(self) -> &'static str {
        match self {
            Moment::H => "h",
            Moment::S => "s",
            Moment::K => "k",
        }
    }

    fn pick(self, d: &DeltaSeries) -> &[f64] {
        match self {
            Moment::H => &d.dh,
            Moment::S => &d.ds,
            Moment::K => &d.dk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub dgp: DgpKind,
    pub cases: Vec<ErrorCase>,
    pub reps: usize,
    pub length: usize,
    pub seed: u64,
    /// Grid for Cases 1–3 and the full configuration for Case 4.
    pub pipeline: PipelineConfig,
}

impl CampaignConfig {
    pub fn new(dgp: DgpKind, cases: Vec<ErrorCase>, reps: usize, length: usize, seed: u64) -> Self {
        Self {
            dgp,
            cases,
            reps,
            length,
            seed,
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(QcmError::Config("at least one replication is needed".into()));
        }
        if self.cases.is_empty() {
            return Err(QcmError::Config("no error cases selected".into()));
        }
        if self.length < crate::caviar::MIN_SERIES {
            return Err(QcmError::Config(format!(
                "sample length {} is below {}",
                self.length,
                crate::caviar::MIN_SERIES
            )));
        }
        self.pipeline.validate()
    }
}

/// One replication under one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepOutcome {
    pub delta: DeltaSeries,
    pub n0: usize,
    /// Timepoints where the moment constraint holds under the configured policy.
    pub constraint_ok: usize,
    /// The same count when violating timepoints are refitted under constraints.
    pub constraint_ok_enforced: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: ErrorCase,
    pub reps: Vec<RepOutcome>,
}

impl CaseResult {
    /// Boxplot of `moment`'s Δ across replications at 0-based timepoint `t`.
    pub fn box_at(&self, moment: Moment, t: usize) -> Option<BoxStats> {
        let v: Vec<f64> = self.reps.iter().map(|r| moment.pick(&r.delta)[t]).collect();
        BoxStats::from_values(&v)
    }

    pub fn constraint_rate(&self, enforced: bool) -> f64 {
        let total: usize = self.reps.iter().map(|r| r.delta.dh.len()).sum();
        let ok: usize = self
            .reps
            .iter()
            .map(|r| if enforced { r.constraint_ok_enforced } else { r.constraint_ok })
            .sum();
        ok as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub cases: Vec<CaseResult>,
}

fn outcome(series: &QcmSeries, enforced: &QcmSeries, truth: &SimTruth, n0: usize) -> Result<RepOutcome> {
    Ok(RepOutcome {
        delta: delta_metrics(series, &truth.h(), &truth.s(), &truth.k())?,
        n0,
        constraint_ok: series.records.iter().filter(|r| r.constraint_ok).count(),
        constraint_ok_enforced: enforced.records.iter().filter(|r| r.constraint_ok).count(),
        degenerate: series.records.iter().filter(|r| r.degenerate).count(),
    })
}

fn run_replication(cfg: &CampaignConfig, rep: usize) -> Result<Vec<RepOutcome>> {
    let mut sim_rng = job_rng(cfg.seed, &[tag::SIMULATE, cfg.dgp.index(), rep as u64]);
    let truth = SimTruth::simulate(cfg.dgp, cfg.length, &mut sim_rng)?;
    let levels = &cfg.pipeline.grid;
    let needs_truth_quantiles = cfg.cases.iter().any(|c| *c != ErrorCase::Caviar);
    let true_paths = if needs_truth_quantiles { truth.quantile_paths(levels) } else { Vec::new() };
    let policy = cfg.pipeline.constraint_policy;

    cfg.cases
        .iter()
        .map(|&case| {
            let (levels, paths) = if case == ErrorCase::Caviar {
                let pcfg = PipelineConfig {
                    seed: job_rng(cfg.seed, &[tag::CAMPAIGN, cfg.dgp.index(), rep as u64]).next_u64(),
                    ..cfg.pipeline.clone()
                };
                let screened = pipeline::fit_and_screen(truth.y(), &pcfg)?;
                (screened.levels, screened.paths)
            } else {
                let mut rng = job_rng(cfg.seed, &[tag::INJECT, cfg.dgp.index(), rep as u64, case.id() as u64]);
                (levels.clone(), inject_errors(&true_paths, levels, case, &mut rng)?)
            };
            let series = pipeline::qcm_series(&levels, &paths, policy)?;
            let enforced = if policy == ConstraintPolicy::Enforce {
                series.clone()
            } else {
                pipeline::qcm_series(&levels, &paths, ConstraintPolicy::Enforce)?
            };
            outcome(&series, &enforced, &truth, levels.len())
        })
        .collect()
}

/// Runs every replication of every selected case. Replications run in
/// parallel on independent random streams.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let per_rep = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let mut cases: Vec<CaseResult> = cfg
        .cases
        .iter()
        .map(|&case| CaseResult {
            case,
            reps: Vec::with_capacity(cfg.reps),
        })
        .collect();
    for outcomes in per_rep {
        for (slot, o) in cases.iter_mut().zip(outcomes) {
            slot.reps.push(o);
        }
    }
    Ok(CampaignResult {
        config: cfg.clone(),
        cases,
    })
}
