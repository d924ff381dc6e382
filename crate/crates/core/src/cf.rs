//! Cornish-Fisher regression of pooled conditional quantiles.
//!
//! At a fixed timepoint the pooled quantile estimates `Y_i` at levels
//! `alpha_i` are regressed on `(1, x, x² − 1, x³ − 3x)` with `x = Φ⁻¹(alpha_i)`.
//! The slope coefficients map onto the conditional variance, skewness and
//! kurtosis; the intercept absorbs the conditional mean together with any
//! common bias of the quantile estimates.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::caviar::Family;
use crate::error::{QcmError, Result};
use crate::linalg::{LeastSquares, rows_to_matrix};
use crate::normal;

/// Minimum pool size for the four-coefficient regression.
pub const MIN_POOL: usize = 5;

/// Relative factor for the degenerate-scale guard on `beta1`.
pub const EPS_BETA_REL: f64 = 1e-8;

/// Feasibility slack accepted from the constrained solver before projection.
const CONSTRAINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfDesignRow {
    pub alpha: f64,
    pub x: f64,
    pub row: [f64; 4],
}

pub fn design_row(alpha: f64) -> Result<CfDesignRow> {
    let x = normal::quantile(alpha)?;
    Ok(CfDesignRow {
        alpha,
        x,
        row: [1.0, x, x * x - 1.0, x * x * x - 3.0 * x],
    })
}

/// Coefficients `(beta0, beta1, beta2, beta3)` of the CF regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl ThetaEstimate {
    pub fn new(beta0: f64, beta1: f64, beta2: f64, beta3: f64) -> Self {
        Self {
            beta0,
            beta1,
            beta2,
            beta3,
        }
    }

    pub fn from_slice(b: &[f64]) -> Self {
        Self::new(b[0], b[1], b[2], b[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.beta0, self.beta1, self.beta2, self.beta3]
    }

    /// `beta1² − 18·beta2² + 12·beta1·beta3`; nonnegative iff `k − s² − 1 ≥ 0`.
    pub fn constraint_value(&self) -> f64 {
        self.beta1 * self.beta1 - 18.0 * self.beta2 * self.beta2
            + 12.0 * self.beta1 * self.beta3
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcmTriple {
    pub h: f64,
    pub s: f64,
    pub k: f64,
    pub constraint_ok: bool,
}

pub fn moment_constraint_holds(theta: &ThetaEstimate) -> bool {
    theta.constraint_value() >= 0.0
}

/// Maps coefficients to moments with an absolute degenerate-scale threshold.
pub fn qcm_from_theta_with(theta: &ThetaEstimate, eps_beta: f64) -> Result<QcmTriple> {
    if !(theta.beta1.abs() > eps_beta) {
        return Err(QcmError::DegenerateScale {
            beta1: theta.beta1,
            threshold: eps_beta,
        });
    }
    let b1 = theta.beta1;
    Ok(QcmTriple {
        h: b1 * b1,
        s: 6.0 * theta.beta2 / b1,
        k: 24.0 * theta.beta3 / b1 + 3.0,
        constraint_ok: moment_constraint_holds(theta),
    })
}

/// [`qcm_from_theta_with`] at the threshold for a pool of unit value range.
pub fn qcm_from_theta(theta: &ThetaEstimate) -> Result<QcmTriple> {
    qcm_from_theta_with(theta, EPS_BETA_REL)
}

/// Degenerate-scale threshold for a set of pooled quantile values: `1e-8`
/// times their range, plus a rounding allowance at their magnitude.
pub fn epsilon_beta(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo.is_finite() && hi.is_finite() {
        EPS_BETA_REL * (hi - lo) + 64.0 * f64::EPSILON * lo.abs().max(hi.abs())
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub level: f64,
    pub value: f64,
    pub source: Option<Family>,
}

/// The quantile estimates available at one timepoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuantilePool {
    pub entries: Vec<PoolEntry>,
}

impl QuantilePool {
    pub fn from_levels_values(levels: &[f64], values: &[f64]) -> Result<Self> {
        crate::error::check_len("pool levels and values", levels.len(), values.len())?;
        Ok(Self {
            entries: levels
                .iter()
                .zip(values)
                .map(|(&level, &value)| PoolEntry {
                    level,
                    value,
                    source: None,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn levels(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.level).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }
}

/// A factored CF design for a fixed set of levels, shared by every timepoint
/// that pools the same levels.
#[derive(Debug, Clone)]
pub struct CfRegression {
    levels: Vec<f64>,
    rows: Vec<[f64; 4]>,
    ls: LeastSquares,
    /// Column means of the slope regressors.
    xbar: Vector3<f64>,
    /// Centered cross-product of the slope regressors.
    gram: Matrix3<f64>,
}

impl CfRegression {
    pub fn new(levels: &[f64]) -> Result<Self> {
        if levels.len() < MIN_POOL {
            return Err(QcmError::InsufficientPool {
                n0: levels.len(),
                required: MIN_POOL,
            });
        }
        let rows = levels
            .iter()
            .map(|&a| design_row(a).map(|r| r.row))
            .collect::<Result<Vec<_>>>()?;
        let dense: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ls = LeastSquares::new(&rows_to_matrix(&dense)).map_err(|condition| {
            let mut distinct = levels.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            QcmError::SingularDesign {
                condition,
                levels: distinct,
            }
        })?;
        let n = rows.len() as f64;
        let mut xbar = Vector3::zeros();
        for r in &rows {
            xbar += Vector3::new(r[1], r[2], r[3]);
        }
        xbar /= n;
        let mut gram = Matrix3::zeros();
        for r in &rows {
            let d = Vector3::new(r[1], r[2], r[3]) - xbar;
            gram += d * d.transpose();
        }
        Ok(Self {
            levels: levels.to_vec(),
            rows,
            ls,
            xbar,
            gram,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn condition(&self) -> f64 {
        self.ls.condition()
    }

    pub fn ols(&self, values: &[f64]) -> ThetaEstimate {
        ThetaEstimate::from_slice(&self.ls.solve(values))
    }

    pub fn ssr(&self, values: &[f64], theta: &ThetaEstimate) -> f64 {
        let b = theta.to_array();
        self.rows
            .iter()
            .zip(values)
            .map(|(r, y)| {
                let fit: f64 = r.iter().zip(&b).map(|(z, c)| z * c).sum();
                (y - fit).powi(2)
            })
            .sum()
    }

    /// Least squares subject to `beta1 ≥ 0` and the moment constraint.
    ///
    /// An OLS solution that is already feasible is returned unchanged.
    /// Otherwise the minimizer lies on the constraint surface and is located
    /// by a quadratic penalty with doubling weight, started from several warm
    /// points, then polished on the surface.
    pub fn constrained(&self, values: &[f64]) -> Result<ThetaEstimate> {
        let ols = self.ols(values);
        if !ols.is_finite() {
            return Err(QcmError::Estimation("non-finite OLS solution".into()));
        }
        if ols.beta1 >= 0.0 && moment_constraint_holds(&ols) {
            return Ok(ols);
        }
        let mean_y = values.iter().sum::<f64>() / values.len() as f64;
        let center = Vector3::new(ols.beta1, ols.beta2, ols.beta3);
        let scale = center.amax().max(f64::MIN_POSITIVE);
        let problem = SurfaceProblem {
            gram: self.gram / self.gram.trace(),
            center: center / scale,
        };
        let best = problem
            .solve()
            .ok_or_else(|| QcmError::Estimation("constrained least squares did not converge".into()))?;
        let slopes = best * scale;
        let mut theta = ThetaEstimate::new(
            mean_y - self.xbar.dot(&slopes),
            slopes[0],
            slopes[1],
            slopes[2],
        );
        enforce_feasible(&mut theta);
        if !moment_constraint_holds(&theta) || theta.beta1 < 0.0 {
            return Err(QcmError::Estimation(
                "constrained least squares left the feasible set".into(),
            ));
        }
        Ok(theta)
    }
}

/// Shrinks `|beta2|` so that the constraint holds exactly in floating point.
fn enforce_feasible(theta: &mut ThetaEstimate) {
    if theta.beta1 < 0.0 && theta.beta1 > -CONSTRAINT_TOL {
        theta.beta1 = 0.0;
    }
    if moment_constraint_holds(theta) {
        return;
    }
    let room = theta.beta1 * theta.beta1 + 12.0 * theta.beta1 * theta.beta3;
    if room <= 0.0 {
        theta.beta2 = 0.0;
        if !moment_constraint_holds(theta) {
            theta.beta3 = 0.0;
        }
        return;
    }
    let mut b2 = (room / 18.0).sqrt().copysign(theta.beta2);
    while !moment_constraint_holds(&ThetaEstimate { beta2: b2, ..*theta }) {
        b2 *= 1.0 - 4.0 * f64::EPSILON;
    }
    theta.beta2 = b2;
}

/// Minimize `(u − c)' A (u − c)` over `u'Gu ≥ 0, u₁ ≥ 0` in scaled slope space.
struct SurfaceProblem {
    gram: Matrix3<f64>,
    center: Vector3<f64>,
}

fn moment_form() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 6.0, 0.0, -18.0, 0.0, 6.0, 0.0, 0.0)
}

impl SurfaceProblem {
    fn objective(&self, u: &Vector3<f64>) -> f64 {
        let d = u - self.center;
        (d.transpose() * self.gram * d)[0]
    }

    fn violation(u: &Vector3<f64>) -> f64 {
        let g = (u.transpose() * moment_form() * u)[0];
        (-g).max(0.0) + (-u[0]).max(0.0)
    }

    fn solve(&self) -> Option<Vector3<f64>> {
        let c = self.center;
        let mut starts = vec![c, Vector3::new(c[0].abs(), c[1], c[2])];
        let room = c[0] * c[0] + 12.0 * c[0] * c[2];
        if c[0] > 0.0 && room > 0.0 {
            starts.push(Vector3::new(c[0], (room / 18.0).sqrt().copysign(c[1]), c[2]));
        }
        starts.push(Vector3::new(c[0].abs().max(1e-3), 0.0, c[2].max(0.0)));
        starts.push(Vector3::new(0.0, 0.0, c[2]));

        let mut best: Option<(f64, Vector3<f64>)> = None;
        for start in starts {
            let Some(u) = self.penalty_path(start) else {
                continue;
            };
            let u = self.polish(u);
            if Self::violation(&u) > CONSTRAINT_TOL {
                continue;
            }
            let f = self.objective(&u);
            if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                best = Some((f, u));
            }
        }
        best.map(|(_, u)| u)
    }

    fn penalized(&self, u: &Vector3<f64>, mu: f64) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let gm = moment_form();
        let d = u - self.center;
        let mut f = (d.transpose() * self.gram * d)[0];
        let mut grad = 2.0 * self.gram * d;
        let mut hess = 2.0 * self.gram;
        let gu = gm * u;
        let q = u.dot(&gu);
        if q < 0.0 {
            f += mu * q * q;
            grad += 4.0 * mu * q * gu;
            hess += 8.0 * mu * gu * gu.transpose() + 4.0 * mu * q * gm;
        }
        if u[0] < 0.0 {
            f += mu * u[0] * u[0];
            grad[0] += 2.0 * mu * u[0];
            hess[(0, 0)] += 2.0 * mu;
        }
        (f, grad, hess)
    }

    fn penalty_path(&self, start: Vector3<f64>) -> Option<Vector3<f64>> {
        let mut u = start;
        let mut mu = 1.0;
        while mu < 1e18 {
            u = self.newton(u, mu)?;
            if Self::violation(&u) <= 1e-13 {
                break;
            }
            mu *= 2.0;
        }
        u.iter().all(|v| v.is_finite()).then_some(u)
    }

    fn newton(&self, mut u: Vector3<f64>, mu: f64) -> Option<Vector3<f64>> {
        for _ in 0..100 {
            let (f, grad, hess) = self.penalized(&u, mu);
            if grad.norm() <= 1e-15 * (1.0 + f.abs()) {
                break;
            }
            // Regularize an indefinite Hessian towards steepest descent.
            let mut step = None;
            let mut damping = 0.0;
            for _ in 0..40 {
                let h = hess + Matrix3::identity() * damping;
                if let Some(chol) = h.cholesky() {
                    step = Some(-chol.solve(&grad));
                    break;
                }
                damping = if damping == 0.0 { 1e-8 * (1.0 + hess.amax()) } else { damping * 10.0 };
            }
            let step = step?;
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-12 {
                let cand = u + step * t;
                if self.penalized(&cand, mu).0 <= f + 1e-4 * t * grad.dot(&step) {
                    u = cand;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved || (step * t).norm() <= 1e-15 * (1.0 + u.norm()) {
                break;
            }
        }
        Some(u)
    }

    /// Newton on the KKT system of the equality-constrained problem.
    fn polish(&self, u0: Vector3<f64>) -> Vector3<f64> {
        let gm = moment_form();
        if u0[0] <= 1e-9 {
            // Only the line u1 = u2 = 0 is feasible near u1 = 0.
            let a = &self.gram;
            let c = self.center;
            let u3 = c[2] + (a[(2, 0)] * c[0] + a[(2, 1)] * c[1]) / a[(2, 2)];
            let line = Vector3::new(0.0, 0.0, u3);
            return if self.objective(&line) <= self.objective(&u0) || Self::violation(&u0) > 0.0 {
                line
            } else {
                u0
            };
        }
        let mut u = u0;
        let gu = gm * u;
        let r = self.gram * (u - self.center);
        let mut lambda = if gu.norm_squared() > 0.0 { r.dot(&gu) / gu.norm_squared() } else { 0.0 };
        for _ in 0..50 {
            let gu = gm * u;
            let f1 = self.gram * (u - self.center) - lambda * gu;
            let f2 = u.dot(&gu);
            let res = Vector4::new(f1[0], f1[1], f1[2], f2);
            if res.amax() < 1e-15 {
                break;
            }
            let top = self.gram - lambda * gm;
            let jac = Matrix4::new(
                top[(0, 0)], top[(0, 1)], top[(0, 2)], -gu[0],
                top[(1, 0)], top[(1, 1)], top[(1, 2)], -gu[1],
                top[(2, 0)], top[(2, 1)], top[(2, 2)], -gu[2],
                2.0 * gu[0], 2.0 * gu[1], 2.0 * gu[2], 0.0,
            );
            let Some(delta) = jac.lu().solve(&(-res)) else {
                return u0;
            };
            u += Vector3::new(delta[0], delta[1], delta[2]);
            lambda += delta[3];
            if !u.iter().all(|v| v.is_finite()) {
                return u0;
            }
        }
        // Keep the polished point only if it stays on the same stationary
        // branch (nonnegative multiplier, no worse objective).
        let polished_ok = lambda >= -1e-9
            && u[0] >= 0.0
            && self.objective(&u) <= self.objective(&u0) + 1e-9 * (1.0 + self.objective(&u0));
        if polished_ok { u } else { u0 }
    }
}

pub fn ols_fit(pool: &QuantilePool) -> Result<ThetaEstimate> {
    CfRegression::new(&pool.levels()).map(|reg| reg.ols(&pool.values()))
}

pub fn constrained_ls_fit(pool: &QuantilePool) -> Result<ThetaEstimate> {
    CfRegression::new(&pool.levels())?.constrained(&pool.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid99() -> Vec<f64> {
        (1..=99).map(|i| i as f64 / 100.0).collect()
    }

    fn xs(levels: &[f64]) -> Vec<f64> {
        levels.iter().map(|&a| design_row(a).unwrap().x).collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn design_row_examples() {
        let r = design_row(0.5).unwrap();
        assert_eq!(r.row, [1.0, 0.0, -1.0, 0.0]);

        let r = design_row(0.841_344_7).unwrap();
        assert!(close(r.row[1], 1.0, 1e-6));
        assert!(close(r.row[2], 0.0, 1e-6));
        assert!(close(r.row[3], -2.0, 1e-6));

        let r = design_row(0.975).unwrap();
        assert!(close(r.row[1], 1.959_964, 5e-7));
        assert!(close(r.row[2], 2.841_459, 5e-7));
        assert!(close(r.row[3], 1.649_229, 5e-7));

        assert!(matches!(design_row(0.0), Err(QcmError::Domain(_))));
        assert!(matches!(design_row(1.2), Err(QcmError::Domain(_))));
    }

    #[test]
    fn ols_examples() {
        let levels = grid99();
        let x = xs(&levels);
        let y: Vec<f64> = x.iter().map(|x| 1.0 + 2.0 * x).collect();
        let reg = CfRegression::new(&levels).unwrap();
        let t = reg.ols(&y);
        for (got, want) in t.to_array().iter().zip([1.0, 2.0, 0.0, 0.0]) {
            assert!(close(*got, want, 1e-12), "{t:?}");
        }
        let t = reg.ols(&vec![0.0; 99]);
        assert!(t.to_array().iter().all(|v| v.abs() < 1e-15));
        let y: Vec<f64> = x.iter().map(|x| x + 0.1 * (x * x - 1.0)).collect();
        let t = reg.ols(&y);
        for (got, want) in t.to_array().iter().zip([0.0, 1.0, 0.1, 0.0]) {
            assert!(close(*got, want, 1e-12), "{t:?}");
        }
    }

    #[test]
    fn small_or_singular_pools_are_rejected() {
        let err = CfRegression::new(&[0.1, 0.2, 0.3, 0.4]).unwrap_err();
        assert!(matches!(err, QcmError::InsufficientPool { n0: 4, .. }));
        // Three distinct levels cannot identify four coefficients.
        let err = CfRegression::new(&[0.1, 0.1, 0.5, 0.9, 0.9, 0.5]).unwrap_err();
        match err {
            QcmError::SingularDesign { levels, .. } => assert_eq!(levels, vec![0.1, 0.5, 0.9]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qcm_examples() {
        let q = qcm_from_theta(&ThetaEstimate::new(0.3, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!((q.h, q.s, q.k, q.constraint_ok), (1.0, 0.0, 3.0, true));
        let q = qcm_from_theta(&ThetaEstimate::new(0.0, 2.0, 0.5, 0.1)).unwrap();
        assert!(close(q.h, 4.0, 1e-15) && close(q.s, 1.5, 1e-15) && close(q.k, 4.2, 1e-14));
        assert!(q.constraint_ok);
        assert!(matches!(
            qcm_from_theta(&ThetaEstimate::new(0.0, 1e-12, 0.1, 0.0)),
            Err(QcmError::DegenerateScale { .. })
        ));
    }

    #[test]
    fn constraint_examples() {
        assert!(moment_constraint_holds(&ThetaEstimate::new(0.0, 1.0, 0.0, 0.0)));
        assert!(!moment_constraint_holds(&ThetaEstimate::new(0.0, 1.0, 0.3, 0.0)));
        let t = ThetaEstimate::new(0.0, 2.0, 0.5, 0.1);
        assert!(close(t.constraint_value(), 1.9, 1e-14));
        assert!(moment_constraint_holds(&t));
    }

    #[test]
    fn epsilon_scales_with_range() {
        assert!((epsilon_beta(&[1.0, 3.0, 2.0]) - 2e-8).abs() < 1e-13);
        assert!((epsilon_beta(&[101.0, 103.0]) - 2e-8).abs() < 1e-11);
        let flat = epsilon_beta(&[4.0, 4.0]);
        assert!(flat > 0.0 && flat < 1e-12);
        assert_eq!(epsilon_beta(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn constrained_keeps_feasible_ols() {
        let levels = grid99();
        let x = xs(&levels);
        let y: Vec<f64> = x.iter().map(|x| 0.2 + 1.5 * x + 0.1 * (x * x - 1.0)).collect();
        let reg = CfRegression::new(&levels).unwrap();
        assert_eq!(reg.constrained(&y).unwrap(), reg.ols(&y));
    }

    #[test]
    fn constrained_constant_pool() {
        let levels = grid99();
        let reg = CfRegression::new(&levels).unwrap();
        let t = reg.constrained(&vec![2.5; 99]).unwrap();
        assert!(close(t.beta0, 2.5, 1e-12));
        assert!(t.beta1.abs() < 1e-12 && t.beta2.abs() < 1e-12 && t.beta3.abs() < 1e-12);
    }

    /// SSR with the intercept profiled out, evaluated directly on the pool.
    fn profiled_ssr(levels: &[f64], y: &[f64], b1: f64, b2: f64, b3: f64) -> f64 {
        let rows: Vec<[f64; 4]> = levels.iter().map(|&a| design_row(a).unwrap().row).collect();
        let resid: Vec<f64> = rows
            .iter()
            .zip(y)
            .map(|(r, y)| y - b1 * r[1] - b2 * r[2] - b3 * r[3])
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        resid.iter().map(|e| (e - m).powi(2)).sum()
    }

    /// Brute-force minimum over the constraint surface, parameterized by
    /// `(beta1 ≥ 0, beta3)` with `beta2 = ±sqrt((beta1² + 12 beta1 beta3)/18)`,
    /// using successively zoomed grids.
    fn grid_oracle(levels: &[f64], y: &[f64]) -> f64 {
        let eval = |b1: f64, b3: f64, sign: f64| -> f64 {
            let room = b1 * b1 + 12.0 * b1 * b3;
            if room < 0.0 {
                return f64::INFINITY;
            }
            profiled_ssr(levels, y, b1, sign * (room / 18.0).sqrt(), b3)
        };
        let mut best = f64::INFINITY;
        for sign in [-1.0, 1.0] {
            let (mut c1, mut c3, mut w) = (1.5, 0.0, 1.5);
            for _ in 0..40 {
                let mut local = (f64::INFINITY, c1, c3);
                let m = 40;
                for i in 0..=m {
                    for j in 0..=m {
                        let b1 = (c1 - w + 2.0 * w * i as f64 / m as f64).max(0.0);
                        let b3 = c3 - w + 2.0 * w * j as f64 / m as f64;
                        let f = eval(b1, b3, sign);
                        if f < local.0 {
                            local = (f, b1, b3);
                        }
                    }
                }
                c1 = local.1;
                c3 = local.2;
                best = best.min(local.0);
                w *= 0.6;
            }
        }
        best
    }

    #[test]
    fn constrained_matches_grid_oracle() {
        let levels = grid99();
        let x = xs(&levels);
        let y: Vec<f64> = x.iter().map(|x| x + 0.5 * (x * x - 1.0)).collect();
        let reg = CfRegression::new(&levels).unwrap();
        let ols = reg.ols(&y);
        assert!(!moment_constraint_holds(&ols));
        let t = reg.constrained(&y).unwrap();
        assert!(moment_constraint_holds(&t));
        assert!(t.constraint_value().abs() <= 1e-8, "{}", t.constraint_value());
        let ssr = reg.ssr(&y, &t);
        let oracle = grid_oracle(&levels, &y);
        assert!((ssr - oracle).abs() <= 1e-6, "ssr={ssr} oracle={oracle}");
    }

    #[test]
    fn constrained_handles_negative_scale() {
        let levels = grid99();
        let x = xs(&levels);
        let y: Vec<f64> = x.iter().map(|x| -0.8 * x + 0.05 * (x * x - 1.0)).collect();
        let reg = CfRegression::new(&levels).unwrap();
        let t = reg.constrained(&y).unwrap();
        assert!(t.beta1 >= 0.0 && moment_constraint_holds(&t));
        let oracle = grid_oracle(&levels, &y);
        assert!((reg.ssr(&y, &t) - oracle).abs() <= 1e-6);
    }

    fn well_conditioned_pool() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (6usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.005f64..0.995, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn exact_on_polynomial_targets(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -2.0f64..2.0, d in -1.0f64..1.0) {
            let levels = grid99();
            let y: Vec<f64> = levels.iter().map(|&l| {
                let r = design_row(l).unwrap().row;
                a + b * r[1] + c * r[2] + d * r[3]
            }).collect();
            let t = CfRegression::new(&levels).unwrap().ols(&y);
            for (got, want) in t.to_array().iter().zip([a, b, c, d]) {
                prop_assert!((got - want).abs() <= 1e-10);
            }
        }

        #[test]
        fn location_shift_only_moves_intercept(seed_vals in proptest::collection::vec(-1.0f64..1.0, 99), m in -50.0f64..50.0) {
            let levels = grid99();
            let x = xs(&levels);
            let y: Vec<f64> = x.iter().zip(&seed_vals).map(|(x, e)| 1.3 * x + 0.1 * e).collect();
            let shifted: Vec<f64> = y.iter().map(|v| v + m).collect();
            let reg = CfRegression::new(&levels).unwrap();
            let (t0, t1) = (reg.ols(&y), reg.ols(&shifted));
            prop_assert!((t1.beta0 - t0.beta0 - m).abs() <= 1e-10);
            let (q0, q1) = (qcm_from_theta(&t0).unwrap(), qcm_from_theta(&t1).unwrap());
            prop_assert!((q0.h - q1.h).abs() <= 1e-12);
            prop_assert!((q0.s - q1.s).abs() <= 1e-12);
            prop_assert!((q0.k - q1.k).abs() <= 1e-12);
        }

        #[test]
        fn scale_equivariance(noise in proptest::collection::vec(-1.0f64..1.0, 99), lambda in 0.01f64..100.0) {
            let levels = grid99();
            let x = xs(&levels);
            let y: Vec<f64> = x.iter().zip(&noise).map(|(x, e)| 0.5 + 0.9 * x + 0.05 * e).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * lambda).collect();
            let reg = CfRegression::new(&levels).unwrap();
            let (t0, t1) = (reg.ols(&y), reg.ols(&scaled));
            prop_assert!((t1.beta1 - lambda * t0.beta1).abs() <= 1e-10 * lambda.max(1.0));
            prop_assert!((t1.beta2 - lambda * t0.beta2).abs() <= 1e-10 * lambda.max(1.0));
            prop_assert!((t1.beta3 - lambda * t0.beta3).abs() <= 1e-10 * lambda.max(1.0));
            let (q0, q1) = (qcm_from_theta(&t0).unwrap(), qcm_from_theta(&t1).unwrap());
            prop_assert!((q1.h - lambda * lambda * q0.h).abs() <= 1e-10 * (lambda * lambda).max(1.0));
            prop_assert!((q0.s - q1.s).abs() <= 1e-10);
            prop_assert!((q0.k - q1.k).abs() <= 1e-10);
        }

        #[test]
        fn constrained_output_is_feasible(noise in proptest::collection::vec(-1.0f64..1.0, 99), skew in -1.0f64..1.0, kurt in -0.3f64..0.3, scale in 0.1f64..3.0) {
            let levels = grid99();
            let x = xs(&levels);
            let y: Vec<f64> = x.iter().zip(&noise)
                .map(|(x, e)| scale * (x + skew * (x * x - 1.0) + kurt * (x * x * x - 3.0 * x)) + 0.05 * e)
                .collect();
            let t = CfRegression::new(&levels).unwrap().constrained(&y).unwrap();
            prop_assert!(moment_constraint_holds(&t));
            prop_assert!(t.beta1 >= 0.0);
        }

        #[test]
        fn ols_matches_normal_equations((levels, y) in well_conditioned_pool()) {
            let Ok(reg) = CfRegression::new(&levels) else { return Ok(()); };
            prop_assume!(reg.condition() < 1e6);
            let t = reg.ols(&y).to_array();
            // Independent route: Gaussian elimination on Z'Z θ = Z'Y.
            let rows: Vec<[f64; 4]> = levels.iter().map(|&a| design_row(a).unwrap().row).collect();
            let mut m = [[0.0f64; 5]; 4];
            for (r, yi) in rows.iter().zip(&y) {
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] += r[i] * r[j];
                    }
                    m[i][4] += r[i] * yi;
                }
            }
            for col in 0..4 {
                let piv = (col..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
                m.swap(col, piv);
                for row in 0..4 {
                    if row != col {
                        let f = m[row][col] / m[col][col];
                        for k in col..5 {
                            m[row][k] -= f * m[col][k];
                        }
                    }
                }
            }
            for i in 0..4 {
                let oracle = m[i][4] / m[i][i];
                prop_assert!((t[i] - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()), "{i}: {} vs {oracle}", t[i]);
            }
        }
    }
}
