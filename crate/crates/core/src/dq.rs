//! In-sample dynamic quantile screening of fitted quantile paths.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::caviar::Family;
use crate::cf::{PoolEntry, QuantilePool, MIN_POOL};
use crate::error::{check_len, QcmError, Result};

pub const DQ_LAGS: usize = 4;
pub const MIN_HITS: usize = 50;

/// `Hit_t = I(y_t < Q_t) − α`.
#[derive(Debug, Clone, PartialEq)]
pub struct HitSeries {
    pub hits: Vec<f64>,
    pub alpha: f64,
}

pub fn hits(y: &[f64], q_path: &[f64], alpha: f64) -> Result<HitSeries> {
    check_len("series and quantile path", y.len(), q_path.len())?;
    let hits = y
        .iter()
        .zip(q_path)
        .map(|(y, q)| if y < q { 1.0 - alpha } else { -alpha })
        .collect();
    Ok(HitSeries { hits, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DqResult {
    pub statistic: f64,
    pub pvalue: f64,
    /// Lagged-hit design was rank deficient; reported as statistic 0, p-value 1.
    pub degenerate: bool,
}

/// Upper tail of χ²₄.
pub fn chi2_4_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(DQ_LAGS as f64).map_or(f64::NAN, |d| d.sf(x))
}

/// `Hit'X (X'X)⁻¹ X'Hit / (α(1−α))` with `X` the four lagged hits, the first
/// four timepoints dropped; χ²₄ reference law.
pub fn dq_insample(h: &HitSeries) -> Result<DqResult> {
    let n = h.hits.len();
    if n < MIN_HITS {
        return Err(QcmError::Domain(format!(
            "DQ test needs at least {MIN_HITS} hits, got {n}"
        )));
    }
    let mut xtx = Matrix4::<f64>::zeros();
    let mut xth = Vector4::<f64>::zeros();
    for t in DQ_LAGS..n {
        let x = Vector4::new(h.hits[t - 1], h.hits[t - 2], h.hits[t - 3], h.hits[t - 4]);
        xtx += x * x.transpose();
        xth += x * h.hits[t];
    }
    let sv = xtx.singular_values();
    let degenerate = !(sv.min() > 1e-12 * sv.max());
    if degenerate {
        return Ok(DqResult {
            statistic: 0.0,
            pvalue: 1.0,
            degenerate: true,
        });
    }
    let pinv = xtx.pseudo_inverse(1e-12 * sv.max()).map_err(|e| QcmError::Degenerate(e.to_string()))?;
    let quad = (xth.transpose() * pinv * xth)[0];
    let statistic = (quad / (h.alpha * (1.0 - h.alpha))).max(0.0);
    Ok(DqResult {
        statistic,
        pvalue: chi2_4_sf(statistic),
        degenerate: false,
    })
}

/// One fitted quantile path entering the screen.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPath {
    pub level: f64,
    pub source: Option<Family>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DqDecision {
    pub level: f64,
    pub source: Option<Family>,
    pub dq: DqResult,
    pub kept: bool,
}

/// Surviving paths, shared by every timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPool {
    pub levels: Vec<f64>,
    pub sources: Vec<Option<Family>>,
    /// One entry per surviving path.
    pub paths: Vec<Vec<f64>>,
    pub decisions: Vec<DqDecision>,
}

impl FilteredPool {
    pub fn n0(&self) -> usize {
        self.levels.len()
    }

    pub fn len_t(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    /// The pooled values at timepoint index `t` (0-based).
    pub fn values_at(&self, t: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[t]).collect()
    }

    pub fn pool_at(&self, t: usize) -> QuantilePool {
        QuantilePool {
            entries: self
                .levels
                .iter()
                .zip(&self.sources)
                .zip(&self.paths)
                .map(|((&level, &source), p)| PoolEntry {
                    level,
                    value: p[t],
                    source,
                })
                .collect(),
        }
    }
}

/// Drops every path whose DQ p-value is below `p_star` and pools the rest.
pub fn filter_pool(paths: &[FittedPath], y: &[f64], p_star: f64) -> Result<FilteredPool> {
    if !(0.0..1.0).contains(&p_star) {
        return Err(QcmError::Config(format!("p* = {p_star} is outside [0, 1)")));
    }
    let mut out = FilteredPool {
        levels: Vec::new(),
        sources: Vec::new(),
        paths: Vec::new(),
        decisions: Vec::with_capacity(paths.len()),
    };
    for path in paths {
        let dq = dq_insample(&hits(y, &path.values, path.level)?)?;
        let kept = dq.pvalue >= p_star;
        out.decisions.push(DqDecision {
            level: path.level,
            source: path.source,
            dq,
            kept,
        });
        if kept {
            out.levels.push(path.level);
            out.sources.push(path.source);
            out.paths.push(path.values.clone());
        }
    }
    if out.n0() < MIN_POOL {
        return Err(QcmError::InsufficientPool {
            n0: out.n0(),
            required: MIN_POOL,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hit_examples() {
        let h = hits(&[1.0, 2.0], &[0.0, 3.0], 0.5).unwrap();
        assert_eq!(h.hits, vec![-0.5, 0.5]);
        let h = hits(&[0.0; 5], &[1.0; 5], 0.05).unwrap();
        assert!(h.hits.iter().all(|&v| v == 0.95));
        assert!(matches!(hits(&[1.0], &[1.0, 2.0], 0.1), Err(QcmError::LengthMismatch { .. })));
    }

    #[test]
    fn hits_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let q: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let h = hits(&y, &q, 0.3).unwrap();
        for i in 0..200 {
            let want = if y[i] < q[i] { 0.7 } else { -0.3 };
            assert_eq!(h.hits[i], want);
        }
    }

    #[test]
    fn no_exceedances_is_degenerate() {
        let h = HitSeries {
            hits: vec![-0.05; 500],
            alpha: 0.05,
        };
        let r = dq_insample(&h).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.statistic, r.pvalue), (0.0, 1.0));
    }

    #[test]
    fn short_series_is_rejected() {
        let h = HitSeries {
            hits: vec![0.5; 20],
            alpha: 0.5,
        };
        assert!(dq_insample(&h).is_err());
    }

    #[test]
    fn statistic_matches_direct_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = 0.2;
        let hits: Vec<f64> = (0..300)
            .map(|_| if rng.random::<f64>() < alpha { 1.0 - alpha } else { -alpha })
            .collect();
        let r = dq_insample(&HitSeries { hits: hits.clone(), alpha }).unwrap();
        // Oracle: solve (X'X) b = X'Hit by Gaussian elimination.
        let mut m = [[0.0f64; 5]; 4];
        for t in 4..hits.len() {
            let x = [hits[t - 1], hits[t - 2], hits[t - 3], hits[t - 4]];
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += x[i] * x[j];
                }
                m[i][4] += x[i] * hits[t];
            }
        }
        let xth: Vec<f64> = m.iter().map(|r| r[4]).collect();
        for c in 0..4 {
            for r in 0..4 {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..5 {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        let quad: f64 = (0..4).map(|i| xth[i] * m[i][4] / m[i][i]).sum();
        let oracle = quad / (alpha * (1.0 - alpha));
        assert!((r.statistic - oracle).abs() <= 1e-9 * oracle.max(1.0));
        // χ²₄ survival has the closed form e^{−x/2}(1 + x/2).
        let sf = (-oracle / 2.0).exp() * (1.0 + oracle / 2.0);
        assert!((r.pvalue - sf).abs() <= 1e-12);
    }

    fn bernoulli_hits(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
        (0..n)
            .map(|_| if rng.random::<f64>() < alpha { 1.0 - alpha } else { -alpha })
            .collect()
    }

    #[test]
    fn clustered_hits_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = 0.05;
        let reps = 200;
        let mut rejections = 0;
        for _ in 0..reps {
            // Markov chain of exceedances with strong persistence.
            let mut state = false;
            let hits: Vec<f64> = (0..1000)
                .map(|_| {
                    let p = if state { 0.6 } else { 0.03 };
                    state = rng.random::<f64>() < p;
                    if state { 1.0 - alpha } else { -alpha }
                })
                .collect();
            if dq_insample(&HitSeries { hits, alpha }).unwrap().pvalue < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections as f64 / reps as f64 > 0.5, "{rejections}");
    }

    #[test]
    fn filter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let levels: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        // Flat paths at the true uniform quantiles.
        let paths: Vec<FittedPath> = levels
            .iter()
            .map(|&a| FittedPath {
                level: a,
                source: Some(Family::Sav),
                values: vec![a; 300],
            })
            .collect();
        let all = filter_pool(&paths, &y, 0.0).unwrap();
        assert_eq!(all.n0(), 9);
        assert_eq!(all.pool_at(10).len(), 9);

        // Paths sitting far above the data for 25 steps, then far below,
        // give strongly clustered hits.
        let bad: Vec<FittedPath> = levels
            .iter()
            .map(|&a| FittedPath {
                level: a,
                source: None,
                values: (0..300).map(|t| if (t / 25) % 2 == 0 { 10.0 } else { -10.0 }).collect(),
            })
            .collect();
        let err = filter_pool(&bad, &y, 0.1).unwrap_err();
        assert!(matches!(err, QcmError::InsufficientPool { n0: 0, .. }));
        assert!(filter_pool(&paths, &y, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn pvalue_is_valid_and_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let (pa, pb) = (chi2_4_sf(a), chi2_4_sf(b));
            prop_assert!((0.0..=1.0).contains(&pa));
            if a < b { prop_assert!(pa >= pb); }
        }

        #[test]
        fn statistic_nonnegative(seed in 0u64..1000, alpha in 0.02f64..0.98) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = HitSeries { hits: bernoulli_hits(&mut rng, 120, alpha), alpha };
            let r = dq_insample(&h).unwrap();
            prop_assert!(r.statistic >= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.pvalue));
        }
    }
}
