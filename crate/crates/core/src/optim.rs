//! Nelder-Mead simplex minimization.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Convergence when both the simplex diameter and the spread of function
    /// values fall below this.
    pub tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0` with the fminsearch initial simplex (5% of each
/// nonzero coordinate, 0.00025 for zero coordinates). Non-finite values are
/// treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    nelder_mead_bounded(|x, _| f(x), x0, opts)
}

/// As [`nelder_mead`], for objectives that can stop early.
///
/// `f(x, bound)` must return the exact value when it is below `bound` and may
/// return any value `>= bound` otherwise. The simplex only ever needs to know
/// whether a trial point beats a reference vertex, so the iterates are
/// identical to those of the plain method.
pub fn nelder_mead_bounded<F>(mut f: F, x0: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64], f64) -> f64,
{
    let n = x0.len();
    let mut eval_below = |x: &[f64], bound: f64| {
        let v = f(x, bound);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] != 0.0 { v[i] * 1.05 } else { 0.00025 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval_below(x, f64::INFINITY)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while iterations < opts.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n.saturating_sub(1)];

        let diameter = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = values[worst] - values[best];
        if diameter <= opts.tol && (spread <= opts.tol || !spread.is_finite() && values[best].is_infinite()) {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &idx in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += v / n as f64;
            }
        }
        let along = |coef: f64, out: &mut Vec<f64>, worst_pt: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst_pt) {
                *o = c + coef * (c - w);
            }
        };

        along(1.0, &mut trial, &simplex[worst]);
        let fr = eval_below(&trial, values[worst]);
        if fr < values[best] {
            along(2.0, &mut trial2, &simplex[worst]);
            let fe = eval_below(&trial2, fr);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        // Contraction, outside or inside.
        let (coef, target) = if fr < values[worst] { (0.5, fr) } else { (-0.5, values[worst]) };
        along(coef, &mut trial2, &simplex[worst]);
        let fc = eval_below(&trial2, target);
        if fc < target {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        let anchor = simplex[best].clone();
        for &idx in &order[1..] {
            for (v, a) in simplex[idx].iter_mut().zip(&anchor) {
                *v = a + 0.5 * (*v - a);
            }
            values[idx] = eval_below(&simplex[idx], f64::INFINITY);
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}
