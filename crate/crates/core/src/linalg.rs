//! Least-squares and logistic fits shared by the structural models, the
//! built-in predictors and the regression-adjusted estimator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Ratio of smallest to largest eigenvalue of the standardized Gram matrix
/// below which a design counts as rank deficient.
const RANK_TOL: f64 = 1e-10;
/// Penalty added on the standardized scale when a design is rank deficient.
pub const RIDGE_PENALTY: f64 = 1e-6;

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;

/// Row-major design matrix without the intercept column.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn new(p: usize) -> Self {
        Self {
            n: 0,
            p,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(p: usize, n: usize) -> Self {
        Self {
            n: 0,
            p,
            data: Vec::with_capacity(n * p),
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.p);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// True when the design was rank deficient and the ridge fallback was used.
    #[serde(default)]
    pub ridge: bool,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Weighted least squares with an intercept.
///
/// Columns are centred and scaled before solving. A constant column gets a
/// zero coefficient; a near-singular design is solved with a small ridge
/// penalty. Both cases set [`LinearFit::ridge`].
pub fn weighted_least_squares(x: &Design, y: &[f64], w: Option<&[f64]>) -> Option<LinearFit> {
    let n = x.n;
    let p = x.p;
    if n == 0 || y.len() != n {
        return None;
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(weight).sum();
    if wsum.is_nan() || wsum <= 0.0 {
        return None;
    }

    let mut mean = vec![0.0; p];
    let mut ymean = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let wi = weight(i);
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += wi * v;
        }
        ymean += wi * yi;
    }
    for m in mean.iter_mut() {
        *m /= wsum;
    }
    ymean /= wsum;

    let mut scale = vec![0.0; p];
    for i in 0..n {
        let wi = weight(i);
        for ((s, v), m) in scale.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += wi * (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / wsum).sqrt();
    }
    let active: Vec<usize> = (0..p)
        .filter(|&j| scale[j] > 1e-12 * mean[j].abs().max(1.0))
        .collect();
    let mut ridge = active.len() < p;
    let k = active.len();

    let mut coef = vec![0.0; p];
    if k > 0 {
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut z = vec![0.0; k];
        for (i, &yi) in y.iter().enumerate() {
            let wi = weight(i);
            let row = x.row(i);
            for (a, &j) in active.iter().enumerate() {
                z[a] = (row[j] - mean[j]) / scale[j];
            }
            let yc = yi - ymean;
            for a in 0..k {
                let wz = wi * z[a];
                rhs[a] += wz * yc;
                for b in a..k {
                    gram[(a, b)] += wz * z[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                gram[(a, b)] /= wsum;
                gram[(b, a)] = gram[(a, b)];
            }
            rhs[a] /= wsum;
        }

        let eig = SymmetricEigen::new(gram.clone());
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        if lo.is_nan() || lo <= RANK_TOL * hi {
            ridge = true;
            for a in 0..k {
                gram[(a, a)] += RIDGE_PENALTY;
            }
        }
        let gamma = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                ridge = true;
                let mut g = gram;
                for a in 0..k {
                    g[(a, a)] += RIDGE_PENALTY;
                }
                g.cholesky()?.solve(&rhs)
            }
        };
        for (a, &j) in active.iter().enumerate() {
            coef[j] = gamma[a] / scale[j];
        }
    }
    let intercept = ymean - coef.iter().zip(&mean).map(|(b, m)| b * m).sum::<f64>();
    if !intercept.is_finite() || coef.iter().any(|c| !c.is_finite()) {
        return None;
    }
    Some(LinearFit {
        intercept,
        coef,
        ridge,
    })
}

pub fn least_squares(x: &Design, y: &[f64]) -> Option<LinearFit> {
    weighted_least_squares(x, y, None)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub linear: LinearFit,
    pub iterations: usize,
    pub converged: bool,
}

/// Binary logistic regression by iteratively reweighted least squares.
/// `y` holds 0/1 labels.
pub fn logistic_irls(x: &Design, y: &[f64]) -> Option<LogisticFit> {
    let n = x.n;
    let mut fit = LinearFit {
        intercept: 0.0,
        coef: vec![0.0; x.p],
        ridge: false,
    };
    let mut ridge = false;
    let mut eta = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for iter in 1..=IRLS_MAX_ITER {
        for i in 0..n {
            eta[i] = fit.predict(x.row(i));
            let mu = sigmoid(eta[i]);
            w[i] = (mu * (1.0 - mu)).max(1e-10);
            z[i] = eta[i] + (y[i] - mu) / w[i];
        }
        let next = weighted_least_squares(x, &z, Some(&w))?;
        ridge |= next.ridge;
        let step = std::iter::once((next.intercept - fit.intercept).abs())
            .chain(next.coef.iter().zip(&fit.coef).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        fit = next;
        if step < IRLS_TOL {
            fit.ridge = ridge;
            return Some(LogisticFit {
                linear: fit,
                iterations: iter,
                converged: true,
            });
        }
    }
    fit.ridge = ridge;
    Some(LogisticFit {
        linear: fit,
        iterations: IRLS_MAX_ITER,
        converged: false,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
