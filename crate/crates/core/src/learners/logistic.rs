//! Binary and multinomial logistic regression fitted by Newton/IRLS.

use nalgebra::{DMatrix, DVector};

use super::design::Standardizer;
use super::Hyper;

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn solve_spd(mut a: DMatrix<f64>, b: DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(&b)),
        None => a.lu().solve(&b),
    }
}

/// Binary logistic regression on standardized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    standardizer: Standardizer,
    /// Intercept first.
    coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn linear_predictor(coef: &[f64], cols: &[Vec<f64>], i: usize) -> f64 {
    coef[0]
        + cols
            .iter()
            .zip(&coef[1..])
            .map(|(c, b)| c[i] * b)
            .sum::<f64>()
}

fn bernoulli_loglik(coef: &[f64], cols: &[Vec<f64>], y: &[u8]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let eta = linear_predictor(coef, cols, i);
            // log(1 + e^eta) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            f64::from(yi) * eta - softplus
        })
        .sum()
}

impl Logistic {
    /// IRLS with step-halving. `cols` are raw (unstandardized) columns.
    pub fn fit(cols: &[Vec<f64>], y: &[u8], hyper: &Hyper) -> Logistic {
        let standardizer = Standardizer::fit(cols);
        let z = standardizer.apply(cols);
        let n = y.len();
        let p = z.len() + 1;
        let mut coef = vec![0.0; p];
        let mut loglik = bernoulli_loglik(&coef, &z, y);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < hyper.irls_max_iter {
            iterations += 1;
            let mut xtwx = DMatrix::<f64>::zeros(p, p);
            let mut xtwz = DVector::<f64>::zeros(p);
            let mut row = vec![0.0; p];
            row[0] = 1.0;
            for i in 0..n {
                for (j, c) in z.iter().enumerate() {
                    row[j + 1] = c[i];
                }
                let eta = linear_predictor(&coef, &z, i);
                let mu = expit(eta);
                let w = (mu * (1.0 - mu)).max(1e-10);
                let work = eta + (f64::from(y[i]) - mu) / w;
                for a in 0..p {
                    xtwz[a] += w * row[a] * work;
                    for b in 0..=a {
                        xtwx[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    xtwx[(b, a)] = xtwx[(a, b)];
                }
            }
            let Some(target) = solve_spd(xtwx, xtwz, hyper.ridge) else {
                break;
            };
            let step: Vec<f64> = target.iter().zip(&coef).map(|(t, c)| t - c).collect();
            let mut scale = 1.0;
            let mut candidate: Vec<f64>;
            let mut cand_ll;
            let mut halvings = 0;
            loop {
                candidate = coef.iter().zip(&step).map(|(c, s)| c + scale * s).collect();
                cand_ll = bernoulli_loglik(&candidate, &z, y);
                if cand_ll >= loglik - 1e-12 * loglik.abs().max(1.0) || halvings >= 10 {
                    break;
                }
                scale *= 0.5;
                halvings += 1;
            }
            let change = candidate
                .iter()
                .zip(&coef)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            coef = candidate;
            loglik = cand_ll;
            if change < hyper.irls_tol {
                converged = true;
                break;
            }
        }
        Logistic {
            standardizer,
            coef,
            converged,
            iterations,
        }
    }

    pub fn predict(&self, cols: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let z = self.standardizer.apply(cols);
        (0..n_rows)
            .map(|i| expit(linear_predictor(&self.coef, &z, i)))
            .collect()
    }
}

/// Multinomial logistic regression with the first class as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Multinomial {
    standardizer: Standardizer,
    n_classes: usize,
    /// `(n_classes - 1) × (p + 1)` coefficients, row per non-reference class.
    coef: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

fn softmax_row(coef: &[Vec<f64>], z: &[Vec<f64>], i: usize, out: &mut [f64]) {
    out[0] = 0.0;
    for (c, b) in coef.iter().enumerate() {
        out[c + 1] = linear_predictor(b, z, i);
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in out.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in out.iter_mut() {
        *v /= s;
    }
}

fn multinomial_loglik(coef: &[Vec<f64>], z: &[Vec<f64>], y: &[usize], n_classes: usize) -> f64 {
    let mut probs = vec![0.0; n_classes];
    y.iter()
        .enumerate()
        .map(|(i, &c)| {
            softmax_row(coef, z, i, &mut probs);
            probs[c].max(1e-300).ln()
        })
        .sum()
}

impl Multinomial {
    /// Newton-Raphson with step-halving. Class labels in `y` are `0..n_classes`.
    pub fn fit(cols: &[Vec<f64>], y: &[usize], n_classes: usize, hyper: &Hyper) -> Multinomial {
        let standardizer = Standardizer::fit(cols);
        let z = standardizer.apply(cols);
        let n = y.len();
        let p = z.len() + 1;
        let m = n_classes - 1;
        let dim = m * p;
        let mut coef = vec![vec![0.0; p]; m];
        let mut loglik = multinomial_loglik(&coef, &z, y, n_classes);
        let mut converged = false;
        let mut iterations = 0;
        let mut probs = vec![0.0; n_classes];
        let mut row = vec![0.0; p];
        row[0] = 1.0;
        while m > 0 && iterations < hyper.irls_max_iter {
            iterations += 1;
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            let mut grad = DVector::<f64>::zeros(dim);
            for i in 0..n {
                for (j, c) in z.iter().enumerate() {
                    row[j + 1] = c[i];
                }
                softmax_row(&coef, &z, i, &mut probs);
                for a in 0..m {
                    let resid = f64::from(u8::from(y[i] == a + 1)) - probs[a + 1];
                    for u in 0..p {
                        grad[a * p + u] += resid * row[u];
                    }
                    for b in 0..=a {
                        let w = if a == b {
                            probs[a + 1] * (1.0 - probs[a + 1])
                        } else {
                            -probs[a + 1] * probs[b + 1]
                        };
                        for u in 0..p {
                            for v in 0..p {
                                hess[(a * p + u, b * p + v)] += w * row[u] * row[v];
                            }
                        }
                    }
                }
            }
            for r in 0..dim {
                for c in (r + 1)..dim {
                    hess[(r, c)] = hess[(c, r)];
                }
            }
            let Some(step) = solve_spd(hess, grad, hyper.ridge.max(1e-10)) else {
                break;
            };
            let mut scale = 1.0;
            let mut halvings = 0;
            let mut candidate;
            let mut cand_ll;
            loop {
                candidate = coef.clone();
                for a in 0..m {
                    for u in 0..p {
                        candidate[a][u] += scale * step[a * p + u];
                    }
                }
                cand_ll = multinomial_loglik(&candidate, &z, y, n_classes);
                if cand_ll >= loglik - 1e-12 * loglik.abs().max(1.0) || halvings >= 10 {
                    break;
                }
                scale *= 0.5;
                halvings += 1;
            }
            let change = step.iter().map(|s| (scale * s).abs()).fold(0.0, f64::max);
            coef = candidate;
            loglik = cand_ll;
            if change < hyper.irls_tol {
                converged = true;
                break;
            }
        }
        Multinomial {
            standardizer,
            n_classes,
            coef,
            converged: converged || m == 0,
            iterations,
        }
    }

    /// Class probabilities, one vector per row.
    pub fn predict(&self, cols: &[Vec<f64>], n_rows: usize) -> Vec<Vec<f64>> {
        let z = self.standardizer.apply(cols);
        (0..n_rows)
            .map(|i| {
                let mut probs = vec![0.0; self.n_classes];
                softmax_row(&self.coef, &z, i, &mut probs);
                probs
            })
            .collect()
    }
}
