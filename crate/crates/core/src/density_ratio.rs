//! Classifier-based density-ratio estimation.
//!
//! Calibration samples are labeled 0 and test samples 1; an L2-penalized
//! logistic regression separates the two pools and its probability `p` turns
//! into the importance weight `w = p / (1 - p)` after clipping `p` to
//! `[0.01, 0.99]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLIP_LOW: f64 = 0.01;
pub const PROB_CLIP_HIGH: f64 = 0.99;

/// Solver settings for [`fit_logistic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    pub l2_lambda: f64,
    /// Convergence threshold on the infinity norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-4,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Per-feature centering and scaling. Zero-variance features get `std = 0`
/// and map to all-zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().ok_or(Error::Empty("feature rows"))?.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // relative cutoff so that constant columns with rounding noise count as constant
                if sd <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn active(&self) -> Vec<bool> {
        self.std.iter().map(|s| *s > 0.0).collect()
    }
}

/// Standardized design matrix with binary pool labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    standardization: Standardization,
}

impl FeatureMatrix {
    /// Standardizes `rows` with their own mean and standard deviation.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let d = validate_rows(&rows)?;
        if d == 0 {
            return Err(Error::invalid("need at least one feature"));
        }
        if labels.len() != rows.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|&c| c > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let standardization = Standardization::fit(&rows)?;
        let rows = rows.iter().map(|r| standardization.apply(r)).collect();
        Ok(Self {
            rows,
            labels,
            standardization,
        })
    }

    /// Calibration rows labeled 0 followed by test rows labeled 1.
    pub fn from_pools(calib: &[Vec<f64>], test: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = calib.iter().chain(test).cloned().collect();
        let labels = std::iter::repeat_n(0u8, calib.len())
            .chain(std::iter::repeat_n(1u8, test.len()))
            .collect();
        Self::new(rows, labels)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn n_features(&self) -> usize {
        self.standardization.mean.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Design<'_> {
        Design {
            rows: idx.iter().map(|&i| self.rows[i].as_slice()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn all(&self) -> Design<'_> {
        Design {
            rows: self.rows.iter().map(Vec::as_slice).collect(),
            labels: self.labels.clone(),
        }
    }
}

fn validate_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().ok_or(Error::Empty("feature rows"))?.len();
    for r in rows {
        if r.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
    }
    Ok(d)
}

/// Borrowed view of (already standardized) training rows.
struct Design<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l2_lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Applied to raw inputs by [`LogisticModel::predict_proba`].
    pub standardization: Option<Standardization>,
}

impl LogisticModel {
    /// Probability of the test pool for a raw (unstandardized) feature vector.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::LengthMismatch {
                expected: self.coefficients.len(),
                actual: x.len(),
            });
        }
        match &self.standardization {
            Some(s) => Ok(self.predict_standardized(&s.apply(x))),
            None => Ok(self.predict_standardized(x)),
        }
    }

    fn predict_standardized(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, x)
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Penalized log-likelihood at `params = [intercept, coef...]` on
/// standardized features.
pub fn penalized_log_likelihood(params: &[f64], features: &FeatureMatrix, l2_lambda: f64) -> f64 {
    objective(params, &features.all(), l2_lambda)
}

/// Analytic gradient of [`penalized_log_likelihood`].
pub fn penalized_gradient(params: &[f64], features: &FeatureMatrix, l2_lambda: f64) -> Vec<f64> {
    gradient(params, &features.all(), l2_lambda, None)
}

fn objective(params: &[f64], design: &Design<'_>, l2_lambda: f64) -> f64 {
    let (b0, coef) = params.split_first().expect("params hold the intercept");
    let mut ll = 0.0;
    for (x, &c) in design.rows.iter().zip(&design.labels) {
        let eta = b0 + dot(coef, x);
        // c*log(sig(eta)) + (1-c)*log(1-sig(eta)) = c*eta - log(1 + e^eta)
        ll += f64::from(c) * eta - softplus(eta);
    }
    ll - 0.5 * l2_lambda * dot(coef, coef)
}

fn gradient(
    params: &[f64],
    design: &Design<'_>,
    l2_lambda: f64,
    active: Option<&[bool]>,
) -> Vec<f64> {
    let (b0, coef) = params.split_first().expect("params hold the intercept");
    let mut g = vec![0.0; params.len()];
    for (x, &c) in design.rows.iter().zip(&design.labels) {
        let r = f64::from(c) - sigmoid(b0 + dot(coef, x));
        g[0] += r;
        for (gj, xj) in g[1..].iter_mut().zip(x.iter()) {
            *gj += r * xj;
        }
    }
    for (j, (gj, bj)) in g[1..].iter_mut().zip(coef).enumerate() {
        *gj -= l2_lambda * bj;
        if active.is_some_and(|a| !a[j]) {
            *gj = 0.0;
        }
    }
    g
}

/// Negative Hessian of the objective (positive definite when lambda > 0).
fn neg_hessian(params: &[f64], design: &Design<'_>, l2_lambda: f64) -> Vec<f64> {
    let p = params.len();
    let (b0, coef) = params.split_first().expect("params hold the intercept");
    let mut h = vec![0.0; p * p];
    let mut xa = vec![0.0; p];
    xa[0] = 1.0;
    for x in &design.rows {
        let mu = sigmoid(b0 + dot(coef, x));
        let w = mu * (1.0 - mu);
        xa[1..].copy_from_slice(x);
        for i in 0..p {
            let wi = w * xa[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut h[i * p..i * p + i + 1];
            for (hij, xj) in row.iter_mut().zip(&xa[..=i]) {
                *hij += wi * xj;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            h[j * p + i] = h[i * p + j];
        }
    }
    for j in 1..p {
        h[j * p + j] += l2_lambda;
    }
    h
}

/// Solves `a x = b` for symmetric positive (semi)definite `a` by Cholesky,
/// adding diagonal jitter if the factorization breaks down.
fn solve_spd(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky(a, n, jitter) {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
                y[i] = (b[i] - s) / l[i * n + i];
            }
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * n + i];
            }
            return x;
        }
        jitter = if jitter == 0.0 {
            1e-12 * scale
        } else {
            jitter * 10.0
        };
    }
}

fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] + jitter - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let ones = labels.iter().filter(|&&c| c == 1).count();
    (labels.len() - ones, ones)
}

/// Maximizes the penalized log-likelihood by damped Newton steps
/// (iteratively reweighted least squares). The intercept is not penalized;
/// zero-variance features keep a zero coefficient.
pub fn fit_logistic(features: &FeatureMatrix, options: &LogisticOptions) -> Result<LogisticModel> {
    let design = features.all();
    let mut model = fit_design(&design, &features.standardization.active(), options, None)?;
    model.standardization = Some(features.standardization.clone());
    Ok(model)
}

fn fit_design(
    design: &Design<'_>,
    active: &[bool],
    options: &LogisticOptions,
    warm_start: Option<&[f64]>,
) -> Result<LogisticModel> {
    let (zeros, ones) = class_counts(&design.labels);
    if zeros == 0 || ones == 0 {
        return Err(Error::SingleClass);
    }
    if !(options.l2_lambda >= 0.0 && options.tol > 0.0) {
        return Err(Error::invalid("l2_lambda must be >= 0 and tol > 0"));
    }
    let d = active.len();
    let mut params = match warm_start {
        Some(p) => p.to_vec(),
        None => {
            let mut p = vec![0.0; d + 1];
            p[0] = (ones as f64 / zeros as f64).ln();
            p
        }
    };
    let lambda = options.l2_lambda;
    let mut value = objective(&params, design, lambda);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        let g = gradient(&params, design, lambda, Some(active));
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= options.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut h = neg_hessian(&params, design, lambda);
        // pin inactive coordinates
        for (j, &a) in active.iter().enumerate() {
            if !a {
                let k = j + 1;
                for i in 0..=d {
                    h[k * (d + 1) + i] = 0.0;
                    h[i * (d + 1) + k] = 0.0;
                }
                h[k * (d + 1) + k] = 1.0;
            }
        }
        let step = solve_spd(&h, &g);
        let slope = dot(&g, &step);
        // near the optimum the gain drops below the rounding error of the sum
        let noise = 8.0 * f64::EPSILON * value.abs();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + t * s).collect();
            let v = objective(&trial, design, lambda);
            if v.is_finite() && v >= value + 1e-4 * t * slope - noise {
                params = trial;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent possible at machine precision
            break;
        }
    }
    if !converged {
        let g = gradient(&params, design, lambda, Some(active));
        converged = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= options.tol;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("logistic parameters"));
    }
    Ok(LogisticModel {
        intercept: params[0],
        coefficients: params[1..].to_vec(),
        l2_lambda: lambda,
        converged,
        iterations,
        standardization: None,
    })
}

/// Deterministic stratified fold assignment: each class is shuffled by
/// `seed` and dealt round-robin into `folds` buckets.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

/// Out-of-fold probabilities for the pooled calibration (label 0) and test
/// (label 1) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitOutput {
    pub calib_probs: Vec<f64>,
    pub test_probs: Vec<f64>,
    pub folds_used: usize,
}

impl CrossFitOutput {
    /// Accuracy of the out-of-fold predictions against the pool labels.
    pub fn accuracy(&self) -> f64 {
        let correct = self.calib_probs.iter().filter(|&&p| p <= 0.5).count()
            + self.test_probs.iter().filter(|&&p| p > 0.5).count();
        correct as f64 / (self.calib_probs.len() + self.test_probs.len()) as f64
    }
}

/// Pools calibration and test features, standardizes them jointly and
/// predicts every sample with a model fitted on the other folds. The fold
/// count is reduced to the minority class size when that is smaller.
pub fn cross_fit_probabilities(
    calib: &[Vec<f64>],
    test: &[Vec<f64>],
    folds: usize,
    seed: u64,
    options: &LogisticOptions,
) -> Result<CrossFitOutput> {
    if folds < 2 {
        return Err(Error::invalid("cross-fitting needs at least 2 folds"));
    }
    let minority = calib.len().min(test.len());
    if minority < 2 {
        return Err(Error::invalid(format!(
            "too few samples per class for stratified folds: {} calibration, {} test",
            calib.len(),
            test.len()
        )));
    }
    let folds = folds.min(minority);
    let features = FeatureMatrix::from_pools(calib, test)?;
    let active = features.standardization.active();
    let assignment = stratified_folds(&features.labels, folds, seed);

    // Full-data fit only serves as a warm start for the fold fits.
    let full = fit_design(&features.all(), &active, options, None)?;
    let mut start = vec![full.intercept];
    start.extend_from_slice(&full.coefficients);

    let mut probs = vec![0.0; features.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..features.len())
            .filter(|&i| assignment[i] != fold)
            .collect();
        let model = fit_design(&features.subset(&train), &active, options, Some(&start))?;
        for (i, p) in probs.iter_mut().enumerate() {
            if assignment[i] == fold {
                *p = model.predict_standardized(&features.rows[i]);
            }
        }
    }
    let test_probs = probs.split_off(calib.len());
    Ok(CrossFitOutput {
        calib_probs: probs,
        test_probs,
        folds_used: folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    /// Probability after clipping to `[0.01, 0.99]`.
    pub prob: f64,
    pub weight: f64,
}

impl WeightEstimate {
    pub fn from_prob(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::NonFinite("classifier probability"));
        }
        let prob = p.clamp(PROB_CLIP_LOW, PROB_CLIP_HIGH);
        Ok(Self {
            prob,
            weight: prob / (1.0 - prob),
        })
    }
}

pub fn weights_from_probs(probs: &[f64]) -> Result<Vec<WeightEstimate>> {
    probs
        .iter()
        .map(|&p| WeightEstimate::from_prob(p))
        .collect()
}

/// Fraction of samples where `prob > 0.5` agrees with the label; a
/// probability of exactly 0.5 predicts label 0.
pub fn classifier_accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: probs.len(),
            actual: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("probabilities"));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &c)| u8::from(p > 0.5) == c)
        .count();
    Ok(correct as f64 / probs.len() as f64)
}
