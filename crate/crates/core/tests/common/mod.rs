#![allow(dead_code)]

use rand::Rng;
use wcpvol::conformal::MASS_TOLERANCE;
use wcpvol::volume::{Dims, Mask3D};

/// Direct reading of the weighted quantile: for every observed score, sum
/// the masses of scores at or below it; return the smallest one reaching
/// `1 - alpha`.
pub fn brute_force_weighted_quantile(scores: &[f64], p: &[f64], alpha: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &s in scores {
        let mass: f64 = scores
            .iter()
            .zip(p)
            .filter(|(&si, _)| si <= s)
            .map(|(_, &pi)| pi)
            .sum();
        if mass >= 1.0 - alpha - MASS_TOLERANCE && s < best {
            best = s;
        }
    }
    best
}

/// `k`-th smallest score with `k = ceil((n+1)(1-alpha))` computed in exact
/// rational arithmetic (alpha given as `num / den`).
pub fn exact_standard_quantile(scores: &[f64], num: u64, den: u64) -> f64 {
    let n = scores.len() as u64;
    let k = ((n + 1) * (den - num)).div_ceil(den);
    if k > n {
        return f64::INFINITY;
    }
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[k as usize - 1]
}

pub fn random_mask<R: Rng>(rng: &mut R, dims: Dims, density: f64) -> Mask3D {
    Mask3D::from_fn(dims, |_, _, _| rng.random_bool(density))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}
