//! Three-threshold volume estimator.
//!
//! Stands in for a three-headed segmentation network: a restrictive head
//! (high threshold, lower-bound volume), a balanced head (point estimate) and
//! a permissive head (low threshold, upper-bound volume). Each threshold
//! minimizes the mean Tversky loss of its head on the training images, with
//! penalties `(1 - gamma, gamma)`, `(0.5, 0.5)` and `(gamma, 1 - gamma)` on
//! false positives and false negatives respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Sample;
use crate::volume::{volume, Image3D, Mask3D, OverlapParams};

/// Number of evenly spaced candidate thresholds.
pub const THRESHOLD_GRID: usize = 512;
/// Pooled-intensity quantiles bounding the candidate grid.
pub const GRID_QUANTILES: (f64, f64) = (0.001, 0.999);
pub const DEFAULT_GAMMA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriThresholds {
    pub t_lower: f64,
    pub t_mean: f64,
    pub t_upper: f64,
    pub gamma: f64,
}

impl TriThresholds {
    pub fn new(t_lower: f64, t_mean: f64, t_upper: f64, gamma: f64) -> Result<Self> {
        if !(t_upper <= t_mean && t_mean <= t_lower) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy upper <= mean <= lower, got {t_upper}, {t_mean}, {t_lower}"
            )));
        }
        Ok(Self {
            t_lower,
            t_mean,
            t_upper,
            gamma,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: TriThresholds = serde_json::from_str(s)?;
        Self::new(t.t_lower, t.t_mean, t.t_upper, t.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriMask {
    pub lower: Mask3D,
    pub mean: Mask3D,
    pub upper: Mask3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeTriple {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

/// Foreground and background intensities of one training image, sorted, so
/// that confusion counts at any threshold are two binary searches.
struct SortedIntensities {
    fg: Vec<f32>,
    bg: Vec<f32>,
}

impl SortedIntensities {
    fn new(image: &Image3D, truth: &Mask3D) -> Self {
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for (&v, &m) in image.data().iter().zip(truth.data()) {
            if m == 1 {
                fg.push(v);
            } else {
                bg.push(v);
            }
        }
        fg.sort_unstable_by(f32::total_cmp);
        bg.sort_unstable_by(f32::total_cmp);
        Self { fg, bg }
    }

    /// Tversky index of `{intensity > t}` against the truth.
    fn tversky(&self, t: f64, alpha: f64, beta: f64, smooth: f64) -> f64 {
        let above = |v: &[f32]| v.len() - v.partition_point(|&x| f64::from(x) <= t);
        let tp = above(&self.fg) as f64;
        let fp = above(&self.bg) as f64;
        let fn_ = self.fg.len() as f64 - tp;
        (tp + smooth) / (tp + alpha * fp + beta * fn_ + smooth)
    }
}

/// Accumulates training images for threshold fitting without keeping them.
pub struct ThresholdFitter {
    gamma: f64,
    stats: Vec<SortedIntensities>,
}

impl ThresholdFitter {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 0.5], got {gamma}"
            )));
        }
        Ok(Self {
            gamma,
            stats: Vec::new(),
        })
    }

    pub fn add(&mut self, image: &Image3D, truth: &Mask3D) -> Result<()> {
        if image.dims() != truth.dims() {
            return Err(Error::DimensionMismatch {
                left: image.dims().as_tuple(),
                right: truth.dims().as_tuple(),
            });
        }
        self.stats.push(SortedIntensities::new(image, truth));
        Ok(())
    }

    /// Candidate thresholds: evenly spaced between the pooled 0.1% and 99.9%
    /// intensity quantiles.
    pub fn candidates(&self) -> Result<Vec<f64>> {
        let total: usize = self.stats.iter().map(|s| s.fg.len() + s.bg.len()).sum();
        if total == 0 {
            return Err(Error::Empty("training set"));
        }
        let lo = self.pooled_quantile(GRID_QUANTILES.0, total);
        let hi = self.pooled_quantile(GRID_QUANTILES.1, total);
        let step = (hi - lo) / (THRESHOLD_GRID - 1) as f64;
        Ok((0..THRESHOLD_GRID).map(|i| lo + step * i as f64).collect())
    }

    /// Order statistic at rank `floor(q * (total - 1))` of all pooled
    /// intensities.
    fn pooled_quantile(&self, q: f64, total: usize) -> f64 {
        let rank = (q * (total - 1) as f64).floor() as usize;
        let mut pooled: Vec<f32> = Vec::with_capacity(total);
        for s in &self.stats {
            pooled.extend_from_slice(&s.fg);
            pooled.extend_from_slice(&s.bg);
        }
        let (_, v, _) = pooled.select_nth_unstable_by(rank, f32::total_cmp);
        f64::from(*v)
    }

    /// Mean Tversky loss per candidate for one head.
    fn losses(&self, candidates: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
        let n = self.stats.len() as f64;
        candidates
            .iter()
            .map(|&t| {
                self.stats
                    .iter()
                    .map(|s| 1.0 - s.tversky(t, alpha, beta, OverlapParams::DEFAULT_SMOOTH))
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    pub fn fit(&self) -> Result<TriThresholds> {
        if self.stats.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let cands = self.candidates()?;
        let g = self.gamma;
        let argmin = |losses: &[f64], prefer_larger: bool| -> f64 {
            let mut best = 0;
            for (i, &l) in losses.iter().enumerate() {
                let better = if prefer_larger {
                    l <= losses[best]
                } else {
                    l < losses[best]
                };
                if better {
                    best = i;
                }
            }
            cands[best]
        };
        let lower = argmin(&self.losses(&cands, 1.0 - g, g), true);
        let mean = argmin(&self.losses(&cands, 0.5, 0.5), true);
        let upper = argmin(&self.losses(&cands, g, 1.0 - g), false);
        let mut t = [lower, mean, upper];
        t.sort_by(|a, b| b.total_cmp(a));
        TriThresholds::new(t[0], t[1], t[2], g)
    }
}

/// Grid search of the three head thresholds on `train`.
pub fn fit_thresholds(train: &[Sample], gamma: f64) -> Result<TriThresholds> {
    let mut fitter = ThresholdFitter::new(gamma)?;
    for s in train {
        fitter.add(&s.image, &s.truth)?;
    }
    fitter.fit()
}

pub fn predict(image: &Image3D, th: &TriThresholds) -> TriMask {
    TriMask {
        lower: Mask3D::threshold(image, th.t_lower),
        mean: Mask3D::threshold(image, th.t_mean),
        upper: Mask3D::threshold(image, th.t_upper),
    }
}

pub fn volumes(tm: &TriMask, voxel_volume: f64) -> VolumeTriple {
    VolumeTriple {
        lo: volume(&tm.lower, voxel_volume),
        mid: volume(&tm.mean, voxel_volume),
        hi: volume(&tm.upper, voxel_volume),
    }
}

/// Volume triple straight from the image, without materializing the masks.
pub fn predict_volumes(image: &Image3D, th: &TriThresholds) -> VolumeTriple {
    let (mut lo, mut mid, mut hi) = (0usize, 0usize, 0usize);
    for &v in image.data() {
        let v = f64::from(v);
        lo += usize::from(v > th.t_lower);
        mid += usize::from(v > th.t_mean);
        hi += usize::from(v > th.t_upper);
    }
    let vv = image.voxel_volume();
    VolumeTriple {
        lo: lo as f64 * vv,
        mid: mid as f64 * vv,
        hi: hi as f64 * vv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_sample;
    use crate::volume::{dice, Dims};

    fn noiseless(id: u64) -> Sample {
        let dims = Dims::cube(12).unwrap();
        let truth = Mask3D::sphere(dims, [6.0, 6.0, 6.0], 3.0 + id as f64 * 0.5);
        let data = truth.data().iter().map(|&m| 5.0 * f32::from(m)).collect();
        let s = generate_sample(0, id, 12, 5.0, (3.0, 4.0)).unwrap();
        Sample {
            id,
            image: Image3D::new(dims, data).unwrap(),
            truth,
            spec: s.spec,
        }
    }

    #[test]
    fn separable_training_set() {
        let train: Vec<Sample> = (0..3).map(noiseless).collect();
        let th = fit_thresholds(&train, 0.2).unwrap();
        for t in [th.t_lower, th.t_mean, th.t_upper] {
            assert!((0.0..5.0).contains(&t), "{th:?}");
        }
        assert!(th.t_upper <= th.t_mean && th.t_mean <= th.t_lower);
        for s in &train {
            let tm = predict(&s.image, &th);
            assert_eq!(tm.mean, s.truth);
        }
    }

    #[test]
    fn symmetric_gamma_collapses_heads() {
        let train: Vec<Sample> = (0..6)
            .map(|i| generate_sample(4, i, 16, 2.0, (3.0, 6.0)).unwrap())
            .collect();
        let th = fit_thresholds(&train, 0.5).unwrap();
        assert_eq!(th.t_lower, th.t_mean);
        assert_eq!(th.t_mean, th.t_upper);
    }

    #[test]
    fn empty_training_set_errors() {
        assert!(matches!(fit_thresholds(&[], 0.2), Err(Error::Empty(_))));
        assert!(ThresholdFitter::new(0.0).is_err());
        assert!(ThresholdFitter::new(0.7).is_err());
    }

    #[test]
    fn prediction_edge_cases() {
        let dims = Dims::cube(4).unwrap();
        let img = Image3D::filled(dims, -1.0);
        let th = TriThresholds::new(2.0, 1.0, 0.0, 0.2).unwrap();
        let tm = predict(&img, &th);
        assert_eq!(tm.lower.count() + tm.mean.count() + tm.upper.count(), 0);
        assert_eq!(
            volumes(&tm, 1.0),
            VolumeTriple {
                lo: 0.0,
                mid: 0.0,
                hi: 0.0
            }
        );

        let s = generate_sample(2, 0, 16, 1.0, (3.0, 5.0)).unwrap();
        let same = TriThresholds::new(0.7, 0.7, 0.7, 0.2).unwrap();
        let tm = predict(&s.image, &same);
        assert_eq!(tm.lower, tm.mean);
        assert_eq!(tm.mean, tm.upper);

        assert!(TriThresholds::new(0.0, 1.0, 2.0, 0.2).is_err());
    }

    #[test]
    fn counting_volumes() {
        let dims = Dims::new(3, 1, 1).unwrap();
        let img = Image3D::new(dims, vec![3.0, 2.0, 1.0]).unwrap();
        let th = TriThresholds::new(2.5, 1.5, 0.5, 0.2).unwrap();
        let tm = predict(&img, &th);
        assert_eq!(
            volumes(&tm, 1.0),
            VolumeTriple {
                lo: 1.0,
                mid: 2.0,
                hi: 3.0
            }
        );
        assert_eq!(predict_volumes(&img, &th), volumes(&tm, 1.0));
    }

    #[test]
    fn fitted_mean_head_segments_moderate_snr() {
        let train: Vec<Sample> = (0..40)
            .map(|i| generate_sample(10, i, 32, 2.0 + (i % 7) as f64 * 0.5, (4.0, 10.0)).unwrap())
            .collect();
        let th = fit_thresholds(&train, 0.2).unwrap();
        let s = generate_sample(99, 0, 32, 4.0, (7.0, 8.0)).unwrap();
        let tm = predict(&s.image, &th);
        assert!(tm.lower.is_subset_of(&tm.mean) && tm.mean.is_subset_of(&tm.upper));
        let d = dice(&tm.mean, &s.truth).unwrap();
        assert!(d >= 0.85, "dice {d}, thresholds {th:?}");
    }

    #[test]
    fn json_round_trip() {
        let th = TriThresholds::new(2.5, 2.0, 1.25, 0.2).unwrap();
        let s = th.to_json().unwrap();
        for key in ["t_lower", "t_mean", "t_upper", "gamma"] {
            assert!(s.contains(key));
        }
        assert_eq!(TriThresholds::from_json(&s).unwrap(), th);
        assert!(
            TriThresholds::from_json(r#"{"t_lower":0,"t_mean":1,"t_upper":2,"gamma":0.2}"#)
                .is_err()
        );
    }
}
