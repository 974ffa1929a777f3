//! Synthetic sphere phantoms with a controlled signal-to-noise ratio.
//!
//! Each sample is a cubic grid holding one hard-edged sphere. Background
//! voxels are `Normal(bg, sigma^2)` and foreground voxels
//! `Normal(bg + snr * sigma, sigma^2)`, so the SNR is the only covariate that
//! differs between the in-distribution and shifted pools.
//!
//! Randomness: sample `id` of a dataset seeded with `seed` draws everything
//! (SNR, radius, center, noise) from `ChaCha8Rng::seed_from_u64(seed)` with
//! its stream set to `id`. Samples are therefore independent of generation
//! order and identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Image3D, Mask3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub fg_intensity: f64,
    pub bg_intensity: f64,
    pub noise_sigma: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calib,
    IdTest,
    ShiftTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Calib, Split::IdTest, Split::ShiftTest];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::IdTest => "id_test",
            Split::ShiftTest => "shift_test",
        }
    }

    pub fn is_shifted(&self) -> bool {
        matches!(self, Split::ShiftTest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Image3D,
    pub truth: Mask3D,
    pub spec: SphereSpec,
}

/// Distribution the per-sample SNR is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnrDistribution {
    Uniform {
        low: f64,
        high: f64,
    },
    /// Normal(mean, std^2) conditioned on `>= floor` (rejection sampled).
    TruncatedNormal {
        mean: f64,
        std: f64,
        floor: f64,
    },
}

impl SnrDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SnrDistribution::Uniform { low, high } => low > 0.0 && high >= low && high.is_finite(),
            SnrDistribution::TruncatedNormal { mean, std, floor } => {
                floor > 0.0 && std > 0.0 && mean.is_finite() && std.is_finite()
                    // keep rejection sampling cheap
                    && mean + 4.0 * std > floor
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SNR distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrDistribution::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            SnrDistribution::TruncatedNormal { mean, std, floor } => {
                let normal = Normal::new(mean, std).expect("validated std");
                loop {
                    let v = normal.sample(rng);
                    if v >= floor {
                        return v;
                    }
                }
            }
        }
    }
}

/// Knobs of the phantom generator and the four dataset splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub grid_dim: usize,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_id_test: usize,
    pub n_shift_test: usize,
    pub id_snr: SnrDistribution,
    pub shift_snr: SnrDistribution,
    pub radius_range: (f64, f64),
    pub bg_intensity: f64,
    pub noise_sigma: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            grid_dim: 32,
            n_train: 1000,
            n_calib: 1000,
            n_id_test: 1000,
            n_shift_test: 1000,
            id_snr: SnrDistribution::TruncatedNormal {
                mean: 4.0,
                std: 1.0,
                floor: 1.0,
            },
            shift_snr: SnrDistribution::TruncatedNormal {
                mean: 2.75,
                std: 1.0,
                floor: 1.0,
            },
            radius_range: (4.0, 10.0),
            bg_intensity: 0.0,
            noise_sigma: 1.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_dim < 8 {
            return Err(Error::Config(format!(
                "grid_dim must be >= 8, got {}",
                self.grid_dim
            )));
        }
        if [
            self.n_train,
            self.n_calib,
            self.n_id_test,
            self.n_shift_test,
        ]
        .contains(&0)
        {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite())
            || !self.bg_intensity.is_finite()
        {
            return Err(Error::Config(
                "noise_sigma must be > 0 and bg_intensity finite".into(),
            ));
        }
        check_radius_range(self.grid_dim, self.radius_range)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.id_snr.validate()?;
        self.shift_snr.validate()
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Calib => self.n_calib,
            Split::IdTest => self.n_id_test,
            Split::ShiftTest => self.n_shift_test,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|&s| self.split_size(s)).sum()
    }

    /// Ids are assigned contiguously: train, calib, id_test, shift_test.
    pub fn ids(&self, split: Split) -> std::ops::Range<u64> {
        let mut start = 0;
        for s in Split::ALL {
            let n = self.split_size(s) as u64;
            if s == split {
                return start..start + n;
            }
            start += n;
        }
        unreachable!()
    }

    pub fn split_of(&self, id: u64) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.ids(s).contains(&id))
    }

    fn snr_distribution(&self, split: Split) -> &SnrDistribution {
        if split.is_shifted() {
            &self.shift_snr
        } else {
            &self.id_snr
        }
    }
}

fn check_radius_range(grid_dim: usize, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && 2.0 * hi <= grid_dim as f64) {
        return Err(Error::invalid(format!(
            "radius range ({lo}, {hi}) infeasible for a {grid_dim}^3 grid"
        )));
    }
    Ok(())
}

/// Generator state for one sample: seed plus per-sample stream.
fn sample_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_sample<R: Rng>(
    rng: &mut R,
    id: u64,
    grid_dim: usize,
    snr: f64,
    radius_range: (f64, f64),
    bg_intensity: f64,
    noise_sigma: f64,
) -> Result<Sample> {
    let dims = Dims::cube(grid_dim)?;
    let (rlo, rhi) = radius_range;
    let radius = if rhi > rlo {
        rng.random_range(rlo..rhi)
    } else {
        rlo
    };
    let side = grid_dim as f64;
    let mut center = [0.0; 3];
    for c in &mut center {
        // containment: radius <= distance from center to every face
        *c = if side - radius > radius {
            rng.random_range(radius..side - radius)
        } else {
            radius
        };
    }
    let fg_intensity = bg_intensity + snr * noise_sigma;
    let truth = Mask3D::sphere(dims, center, radius);
    let data = truth
        .data()
        .iter()
        .map(|&m| {
            let base = if m == 1 { fg_intensity } else { bg_intensity };
            let z: f64 = rng.sample(StandardNormal);
            (base + noise_sigma * z) as f32
        })
        .collect();
    Ok(Sample {
        id,
        image: Image3D::new(dims, data)?,
        truth,
        spec: SphereSpec {
            center,
            radius,
            fg_intensity,
            bg_intensity,
            noise_sigma,
            snr,
        },
    })
}

/// One phantom with the given SNR, background 0 and unit noise.
pub fn generate_sample(
    seed: u64,
    id: u64,
    grid_dim: usize,
    snr: f64,
    radius_range: (f64, f64),
) -> Result<Sample> {
    if grid_dim < 8 {
        return Err(Error::invalid(format!(
            "grid_dim must be >= 8, got {grid_dim}"
        )));
    }
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::invalid(format!("snr must be > 0, got {snr}")));
    }
    check_radius_range(grid_dim, radius_range)?;
    draw_sample(
        &mut sample_rng(seed, id),
        id,
        grid_dim,
        snr,
        radius_range,
        0.0,
        1.0,
    )
}

/// Sample `id` of the dataset described by `config`.
pub fn generate_dataset_sample(seed: u64, config: &GenerationConfig, id: u64) -> Result<Sample> {
    let split = config
        .split_of(id)
        .ok_or_else(|| Error::invalid(format!("sample id {id} outside the dataset")))?;
    let mut rng = sample_rng(seed, id);
    let snr = config.snr_distribution(split).sample(&mut rng);
    draw_sample(
        &mut rng,
        id,
        config.grid_dim,
        snr,
        config.radius_range,
        config.bg_intensity,
        config.noise_sigma,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Sample>,
    pub calib: Vec<Sample>,
    pub id_test: Vec<Sample>,
    pub shift_test: Vec<Sample>,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Calib => &self.calib,
            Split::IdTest => &self.id_test,
            Split::ShiftTest => &self.shift_test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &Sample)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.get(s).iter().map(move |x| (s, x)))
    }
}

pub fn generate_split(seed: u64, config: &GenerationConfig, split: Split) -> Result<Vec<Sample>> {
    config.validate()?;
    config
        .ids(split)
        .map(|id| generate_dataset_sample(seed, config, id))
        .collect()
}

/// All four splits. Holds every image in memory; the experiment runner
/// streams samples instead.
pub fn generate_splits(seed: u64, config: &GenerationConfig) -> Result<DatasetSplits> {
    Ok(DatasetSplits {
        train: generate_split(seed, config, Split::Train)?,
        calib: generate_split(seed, config, Split::Calib)?,
        id_test: generate_split(seed, config, Split::IdTest)?,
        shift_test: generate_split(seed, config, Split::ShiftTest)?,
    })
}

/// `(mean inside - mean outside) / std outside`.
pub fn snr_of(image: &Image3D, truth: &Mask3D) -> Result<f64> {
    if image.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            left: image.dims().as_tuple(),
            right: truth.dims().as_tuple(),
        });
    }
    let (mut n_in, mut s_in) = (0usize, 0.0f64);
    let (mut n_out, mut s_out, mut ss_out) = (0usize, 0.0f64, 0.0f64);
    for (&v, &m) in image.data().iter().zip(truth.data()) {
        let v = f64::from(v);
        if m == 1 {
            n_in += 1;
            s_in += v;
        } else {
            n_out += 1;
            s_out += v;
            ss_out += v * v;
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(Error::invalid(
            "SNR needs a mask that is neither empty nor full",
        ));
    }
    let mean_in = s_in / n_in as f64;
    let mean_out = s_out / n_out as f64;
    let var_out = (ss_out / n_out as f64 - mean_out * mean_out).max(0.0);
    if var_out == 0.0 {
        return Err(Error::invalid("background has zero variance"));
    }
    Ok((mean_in - mean_out) / var_out.sqrt())
}
