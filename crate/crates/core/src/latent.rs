//! Compressed image descriptors: a fixed bank of random 3D kernels, each
//! response map averaged over all valid positions into one scalar.
//!
//! Latent CSV files carry a header `id,z0,z1,...,z{K-1}` and one row per sample.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Image3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Plain spatial mean of the response map.
    #[default]
    Raw,
    /// Spatial mean of the absolute response.
    Abs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    kernel_size: usize,
    seed: u64,
    /// `K` kernels, each `kernel_size^3` coefficients with x fastest.
    kernels: Vec<Vec<f64>>,
}

impl FilterBank {
    /// Kernels drawn from a standard normal, then centered to zero mean and
    /// scaled to unit norm.
    pub fn random(seed: u64, k: usize, kernel_size: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("filter bank needs at least one kernel"));
        }
        if kernel_size.is_multiple_of(2) || kernel_size < 3 {
            // a 1-tap kernel cannot be both zero-mean and unit-norm
            return Err(Error::invalid(format!(
                "kernel size must be odd and >= 3, got {kernel_size}"
            )));
        }
        let taps = kernel_size.pow(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = (0..k)
            .map(|_| {
                let mut w: Vec<f64> = (0..taps).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mean = w.iter().sum::<f64>() / taps as f64;
                w.iter_mut().for_each(|v| *v -= mean);
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                w.iter_mut().for_each(|v| *v /= norm);
                w
            })
            .collect();
        Ok(Self {
            kernel_size,
            seed,
            kernels,
        })
    }

    /// Bank from explicit kernels. Coefficients are used as given.
    pub fn from_kernels(kernel_size: usize, kernels: Vec<Vec<f64>>) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || kernels.is_empty() {
            return Err(Error::invalid(
                "need an odd kernel size and at least one kernel",
            ));
        }
        let taps = kernel_size.pow(3);
        if let Some(bad) = kernels.iter().find(|k| k.len() != taps) {
            return Err(Error::LengthMismatch {
                expected: taps,
                actual: bad.len(),
            });
        }
        Ok(Self {
            kernel_size,
            seed: 0,
            kernels,
        })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub sample_id: u64,
    pub values: Vec<f64>,
}

/// Averages each kernel's valid (unpadded) cross-correlation response.
/// Kernel coefficients are rounded to f32 for the correlation.
pub fn extract(image: &Image3D, bank: &FilterBank, mode: ResponseMode) -> Result<Vec<f64>> {
    let dims = image.dims();
    let ks = bank.kernel_size;
    if dims.x < ks || dims.y < ks || dims.z < ks {
        return Err(Error::invalid(format!(
            "image {:?} smaller than kernel size {ks}",
            dims.as_tuple()
        )));
    }
    let (ox, oy, oz) = (dims.x - ks + 1, dims.y - ks + 1, dims.z - ks + 1);
    let positions = (ox * oy * oz) as f64;
    let src = image.data();
    // Responses use the full image row stride, so one tap updates a whole
    // z-slab in a single contiguous pass. Columns x >= ox hold garbage and
    // are skipped when averaging. Responses are accumulated in f32 and
    // averaged in f64.
    let nx = dims.x;
    let slab = oy * nx;
    let run = slab - (ks - 1);
    let mut response = vec![0.0f32; run];

    let mut out = Vec::with_capacity(bank.len());
    for kernel in &bank.kernels {
        let mut total = 0.0;
        for z in 0..oz {
            // one output z-slab at a time keeps the accumulator in L1
            response.iter_mut().for_each(|r| *r = 0.0);
            for c in 0..ks {
                for b in 0..ks {
                    for a in 0..ks {
                        let w = kernel[a + ks * (b + ks * c)] as f32;
                        let s = dims.index(a, b, z + c);
                        for (d, v) in response.iter_mut().zip(&src[s..s + run]) {
                            *d += w * v;
                        }
                    }
                }
            }
            let valid = response.chunks(nx).flat_map(|row| &row[..ox]);
            total += match mode {
                ResponseMode::Raw => valid.map(|&v| f64::from(v)).sum::<f64>(),
                ResponseMode::Abs => valid.map(|v| f64::from(v.abs())).sum::<f64>(),
            };
        }
        out.push(total / positions);
    }
    Ok(out)
}

pub fn write_latents(path: &Path, latents: &[LatentVector]) -> Result<()> {
    let k = latents.first().map_or(0, |l| l.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..k).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for l in latents {
        if l.values.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: l.values.len(),
            });
        }
        let mut rec = vec![l.sample_id.to_string()];
        // `{:?}` prints the shortest representation that round-trips
        rec.extend(l.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_latents(path: &Path) -> Result<Vec<LatentVector>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.is_empty() || header.get(0) != Some("id") {
        return Err(malformed("missing `id,z0,...` header".into()));
    }
    let k = header.len() - 1;
    if k == 0 {
        return Err(malformed("no latent columns".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("z{i}") {
            return Err(malformed(format!(
                "unexpected column `{name}`, wanted `z{i}`"
            )));
        }
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(malformed(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                rec.len(),
                k + 1
            )));
        }
        let sample_id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| malformed(format!("row {}: bad id: {e}", row + 1)))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("row {}: {e}", row + 1)))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!("row {}: non-finite latent", row + 1)));
        }
        out.push(LatentVector { sample_id, values });
    }
    if out.is_empty() {
        return Err(malformed("no latent rows".into()));
    }
    Ok(out)
}
