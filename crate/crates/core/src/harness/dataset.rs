//! On-disk dataset dumps: `metadata.json` plus one headerless binary file
//! per sample holding the image as little-endian f32 followed by the mask as
//! one byte per voxel, x fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{generate_dataset_sample, GenerationConfig, Sample, SphereSpec, Split};
use crate::volume::{Dims, Image3D, Mask3D};

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: u64,
    pub split: Split,
    pub file: String,
    pub spec: SphereSpec,
    pub snr: f64,
    pub truth_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub dims: [usize; 3],
    pub voxel_volume: f64,
    pub generation: GenerationConfig,
    pub samples: Vec<SampleMeta>,
}

pub fn sample_file_name(id: u64) -> String {
    format!("sample_{id:05}.bin")
}

pub fn encode_sample(sample: &Sample) -> Vec<u8> {
    let data = sample.image.data();
    let mut buf = Vec::with_capacity(data.len() * 5);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(sample.truth.data());
    buf
}

pub fn decode_sample(bytes: &[u8], dims: Dims, voxel_volume: f64) -> Result<(Image3D, Mask3D)> {
    let n = dims.len();
    if bytes.len() != n * 5 {
        return Err(Error::LengthMismatch {
            expected: n * 5,
            actual: bytes.len(),
        });
    }
    let (img, mask) = bytes.split_at(n * 4);
    let data = img
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((
        Image3D::with_voxel_volume(dims, data, voxel_volume)?,
        Mask3D::new(dims, mask.to_vec())?,
    ))
}

/// Generates every split and writes it to `dir`, one sample at a time.
pub fn write_dataset(seed: u64, config: &GenerationConfig, dir: &Path) -> Result<DatasetMetadata> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(config.total());
    let mut dims = [config.grid_dim; 3];
    let mut voxel_volume = 1.0;
    for split in Split::ALL {
        for id in config.ids(split) {
            let s = generate_dataset_sample(seed, config, id)?;
            dims = s.image.dims().as_tuple().into();
            voxel_volume = s.image.voxel_volume();
            let file = sample_file_name(id);
            fs::write(dir.join(&file), encode_sample(&s))?;
            samples.push(SampleMeta {
                id,
                split,
                file,
                spec: s.spec,
                snr: s.spec.snr,
                truth_voxels: s.truth.count(),
            });
        }
    }
    let meta = DatasetMetadata {
        seed,
        dims,
        voxel_volume,
        generation: config.clone(),
        samples,
    };
    fs::write(
        dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(meta)
}

pub fn read_metadata(dir: &Path) -> Result<DatasetMetadata> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path,
        reason: e.to_string(),
    })
}

/// Reads one sample back. The result compares equal to the generated sample.
pub fn read_sample(dir: &Path, meta: &DatasetMetadata, id: u64) -> Result<Sample> {
    let m = meta
        .samples
        .iter()
        .find(|m| m.id == id)
        .ok_or_else(|| Error::invalid(format!("sample {id} not in metadata")))?;
    let dims = Dims::new(meta.dims[0], meta.dims[1], meta.dims[2])?;
    let path: PathBuf = dir.join(&m.file);
    let bytes = fs::read(&path)?;
    let (image, truth) =
        decode_sample(&bytes, dims, meta.voxel_volume).map_err(|e| Error::Malformed {
            path,
            reason: e.to_string(),
        })?;
    Ok(Sample {
        id,
        image,
        truth,
        spec: m.spec,
    })
}
