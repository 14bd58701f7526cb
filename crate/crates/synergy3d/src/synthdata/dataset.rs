//! Synthetic (observation, groundtruth) sample generation and the dataset
//! file format.
//!
//! Samples are stored in f32. To keep the file self-consistent under that
//! quantization, every derived field is computed from already-quantized
//! inputs: parameters are rounded to f32 first, the landmarks come from
//! `full_forward` of the rounded parameters, and the bbox size comes from
//! the rounded landmarks. Re-deriving any stored field from the file
//! reproduces it bit-exactly.

use super::visibility::visible_landmarks;
use crate::error::{Error, Result};
use crate::morphable::{
    compose_euler, compose_pose_params, full_forward, EulerAngles, FaceBasis, ParamVector,
    PoseTransform, N_EXPR, N_SHAPE, PARAM_DIM,
};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"SYNDATA1";
pub const DATASET_VERSION: u32 = 1;

/// Dataset generation configuration: RNG seed, sample count, coefficient
/// and pose priors, observation noise, and the train/val split fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Per-dimension Gaussian std of the shape coefficients (40 entries).
    pub shape_std: Vec<f64>,
    /// Per-dimension Gaussian std of the expression coefficients (10).
    pub expr_std: Vec<f64>,
    /// Uniform pose priors: |yaw| <= 90, |pitch| <= 45, |roll| <= 45 by
    /// default, matching the yaw-binned evaluation ranges.
    pub yaw_range_deg: f64,
    pub pitch_range_deg: f64,
    pub roll_range_deg: f64,
    pub tau_range: (f64, f64),
    /// Translation components drawn uniformly from [-t_range, t_range].
    pub t_range: f64,
    /// Observation noise std as a fraction of the bbox size.
    pub noise_sigma: f64,
    /// Fraction of samples assigned to the training split.
    pub train_split: f64,
}

impl SynthConfig {
    /// Defaults scaled to a basis: decaying coefficient priors sized so the
    /// per-coordinate deformation RMS is a few percent of the face extent.
    pub fn default_for_basis(basis: &FaceBasis, seed: u64, n_samples: usize) -> Self {
        let dim = 3.0 * basis.n_vertices() as f64;
        let decaying = |rms: f64, rho: f64, n: usize| -> Vec<f64> {
            let s0 = rms * (dim * (1.0 - rho * rho)).sqrt();
            (0..n).map(|k| s0 * rho.powi(k as i32)).collect()
        };
        Self {
            seed,
            n_samples,
            shape_std: decaying(0.025, 0.92, N_SHAPE),
            expr_std: decaying(0.012, 0.80, N_EXPR),
            yaw_range_deg: 90.0,
            pitch_range_deg: 45.0,
            roll_range_deg: 45.0,
            tau_range: (0.9, 1.1),
            t_range: 0.2,
            noise_sigma: 0.01,
            train_split: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if self.shape_std.len() != N_SHAPE || self.expr_std.len() != N_EXPR {
            return Err(Error::InvalidConfig(format!(
                "priors must have {N_SHAPE}/{N_EXPR} entries, got {}/{}",
                self.shape_std.len(),
                self.expr_std.len()
            )));
        }
        let finite = self
            .shape_std
            .iter()
            .chain(&self.expr_std)
            .chain([
                &self.yaw_range_deg,
                &self.pitch_range_deg,
                &self.roll_range_deg,
                &self.tau_range.0,
                &self.tau_range.1,
                &self.t_range,
                &self.noise_sigma,
            ])
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite {
            return Err(Error::InvalidConfig("priors must be finite and non-negative".into()));
        }
        if !(self.tau_range.0 > 0.0 && self.tau_range.1 >= self.tau_range.0) {
            return Err(Error::InvalidConfig(format!(
                "bad tau range {:?}",
                self.tau_range
            )));
        }
        if !(self.train_split > 0.0 && self.train_split < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_split must lie in (0,1), got {}",
                self.train_split
            )));
        }
        Ok(())
    }
}

/// One training/evaluation sample, stored in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Flattened (x, y, visibility) triples per landmark; self-occluded
    /// landmarks are zeroed with visibility 0.
    pub observation: Vec<f32>,
    /// Groundtruth 62-dim parameter vector.
    pub alpha_star: Vec<f32>,
    /// Groundtruth 3D landmarks, interleaved xyz.
    pub landmarks_star: Vec<f32>,
    /// sqrt of the tight 2D bbox area of the projected landmarks.
    pub bbox_size: f32,
    /// Groundtruth yaw, pitch, roll in degrees.
    pub euler: [f32; 3],
}

impl SynthSample {
    pub fn observation_f64(&self) -> Vec<f64> {
        self.observation.iter().map(|&v| v as f64).collect()
    }

    pub fn alpha_star_f64(&self) -> Vec<f64> {
        self.alpha_star.iter().map(|&v| v as f64).collect()
    }

    pub fn landmarks_star_f64(&self) -> Vec<f64> {
        self.landmarks_star.iter().map(|&v| v as f64).collect()
    }

    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::from_flat(&self.alpha_star_f64())
    }

    /// Per-landmark visibility flags recovered from the observation.
    pub fn visibility(&self) -> Vec<bool> {
        self.observation.chunks_exact(3).map(|c| c[2] != 0.0).collect()
    }

    /// Noise-free observation rebuilt from the stored groundtruth: visible
    /// landmarks project to their (x, y), occluded ones are zeroed. Used for
    /// fresh noise augmentation during training.
    pub fn clean_observation_f64(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.observation.len()];
        for (k, chunk) in self.observation.chunks_exact(3).enumerate() {
            if chunk[2] != 0.0 {
                out[3 * k] = self.landmarks_star[3 * k] as f64;
                out[3 * k + 1] = self.landmarks_star[3 * k + 1] as f64;
                out[3 * k + 2] = 1.0;
            }
        }
        out
    }
}

/// A generated dataset: config echo plus samples in index order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SynthConfig,
    pub n_landmarks: usize,
    pub samples: Vec<SynthSample>,
}

impl Dataset {
    pub fn train_count(&self) -> usize {
        ((self.samples.len() as f64) * self.config.train_split).floor() as usize
    }

    pub fn train_indices(&self) -> Range<usize> {
        0..self.train_count()
    }

    pub fn val_indices(&self) -> Range<usize> {
        self.train_count()..self.samples.len()
    }
}

/// sqrt of the tight 2D bbox area of interleaved xyz points.
pub fn bbox_size_2d(points: &[f64]) -> f64 {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points.chunks_exact(3) {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    ((max_x - min_x) * (max_y - min_y)).sqrt()
}

fn generate_sample(basis: &FaceBasis, config: &SynthConfig, index: usize) -> Result<SynthSample> {
    // Independent per-sample stream: same seed, sample-indexed stream id.
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);

    let normal = |rng: &mut ChaCha12Rng| -> f64 { StandardNormal.sample(rng) };
    let shape: Vec<f64> = config.shape_std.iter().map(|s| s * normal(&mut rng)).collect();
    let expr: Vec<f64> = config.expr_std.iter().map(|s| s * normal(&mut rng)).collect();
    let angles = EulerAngles {
        yaw: rng.random_range(-config.yaw_range_deg..=config.yaw_range_deg),
        pitch: rng.random_range(-config.pitch_range_deg..=config.pitch_range_deg),
        roll: rng.random_range(-config.roll_range_deg..=config.roll_range_deg),
    };
    let tau = rng.random_range(config.tau_range.0..=config.tau_range.1);
    let t = Vector3::new(
        rng.random_range(-config.t_range..=config.t_range),
        rng.random_range(-config.t_range..=config.t_range),
        rng.random_range(-config.t_range..=config.t_range),
    );
    let pose = PoseTransform::new(tau, compose_euler(&angles), t)?;

    // Quantize the parameters first; everything downstream derives from the
    // rounded values so the stored sample is self-consistent.
    let mut flat = [0.0f64; PARAM_DIM];
    flat[0..12].copy_from_slice(&compose_pose_params(&pose));
    flat[12..52].copy_from_slice(&shape);
    flat[52..62].copy_from_slice(&expr);
    let alpha_star: Vec<f32> = flat.iter().map(|&v| v as f32).collect();
    let params = ParamVector::from_flat(
        &alpha_star.iter().map(|&v| v as f64).collect::<Vec<f64>>(),
    )?;

    let (mesh, landmarks_f64) = full_forward(basis, &params)?;
    let landmarks_star: Vec<f32> = landmarks_f64.coords().iter().map(|&v| v as f32).collect();
    let landmarks: Vec<f64> = landmarks_star.iter().map(|&v| v as f64).collect();

    let bbox = bbox_size_2d(&landmarks);
    if !(bbox.is_finite() && bbox > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "sample {index}: degenerate landmark bbox {bbox}"
        )));
    }

    let visible = visible_landmarks(&mesh, &basis.landmark_indices, &landmarks);

    let sigma = config.noise_sigma * bbox;
    let mut observation = vec![0.0f32; landmarks.len()];
    for (k, chunk) in landmarks.chunks_exact(3).enumerate() {
        // Always draw the noise pair so the stream layout is independent of
        // the visibility outcome.
        let (nx, ny) = (normal(&mut rng), normal(&mut rng));
        if visible[k] {
            observation[3 * k] = (chunk[0] + sigma * nx) as f32;
            observation[3 * k + 1] = (chunk[1] + sigma * ny) as f32;
            observation[3 * k + 2] = 1.0;
        }
    }

    Ok(SynthSample {
        observation,
        alpha_star,
        landmarks_star,
        bbox_size: bbox as f32,
        euler: [angles.yaw as f32, angles.pitch as f32, angles.roll as f32],
    })
}

/// Generates the dataset. Each sample derives from its own RNG stream
/// `(seed, index)`, so the result is deterministic and independent of the
/// parallel schedule.
pub fn sample_dataset(basis: &FaceBasis, config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let samples: Result<Vec<SynthSample>> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| generate_sample(basis, config, i))
        .collect();
    Ok(Dataset {
        config: config.clone(),
        n_landmarks: basis.n_landmarks(),
        samples: samples?,
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_dataset_to(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, w: &mut W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u32::<LittleEndian>(dataset.samples.len() as u32)?;
    w.write_u32::<LittleEndian>(dataset.n_landmarks as u32)?;
    w.write_u64::<LittleEndian>(dataset.config.seed)?;
    let config_json = serde_json::to_string(&dataset.config)?;
    w.write_u32::<LittleEndian>(config_json.len() as u32)?;
    w.write_all(config_json.as_bytes())?;
    for s in &dataset.samples {
        for &v in &s.observation {
            w.write_f32::<LittleEndian>(v)?;
        }
        for &v in &s.alpha_star {
            w.write_f32::<LittleEndian>(v)?;
        }
        for &v in &s.landmarks_star {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.write_f32::<LittleEndian>(s.bbox_size)?;
        for &v in &s.euler {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    read_dataset_from(&mut r, &path.display().to_string())
}

pub fn read_dataset_from<R: Read>(r: &mut R, path: &str) -> Result<Dataset> {
    let fail = |detail: String| Error::Format {
        path: path.to_string(),
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(fail(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let n_samples = r.read_u32::<LittleEndian>()? as usize;
    let n_landmarks = r.read_u32::<LittleEndian>()? as usize;
    let seed = r.read_u64::<LittleEndian>()?;
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    let mut json_buf = vec![0u8; json_len];
    r.read_exact(&mut json_buf)?;
    let config: SynthConfig = serde_json::from_slice(&json_buf)?;
    if config.seed != seed || config.n_samples != n_samples {
        return Err(fail("header disagrees with embedded config".into()));
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut observation = vec![0.0f32; 3 * n_landmarks];
        r.read_f32_into::<LittleEndian>(&mut observation)?;
        let mut alpha_star = vec![0.0f32; PARAM_DIM];
        r.read_f32_into::<LittleEndian>(&mut alpha_star)?;
        let mut landmarks_star = vec![0.0f32; 3 * n_landmarks];
        r.read_f32_into::<LittleEndian>(&mut landmarks_star)?;
        let bbox_size = r.read_f32::<LittleEndian>()?;
        let mut euler = [0.0f32; 3];
        r.read_f32_into::<LittleEndian>(&mut euler)?;
        samples.push(SynthSample {
            observation,
            alpha_star,
            landmarks_star,
            bbox_size,
            euler,
        });
    }
    Ok(Dataset {
        config,
        n_landmarks,
        samples,
    })
}

/// Human-readable companion manifest.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub n_landmarks: usize,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub config: SynthConfig,
}

pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    let manifest = DatasetManifest {
        n_samples: dataset.samples.len(),
        n_landmarks: dataset.n_landmarks,
        seed: dataset.config.seed,
        train_count: dataset.train_count(),
        val_count: dataset.samples.len() - dataset.train_count(),
        config: dataset.config.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::make_synthetic_basis;

    fn small_setup(sigma: f64, n: usize) -> (FaceBasis, SynthConfig) {
        let basis = make_synthetic_basis(5, 300).unwrap();
        let mut config = SynthConfig::default_for_basis(&basis, 17, n);
        config.noise_sigma = sigma;
        (basis, config)
    }

    #[test]
    fn zero_noise_observation_equals_visible_projection() {
        let (basis, config) = small_setup(0.0, 20);
        let ds = sample_dataset(&basis, &config).unwrap();
        for s in &ds.samples {
            for (k, chunk) in s.observation.chunks_exact(3).enumerate() {
                if chunk[2] != 0.0 {
                    assert_eq!(chunk[0], s.landmarks_star[3 * k]);
                    assert_eq!(chunk[1], s.landmarks_star[3 * k + 1]);
                } else {
                    assert_eq!(&chunk[..2], &[0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let (basis, config) = small_setup(0.01, 25);
        let a = sample_dataset(&basis, &config).unwrap();
        let b = sample_dataset(&basis, &config).unwrap();
        assert_eq!(a.samples, b.samples);
        let mut buf_a = Vec::new();
        write_dataset_to(&a, &mut buf_a).unwrap();
        let mut buf_b = Vec::new();
        write_dataset_to(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn stored_landmarks_recompute_exactly_from_stored_params() {
        let (basis, config) = small_setup(0.02, 15);
        let ds = sample_dataset(&basis, &config).unwrap();
        for s in &ds.samples {
            let params = s.params().unwrap();
            let (_, lm) = full_forward(&basis, &params).unwrap();
            let requantized: Vec<f32> = lm.coords().iter().map(|&v| v as f32).collect();
            assert_eq!(requantized, s.landmarks_star);
            let bbox = bbox_size_2d(&s.landmarks_star_f64()) as f32;
            assert_eq!(bbox, s.bbox_size);
            assert!(s.bbox_size > 0.0);
        }
    }

    #[test]
    fn file_round_trip_preserves_everything() {
        let (basis, config) = small_setup(0.01, 12);
        let ds = sample_dataset(&basis, &config).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back = read_dataset_from(&mut buf.as_slice(), "mem").unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.config, ds.config);
        assert_eq!(back.n_landmarks, ds.n_landmarks);
    }

    #[test]
    fn yaw_histogram_covers_all_three_bins() {
        let (basis, mut config) = small_setup(0.0, 10_000);
        config.seed = 99;
        let ds = sample_dataset(&basis, &config).unwrap();
        let mut bins = [0usize; 3];
        for s in &ds.samples {
            let yaw = s.euler[0].abs();
            let b = if yaw <= 30.0 {
                0
            } else if yaw <= 60.0 {
                1
            } else {
                2
            };
            bins[b] += 1;
        }
        for (i, &count) in bins.iter().enumerate() {
            assert!(
                count as f64 >= 0.10 * ds.samples.len() as f64,
                "bin {i} holds {count} of {}",
                ds.samples.len()
            );
        }
    }

    #[test]
    fn large_yaw_samples_lose_landmarks_to_occlusion() {
        let basis = make_synthetic_basis(5, 900).unwrap();
        let mut config = SynthConfig::default_for_basis(&basis, 4, 60);
        config.noise_sigma = 0.0;
        let ds = sample_dataset(&basis, &config).unwrap();
        let mut occluded_large_yaw = 0usize;
        for s in &ds.samples {
            let hidden = s.visibility().iter().filter(|v| !**v).count();
            if s.euler[0].abs() > 60.0 {
                occluded_large_yaw += hidden;
            }
        }
        assert!(
            occluded_large_yaw > 0,
            "large-pose samples should self-occlude some landmarks"
        );
    }

    #[test]
    fn split_indices_partition_the_dataset() {
        let (basis, config) = small_setup(0.0, 10);
        let ds = sample_dataset(&basis, &config).unwrap();
        assert_eq!(ds.train_indices().end, ds.val_indices().start);
        assert_eq!(ds.val_indices().end, ds.samples.len());
        assert_eq!(ds.train_count(), 8);
    }
}
