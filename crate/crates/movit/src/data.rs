//! Dataset generation and ingestion. Synthetic data and image folders
//! flow through one [`Dataset`] type, so training and evaluation never
//! care where pixels came from.

use crate::error::{MovitError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// In-memory labeled image set, row-major `[n, channels, size, size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_size: usize,
    pub in_channels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dim(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.sample_dim();
        &self.images[i * d..(i + 1) * d]
    }

    /// Images of the listed samples, concatenated for a batched forward.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let d = self.sample_dim();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(self.image(i));
        }
        out
    }
}

/// Class-conditional image family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Generator {
    /// One dominant spatial frequency per class, random orientation and
    /// phase per sample.
    #[default]
    Textures,
    /// Class-dependent number of Gaussian bumps at random positions.
    GaussianBlobs,
}

impl std::str::FromStr for Generator {
    type Err = MovitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textures" => Ok(Generator::Textures),
            "gaussian-blobs" => Ok(Generator::GaussianBlobs),
            other => Err(MovitError::Config(format!(
                "unknown generator `{other}` (expected textures|gaussian-blobs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub generator: Generator,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            num_classes: 4,
            samples_per_class: 200,
            image_size: 32,
            noise_std: 0.3,
            seed: 0,
            generator: Generator::Textures,
        }
    }
}

fn mix(seed: u64, class: u64, idx: u64) -> u64 {
    // splitmix-style avalanche so each sample owns an independent stream
    let mut z = seed
        .wrapping_add(class.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(idx.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn texture_image(size: usize, class: usize, rng: &mut ChaCha8Rng, noise: &[f32]) -> Vec<f32> {
    let freq = 2.0 + 2.4 * class as f64;
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let scale = std::f64::consts::TAU * freq / size as f64;
    let mut img = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = scale * (x as f64 * ct + y as f64 * st) + phase;
            img[y * size + x] = u.sin() as f32 + noise[y * size + x];
        }
    }
    img
}

fn blob_image(size: usize, class: usize, rng: &mut ChaCha8Rng, noise: &[f32]) -> Vec<f32> {
    let blobs = class + 1;
    let sigma = size as f64 / 8.0;
    let mut img = noise.to_vec();
    for _ in 0..blobs {
        let cx: f64 = rng.random_range(0.2..0.8) * size as f64;
        let cy: f64 = rng.random_range(0.2..0.8) * size as f64;
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                img[y * size + x] +=
                    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() as f32;
            }
        }
    }
    img
}

/// Balanced class-conditional images; bit-identical per spec. Samples are
/// ordered class-major, so sample index `c·per_class + i` has label `c`.
pub fn generate_synthetic_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.samples_per_class == 0 || spec.image_size == 0 {
        return Err(MovitError::Contract(
            "num_classes, samples_per_class, and image_size must be positive".into(),
        ));
    }
    if spec.noise_std < 0.0 {
        return Err(MovitError::Contract("noise_std must be nonnegative".into()));
    }
    let size = spec.image_size;
    let n = spec.num_classes * spec.samples_per_class;
    let mut images = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let noise_dist = Normal::new(0.0f64, 1.0).expect("valid distribution");
    for class in 0..spec.num_classes {
        for idx in 0..spec.samples_per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(spec.seed, class as u64, idx as u64));
            let noise: Vec<f32> = (0..size * size)
                .map(|_| (noise_dist.sample(&mut rng) * spec.noise_std) as f32)
                .collect();
            let img = match spec.generator {
                Generator::Textures => texture_image(size, class, &mut rng, &noise),
                Generator::GaussianBlobs => blob_image(size, class, &mut rng, &noise),
            };
            images.extend_from_slice(&img);
            labels.push(class);
        }
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: spec.num_classes,
        image_size: size,
        in_channels: 1,
    })
}

/// Seeded, class-stratified subsample: each class keeps
/// `round(fraction × class_count)` samples (at least one).
pub fn stratified_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MovitError::Contract(format!(
            "data fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(dataset.clone());
    }
    let mut keep: Vec<usize> = Vec::new();
    for class in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        let quota = ((members.len() as f64 * fraction).round() as usize)
            .clamp(1, members.len());
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class as u64, 0));
        use rand::seq::SliceRandom;
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quota]);
    }
    keep.sort_unstable();
    let images = dataset.gather(&keep);
    Ok(Dataset {
        images,
        labels: keep.iter().map(|&i| dataset.labels[i]).collect(),
        num_classes: dataset.num_classes,
        image_size: dataset.image_size,
        in_channels: dataset.in_channels,
    })
}

/// Loads per-class subdirectories of images, resized to `image_size`
/// with per-channel z-score normalization. Class order is the sorted
/// directory-name order; file order within a class is sorted too.
pub fn load_image_folder(
    root: impl AsRef<Path>,
    image_size: usize,
    in_channels: usize,
) -> Result<Dataset> {
    let root = root.as_ref();
    if !(in_channels == 1 || in_channels == 3) {
        return Err(MovitError::Config(format!(
            "image folders support 1 or 3 channels, got {in_channels}"
        )));
    }
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| MovitError::io(root.display().to_string(), e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_dir())
        .map(|entry| entry.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(MovitError::Config(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| MovitError::io(dir.display().to_string(), e))?
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file).map_err(|e| {
                MovitError::Config(format!("cannot decode {}: {e}", file.display()))
            })?;
            let resized = img.resize_exact(
                image_size as u32,
                image_size as u32,
                image::imageops::FilterType::Triangle,
            );
            let mut channels: Vec<Vec<f32>> = vec![Vec::new(); in_channels];
            if in_channels == 1 {
                let gray = resized.to_luma8();
                channels[0] = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            } else {
                let rgb = resized.to_rgb8();
                for p in rgb.pixels() {
                    for c in 0..3 {
                        channels[c].push(p.0[c] as f32 / 255.0);
                    }
                }
            }
            for ch in &channels {
                let n = ch.len() as f32;
                let mean: f32 = ch.iter().sum::<f32>() / n;
                let var: f32 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                let std = var.sqrt().max(1e-6);
                images.extend(ch.iter().map(|v| (v - mean) / std));
            }
            labels.push(class);
        }
    }
    if labels.is_empty() {
        return Err(MovitError::Config(format!(
            "no images found under {}",
            root.display()
        )));
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: class_dirs.len(),
        image_size,
        in_channels,
    })
}

/// Writes a synthetic dataset as 8-bit grayscale PNGs in per-class
/// subdirectories (`class_0/img_00000.png`, ...).
pub fn export_png_tree(dataset: &Dataset, out: impl AsRef<Path>) -> Result<usize> {
    let out = out.as_ref();
    if dataset.in_channels != 1 {
        return Err(MovitError::Config(
            "png export currently supports single-channel data".into(),
        ));
    }
    let size = dataset.image_size as u32;
    let mut written = 0usize;
    let mut per_class_counter = vec![0usize; dataset.num_classes];
    for i in 0..dataset.len() {
        let class = dataset.labels[i];
        let dir = out.join(format!("class_{class}"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| MovitError::io(dir.display().to_string(), e))?;
        let pixels: Vec<u8> = dataset
            .image(i)
            .iter()
            .map(|&v| ((v * 0.25 + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(size, size, pixels)
            .expect("pixel buffer matches dimensions");
        let path = dir.join(format!("img_{:05}.png", per_class_counter[class]));
        per_class_counter[class] += 1;
        img.save(&path)
            .map_err(|e| MovitError::Config(format!("cannot write {}: {e}", path.display())))?;
        written += 1;
    }
    Ok(written)
}
