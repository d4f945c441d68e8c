use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::EncoderPair;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Paired text/image features with a fixed number of captions per image.
/// Caption row c belongs to image row `c / captions_per_image`; that mapping
/// is structural, so re-pairing a caption means regenerating its content,
/// not editing an index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    text_features: Matrix,
    image_features: Matrix,
    captions_per_image: usize,
}

impl FeatureDataset {
    pub fn new(text_features: Matrix, image_features: Matrix, captions_per_image: usize) -> Result<Self> {
        if captions_per_image == 0 {
            return Err(Error::InvalidConfig("captionsPerImage must be at least 1".into()));
        }
        if image_features.rows() == 0 || image_features.cols() == 0 || text_features.cols() == 0 {
            return Err(Error::EmptyInput("feature dataset"));
        }
        if text_features.rows() != image_features.rows() * captions_per_image {
            return Err(Error::InvalidConfig(format!(
                "expected {} caption rows for {} images x {} captions, got {}",
                image_features.rows() * captions_per_image,
                image_features.rows(),
                captions_per_image,
                text_features.rows()
            )));
        }
        Ok(FeatureDataset { text_features, image_features, captions_per_image })
    }

    pub fn n_pairs(&self) -> usize {
        self.text_features.rows()
    }

    pub fn n_images(&self) -> usize {
        self.image_features.rows()
    }

    pub fn captions_per_image(&self) -> usize {
        self.captions_per_image
    }

    pub fn text_dim(&self) -> usize {
        self.text_features.cols()
    }

    pub fn image_dim(&self) -> usize {
        self.image_features.cols()
    }

    /// Image row owning the given caption row.
    pub fn pair_image(&self, caption_row: usize) -> usize {
        caption_row / self.captions_per_image
    }

    pub fn text_features(&self) -> &Matrix {
        &self.text_features
    }

    pub fn image_features(&self) -> &Matrix {
        &self.image_features
    }

    /// Splits by image prefix: the first `n_train_images` images (and all
    /// their captions) form the training set, the remainder the validation
    /// set.
    pub fn split_by_images(&self, n_train_images: usize) -> Result<(FeatureDataset, FeatureDataset)> {
        if n_train_images == 0 || n_train_images >= self.n_images() {
            return Err(Error::InvalidConfig(format!(
                "split at {} images must leave both sides of {} images non-empty",
                n_train_images,
                self.n_images()
            )));
        }
        let cpi = self.captions_per_image;
        let split_rows = |m: &Matrix, upto: usize| -> (Matrix, Matrix) {
            let head: Vec<usize> = (0..upto).collect();
            let tail: Vec<usize> = (upto..m.rows()).collect();
            (m.select_rows(&head).unwrap(), m.select_rows(&tail).unwrap())
        };
        let (text_a, text_b) = split_rows(&self.text_features, n_train_images * cpi);
        let (img_a, img_b) = split_rows(&self.image_features, n_train_images);
        Ok((
            FeatureDataset::new(text_a, img_a, cpi)?,
            FeatureDataset::new(text_b, img_b, cpi)?,
        ))
    }
}

/// Recipe for a synthetic paired dataset: latent vectors shared between the
/// modalities, plus optional caption mislabeling and hub injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub captions_per_image: usize,
    pub d_text: usize,
    pub d_image: usize,
    pub latent_dim: usize,
    /// Standard deviation of the additive per-feature Gaussian noise.
    pub noise_std: f64,
    /// Fraction of captions regenerated from a uniformly random wrong image.
    pub label_noise_fraction: f64,
    /// Strength of the shared hub direction added to 2% of items, relative
    /// to each perturbed feature's norm.
    pub hub_bias: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("nImages", self.n_images),
            ("captionsPerImage", self.captions_per_image),
            ("dText", self.d_text),
            ("dImage", self.d_image),
            ("latentDim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.latent_dim > self.d_text.min(self.d_image) {
            return Err(Error::InvalidConfig(format!(
                "latentDim {} must not exceed min(dText, dImage) = {}",
                self.latent_dim,
                self.d_text.min(self.d_image)
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noiseStd must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if !self.label_noise_fraction.is_finite() || !(0.0..1.0).contains(&self.label_noise_fraction) {
            return Err(Error::InvalidConfig(format!(
                "labelNoiseFraction must lie in [0, 1), got {}",
                self.label_noise_fraction
            )));
        }
        if self.label_noise_fraction > 0.0 && self.n_images < 2 {
            return Err(Error::InvalidConfig(
                "labelNoiseFraction > 0 requires at least 2 images".into(),
            ));
        }
        if !self.hub_bias.is_finite() || self.hub_bias < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "hubBias must be finite and >= 0, got {}",
                self.hub_bias
            )));
        }
        Ok(())
    }
}

/// A generated dataset together with its generating maps and the exact
/// corruption applied, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: FeatureDataset,
    /// Per-image latent vectors (nImages x latentDim).
    pub latents: Matrix,
    /// Latent-to-text map (dText x latentDim).
    pub text_map: Matrix,
    /// Latent-to-image map (dImage x latentDim).
    pub image_map: Matrix,
    /// (caption row, image row whose latent actually generated it).
    pub relabeled: Vec<(usize, usize)>,
    pub hub_images: Vec<usize>,
    pub hub_captions: Vec<usize>,
}

impl SyntheticDataset {
    /// Encoder that inverts both generating maps (least-squares
    /// pseudo-inverse), recovering the shared latents up to noise. With
    /// noiseStd = 0 it retrieves every pair perfectly.
    pub fn ideal_encoder(&self) -> Result<EncoderPair> {
        EncoderPair::new(pseudo_inverse_tall(&self.text_map)?, pseudo_inverse_tall(&self.image_map)?)
    }
}

/// Generates features by drawing one latent per image and mapping it into
/// both modalities with fixed random linear maps, plus independent Gaussian
/// noise per feature row.
///
/// Corruption stages, in order: `labelNoiseFraction` of caption rows
/// (floor(f * N_pairs) of them, sampled without replacement) are regenerated
/// from a uniformly random wrong image's latent; then a shared random unit
/// direction is added to ceil(2%) of images and ceil(2%) of captions, scaled
/// by hubBias times the row norm. Features are rounded through 32-bit floats
/// so in-memory data matches feature files bit for bit. Pure in the seed.
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = |rng: &mut ChaCha8Rng, n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| std_normal(rng) * scale).collect()
    };

    let map_scale = (spec.latent_dim as f64).sqrt().recip();
    let image_map = Matrix::from_vec_unchecked(
        spec.d_image,
        spec.latent_dim,
        draw(&mut rng, spec.d_image * spec.latent_dim, map_scale),
    );
    let text_map = Matrix::from_vec_unchecked(
        spec.d_text,
        spec.latent_dim,
        draw(&mut rng, spec.d_text * spec.latent_dim, map_scale),
    );
    let latents = Matrix::from_vec_unchecked(
        spec.n_images,
        spec.latent_dim,
        draw(&mut rng, spec.n_images * spec.latent_dim, 1.0),
    );

    let n_pairs = spec.n_images * spec.captions_per_image;
    let mut image_features = latents.matmul_nt(&image_map)?;
    if spec.noise_std > 0.0 {
        for v in image_features.as_mut_slice() {
            *v += std_normal(&mut rng) * spec.noise_std;
        }
    }
    let clean_text = latents.matmul_nt(&text_map)?;
    let mut text_features = Matrix::zeros(n_pairs, spec.d_text);
    for c in 0..n_pairs {
        let src = clean_text.row(c / spec.captions_per_image);
        let row = text_features.row_mut(c);
        row.copy_from_slice(src);
        if spec.noise_std > 0.0 {
            for v in row {
                *v += std_normal(&mut rng) * spec.noise_std;
            }
        }
    }

    let mut relabeled = Vec::new();
    let flips = (spec.label_noise_fraction * n_pairs as f64).floor() as usize;
    if flips > 0 {
        let mut rows = rand::seq::index::sample(&mut rng, n_pairs, flips).into_vec();
        rows.sort_unstable();
        for c in rows {
            let own = c / spec.captions_per_image;
            let mut wrong = rand::Rng::random_range(&mut rng, 0..spec.n_images - 1);
            if wrong >= own {
                wrong += 1;
            }
            let row = text_features.row_mut(c);
            row.copy_from_slice(clean_text.row(wrong));
            if spec.noise_std > 0.0 {
                for v in row {
                    *v += std_normal(&mut rng) * spec.noise_std;
                }
            }
            relabeled.push((c, wrong));
        }
    }

    let mut hub_images = Vec::new();
    let mut hub_captions = Vec::new();
    if spec.hub_bias > 0.0 {
        let full_dim = spec.d_text.max(spec.d_image);
        let shared = draw(&mut rng, full_dim, 1.0);
        let unit_prefix = |dim: usize| -> Vec<f64> {
            let norm = dot(&shared[..dim], &shared[..dim]).sqrt();
            shared[..dim].iter().map(|v| v / norm).collect()
        };
        let image_dir = unit_prefix(spec.d_image);
        let text_dir = unit_prefix(spec.d_text);
        let two_percent = |n: usize| (0.02 * n as f64).ceil() as usize;

        hub_images = rand::seq::index::sample(&mut rng, spec.n_images, two_percent(spec.n_images)).into_vec();
        hub_images.sort_unstable();
        for &r in &hub_images {
            add_scaled_direction(image_features.row_mut(r), &image_dir, spec.hub_bias);
        }
        hub_captions = rand::seq::index::sample(&mut rng, n_pairs, two_percent(n_pairs)).into_vec();
        hub_captions.sort_unstable();
        for &r in &hub_captions {
            add_scaled_direction(text_features.row_mut(r), &text_dir, spec.hub_bias);
        }
    }

    quantize_to_f32(&mut text_features)?;
    quantize_to_f32(&mut image_features)?;
    Ok(SyntheticDataset {
        dataset: FeatureDataset::new(text_features, image_features, spec.captions_per_image)?,
        latents,
        text_map,
        image_map,
        relabeled,
        hub_images,
        hub_captions,
    })
}

fn add_scaled_direction(row: &mut [f64], dir: &[f64], bias: f64) {
    let norm = dot(row, row).sqrt();
    for (v, d) in row.iter_mut().zip(dir) {
        *v += bias * norm * d;
    }
}

fn quantize_to_f32(m: &mut Matrix) -> Result<()> {
    for v in m.as_mut_slice() {
        let narrowed = *v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFinite { context: "feature exceeds 32-bit float range" });
        }
        *v = narrowed as f64;
    }
    Ok(())
}

/// Least-squares left inverse of a tall full-column-rank matrix m
/// (rows >= cols): (m^T m)^-1 m^T.
fn pseudo_inverse_tall(m: &Matrix) -> Result<Matrix> {
    let gram = m.matmul_tn(m)?;
    let mut rhs = Matrix::zeros(m.cols(), m.rows());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            rhs.set(c, r, m.get(r, c));
        }
    }
    solve(&gram, &rhs)
}

/// Gaussian elimination with partial pivoting; a is square, rhs has matching
/// row count. Returns x with a * x = rhs.
fn solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || rhs.rows() != n {
        return Err(Error::ShapeMismatch {
            context: "linear solve",
            expected: (n, n),
            got: rhs.shape(),
        });
    }
    let mut a = a.clone();
    let mut x = rhs.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| a.get(r1, col).abs().total_cmp(&a.get(r2, col).abs()))
            .unwrap();
        if a.get(pivot, col).abs() < 1e-12 {
            return Err(Error::Singular { context: "pseudo-inverse" });
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, tmp);
            }
            for c in 0..x.cols() {
                let tmp = x.get(col, c);
                x.set(col, c, x.get(pivot, c));
                x.set(pivot, c, tmp);
            }
        }
        let diag = a.get(col, col);
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a.get(r, col) / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a.set(r, c, a.get(r, c) - factor * a.get(col, c));
            }
            for c in 0..x.cols() {
                x.set(r, c, x.get(r, c) - factor * x.get(col, c));
            }
        }
    }
    for r in 0..n {
        let diag = a.get(r, r);
        for c in 0..x.cols() {
            x.set(r, c, x.get(r, c) / diag);
        }
    }
    Ok(x)
}

pub const FEATURE_MAGIC: [u8; 4] = *b"EMBF";
pub const FEATURE_VERSION: u32 = 1;
/// Bytes before the payload: magic, version (u32), rows (u64), cols (u32).
pub const FEATURE_HEADER_LEN: usize = 20;

/// Writes a feature file: "EMBF", version 1 (u32 LE), row count (u64 LE),
/// column count (u32 LE), then row-major IEEE-754 32-bit LE values. Values
/// must fit in 32-bit floats (the synthetic generator guarantees this by
/// construction).
pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + m.as_slice().len() * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFinite { context: "feature value exceeds 32-bit float range" });
        }
        buf.extend_from_slice(&narrowed.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

/// Reads a feature file written by `write_features`, widening values to f64.
/// Distinguishes three corruptions: wrong magic (reports the four bytes
/// found), unsupported version, and a payload shorter or longer than the
/// header promises (reports expected and actual byte counts).
pub fn read_features(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.len() >= 4 && bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic { found: [bytes[0], bytes[1], bytes[2], bytes[3]] });
    }
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected_bytes: FEATURE_HEADER_LEN as u64,
            actual_bytes: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FEATURE_VERSION });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let expected = rows as u128 * cols as u128 * 4;
    let actual = (bytes.len() - FEATURE_HEADER_LEN) as u128;
    if expected != actual {
        return Err(Error::TruncatedPayload {
            expected_bytes: expected.min(u64::MAX as u128) as u64,
            actual_bytes: actual as u64,
        });
    }
    let data: Vec<f64> = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(rows as usize, cols as usize, data)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub const TEXT_FEATURES_FILE: &str = "text_features.embf";
pub const IMAGE_FEATURES_FILE: &str = "image_features.embf";
pub const DATASET_MANIFEST_FILE: &str = "dataset.toml";

/// Provenance block recorded for generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticProvenance {
    pub spec: SyntheticSpec,
    pub relabeled_captions: usize,
    pub hub_images: usize,
    pub hub_captions: usize,
}

/// On-disk description of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub text_features: String,
    pub image_features: String,
    pub captions_per_image: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SyntheticProvenance>,
}

/// Writes the two feature files plus `dataset.toml` into an existing
/// directory.
pub fn save_dataset(dir: &Path, dataset: &FeatureDataset, provenance: Option<SyntheticProvenance>) -> Result<()> {
    write_features(&dir.join(TEXT_FEATURES_FILE), dataset.text_features())?;
    write_features(&dir.join(IMAGE_FEATURES_FILE), dataset.image_features())?;
    let manifest = DatasetManifest {
        format_version: 1,
        text_features: TEXT_FEATURES_FILE.into(),
        image_features: IMAGE_FEATURES_FILE.into(),
        captions_per_image: dataset.captions_per_image(),
        provenance,
    };
    let body = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse { path: dir.join(DATASET_MANIFEST_FILE), message: e.to_string() })?;
    fs::write(dir.join(DATASET_MANIFEST_FILE), body)
        .map_err(|e| io_error(&dir.join(DATASET_MANIFEST_FILE), e))
}

/// Loads a dataset directory written by `save_dataset`.
pub fn load_dataset(dir: &Path) -> Result<FeatureDataset> {
    let manifest = load_dataset_manifest(dir)?;
    let text = read_features(&dir.join(&manifest.text_features))?;
    let image = read_features(&dir.join(&manifest.image_features))?;
    FeatureDataset::new(text, image, manifest.captions_per_image)
}

pub fn load_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST_FILE);
    let body = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    toml::from_str(&body).map_err(|e| Error::Parse { path, message: e.to_string() })
}

pub const ENCODER_MAGIC: [u8; 4] = *b"EMBW";
pub const ENCODER_VERSION: u32 = 1;
/// Bytes before the weights: magic, version, joint/text/image dims (u32 LE).
const ENCODER_HEADER_LEN: usize = 20;

/// Writes a trained encoder pair: "EMBW", version 1 (u32 LE), joint, text
/// and image dimensions (u32 LE each), then both weight matrices row-major
/// as IEEE-754 64-bit LE values, text block first. Weights keep full
/// precision so a reloaded model scores identically.
pub fn save_encoder(path: &Path, encoder: &EncoderPair) -> Result<()> {
    let text = encoder.text_weights();
    let image = encoder.image_weights();
    let mut buf = Vec::with_capacity(ENCODER_HEADER_LEN + (text.as_slice().len() + image.as_slice().len()) * 8);
    buf.extend_from_slice(&ENCODER_MAGIC);
    buf.extend_from_slice(&ENCODER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(encoder.joint_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(encoder.text_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(encoder.image_dim() as u32).to_le_bytes());
    for m in [text, image] {
        for &v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

/// Reads an encoder written by `save_encoder`, with the same corruption
/// taxonomy as feature files: bad magic, unsupported version, or a payload
/// that disagrees with the header's dimensions.
pub fn load_encoder(path: &Path) -> Result<EncoderPair> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.len() >= 4 && bytes[0..4] != ENCODER_MAGIC {
        return Err(Error::BadMagic { found: [bytes[0], bytes[1], bytes[2], bytes[3]] });
    }
    if bytes.len() < ENCODER_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected_bytes: ENCODER_HEADER_LEN as u64,
            actual_bytes: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ENCODER_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: ENCODER_VERSION });
    }
    let joint = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d_text = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let d_image = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = (joint as u128) * (d_text as u128 + d_image as u128) * 8;
    let actual = (bytes.len() - ENCODER_HEADER_LEN) as u128;
    if expected != actual {
        return Err(Error::TruncatedPayload {
            expected_bytes: expected.min(u64::MAX as u128) as u64,
            actual_bytes: actual as u64,
        });
    }
    let mut values = bytes[ENCODER_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let text_data: Vec<f64> = values.by_ref().take(joint * d_text).collect();
    let image_data: Vec<f64> = values.collect();
    EncoderPair::new(
        Matrix::from_vec(joint, d_text, text_data)?,
        Matrix::from_vec(joint, d_image, image_data)?,
    )
}
