//! The standard synthetic benchmark: one dataset recipe, one 80/20
//! train/validation split, and a reference training configuration per
//! objective, so comparisons across objectives and seeds only vary in the
//! quantity under study.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::GlobalWeightConfig;
use crate::data::{FeatureDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::loss::{HalConfig, LossKind, TripletConfig};
use crate::train::{OptimizerKind, TrainConfig};

pub const BENCHMARK_IMAGES: usize = 2000;
pub const BENCHMARK_CAPTIONS_PER_IMAGE: usize = 5;
pub const BENCHMARK_FEATURE_DIM: usize = 32;
pub const BENCHMARK_LATENT_DIM: usize = 8;
pub const BENCHMARK_NOISE_STD: f64 = 0.3;
pub const BENCHMARK_HUB_BIAS: f64 = 0.5;
pub const BENCHMARK_EPOCHS: usize = 15;
pub const BENCHMARK_BATCH_SIZE: usize = 128;
/// Wider than the feature dimension on purpose: the extra directions cost
/// nothing in map rank but keep early gradients well conditioned, which the
/// smooth objectives need to converge as fast as the margin ones.
pub const BENCHMARK_JOINT_DIM: usize = 48;

/// Dataset recipe for the standard benchmark. `label_noise_fraction` is the
/// only free nuisance parameter; pass 0.0 for the clean variant.
pub fn benchmark_spec(seed: u64, label_noise_fraction: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_images: BENCHMARK_IMAGES,
        captions_per_image: BENCHMARK_CAPTIONS_PER_IMAGE,
        d_text: BENCHMARK_FEATURE_DIM,
        d_image: BENCHMARK_FEATURE_DIM,
        latent_dim: BENCHMARK_LATENT_DIM,
        noise_std: BENCHMARK_NOISE_STD,
        label_noise_fraction,
        hub_bias: BENCHMARK_HUB_BIAS,
        seed,
    }
}

/// Deterministic 80/20 split by image prefix; caption groups stay intact.
pub fn benchmark_split(dataset: &FeatureDataset) -> Result<(FeatureDataset, FeatureDataset)> {
    let n_train = (dataset.n_images() * 4) / 5;
    if n_train == 0 || n_train == dataset.n_images() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} images 80/20 with both sides non-empty",
            dataset.n_images()
        )));
    }
    dataset.split_by_images(n_train)
}

/// The four objectives the benchmark compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkVariant {
    Sum,
    Max,
    Hal,
    HalMb,
}

impl BenchmarkVariant {
    pub const ALL: [BenchmarkVariant; 4] = [
        BenchmarkVariant::Sum,
        BenchmarkVariant::Max,
        BenchmarkVariant::Hal,
        BenchmarkVariant::HalMb,
    ];
}

impl fmt::Display for BenchmarkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkVariant::Sum => "SUM",
            BenchmarkVariant::Max => "MAX",
            BenchmarkVariant::Hal => "HAL",
            BenchmarkVariant::HalMb => "HAL+MB",
        })
    }
}

impl FromStr for BenchmarkVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUM" => Ok(BenchmarkVariant::Sum),
            "MAX" => Ok(BenchmarkVariant::Max),
            "HAL" => Ok(BenchmarkVariant::Hal),
            "HAL+MB" | "HALMB" | "HAL-MB" => Ok(BenchmarkVariant::HalMb),
            other => Err(Error::InvalidConfig(format!(
                "unknown benchmark variant {other:?}; expected SUM, MAX, HAL or HAL+MB"
            ))),
        }
    }
}

/// Reference training configuration for one objective. The margins,
/// temperatures and learning rates are the published settings for each
/// objective; epochs, batch size and the joint dimension are held constant
/// across variants so the objective is the only difference.
pub fn variant_config(variant: BenchmarkVariant, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        loss_kind: LossKind::Sum,
        use_memory_bank: false,
        batch_size: BENCHMARK_BATCH_SIZE,
        epochs: BENCHMARK_EPOCHS,
        learning_rate: 1e-3,
        lr_update_epoch: 10,
        seed,
        joint_dim: BENCHMARK_JOINT_DIM,
        optimizer: OptimizerKind::Adam,
        triplet_cfg: None,
        hal_cfg: None,
        global_cfg: None,
    };
    match variant {
        BenchmarkVariant::Sum => {
            cfg.loss_kind = LossKind::Sum;
            cfg.triplet_cfg = Some(TripletConfig { margin: 0.2 });
        }
        BenchmarkVariant::Max => {
            cfg.loss_kind = LossKind::Max;
            cfg.learning_rate = 2e-4;
            cfg.triplet_cfg = Some(TripletConfig { margin: 0.2 });
        }
        BenchmarkVariant::Hal => {
            cfg.loss_kind = LossKind::Hal;
            cfg.hal_cfg = Some(HalConfig { gamma: 30.0, epsilon: 0.3 });
        }
        BenchmarkVariant::HalMb => {
            cfg.loss_kind = LossKind::Hal;
            cfg.use_memory_bank = true;
            cfg.hal_cfg = Some(HalConfig { gamma: 30.0, epsilon: 0.3 });
            cfg.global_cfg = Some(GlobalWeightConfig {
                k: 10,
                alpha: 40.0,
                beta: 40.0,
                eps1: 0.2,
                eps2: 0.1,
                bank_fraction: 0.05,
            });
        }
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn every_variant_config_validates() {
        for variant in BenchmarkVariant::ALL {
            let cfg = variant_config(variant, 3);
            cfg.validate().unwrap_or_else(|e| panic!("{variant}: {e}"));
            assert_eq!(cfg.seed, 3);
            assert_eq!(cfg.batch_size, BENCHMARK_BATCH_SIZE);
        }
        assert_eq!(variant_config(BenchmarkVariant::Max, 0).learning_rate, 2e-4);
        assert!(variant_config(BenchmarkVariant::HalMb, 0).use_memory_bank);
    }

    #[test]
    fn variant_names_round_trip() {
        for variant in BenchmarkVariant::ALL {
            assert_eq!(variant.to_string().parse::<BenchmarkVariant>().unwrap(), variant);
        }
        assert!("ORDER".parse::<BenchmarkVariant>().is_err());
    }

    #[test]
    fn spec_validates_and_split_is_80_20() {
        let spec = benchmark_spec(0, 0.0);
        spec.validate().unwrap();
        assert_eq!(spec.n_images, 2000);

        let text = Matrix::zeros(20, 3);
        let image = Matrix::zeros(10, 3);
        let ds = FeatureDataset::new(text, image, 2).unwrap();
        let (train, val) = benchmark_split(&ds).unwrap();
        assert_eq!(train.n_images(), 8);
        assert_eq!(val.n_images(), 2);

        let tiny = FeatureDataset::new(Matrix::zeros(1, 3), Matrix::zeros(1, 3), 1).unwrap();
        assert!(benchmark_split(&tiny).is_err());
    }
}
