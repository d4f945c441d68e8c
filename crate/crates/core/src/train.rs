use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{global_weights, sample_bank, GlobalWeightConfig, MemoryBank};
use crate::data::FeatureDataset;
use crate::embed::{backward, cosine_similarity_matrix, cross_similarity, EncoderPair};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSummary, RetrievalReport};
use crate::loss::{
    hal_loss, max_margin, nca_loss, sum_margin, HalConfig, LossKind, LossResult, TripletConfig,
    WeightMatrix,
};
use crate::matrix::Matrix;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Parameter update rule. Adam is the default; plain SGD is available for
/// experiments that need a bare gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Complete description of one training run. Deserializes from TOML with
/// camelCase keys; unknown keys are rejected to catch typos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Refresh a memory bank each epoch and weight HAL terms globally.
    #[serde(default)]
    pub use_memory_bank: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate decays by 10x every this many epochs.
    pub lr_update_epoch: usize,
    #[serde(default)]
    pub seed: u64,
    /// Width of the shared embedding space both encoders map into.
    pub joint_dim: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_cfg: Option<TripletConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hal_cfg: Option<HalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_cfg: Option<GlobalWeightConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batchSize {} must be at least 2",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        // Zero is permitted so a run can act as an evaluation-only baseline.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learningRate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.lr_update_epoch < 1 {
            return Err(Error::InvalidConfig("lrUpdateEpoch must be at least 1".into()));
        }
        if self.joint_dim < 1 {
            return Err(Error::InvalidConfig("jointDim must be at least 1".into()));
        }
        match self.loss_kind {
            LossKind::Sum | LossKind::Max => {
                self.triplet()?.validate()?;
            }
            LossKind::Nca => {}
            LossKind::Hal => {
                self.hal()?.validate()?;
            }
        }
        if self.use_memory_bank {
            if self.loss_kind != LossKind::Hal {
                return Err(Error::InvalidConfig(format!(
                    "useMemoryBank only applies to lossKind HAL, not {}",
                    self.loss_kind
                )));
            }
            self.global()?.validate()?;
        }
        Ok(())
    }

    fn triplet(&self) -> Result<TripletConfig> {
        self.triplet_cfg.ok_or_else(|| {
            Error::InvalidConfig(format!("lossKind {} requires tripletCfg", self.loss_kind))
        })
    }

    fn hal(&self) -> Result<HalConfig> {
        self.hal_cfg
            .ok_or_else(|| Error::InvalidConfig("lossKind HAL requires halCfg".into()))
    }

    fn global(&self) -> Result<GlobalWeightConfig> {
        self.global_cfg
            .ok_or_else(|| Error::InvalidConfig("useMemoryBank requires globalCfg".into()))
    }
}

/// Step decay: baseLr * 0.1^floor(epoch / lrUpdateEpoch). An update period
/// of 0 means no decay.
pub fn lr_schedule(base_lr: f64, epoch: usize, lr_update_epoch: usize) -> f64 {
    if lr_update_epoch == 0 {
        return base_lr;
    }
    base_lr * 0.1f64.powi((epoch / lr_update_epoch) as i32)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_BANK: u64 = 3;

/// Decorrelated per-purpose seeds, so e.g. adding epochs never changes the
/// initialization draw.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(stream))
}

/// The seeded Xavier-initialized encoder `train` starts from.
pub fn initial_encoder(cfg: &TrainConfig, text_dim: usize, image_dim: usize) -> Result<EncoderPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, STREAM_INIT));
    EncoderPair::xavier(cfg.joint_dim, text_dim, image_dim, &mut rng)
}

#[derive(Debug, Clone)]
struct OptimizerState {
    t: u64,
    m_text: Matrix,
    v_text: Matrix,
    m_image: Matrix,
    v_image: Matrix,
}

impl OptimizerState {
    fn new(encoder: &EncoderPair) -> Self {
        let (tr, tc) = encoder.text_weights().shape();
        let (ir, ic) = encoder.image_weights().shape();
        OptimizerState {
            t: 0,
            m_text: Matrix::zeros(tr, tc),
            v_text: Matrix::zeros(tr, tc),
            m_image: Matrix::zeros(ir, ic),
            v_image: Matrix::zeros(ir, ic),
        }
    }
}

/// Owns the encoder plus optimizer state and applies one update per step.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    encoder: EncoderPair,
    opt: OptimizerState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, encoder: EncoderPair) -> Result<Self> {
        cfg.validate()?;
        let opt = OptimizerState::new(&encoder);
        Ok(Trainer { cfg, encoder, opt })
    }

    pub fn encoder(&self) -> &EncoderPair {
        &self.encoder
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step on a batch of aligned (caption, image) feature
    /// rows. `pair_ids` names each row's training pair for memory-bank
    /// self-exclusion; it is ignored without a bank. Returns the loss
    /// evaluated before the parameter update.
    pub fn step(
        &mut self,
        batch_text: &Matrix,
        batch_image: &Matrix,
        pair_ids: &[usize],
        lr: f64,
        bank: Option<&MemoryBank>,
    ) -> Result<f64> {
        let n = batch_text.rows();
        if batch_image.rows() != n || pair_ids.len() != n {
            return Err(Error::ShapeMismatch {
                context: "training batch (texts, images, pair ids)",
                expected: (n, n),
                got: (batch_image.rows(), pair_ids.len()),
            });
        }
        if n < 2 {
            return Err(Error::InvalidConfig(format!("batch of {n} rows, need at least 2")));
        }
        let (text_enc, image_enc) = self.encoder.encode(batch_text, batch_image)?;
        let s = cosine_similarity_matrix(&text_enc, &image_enc)?;
        let result: LossResult = match self.cfg.loss_kind {
            LossKind::Sum => sum_margin(&s, &self.cfg.triplet()?),
            LossKind::Max => max_margin(&s, &self.cfg.triplet()?),
            LossKind::Nca => nca_loss(&s),
            LossKind::Hal => {
                let w = match bank {
                    Some(b) => global_weights(&text_enc, &image_enc, pair_ids, b, &self.cfg.global()?)?,
                    None => WeightMatrix::ones(n),
                };
                hal_loss(&s, &w, &self.cfg.hal()?)?
            }
        };
        if !result.value.is_finite() {
            return Err(Error::NonFinite { context: "training loss" });
        }
        let tape = backward(&self.encoder, batch_text, batch_image, &result.d_s, result.value)?;
        for g in [&tape.d_text_weights, &tape.d_image_weights] {
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "weight gradient" });
            }
        }
        self.apply(&tape.d_text_weights, &tape.d_image_weights, lr)?;
        Ok(result.value)
    }

    fn apply(&mut self, d_text: &Matrix, d_image: &Matrix, lr: f64) -> Result<()> {
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                sgd_update(self.encoder.text_weights_mut(), d_text, lr);
                sgd_update(self.encoder.image_weights_mut(), d_image, lr);
            }
            OptimizerKind::Adam => {
                self.opt.t += 1;
                let t = self.opt.t;
                adam_update(self.encoder.text_weights_mut(), d_text, &mut self.opt.m_text, &mut self.opt.v_text, t, lr);
                adam_update(self.encoder.image_weights_mut(), d_image, &mut self.opt.m_image, &mut self.opt.v_image, t, lr);
            }
        }
        for w in [self.encoder.text_weights(), self.encoder.image_weights()] {
            if w.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "updated weights" });
            }
        }
        Ok(())
    }
}

fn sgd_update(w: &mut Matrix, g: &Matrix, lr: f64) {
    for (wi, gi) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *wi -= lr * gi;
    }
}

fn adam_update(w: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, t: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t.min(i32::MAX as u64) as i32);
    let (wd, gd) = (w.as_mut_slice(), g.as_slice());
    let (md, vd) = (m.as_mut_slice(), v.as_mut_slice());
    for i in 0..wd.len() {
        md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gd[i];
        vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
        wd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + ADAM_EPS);
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's optimizer steps, each taken pre-update.
    pub train_loss: f64,
    pub lr: f64,
    /// Validation rsum for the encoder at the end of this epoch.
    pub rsum: f64,
    // Scalar kept before the report tables so TOML serialization stays valid.
    pub wall_clock_secs: f64,
    pub image_to_text: RetrievalReport,
    pub text_to_image: RetrievalReport,
}

pub type TrainHistory = Vec<EpochRecord>;

/// Result of a full run: the best-validation snapshot plus the history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: EncoderPair,
    /// State after the last epoch, regardless of validation score.
    pub final_encoder: EncoderPair,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_rsum: f64,
}

/// Encodes a whole dataset and scores retrieval in both directions.
pub fn evaluate_encoder(encoder: &EncoderPair, dataset: &FeatureDataset) -> Result<EvalSummary> {
    let (text_enc, image_enc) = encoder.encode(dataset.text_features(), dataset.image_features())?;
    let s = cross_similarity(&text_enc, &image_enc)?;
    evaluate(&s, dataset.captions_per_image())
}

/// Runs the full training loop: seeded Xavier init, per-epoch shuffling,
/// floor(N / batchSize) steps per epoch with the final partial batch
/// dropped, an optional memory-bank refresh at each epoch start, and
/// per-epoch validation. Returns the snapshot with the highest validation
/// rsum (ties go to the earliest epoch). Deterministic for a fixed
/// (dataset, config) pair.
pub fn train(dataset: &FeatureDataset, val_dataset: &FeatureDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.text_dim() != val_dataset.text_dim() || dataset.image_dim() != val_dataset.image_dim() {
        return Err(Error::ShapeMismatch {
            context: "training vs validation feature dimensions",
            expected: (dataset.text_dim(), dataset.image_dim()),
            got: (val_dataset.text_dim(), val_dataset.image_dim()),
        });
    }
    let n_pairs = dataset.n_pairs();
    let steps_per_epoch = n_pairs / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::InvalidConfig(format!(
            "batchSize {} exceeds the {} available training pairs",
            cfg.batch_size, n_pairs
        )));
    }

    let encoder = initial_encoder(cfg, dataset.text_dim(), dataset.image_dim())?;
    let mut trainer = Trainer::new(cfg.clone(), encoder)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, STREAM_SHUFFLE));
    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut history: TrainHistory = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, EncoderPair)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(cfg.learning_rate, epoch, cfg.lr_update_epoch);
        let bank = if cfg.use_memory_bank {
            let bank_seed = derived_seed(cfg.seed, STREAM_BANK.wrapping_add(epoch as u64));
            Some(sample_bank(dataset, trainer.encoder(), &cfg.global()?, bank_seed)?)
        } else {
            None
        };
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for step in 0..steps_per_epoch {
            let ids = &order[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let batch_text = dataset.text_features().select_rows(ids)?;
            let image_ids: Vec<usize> = ids.iter().map(|&p| dataset.pair_image(p)).collect();
            let batch_image = dataset.image_features().select_rows(&image_ids)?;
            let loss = trainer
                .step(&batch_text, &batch_image, ids, lr, bank.as_ref())
                .map_err(|e| match e {
                    Error::NonFinite { context } => Error::TrainingDiverged { epoch, step, what: context },
                    other => other,
                })?;
            loss_sum += loss;
        }

        let summary = evaluate_encoder(trainer.encoder(), val_dataset)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            lr,
            rsum: summary.rsum,
            image_to_text: summary.image_to_text,
            text_to_image: summary.text_to_image,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
        let improved = best.as_ref().is_none_or(|(_, r, _)| summary.rsum > *r);
        if improved {
            best = Some((epoch, summary.rsum, trainer.encoder().clone()));
        }
    }

    let final_encoder = trainer.encoder().clone();
    let (best_epoch, best_rsum, encoder) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { encoder, final_encoder, history, best_epoch, best_rsum })
}
