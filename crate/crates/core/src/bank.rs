use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::embed::{l2_normalize_rows, EncoderPair};
use crate::error::{Error, Result};
use crate::loss::WeightMatrix;
use crate::matrix::{dot, Matrix};

/// Parameters of the global weighting stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GlobalWeightConfig {
    /// Neighbourhood size for bank lookups.
    pub k: usize,
    /// Temperature applied in the aligned-pair (positive) weight.
    pub alpha: f64,
    /// Temperature applied in the mismatch (negative) weights.
    pub beta: f64,
    /// Margin on aligned similarities.
    pub eps1: f64,
    /// Margin on bank-neighbour similarities.
    pub eps2: f64,
    /// Fraction of training pairs sampled into the bank each epoch.
    pub bank_fraction: f64,
}

impl GlobalWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        if !self.bank_fraction.is_finite() || self.bank_fraction <= 0.0 || self.bank_fraction > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "bankFraction must lie in (0, 1], got {}",
                self.bank_fraction
            )));
        }
        Ok(())
    }
}

/// Unit-normalized embeddings of a sample of training pairs, refreshed once
/// per epoch. Row r of both banks comes from the training pair
/// `source_indices[r]`; queries exclude rows sharing their own pair id.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    text_bank: Matrix,
    image_bank: Matrix,
    source_indices: Vec<usize>,
}

impl MemoryBank {
    pub fn new(text_bank: Matrix, image_bank: Matrix, source_indices: Vec<usize>) -> Result<Self> {
        if text_bank.rows() == 0 {
            return Err(Error::EmptyInput("memory bank"));
        }
        if text_bank.shape() != image_bank.shape() {
            return Err(Error::ShapeMismatch {
                context: "memory bank modalities",
                expected: text_bank.shape(),
                got: image_bank.shape(),
            });
        }
        if source_indices.len() != text_bank.rows() {
            return Err(Error::DataLength {
                rows: text_bank.rows(),
                cols: 1,
                got: source_indices.len(),
            });
        }
        let mut seen = source_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(
                "memory bank source indices must be unique".into(),
            ));
        }
        Ok(MemoryBank { text_bank, image_bank, source_indices })
    }

    pub fn len(&self) -> usize {
        self.text_bank.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_dim(&self) -> usize {
        self.text_bank.cols()
    }

    pub fn text_bank(&self) -> &Matrix {
        &self.text_bank
    }

    pub fn image_bank(&self) -> &Matrix {
        &self.image_bank
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }
}

/// Indices of the `k` rows of `points` closest to `query` in l2 distance,
/// skipping rows listed in `exclude`. Result is ordered by ascending
/// distance; exact ties resolve to the lower row index. Distances are
/// compared in squared form, which preserves the ordering.
pub fn knn(query: &[f64], points: &Matrix, k: usize, exclude: &[usize]) -> Result<Vec<usize>> {
    if query.len() != points.cols() {
        return Err(Error::ShapeMismatch {
            context: "knn query dimension",
            expected: (1, points.cols()),
            got: (1, query.len()),
        });
    }
    let mut skipped = 0;
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for r in 0..points.rows() {
        if exclude.contains(&r) {
            skipped += 1;
            continue;
        }
        let row = points.row(r);
        let d2: f64 = row
            .iter()
            .zip(query)
            .map(|(p, q)| {
                let diff = p - q;
                diff * diff
            })
            .sum();
        let cand = (d2, r);
        if best.len() == k {
            let worst = *best.last().unwrap();
            if (cand.0, cand.1) >= (worst.0, worst.1) {
                continue;
            }
        }
        let at = best.partition_point(|&(d, i)| (d, i) < (cand.0, cand.1));
        best.insert(at, cand);
        if best.len() > k {
            best.pop();
        }
    }
    let usable = points.rows() - skipped;
    if usable < k {
        return Err(Error::NotEnoughNeighbours { k, usable });
    }
    Ok(best.into_iter().map(|(_, r)| r).collect())
}

/// Samples `ceil(bank_fraction * n_pairs)` training pairs without
/// replacement, encodes both modalities with the current encoder and stores
/// unit-normalized rows. Sources are kept in ascending pair order so bank
/// construction is deterministic given (dataset, encoder, seed).
pub fn sample_bank(
    dataset: &FeatureDataset,
    encoder: &EncoderPair,
    cfg: &GlobalWeightConfig,
    seed: u64,
) -> Result<MemoryBank> {
    cfg.validate()?;
    let n_pairs = dataset.n_pairs();
    let take = (cfg.bank_fraction * n_pairs as f64).ceil() as usize;
    // Queries drop at most one bank row (their own pair), so k neighbours
    // require k + 1 entries.
    if take < cfg.k + 1 {
        return Err(Error::BankTooSmall { bank_len: take, required: cfg.k + 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n_pairs, take).into_vec();
    picked.sort_unstable();

    let text_rows = dataset.text_features().select_rows(&picked)?;
    let image_idx: Vec<usize> = picked.iter().map(|&p| dataset.pair_image(p)).collect();
    let image_rows = dataset.image_features().select_rows(&image_idx)?;
    let (text_enc, image_enc) = encoder.encode(&text_rows, &image_rows)?;
    MemoryBank::new(
        l2_normalize_rows(&text_enc).matrix,
        l2_normalize_rows(&image_enc).matrix,
        picked,
    )
}

/// Per-pair neighbourhood statistics against one side of the bank, stored
/// in max-shifted form so the exponentials cannot overflow: `shift` is the
/// largest margin-adjusted similarity, `sum_alpha`/`sum_beta` are
/// sum(exp(T * (x - shift))) for the two temperatures.
struct NeighbourStats {
    shift: f64,
    sum_alpha: f64,
    sum_beta: f64,
}

/// Computes the global weight matrix for one batch.
///
/// Row index runs over batch images, column index over batch texts, exactly
/// like the batch similarity matrix the weights multiply. For each batch
/// pair the k nearest bank texts to its image and the k nearest bank images
/// to its text are found (own pair excluded); their cosines enter the
/// weight formulas with margin `eps2` while aligned similarities use
/// `eps1`. Inputs are unnormalized encodings.
pub fn global_weights(
    batch_text_enc: &Matrix,
    batch_image_enc: &Matrix,
    pair_ids: &[usize],
    bank: &MemoryBank,
    cfg: &GlobalWeightConfig,
) -> Result<WeightMatrix> {
    cfg.validate()?;
    let n = pair_ids.len();
    if batch_text_enc.rows() != n || batch_image_enc.rows() != n {
        return Err(Error::ShapeMismatch {
            context: "global_weights batch",
            expected: (n, batch_text_enc.cols()),
            got: (batch_image_enc.rows(), batch_image_enc.cols()),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("global_weights batch"));
    }
    if batch_text_enc.cols() != bank.joint_dim() || batch_image_enc.cols() != bank.joint_dim() {
        return Err(Error::ShapeMismatch {
            context: "global_weights joint dimension",
            expected: (n, bank.joint_dim()),
            got: batch_text_enc.shape(),
        });
    }
    let text_hat = l2_normalize_rows(batch_text_enc).matrix;
    let image_hat = l2_normalize_rows(batch_image_enc).matrix;

    let mut aligned = vec![0.0; n];
    let mut text_side = Vec::with_capacity(n); // bank texts near each image
    let mut image_side = Vec::with_capacity(n); // bank images near each text
    for p in 0..n {
        aligned[p] = dot(image_hat.row(p), text_hat.row(p)).clamp(-1.0, 1.0) - cfg.eps1;
        let own: Vec<usize> = (0..bank.len())
            .filter(|&r| bank.source_indices()[r] == pair_ids[p])
            .collect();
        let near_texts = knn(image_hat.row(p), bank.text_bank(), cfg.k, &own)?;
        let near_images = knn(text_hat.row(p), bank.image_bank(), cfg.k, &own)?;
        let margins = |rows: &[usize], bank_side: &Matrix, anchor: &[f64]| -> Vec<f64> {
            rows.iter()
                .map(|&r| dot(anchor, bank_side.row(r)).clamp(-1.0, 1.0) - cfg.eps2)
                .collect()
        };
        text_side.push(stats(
            &margins(&near_texts, bank.text_bank(), image_hat.row(p)),
            cfg.alpha,
            cfg.beta,
        ));
        image_side.push(stats(
            &margins(&near_images, bank.image_bank(), text_hat.row(p)),
            cfg.alpha,
            cfg.beta,
        ));
    }

    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for t in 0..n {
            let v = if i == t {
                // 1 - softmax share of the aligned term against this pair's
                // bank neighbourhoods, at temperature alpha.
                let c = aligned[i].max(text_side[i].shift).max(image_side[i].shift);
                let own = (cfg.alpha * (aligned[i] - c)).exp();
                let neigh = text_side[i].sum_alpha * (cfg.alpha * (text_side[i].shift - c)).exp()
                    + image_side[i].sum_alpha * (cfg.alpha * (image_side[i].shift - c)).exp();
                1.0 - own / (own + neigh)
            } else {
                // Neighbourhood mass of image i and text t against both
                // aligned terms, at temperature beta.
                let c = aligned[i]
                    .max(aligned[t])
                    .max(text_side[i].shift)
                    .max(image_side[t].shift);
                let num = text_side[i].sum_beta * (cfg.beta * (text_side[i].shift - c)).exp()
                    + image_side[t].sum_beta * (cfg.beta * (image_side[t].shift - c)).exp();
                let den = (cfg.beta * (aligned[i] - c)).exp()
                    + (cfg.beta * (aligned[t] - c)).exp()
                    + num;
                num / den
            };
            w.set(i, t, v);
        }
    }
    WeightMatrix::new(w)
}

fn stats(margins: &[f64], alpha: f64, beta: f64) -> NeighbourStats {
    let shift = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    NeighbourStats {
        shift,
        sum_alpha: margins.iter().map(|&x| (alpha * (x - shift)).exp()).sum(),
        sum_beta: margins.iter().map(|&x| (beta * (x - shift)).exp()).sum(),
    }
}
