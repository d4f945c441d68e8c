use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bank::{global_weights, GlobalWeightConfig, MemoryBank};
use crate::embed::{backward, cosine_similarity_matrix, l2_normalize_rows, EncoderPair};
use crate::error::{Error, Result};
use crate::loss::{hal_loss, max_margin, nca_loss, sum_margin, HalConfig, TripletConfig, WeightMatrix};
use crate::matrix::Matrix;

/// Step size for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Maximum relative error accepted as a pass.
pub const DEFAULT_FD_TOLERANCE: f64 = 1e-5;

/// Hinge terms and argmax selections must sit at least this far from a
/// decision boundary in similarity space; a 1e-5 parameter nudge moves a
/// cosine by at most a few 1e-5, so this radius keeps the active set frozen
/// during differencing.
const KINK_RADIUS: f64 = 1e-3;
const MAX_SAMPLING_ATTEMPTS: usize = 200;

/// The losses whose analytic gradients can be checked. The memory-bank
/// variant computes a weight matrix from a random bank once and holds it
/// fixed, matching the stop-gradient treatment of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckLoss {
    Sum,
    Max,
    Nca,
    Hal,
    HalMbFixed,
}

impl GradCheckLoss {
    pub const ALL: [GradCheckLoss; 5] = [
        GradCheckLoss::Sum,
        GradCheckLoss::Max,
        GradCheckLoss::Nca,
        GradCheckLoss::Hal,
        GradCheckLoss::HalMbFixed,
    ];
}

impl fmt::Display for GradCheckLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradCheckLoss::Sum => "SUM",
            GradCheckLoss::Max => "MAX",
            GradCheckLoss::Nca => "NCA",
            GradCheckLoss::Hal => "HAL",
            GradCheckLoss::HalMbFixed => "HAL+MB",
        })
    }
}

impl FromStr for GradCheckLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUM" => Ok(GradCheckLoss::Sum),
            "MAX" => Ok(GradCheckLoss::Max),
            "NCA" => Ok(GradCheckLoss::Nca),
            "HAL" => Ok(GradCheckLoss::Hal),
            "HAL+MB" | "HALMB" | "HAL-MB" => Ok(GradCheckLoss::HalMbFixed),
            other => Err(Error::InvalidConfig(format!(
                "unknown gradcheck loss {other:?}; expected SUM, MAX, NCA, HAL or HAL+MB"
            ))),
        }
    }
}

/// Worst-case relative errors between analytic and finite-difference
/// gradients, reported per encoder parameter block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub loss: GradCheckLoss,
    pub seed: u64,
    pub batch_size: usize,
    pub dim: usize,
    pub text_max_rel: f64,
    pub image_max_rel: f64,
    /// Batches discarded because a hinge or argmax sat too close to a kink.
    pub resampled: usize,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.text_max_rel.max(self.image_max_rel)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel() <= tolerance
    }
}

/// Relative error with an absolute fallback so near-zero entries do not
/// divide FD noise by ~0.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn hinge_distances_ok(s: &Matrix, margin: f64) -> bool {
    let n = s.rows();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let off = s.get(i, j);
            if (margin - s.get(i, i) + off).abs() < KINK_RADIUS
                || (margin - s.get(j, j) + off).abs() < KINK_RADIUS
            {
                return false;
            }
        }
    }
    true
}

/// The max-margin picks one negative per anchor; require a clear winner so
/// the selection cannot flip mid-difference.
fn argmax_gaps_ok(s: &Matrix) -> bool {
    let n = s.rows();
    let clear = |vals: &mut dyn Iterator<Item = f64>| {
        let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in vals {
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        second == f64::NEG_INFINITY || top - second >= KINK_RADIUS
    };
    for a in 0..n {
        if !clear(&mut (0..n).filter(|&j| j != a).map(|j| s.get(a, j))) {
            return false;
        }
        if !clear(&mut (0..n).filter(|&i| i != a).map(|i| s.get(i, a))) {
            return false;
        }
    }
    true
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("bounded draws are finite")
}

struct CheckInstance {
    encoder: EncoderPair,
    text: Matrix,
    image: Matrix,
    weights: WeightMatrix,
    resampled: usize,
}

fn sample_instance(loss: GradCheckLoss, seed: u64, n: usize, d: usize, margin: f64) -> Result<CheckInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resampled = 0;
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let encoder = EncoderPair::xavier(d, d, d, &mut rng)?;
        let text = random_matrix(n, d, &mut rng);
        let image = random_matrix(n, d, &mut rng);
        let (text_enc, image_enc) = encoder.encode(&text, &image)?;
        let s = cosine_similarity_matrix(&text_enc, &image_enc)?;

        let safe = match loss {
            GradCheckLoss::Sum => hinge_distances_ok(s.values(), margin),
            GradCheckLoss::Max => hinge_distances_ok(s.values(), margin) && argmax_gaps_ok(s.values()),
            GradCheckLoss::Nca | GradCheckLoss::Hal | GradCheckLoss::HalMbFixed => true,
        };
        if !safe {
            resampled += 1;
            continue;
        }

        let weights = if loss == GradCheckLoss::HalMbFixed {
            let bank_pairs = 4 * n;
            let bank_text = random_matrix(bank_pairs, d, &mut rng);
            let bank_image = random_matrix(bank_pairs, d, &mut rng);
            let (bt, bi) = encoder.encode(&bank_text, &bank_image)?;
            // Source ids beyond the batch's pair ids: nothing is excluded.
            let sources: Vec<usize> = (0..bank_pairs).map(|p| n + p).collect();
            let bank = MemoryBank::new(
                l2_normalize_rows(&bt).matrix,
                l2_normalize_rows(&bi).matrix,
                sources,
            )?;
            let cfg = GlobalWeightConfig {
                k: 3,
                alpha: 40.0,
                beta: 40.0,
                eps1: 0.2,
                eps2: 0.1,
                bank_fraction: 1.0,
            };
            let pair_ids: Vec<usize> = (0..n).collect();
            global_weights(&text_enc, &image_enc, &pair_ids, &bank, &cfg)?
        } else {
            WeightMatrix::ones(n)
        };
        return Ok(CheckInstance { encoder, text, image, weights, resampled });
    }
    Err(Error::InvalidConfig(format!(
        "no kink-free batch found for {loss} after {MAX_SAMPLING_ATTEMPTS} attempts (seed {seed})"
    )))
}

/// Compares the analytic parameter gradient of one loss against central
/// finite differences on a random batch of `n` pairs in `d` dimensions
/// (joint dimension also `d`). Batches whose hinge terms sit within the
/// kink radius are resampled so the difference quotient stays one-sided.
pub fn gradient_check(loss: GradCheckLoss, seed: u64, n: usize, d: usize, h: f64) -> Result<GradCheckReport> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidConfig(format!("gradcheck needs n >= 2 and d >= 1, got n={n}, d={d}")));
    }
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidConfig(format!("step size {h} must be positive and finite")));
    }
    let triplet = TripletConfig { margin: 0.2 };
    let hal = HalConfig { gamma: 30.0, epsilon: 0.3 };
    let inst = sample_instance(loss, seed, n, d, triplet.margin)?;

    let value_of = |enc: &EncoderPair| -> Result<f64> {
        let (text_enc, image_enc) = enc.encode(&inst.text, &inst.image)?;
        let s = cosine_similarity_matrix(&text_enc, &image_enc)?;
        Ok(match loss {
            GradCheckLoss::Sum => sum_margin(&s, &triplet).value,
            GradCheckLoss::Max => max_margin(&s, &triplet).value,
            GradCheckLoss::Nca => nca_loss(&s).value,
            GradCheckLoss::Hal | GradCheckLoss::HalMbFixed => hal_loss(&s, &inst.weights, &hal)?.value,
        })
    };

    let (text_enc, image_enc) = inst.encoder.encode(&inst.text, &inst.image)?;
    let s = cosine_similarity_matrix(&text_enc, &image_enc)?;
    let result = match loss {
        GradCheckLoss::Sum => sum_margin(&s, &triplet),
        GradCheckLoss::Max => max_margin(&s, &triplet),
        GradCheckLoss::Nca => nca_loss(&s),
        GradCheckLoss::Hal | GradCheckLoss::HalMbFixed => hal_loss(&s, &inst.weights, &hal)?,
    };
    let tape = backward(&inst.encoder, &inst.text, &inst.image, &result.d_s, result.value)?;

    fn block_mut(e: &mut EncoderPair, block: usize) -> &mut Matrix {
        if block == 0 { e.text_weights_mut() } else { e.image_weights_mut() }
    }

    let mut block_max = [0.0f64; 2];
    for (block, analytic) in [(0, &tape.d_text_weights), (1, &tape.d_image_weights)] {
        let (rows, cols) = analytic.shape();
        for r in 0..rows {
            for c in 0..cols {
                let mut probe = inst.encoder.clone();
                let base = block_mut(&mut probe, block).get(r, c);
                block_mut(&mut probe, block).set(r, c, base + h);
                let plus = value_of(&probe)?;
                block_mut(&mut probe, block).set(r, c, base - h);
                let minus = value_of(&probe)?;
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(analytic.get(r, c), numeric);
                block_max[block] = block_max[block].max(err);
            }
        }
    }

    Ok(GradCheckReport {
        loss,
        seed,
        batch_size: n,
        dim: d,
        text_max_rel: block_max[0],
        image_max_rel: block_max[1],
        resampled: inst.resampled,
    })
}
