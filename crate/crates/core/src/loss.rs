use serde::{Deserialize, Serialize};

use crate::embed::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// The floor for the alignment term 1 + W_ii * S_ii inside the log; below
/// this the loss is considered numerically invalid rather than clamped.
pub const POSITIVE_TERM_FLOOR: f64 = 1e-9;

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    Sum,
    Max,
    Nca,
    Hal,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LossKind::Sum => "SUM",
            LossKind::Max => "MAX",
            LossKind::Nca => "NCA",
            LossKind::Hal => "HAL",
        };
        f.write_str(name)
    }
}

/// Margin for the hinge objectives. Cosine differences span [-2, 2], so
/// margins outside [0, 2] cannot change which triplets are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TripletConfig {
    pub margin: f64,
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || !(0.0..=2.0).contains(&self.margin) {
            return Err(Error::InvalidConfig(format!(
                "margin must lie in [0, 2], got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Smoothness and margin parameters of the hubness-aware objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct HalConfig {
    /// Smooth-max sharpness; the soft term approaches the hard maximum as
    /// gamma grows.
    pub gamma: f64,
    /// Margin subtracted from every similarity before weighting.
    pub epsilon: f64,
}

impl HalConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !self.epsilon.is_finite() || !(0.0..=2.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 2], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-entry weights applied to a batch similarity matrix. Entries live in
/// [0, 1]; the all-ones matrix recovers the unweighted objective.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Matrix,
}

impl WeightMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::ShapeMismatch {
                context: "weight matrix must be square",
                expected: (values.rows(), values.rows()),
                got: values.shape(),
            });
        }
        if !values.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::NonFinite { context: "weights outside [0, 1]" });
        }
        Ok(WeightMatrix { values })
    }

    pub fn ones(n: usize) -> Self {
        WeightMatrix { values: Matrix::from_vec_unchecked(n, n, vec![1.0; n * n]) }
    }

    pub fn size(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// A loss value together with its gradient in the similarity matrix. The
/// gradient orientation matches the similarity matrix: entry (i, j) is
/// d(loss)/dS_ij with image row i and text column j.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub d_s: Matrix,
}

/// Sum-margin triplet objective: every negative that violates the margin
/// against its anchor's positive contributes a hinge term, in both the
/// image-to-text and text-to-image directions.
///
/// The subgradient convention at hinge kinks (violation exactly zero) is 0.
pub fn sum_margin(s: &SimilarityMatrix, cfg: &TripletConfig) -> LossResult {
    let n = s.batch_size();
    let sv = s.values();
    let mut value = 0.0;
    let mut d = Matrix::zeros(n, n);
    for a in 0..n {
        let pos = sv.get(a, a);
        for b in 0..n {
            if b == a {
                continue;
            }
            // image anchor a, negative text b
            let h_row = cfg.margin - pos + sv.get(a, b);
            if h_row > 0.0 {
                value += h_row;
                d.set(a, b, d.get(a, b) + 1.0);
                d.set(a, a, d.get(a, a) - 1.0);
            }
            // text anchor a, negative image b
            let h_col = cfg.margin - pos + sv.get(b, a);
            if h_col > 0.0 {
                value += h_col;
                d.set(b, a, d.get(b, a) + 1.0);
                d.set(a, a, d.get(a, a) - 1.0);
            }
        }
    }
    LossResult { value, d_s: d }
}

/// Max-margin triplet objective: only the single hardest negative per anchor
/// and direction contributes. Ties in the hardest negative resolve to the
/// lowest index; kinks use the 0 subgradient like `sum_margin`.
pub fn max_margin(s: &SimilarityMatrix, cfg: &TripletConfig) -> LossResult {
    let n = s.batch_size();
    let sv = s.values();
    let mut value = 0.0;
    let mut d = Matrix::zeros(n, n);
    if n == 1 {
        return LossResult { value, d_s: d };
    }
    for a in 0..n {
        let pos = sv.get(a, a);
        let mut hard_text = usize::MAX;
        let mut hard_image = usize::MAX;
        for b in 0..n {
            if b == a {
                continue;
            }
            if hard_text == usize::MAX || sv.get(a, b) > sv.get(a, hard_text) {
                hard_text = b;
            }
            if hard_image == usize::MAX || sv.get(b, a) > sv.get(hard_image, a) {
                hard_image = b;
            }
        }
        let h_row = cfg.margin - pos + sv.get(a, hard_text);
        if h_row > 0.0 {
            value += h_row;
            d.set(a, hard_text, d.get(a, hard_text) + 1.0);
            d.set(a, a, d.get(a, a) - 1.0);
        }
        let h_col = cfg.margin - pos + sv.get(hard_image, a);
        if h_col > 0.0 {
            value += h_col;
            d.set(hard_image, a, d.get(hard_image, a) + 1.0);
            d.set(a, a, d.get(a, a) - 1.0);
        }
    }
    LossResult { value, d_s: d }
}

/// Softmax neighbourhood objective, minimized form: for each image anchor
/// the log-sum-exp over its row minus the aligned similarity. Single
/// direction by construction; the gradient is row-softmax minus identity.
pub fn nca_loss(s: &SimilarityMatrix) -> LossResult {
    let n = s.batch_size();
    let sv = s.values();
    let mut value = 0.0;
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let row = sv.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        value += m + z.ln() - row[i];
        let d_row = d.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            d_row[j] = (v - m).exp() / z;
        }
        d_row[i] -= 1.0;
    }
    LossResult { value, d_s: d }
}

/// Per-anchor accumulator for one smooth-hinge log term
/// (1/gamma) * ln(1 + sum_k exp(gamma * x_k)).
///
/// Sums are shifted by max(0, max_k x_k) so the largest exponent is always
/// <= 0; the implicit "+1" rides along as exp(-gamma * shift).
#[derive(Clone, Copy)]
struct ShiftedLog {
    shift: f64,
    denom: f64,
}

impl ShiftedLog {
    fn over(xs: impl Iterator<Item = f64> + Clone, gamma: f64) -> ShiftedLog {
        let shift = xs.clone().fold(0.0_f64, f64::max);
        let denom = (-gamma * shift).exp()
            + xs.map(|x| (gamma * (x - shift)).exp()).sum::<f64>();
        ShiftedLog { shift, denom }
    }

    fn value(&self, gamma: f64) -> f64 {
        self.shift + self.denom.ln() / gamma
    }

    /// exp(gamma * x) / (1 + sum exp(gamma * x_k)), evaluated in shifted form.
    fn ratio(&self, x: f64, gamma: f64) -> f64 {
        (gamma * (x - self.shift)).exp() / self.denom
    }
}

/// One smooth-hinge log term (1/gamma) * ln(1 + sum_k exp(gamma * x_k)),
/// evaluated in max-shifted form; exactly the per-anchor, per-direction
/// term accumulated by `hal_loss`. Always lies between max(0, max_k x_k)
/// and that bound plus ln(len + 1) / gamma.
pub fn smooth_max_term(xs: &[f64], gamma: f64) -> f64 {
    ShiftedLog::over(xs.iter().copied(), gamma).value(gamma)
}

/// Hubness-aware objective over a weighted batch similarity matrix.
///
/// For each anchor the misses in both retrieval directions enter through
/// two smooth-hinge log terms over weighted margins W_ij * (S_ij - epsilon),
/// and the aligned pair contributes -ln(1 + W_ii * S_ii). The mean over the
/// batch is returned. Errors if any alignment term 1 + W_ii * S_ii falls
/// below `POSITIVE_TERM_FLOOR` (possible only when W_ii is near 1 and S_ii
/// near -1), naming the offending pair.
///
/// The weights are treated as constants: the gradient is taken with respect
/// to the similarities only.
pub fn hal_loss(s: &SimilarityMatrix, w: &WeightMatrix, cfg: &HalConfig) -> Result<LossResult> {
    let n = s.batch_size();
    if w.size() != n {
        return Err(Error::ShapeMismatch {
            context: "weight matrix vs similarity batch",
            expected: (n, n),
            got: (w.size(), w.size()),
        });
    }
    let sv = s.values();
    let wv = w.values();
    let gamma = cfg.gamma;
    let eps = cfg.epsilon;
    let x = |i: usize, j: usize| wv.get(i, j) * (sv.get(i, j) - eps);

    // Column j: misses against text anchor j (images m != j).
    let col: Vec<ShiftedLog> = (0..n)
        .map(|j| ShiftedLog::over((0..n).filter(|&m| m != j).map(|m| x(m, j)), gamma))
        .collect();
    // Row i: misses against image anchor i (texts n != i).
    let row: Vec<ShiftedLog> = (0..n)
        .map(|i| ShiftedLog::over((0..n).filter(|&t| t != i).map(|t| x(i, t)), gamma))
        .collect();

    let mut value = 0.0;
    for i in 0..n {
        let aligned = 1.0 + wv.get(i, i) * sv.get(i, i);
        if aligned < POSITIVE_TERM_FLOOR {
            return Err(Error::PositiveTermTooSmall { index: i, value: aligned });
        }
        value += col[i].value(gamma) + row[i].value(gamma) - aligned.ln();
    }
    let inv_n = 1.0 / n as f64;
    value *= inv_n;

    let mut d = Matrix::zeros(n, n);
    for (i, row_i) in row.iter().enumerate() {
        for (j, col_j) in col.iter().enumerate() {
            let g = if i == j {
                let w_ii = wv.get(i, i);
                -inv_n * w_ii / (1.0 + w_ii * sv.get(i, i))
            } else {
                let x_ij = x(i, j);
                inv_n * wv.get(i, j) * (col_j.ratio(x_ij, gamma) + row_i.ratio(x_ij, gamma))
            };
            d.set(i, j, g);
        }
    }
    Ok(LossResult { value, d_s: d })
}
