use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Row norms at or below this are treated as degenerate: the row passes
/// through normalization unchanged and its index is reported.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Linear projections from each modality's feature space into a shared
/// embedding space. `text_weights` is (joint_dim x text_dim), `image_weights`
/// is (joint_dim x image_dim); encodings are `features * W^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    text_weights: Matrix,
    image_weights: Matrix,
}

impl EncoderPair {
    pub fn new(text_weights: Matrix, image_weights: Matrix) -> Result<Self> {
        if text_weights.rows() == 0 || text_weights.cols() == 0 || image_weights.cols() == 0 {
            return Err(Error::EmptyInput("encoder weights"));
        }
        if text_weights.rows() != image_weights.rows() {
            return Err(Error::ShapeMismatch {
                context: "encoder joint dimension",
                expected: (text_weights.rows(), image_weights.cols()),
                got: image_weights.shape(),
            });
        }
        Ok(EncoderPair { text_weights, image_weights })
    }

    /// Xavier-uniform initialization: entries drawn from
    /// U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))),
    /// text weights first, row-major, then image weights.
    pub fn xavier<R: Rng>(joint_dim: usize, text_dim: usize, image_dim: usize, rng: &mut R) -> Result<Self> {
        if joint_dim == 0 || text_dim == 0 || image_dim == 0 {
            return Err(Error::EmptyInput("encoder dimensions"));
        }
        let mut draw = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
            Matrix::from_vec_unchecked(rows, cols, data)
        };
        let text_weights = draw(joint_dim, text_dim);
        let image_weights = draw(joint_dim, image_dim);
        EncoderPair::new(text_weights, image_weights)
    }

    pub fn joint_dim(&self) -> usize {
        self.text_weights.rows()
    }

    pub fn text_dim(&self) -> usize {
        self.text_weights.cols()
    }

    pub fn image_dim(&self) -> usize {
        self.image_weights.cols()
    }

    pub fn text_weights(&self) -> &Matrix {
        &self.text_weights
    }

    pub fn image_weights(&self) -> &Matrix {
        &self.image_weights
    }

    pub fn text_weights_mut(&mut self) -> &mut Matrix {
        &mut self.text_weights
    }

    pub fn image_weights_mut(&mut self) -> &mut Matrix {
        &mut self.image_weights
    }

    /// Projects both feature blocks into the joint space (unnormalized).
    pub fn encode(&self, text_features: &Matrix, image_features: &Matrix) -> Result<(Matrix, Matrix)> {
        let text_enc = text_features.matmul_nt(&self.text_weights)?;
        let image_enc = image_features.matmul_nt(&self.image_weights)?;
        Ok((text_enc, image_enc))
    }
}

/// Result of row-wise l2 normalization. Degenerate rows are copied through
/// unchanged and listed so callers can decide whether that is acceptable.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    pub matrix: Matrix,
    pub degenerate: Vec<usize>,
}

pub fn l2_normalize_rows(m: &Matrix) -> NormalizedRows {
    let mut out = m.clone();
    let mut degenerate = Vec::new();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = dot(row, row).sqrt();
        if norm <= DEGENERATE_NORM {
            degenerate.push(r);
        } else {
            for v in row {
                *v /= norm;
            }
        }
    }
    NormalizedRows { matrix: out, degenerate }
}

/// Square similarity matrix over a batch of aligned pairs. Row index runs
/// over images, column index over texts; the diagonal holds the ground-truth
/// pair similarities. Entries are cosines clamped to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    /// Wraps precomputed values; used by tests and diagnostics. Entries must
    /// be finite cosines in [-1, 1] and the matrix must be square.
    pub fn from_values(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::ShapeMismatch {
                context: "similarity matrix must be square",
                expected: (values.rows(), values.rows()),
                got: values.shape(),
            });
        }
        if values.rows() == 0 {
            return Err(Error::EmptyInput("similarity matrix"));
        }
        if !values.as_slice().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)) {
            return Err(Error::NonFinite { context: "similarity values outside [-1, 1]" });
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn batch_size(&self) -> usize {
        self.values.rows()
    }
}

/// Rectangular cosine similarity: rows follow `image_enc` rows, columns
/// follow `text_enc` rows. Inputs are unnormalized encodings; rows are
/// l2-normalized here. Entries are clamped to [-1, 1] to absorb rounding.
pub fn cross_similarity(text_enc: &Matrix, image_enc: &Matrix) -> Result<Matrix> {
    if image_enc.cols() != text_enc.cols() {
        return Err(Error::ShapeMismatch {
            context: "cross_similarity joint dimension",
            expected: (text_enc.rows(), image_enc.cols()),
            got: text_enc.shape(),
        });
    }
    let image_hat = l2_normalize_rows(image_enc).matrix;
    let text_hat = l2_normalize_rows(text_enc).matrix;
    let mut s = image_hat.matmul_nt(&text_hat)?;
    for v in s.as_mut_slice() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(s)
}

/// Square batch similarity for training: row i is image i, column t is text
/// t, pairs aligned by index.
pub fn cosine_similarity_matrix(text_enc: &Matrix, image_enc: &Matrix) -> Result<SimilarityMatrix> {
    if image_enc.rows() != text_enc.rows() {
        return Err(Error::ShapeMismatch {
            context: "similarity batch",
            expected: (image_enc.rows(), text_enc.cols()),
            got: text_enc.shape(),
        });
    }
    if image_enc.rows() == 0 {
        return Err(Error::EmptyInput("similarity batch"));
    }
    let values = cross_similarity(text_enc, image_enc)?;
    Ok(SimilarityMatrix { values })
}

/// Gradients of a scalar loss with respect to both weight matrices.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub loss: f64,
    pub d_text_weights: Matrix,
    pub d_image_weights: Matrix,
}

/// Backpropagates `d_s` (the loss gradient with respect to the batch
/// similarity matrix, image rows x text columns) through normalization and
/// both linear encoders.
///
/// The forward clamp to [-1, 1] only binds on rounding at the boundary, so
/// it is treated as the identity here. Degenerate encoding rows (norm <=
/// DEGENERATE_NORM) use the identity Jacobian, matching the forward pass.
pub fn backward(
    encoder: &EncoderPair,
    text_features: &Matrix,
    image_features: &Matrix,
    d_s: &Matrix,
    loss: f64,
) -> Result<GradientTape> {
    let (text_enc, image_enc) = encoder.encode(text_features, image_features)?;
    if d_s.rows() != image_enc.rows() || d_s.cols() != text_enc.rows() {
        return Err(Error::ShapeMismatch {
            context: "backward d_s",
            expected: (image_enc.rows(), text_enc.rows()),
            got: d_s.shape(),
        });
    }
    let image_norm = l2_normalize_rows(&image_enc);
    let text_norm = l2_normalize_rows(&text_enc);

    // dL/d(image_hat) = d_s * text_hat ; dL/d(text_hat) = d_s^T * image_hat
    let d_image_hat = d_s.matmul(&text_norm.matrix)?;
    let d_text_hat = d_s.matmul_tn(&image_norm.matrix)?;

    let d_image_enc = normalize_backward(&image_enc, &image_norm, d_image_hat);
    let d_text_enc = normalize_backward(&text_enc, &text_norm, d_text_hat);

    // enc = X * W^T, so dL/dW = (dL/dEnc)^T * X
    let d_text_weights = d_text_enc.matmul_tn(text_features)?;
    let d_image_weights = d_image_enc.matmul_tn(image_features)?;
    Ok(GradientTape { loss, d_text_weights, d_image_weights })
}

/// Jacobian of row normalization: for v with unit direction u = v/|v| and
/// upstream gradient g, dL/dv = (g - (u.g) u) / |v|. Degenerate rows pass
/// g through unchanged.
fn normalize_backward(raw: &Matrix, normed: &NormalizedRows, mut d_hat: Matrix) -> Matrix {
    let mut degenerate = normed.degenerate.iter().copied().peekable();
    for r in 0..raw.rows() {
        if degenerate.peek() == Some(&r) {
            degenerate.next();
            continue;
        }
        let v = raw.row(r);
        let u = normed.matrix.row(r);
        let norm = dot(v, v).sqrt();
        let proj = dot(u, d_hat.row(r));
        let g_row = d_hat.row_mut(r);
        for (g, &ui) in g_row.iter_mut().zip(u) {
            *g = (*g - proj * ui) / norm;
        }
    }
    d_hat
}
