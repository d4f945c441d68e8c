use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Retrieval direction over a rectangular similarity matrix whose rows are
/// images and whose columns are captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::ImageToText => "image_to_text",
            Direction::TextToImage => "text_to_image",
        })
    }
}

/// Standard retrieval metrics for one direction. Recalls are percentages;
/// ranks are 1-based, median uses midpoint interpolation for even counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetrievalReport {
    pub direction: Direction,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub med_r: f64,
    pub mean_r: f64,
}

/// Both directions plus their combined recall sum (in [0, 600]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalSummary {
    // Scalar first so TOML serialization stays valid (values before tables).
    pub rsum: f64,
    pub image_to_text: RetrievalReport,
    pub text_to_image: RetrievalReport,
}

/// k-occurrence diagnostics: how often each gallery item shows up in the
/// top-k lists of the queries, and how skewed that distribution is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HubnessReport {
    pub direction: Direction,
    pub k: usize,
    /// Per-gallery-item count N_k; sums to k times the number of queries.
    pub occurrence: Vec<usize>,
    /// Population skewness of the occurrence counts; 0 when the variance
    /// vanishes (a perfect one-to-one matching is hub-free, not undefined).
    pub skewness: f64,
    /// Largest single item's share of all top-k slots.
    pub max_hub_share: f64,
}

fn check_grouping(s: &Matrix, captions_per_image: usize) -> Result<()> {
    if captions_per_image == 0
        || s.rows() == 0
        || s.cols() != s.rows() * captions_per_image
    {
        return Err(Error::ShapeMismatch {
            context: "similarity grouping (rows = images, cols = rows * captionsPerImage)",
            expected: (s.rows(), s.rows() * captions_per_image.max(1)),
            got: s.shape(),
        });
    }
    Ok(())
}

/// 1-based rank of the best ground-truth item for every query.
///
/// Rows of `s` are images, columns are captions, caption c pairing with
/// image c / captionsPerImage. Image queries score the best of their
/// captions; caption queries score their single image. Ranking is by
/// descending similarity with exact ties counted toward the lower index.
pub fn rank_ground_truth(s: &Matrix, direction: Direction, captions_per_image: usize) -> Result<Vec<usize>> {
    check_grouping(s, captions_per_image)?;
    let n_images = s.rows();
    let n_caps = s.cols();
    let mut ranks = Vec::new();
    match direction {
        Direction::ImageToText => {
            ranks.reserve(n_images);
            for i in 0..n_images {
                let row = s.row(i);
                let mut best = usize::MAX;
                for gt in i * captions_per_image..(i + 1) * captions_per_image {
                    let target = row[gt];
                    let mut rank = 1;
                    for (j, &v) in row.iter().enumerate() {
                        if v > target || (v == target && j < gt) {
                            rank += 1;
                        }
                    }
                    best = best.min(rank);
                }
                ranks.push(best);
            }
        }
        Direction::TextToImage => {
            ranks.reserve(n_caps);
            for j in 0..n_caps {
                let gt = j / captions_per_image;
                let target = s.get(gt, j);
                let mut rank = 1;
                for i in 0..n_images {
                    let v = s.get(i, j);
                    if v > target || (v == target && i < gt) {
                        rank += 1;
                    }
                }
                ranks.push(rank);
            }
        }
    }
    Ok(ranks)
}

/// Aggregates a rank list into recall/median/mean metrics.
pub fn retrieval_report(ranks: &[usize], direction: Direction) -> Result<RetrievalReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("rank list"));
    }
    let n = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let med_r = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
    };
    Ok(RetrievalReport {
        direction,
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        med_r,
        mean_r: ranks.iter().sum::<usize>() as f64 / n,
    })
}

/// Sum of R@{1,5,10} over both directions, the model-selection criterion.
pub fn rsum(a: &RetrievalReport, b: &RetrievalReport) -> f64 {
    a.r_at_1 + a.r_at_5 + a.r_at_10 + b.r_at_1 + b.r_at_5 + b.r_at_10
}

/// Full evaluation of one similarity matrix: both directions plus rsum.
pub fn evaluate(s: &Matrix, captions_per_image: usize) -> Result<EvalSummary> {
    let i2t = retrieval_report(
        &rank_ground_truth(s, Direction::ImageToText, captions_per_image)?,
        Direction::ImageToText,
    )?;
    let t2i = retrieval_report(
        &rank_ground_truth(s, Direction::TextToImage, captions_per_image)?,
        Direction::TextToImage,
    )?;
    let total = rsum(&i2t, &t2i);
    Ok(EvalSummary { image_to_text: i2t, text_to_image: t2i, rsum: total })
}

/// Evaluates disjoint folds of `fold_size` images (trailing images that do
/// not fill a fold are dropped) and averages every metric across folds.
pub fn fold_averaged(s: &Matrix, captions_per_image: usize, fold_size: usize) -> Result<EvalSummary> {
    check_grouping(s, captions_per_image)?;
    if fold_size == 0 || fold_size > s.rows() {
        return Err(Error::InvalidConfig(format!(
            "foldSize {fold_size} must lie in [1, {}]",
            s.rows()
        )));
    }
    let folds = s.rows() / fold_size;
    let mut acc: Option<EvalSummary> = None;
    for f in 0..folds {
        let img0 = f * fold_size;
        let cap0 = img0 * captions_per_image;
        let cap_n = fold_size * captions_per_image;
        let mut sub = Matrix::zeros(fold_size, cap_n);
        for r in 0..fold_size {
            let src = s.row(img0 + r);
            sub.row_mut(r).copy_from_slice(&src[cap0..cap0 + cap_n]);
        }
        let part = evaluate(&sub, captions_per_image)?;
        acc = Some(match acc {
            None => part,
            Some(prev) => add_summaries(prev, part),
        });
    }
    let mut total = acc.unwrap();
    let scale = 1.0 / folds as f64;
    scale_summary(&mut total, scale);
    Ok(total)
}

fn add_reports(a: RetrievalReport, b: RetrievalReport) -> RetrievalReport {
    RetrievalReport {
        direction: a.direction,
        r_at_1: a.r_at_1 + b.r_at_1,
        r_at_5: a.r_at_5 + b.r_at_5,
        r_at_10: a.r_at_10 + b.r_at_10,
        med_r: a.med_r + b.med_r,
        mean_r: a.mean_r + b.mean_r,
    }
}

fn add_summaries(a: EvalSummary, b: EvalSummary) -> EvalSummary {
    EvalSummary {
        image_to_text: add_reports(a.image_to_text, b.image_to_text),
        text_to_image: add_reports(a.text_to_image, b.text_to_image),
        rsum: a.rsum + b.rsum,
    }
}

fn scale_summary(s: &mut EvalSummary, c: f64) {
    for rep in [&mut s.image_to_text, &mut s.text_to_image] {
        rep.r_at_1 *= c;
        rep.r_at_5 *= c;
        rep.r_at_10 *= c;
        rep.med_r *= c;
        rep.mean_r *= c;
    }
    s.rsum *= c;
}

/// k-occurrence distribution over the gallery implied by `direction`
/// (image queries retrieve captions; caption queries retrieve images).
/// Top-k membership uses descending similarity, ties to the lower index.
pub fn hubness_report(s: &Matrix, k: usize, direction: Direction) -> Result<HubnessReport> {
    let (queries, gallery) = match direction {
        Direction::ImageToText => (s.rows(), s.cols()),
        Direction::TextToImage => (s.cols(), s.rows()),
    };
    if k == 0 || k > gallery {
        return Err(Error::NotEnoughNeighbours { k, usable: gallery });
    }
    if queries == 0 {
        return Err(Error::EmptyInput("hubness queries"));
    }
    let mut occurrence = vec![0usize; gallery];
    let mut idx: Vec<usize> = Vec::with_capacity(gallery);
    for q in 0..queries {
        let score = |g: usize| match direction {
            Direction::ImageToText => s.get(q, g),
            Direction::TextToImage => s.get(g, q),
        };
        idx.clear();
        idx.extend(0..gallery);
        let cmp = |a: &usize, b: &usize| score(*b).total_cmp(&score(*a)).then(a.cmp(b));
        if k < gallery {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        for &g in &idx[..k] {
            occurrence[g] += 1;
        }
    }
    let n = gallery as f64;
    let mean = occurrence.iter().sum::<usize>() as f64 / n;
    let m2 = occurrence.iter().map(|&o| (o as f64 - mean).powi(2)).sum::<f64>() / n;
    let m3 = occurrence.iter().map(|&o| (o as f64 - mean).powi(3)).sum::<f64>() / n;
    let skewness = if m2 == 0.0 { 0.0 } else { m3 / m2.powf(1.5) };
    let max_hub_share = *occurrence.iter().max().unwrap() as f64 / (k as f64 * queries as f64);
    Ok(HubnessReport { direction, k, occurrence, skewness, max_hub_share })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_rank_metrics() {
        let r = retrieval_report(&[1, 6, 11, 20], Direction::ImageToText).unwrap();
        assert_eq!(r.r_at_1, 25.0);
        assert_eq!(r.r_at_5, 25.0);
        assert_eq!(r.r_at_10, 50.0);
        assert_eq!(r.med_r, 8.5);
        assert_eq!(r.mean_r, 9.5);
        assert!(retrieval_report(&[], Direction::ImageToText).is_err());
    }

    #[test]
    fn perfect_block_diagonal_scores_rank_one_everywhere() {
        // 2 images x 2 captions each; own captions strictly best.
        let s = Matrix::from_vec(2, 4, vec![
            0.9, 0.8, 0.1, 0.0, //
            0.1, 0.0, 0.9, 0.8,
        ])
        .unwrap();
        assert_eq!(rank_ground_truth(&s, Direction::ImageToText, 2).unwrap(), vec![1, 1]);
        assert_eq!(rank_ground_truth(&s, Direction::TextToImage, 2).unwrap(), vec![1, 1, 1, 1]);
        let summary = evaluate(&s, 2).unwrap();
        assert_eq!(summary.rsum, 600.0);
    }

    #[test]
    fn swapped_pairs_rank_second() {
        let s = Matrix::from_vec(2, 2, vec![0.1, 0.9, 0.9, 0.1]).unwrap();
        assert_eq!(rank_ground_truth(&s, Direction::ImageToText, 1).unwrap(), vec![2, 2]);
        assert_eq!(rank_ground_truth(&s, Direction::TextToImage, 1).unwrap(), vec![2, 2]);
    }

    #[test]
    fn ties_count_toward_the_lower_index() {
        // Caption 1 is the ground truth of image 0 but ties caption 0.
        let s = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        assert_eq!(rank_ground_truth(&s, Direction::ImageToText, 1).unwrap(), vec![1]);
        let s = Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.2, 0.5]).unwrap();
        // Image 0's caption 0: ties caption 1 but wins by index.
        assert_eq!(rank_ground_truth(&s, Direction::ImageToText, 1).unwrap()[0], 1);
        // Caption 1's image 1 (0.5) ties image 0 (0.5): image 0 wins, rank 2.
        assert_eq!(rank_ground_truth(&s, Direction::TextToImage, 1).unwrap()[1], 2);
    }

    #[test]
    fn grouping_shape_is_validated() {
        let s = Matrix::zeros(2, 5);
        assert!(rank_ground_truth(&s, Direction::ImageToText, 2).is_err());
    }

    #[test]
    fn permutation_matching_has_zero_skewness() {
        let mut s = Matrix::zeros(4, 4);
        for i in 0..4 {
            s.set(i, (i + 1) % 4, 0.9);
        }
        let h = hubness_report(&s, 1, Direction::TextToImage).unwrap();
        assert_eq!(h.occurrence, vec![1, 1, 1, 1]);
        assert_eq!(h.skewness, 0.0);
        assert_eq!(h.max_hub_share, 0.25);
    }

    #[test]
    fn single_dominant_gallery_item_has_known_skewness() {
        // Gallery = 10 image rows; row 0 beats the rest for all 10 queries.
        let mut s = Matrix::zeros(10, 10);
        for q in 0..10 {
            s.set(0, q, 0.9);
        }
        let h = hubness_report(&s, 1, Direction::TextToImage).unwrap();
        assert_eq!(h.occurrence[0], 10);
        assert!(h.occurrence[1..].iter().all(|&o| o == 0));
        assert!((h.skewness - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.max_hub_share, 1.0);
    }

    #[test]
    fn occurrence_counts_sum_to_k_times_queries() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..50 * 50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Matrix::from_vec(50, 50, data).unwrap();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let h = hubness_report(&s, 10, dir).unwrap();
            assert_eq!(h.occurrence.iter().sum::<usize>(), 500);
        }
        assert!(hubness_report(&s, 51, Direction::TextToImage).is_err());
    }

    #[test]
    fn fold_average_equals_mean_of_per_fold_evaluations() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (images, cpi) = (8, 2);
        let data: Vec<f64> = (0..images * images * cpi).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Matrix::from_vec(images, images * cpi, data).unwrap();
        let avg = fold_averaged(&s, cpi, 4).unwrap();

        let mut manual = Vec::new();
        for f in 0..2 {
            let mut sub = Matrix::zeros(4, 8);
            for r in 0..4 {
                let row = s.row(f * 4 + r);
                sub.row_mut(r).copy_from_slice(&row[f * 8..f * 8 + 8]);
            }
            manual.push(evaluate(&sub, cpi).unwrap());
        }
        let expect = (manual[0].rsum + manual[1].rsum) / 2.0;
        assert!((avg.rsum - expect).abs() < 1e-12);
        assert!(fold_averaged(&s, cpi, 0).is_err());
        assert!(fold_averaged(&s, cpi, 9).is_err());
    }
}
