//! Structural invariants that must hold for whole input families, checked
//! with randomized property tests plus a few deterministic finite-difference
//! probes. Values come from a coarse lattice (multiples of 1/128) so order
//! comparisons survive strictly monotone transforms without float collapse.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crossmodal_core::eval::Direction;
use crossmodal_core::{
    cosine_similarity_matrix, cross_similarity, evaluate, generate_synthetic, global_weights,
    hal_loss, hubness_report, knn, l2_normalize_rows, max_margin, nca_loss, rank_ground_truth,
    read_features, sum_margin, write_features, HalConfig, GlobalWeightConfig, LossResult, Matrix,
    MemoryBank, SimilarityMatrix, SyntheticSpec, TripletConfig, WeightMatrix,
};

fn lattice(n_cells: usize, span: i32) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-span..=span, n_cells)
        .prop_map(|v| v.into_iter().map(|q| q as f64 / 128.0).collect())
}

fn lattice_square(max_n: usize, span: i32) -> impl Strategy<Value = Matrix> {
    (2..=max_n).prop_flat_map(move |n| {
        lattice(n * n, span).prop_map(move |v| Matrix::from_vec(n, n, v).unwrap())
    })
}

fn sim(m: Matrix) -> SimilarityMatrix {
    SimilarityMatrix::from_values(m).unwrap()
}

proptest! {
    #[test]
    fn normalization_is_idempotent(rows in 1usize..6, cols in 1usize..6, scale in 0.5f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64((rows * 31 + cols) as u64);
        let data: Vec<f64> = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_vec(rows, cols, data).unwrap();
        let once = l2_normalize_rows(&m);
        let twice = l2_normalize_rows(&once.matrix);
        for (a, b) in once.matrix.as_slice().iter().zip(twice.matrix.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_ignores_positive_row_scaling(n in 2usize..5, d in 1usize..5, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect()).unwrap()
        };
        let text = draw(&mut rng, n, d);
        let image = draw(&mut rng, n, d);
        let base = cosine_similarity_matrix(&text, &image).unwrap();

        let mut text_scaled = text.clone();
        let mut image_scaled = image.clone();
        for r in 0..n {
            let st = rng.random_range(0.001..1000.0);
            let si = rng.random_range(0.001..1000.0);
            for v in text_scaled.row_mut(r) {
                *v *= st;
            }
            for v in image_scaled.row_mut(r) {
                *v *= si;
            }
        }
        let scaled = cosine_similarity_matrix(&text_scaled, &image_scaled).unwrap();
        for (a, b) in base.values().as_slice().iter().zip(scaled.values().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn sum_and_max_margin_agree_on_two_pairs(vals in lattice(4, 128), margin in 0.05f64..1.0) {
        let s = sim(Matrix::from_vec(2, 2, vals).unwrap());
        let cfg = TripletConfig { margin };
        let a = sum_margin(&s, &cfg);
        let b = max_margin(&s, &cfg);
        prop_assert!((a.value - b.value).abs() <= 1e-12);
        for (x, y) in a.d_s.as_slice().iter().zip(b.d_s.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn nca_softmax_rows_are_normalized(m in lattice_square(6, 128)) {
        let n = m.rows();
        let out = nca_loss(&sim(m));
        // d_s row = softmax(row) - indicator, so each row sums to zero and
        // adding the indicator back recovers a probability vector.
        for i in 0..n {
            let row_sum: f64 = out.d_s.row(i).iter().sum();
            prop_assert!(row_sum.abs() <= 1e-12);
            let softmax_sum = row_sum + 1.0;
            prop_assert!((softmax_sum - 1.0).abs() <= 1e-12);
            for (j, v) in out.d_s.row(i).iter().enumerate() {
                let p = v + if i == j { 1.0 } else { 0.0 };
                prop_assert!(p > 0.0 && p < 1.0 + 1e-12);
            }
        }
    }

    // Mathematically the full-weight loss is strictly increasing in every
    // off-diagonal similarity at any temperature; the probe uses a moderate
    // one so the increase stays far above float noise.
    #[test]
    fn unit_weight_loss_rises_with_any_off_diagonal(m in lattice_square(4, 64), idx in 0usize..16) {
        let n = m.rows();
        let (i, j) = (idx / n % n, idx % n);
        prop_assume!(i != j);
        let cfg = HalConfig { gamma: 2.0, epsilon: 0.3 };
        let w = WeightMatrix::ones(n);
        let before = hal_loss(&sim(m.clone()), &w, &cfg).unwrap().value;
        let mut bumped = m;
        bumped.set(i, j, bumped.get(i, j) + 0.25);
        let after = hal_loss(&sim(bumped), &w, &cfg).unwrap().value;
        prop_assert!(after > before, "{after} should exceed {before}");
    }

    #[test]
    fn zero_weights_reduce_loss_to_its_plateau(m in lattice_square(6, 100), gamma in 0.5f64..50.0) {
        let n = m.rows();
        let cfg = HalConfig { gamma, epsilon: 0.3 };
        let w = WeightMatrix::new(Matrix::zeros(n, n)).unwrap();
        let out = hal_loss(&sim(m), &w, &cfg).unwrap();
        // Every exponent is zero, each direction contributes log(1 + (n-1))
        // per anchor, and the diagonal term vanishes.
        let expected = 2.0 * (n as f64).ln() / gamma;
        if n == 2 {
            prop_assert_eq!(out.value, 2.0 * 2.0f64.ln() / gamma);
        }
        prop_assert!((out.value - expected).abs() <= 1e-15);
        prop_assert!(out.d_s.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn recall_is_monotone_and_rsum_bounded(images in 2usize..8, cpi in 1usize..3, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = images * cpi;
        let data: Vec<f64> = (0..images * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Matrix::from_vec(images, cols, data).unwrap();
        let summary = evaluate(&s, cpi).unwrap();
        for rep in [&summary.image_to_text, &summary.text_to_image] {
            prop_assert!(rep.r_at_1 <= rep.r_at_5 + 1e-12);
            prop_assert!(rep.r_at_5 <= rep.r_at_10 + 1e-12);
            prop_assert!((0.0..=100.0).contains(&rep.r_at_10));
        }
        prop_assert!((0.0..=600.0).contains(&summary.rsum));
    }

    #[test]
    fn ranks_survive_strictly_monotone_transforms(images in 2usize..7, cpi in 1usize..4, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let cols = images * cpi;
        // Lattice-valued scores: distinct entries stay distinct after both
        // transforms, equal entries stay equal, so tie handling is untouched.
        let data: Vec<f64> = (0..images * cols).map(|_| rng.random_range(-128..=128) as f64 / 128.0).collect();
        let s = Matrix::from_vec(images, cols, data).unwrap();
        let affine = Matrix::from_vec(images, cols, s.as_slice().iter().map(|v| 0.5 * v + 7.0).collect()).unwrap();
        let expo = Matrix::from_vec(images, cols, s.as_slice().iter().map(|v| v.exp()).collect()).unwrap();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let base = rank_ground_truth(&s, dir, cpi).unwrap();
            prop_assert_eq!(&rank_ground_truth(&affine, dir, cpi).unwrap(), &base);
            prop_assert_eq!(&rank_ground_truth(&expo, dir, cpi).unwrap(), &base);
        }
    }

    #[test]
    fn occurrence_counts_total_k_per_query(images in 3usize..8, cpi in 1usize..3, k in 1usize..4, seed in 0u64..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let cols = images * cpi;
        prop_assume!(k <= images && k <= cols);
        let data: Vec<f64> = (0..images * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Matrix::from_vec(images, cols, data).unwrap();
        let t2i = hubness_report(&s, k, Direction::TextToImage).unwrap();
        prop_assert_eq!(t2i.occurrence.len(), images);
        prop_assert_eq!(t2i.occurrence.iter().sum::<usize>(), k * cols);
        let i2t = hubness_report(&s, k, Direction::ImageToText).unwrap();
        prop_assert_eq!(i2t.occurrence.len(), cols);
        prop_assert_eq!(i2t.occurrence.iter().sum::<usize>(), k * images);
    }

    #[test]
    fn feature_files_round_trip_through_f32(rows in 1usize..6, cols in 1usize..6, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF11E);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = Matrix::from_vec(rows, cols, data).unwrap();
        let path = std::env::temp_dir().join(format!(
            "crossmodal-prop-{}-{rows}x{cols}-{seed}.embf",
            std::process::id()
        ));
        write_features(&path, &m).unwrap();
        let back = read_features(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back.shape(), (rows, cols));
        for (orig, got) in m.as_slice().iter().zip(back.as_slice()) {
            prop_assert_eq!(*got, *orig as f32 as f64);
        }
    }
}

fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Matrix {
    let data: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect();
    l2_normalize_rows(&Matrix::from_vec(rows, d, data).unwrap()).matrix
}

fn weight_fixture(seed: u64, n: usize) -> (Matrix, Matrix, Vec<usize>, MemoryBank, GlobalWeightConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let bank = MemoryBank::new(
        random_unit_rows(&mut rng, 30, d),
        random_unit_rows(&mut rng, 30, d),
        (1000..1030).collect(),
    )
    .unwrap();
    let text = random_unit_rows(&mut rng, n, d);
    let image = random_unit_rows(&mut rng, n, d);
    let cfg = GlobalWeightConfig {
        k: 3,
        alpha: 7.0,
        beta: 7.0,
        eps1: 0.2,
        eps2: 0.1,
        bank_fraction: 0.05,
    };
    (text, image, (0..n).collect(), bank, cfg)
}

#[test]
fn global_weights_stay_strictly_inside_the_unit_interval() {
    for seed in 0..40 {
        let n = 2 + (seed as usize % 3);
        let (text, image, ids, bank, cfg) = weight_fixture(seed, n);
        let w = global_weights(&text, &image, &ids, &bank, &cfg).unwrap();
        for &v in w.values().as_slice() {
            assert!(v > 0.0 && v < 1.0, "weight {v} left (0, 1)");
        }
    }
}

#[test]
fn crowding_a_pair_raises_its_whole_weight_row() {
    for seed in 0..20 {
        let n = 3;
        let (text, image, ids, bank, cfg) = weight_fixture(seed ^ 0x11, n);
        let before = global_weights(&text, &image, &ids, &bank, &cfg).unwrap();

        // Pull image 0's nearest bank text closer to it. The row stays that
        // image's 1-NN (its distance only shrank), so the k-neighbourhood is
        // unchanged as a set and exactly one of its similarities rises.
        let anchor = l2_normalize_rows(&image).matrix;
        let nn = knn(anchor.row(0), bank.text_bank(), 1, &[]).unwrap()[0];
        let mut crowded_texts = bank.text_bank().clone();
        for (slot, a) in (0..crowded_texts.cols()).zip(anchor.row(0).to_vec()) {
            let v = crowded_texts.get(nn, slot);
            crowded_texts.set(nn, slot, v + 0.4 * a);
        }
        let crowded_texts = l2_normalize_rows(&crowded_texts).matrix;
        let crowded =
            MemoryBank::new(crowded_texts, bank.image_bank().clone(), bank.source_indices().to_vec())
                .unwrap();
        let after = global_weights(&text, &image, &ids, &crowded, &cfg).unwrap();

        // A more crowded neighbourhood shrinks the aligned term's softmax
        // share, so the whole row gains emphasis: the pair needs more pull
        // to stand out and its negatives need more push.
        assert!(
            after.values().get(0, 0) > before.values().get(0, 0),
            "seed {seed}: aligned weight should rise"
        );
        for t in 1..n {
            assert!(
                after.values().get(0, t) > before.values().get(0, t),
                "seed {seed}: negative weight (0, {t}) should rise"
            );
        }
    }
}

#[test]
fn bank_rows_of_the_query_pair_are_invisible_to_it() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let text = random_unit_rows(&mut rng, 1, d);
        let image = random_unit_rows(&mut rng, 1, d);
        let bank_texts = random_unit_rows(&mut rng, 12, d);
        let bank_images = random_unit_rows(&mut rng, 12, d);
        let cfg = GlobalWeightConfig {
            k: 4,
            alpha: 9.0,
            beta: 9.0,
            eps1: 0.2,
            eps2: 0.1,
            bank_fraction: 0.05,
        };

        // Bank row 5 belongs to the query pair itself; planting the query's
        // own encodings there makes it the would-be nearest neighbour on
        // both sides, so any leak changes the weights.
        let mut with_own_texts = bank_texts.clone();
        let mut with_own_images = bank_images.clone();
        for c in 0..d {
            with_own_texts.set(5, c, text.get(0, c));
            with_own_images.set(5, c, image.get(0, c));
        }
        let mut sources: Vec<usize> = (100..112).collect();
        sources[5] = 7;
        let with_own = MemoryBank::new(with_own_texts, with_own_images, sources).unwrap();

        let keep: Vec<usize> = (0..12).filter(|&r| r != 5).collect();
        let without = MemoryBank::new(
            bank_texts.select_rows(&keep).unwrap(),
            bank_images.select_rows(&keep).unwrap(),
            keep.iter().map(|&r| 100 + r).collect(),
        )
        .unwrap();

        let a = global_weights(&text, &image, &[7], &with_own, &cfg).unwrap();
        let b = global_weights(&text, &image, &[7], &without, &cfg).unwrap();
        assert_eq!(a.values().get(0, 0), b.values().get(0, 0), "seed {seed}");
    }
}

fn fd_over_scores(
    loss: impl Fn(&SimilarityMatrix) -> LossResult,
    s: &Matrix,
    tolerance: f64,
) {
    let h = 1e-6;
    let out = loss(&sim(s.clone()));
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let mut plus = s.clone();
            plus.set(i, j, plus.get(i, j) + h);
            let mut minus = s.clone();
            minus.set(i, j, minus.get(i, j) - h);
            let fd = (loss(&sim(plus)).value - loss(&sim(minus)).value) / (2.0 * h);
            let analytic = out.d_s.get(i, j);
            let scale = analytic.abs().max(fd.abs()).max(1.0);
            assert!(
                (fd - analytic).abs() / scale <= tolerance,
                "entry ({i}, {j}): fd {fd} vs analytic {analytic}"
            );
        }
    }
}

#[test]
fn score_gradients_match_finite_differences() {
    let margin = 0.37;
    let hal_cfg = HalConfig { gamma: 8.0, epsilon: 0.3 };
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let mut done = 0;
    'outer: while done < 20 {
        let n = 4;
        let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.8..0.8)).collect();
        let s = Matrix::from_vec(n, n, data).unwrap();
        // Both hinge families must sit well away from their kinks, otherwise
        // the central difference straddles a non-differentiable point.
        for a in 0..n {
            for b in 0..n {
                if a != b
                    && ((margin - s.get(a, a) + s.get(a, b)).abs() < 1e-3
                        || (margin - s.get(b, b) + s.get(a, b)).abs() < 1e-3)
                {
                    continue 'outer;
                }
            }
        }
        let w_data: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.05..0.95)).collect();
        let w = WeightMatrix::new(Matrix::from_vec(n, n, w_data).unwrap()).unwrap();

        fd_over_scores(|s| sum_margin(s, &TripletConfig { margin }), &s, 1e-5);
        fd_over_scores(|s| max_margin(s, &TripletConfig { margin }), &s, 1e-5);
        fd_over_scores(nca_loss, &s, 1e-5);
        fd_over_scores(|s| hal_loss(s, &w, &hal_cfg).unwrap(), &s, 1e-5);
        done += 1;
    }
}

fn base_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_images: 300,
        captions_per_image: 2,
        d_text: 16,
        d_image: 16,
        latent_dim: 4,
        noise_std: 0.2,
        label_noise_fraction: 0.0,
        hub_bias: 0.0,
        seed: 99,
    }
}

#[test]
fn generation_is_pure_in_the_seed() {
    let spec = base_spec();
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.dataset.text_features().as_slice(), b.dataset.text_features().as_slice());
    assert_eq!(a.dataset.image_features().as_slice(), b.dataset.image_features().as_slice());
    assert_eq!(a.latents.as_slice(), b.latents.as_slice());
    assert_eq!(a.relabeled, b.relabeled);
    assert_eq!(a.hub_images, b.hub_images);
    assert_eq!(a.hub_captions, b.hub_captions);

    let different = generate_synthetic(&SyntheticSpec { seed: 100, ..spec }).unwrap();
    assert_ne!(
        a.dataset.text_features().as_slice(),
        different.dataset.text_features().as_slice()
    );
}

#[test]
fn hub_injection_skews_raw_neighbourhoods() {
    let plain_spec = base_spec();
    let biased_spec = SyntheticSpec { hub_bias: 0.8, ..plain_spec };
    let skew = |spec: &SyntheticSpec| {
        let data = generate_synthetic(spec).unwrap().dataset;
        let s = cross_similarity(data.text_features(), data.image_features()).unwrap();
        hubness_report(&s, 10, Direction::TextToImage).unwrap().skewness
    };
    let plain = skew(&plain_spec);
    let biased = skew(&biased_spec);
    assert!(
        biased > plain,
        "hub bias should raise occurrence skew: {biased} vs {plain}"
    );
}
