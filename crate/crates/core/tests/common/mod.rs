//! Brute-force reference implementations shared by the oracle suite and the
//! acceptance gate: losses as direct nested-loop formula evaluations, kNN as
//! a full sort, rankings as per-query argsorts. Each check panics with the
//! offending values when the fast path and the oracle disagree.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crossmodal_core::eval::Direction;
use crossmodal_core::{
    hal_loss, knn, max_margin, nca_loss, rank_ground_truth, retrieval_report, sum_margin,
    HalConfig, Matrix, SimilarityMatrix, TripletConfig, WeightMatrix,
};

pub const TOL: f64 = 1e-12;

fn rng_for(test: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xC0FFEE ^ test)
}

fn random_similarity(rng: &mut ChaCha8Rng, n: usize) -> SimilarityMatrix {
    let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    SimilarityMatrix::from_values(Matrix::from_vec(n, n, data).unwrap()).unwrap()
}

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= TOL, "{what}: {a} vs {b}");
}

fn close_matrices(a: &Matrix, b: &Matrix, what: &str) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() <= TOL, "{what}: {x} vs {y}");
    }
}

pub fn check_sum_margin(instances: usize) {
    let mut rng = rng_for(1);
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let margin = rng.random_range(0.05..0.5);
        let s = random_similarity(&mut rng, n);
        let cfg = TripletConfig { margin };

        let sv = s.values();
        let mut value = 0.0;
        let mut d = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                // Image anchor a against wrong caption b.
                let h = margin - sv.get(a, a) + sv.get(a, b);
                if h > 0.0 {
                    value += h;
                    d.set(a, b, d.get(a, b) + 1.0);
                    d.set(a, a, d.get(a, a) - 1.0);
                }
                // Caption anchor b against wrong image a.
                let h = margin - sv.get(b, b) + sv.get(a, b);
                if h > 0.0 {
                    value += h;
                    d.set(a, b, d.get(a, b) + 1.0);
                    d.set(b, b, d.get(b, b) - 1.0);
                }
            }
        }

        let fast = sum_margin(&s, &cfg);
        close(fast.value, value, "sum value");
        close_matrices(&fast.d_s, &d, "sum gradient");
    }
}

pub fn check_max_margin(instances: usize) {
    let mut rng = rng_for(2);
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let margin = rng.random_range(0.05..0.5);
        let s = random_similarity(&mut rng, n);
        let cfg = TripletConfig { margin };

        let sv = s.values();
        let mut value = 0.0;
        let mut d = Matrix::zeros(n, n);
        for a in 0..n {
            // Hardest wrong caption for image a: highest off-diagonal in row a.
            let mut best = None;
            for j in 0..n {
                if j != a && best.is_none_or(|(v, _)| sv.get(a, j) > v) {
                    best = Some((sv.get(a, j), j));
                }
            }
            let (v, j) = best.unwrap();
            let h = margin - sv.get(a, a) + v;
            if h > 0.0 {
                value += h;
                d.set(a, j, d.get(a, j) + 1.0);
                d.set(a, a, d.get(a, a) - 1.0);
            }
            // Hardest wrong image for caption a: highest off-diagonal in column a.
            let mut best = None;
            for i in 0..n {
                if i != a && best.is_none_or(|(v, _)| sv.get(i, a) > v) {
                    best = Some((sv.get(i, a), i));
                }
            }
            let (v, i) = best.unwrap();
            let h = margin - sv.get(a, a) + v;
            if h > 0.0 {
                value += h;
                d.set(i, a, d.get(i, a) + 1.0);
                d.set(a, a, d.get(a, a) - 1.0);
            }
        }

        let fast = max_margin(&s, &cfg);
        close(fast.value, value, "max value");
        close_matrices(&fast.d_s, &d, "max gradient");
    }
}

pub fn check_nca(instances: usize) {
    let mut rng = rng_for(3);
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let s = random_similarity(&mut rng, n);
        let sv = s.values();

        let mut value = 0.0;
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            let z: f64 = (0..n).map(|j| sv.get(i, j).exp()).sum();
            value += z.ln() - sv.get(i, i);
            for j in 0..n {
                let soft = sv.get(i, j).exp() / z;
                d.set(i, j, soft - if i == j { 1.0 } else { 0.0 });
            }
        }

        let fast = nca_loss(&s);
        close(fast.value, value, "nca value");
        close_matrices(&fast.d_s, &d, "nca gradient");
    }
}

pub fn check_hal(instances: usize) {
    let mut rng = rng_for(4);
    for round in 0..instances {
        let n = rng.random_range(2..=6);
        let gamma = [1.0, 5.0, 30.0][round % 3];
        let eps = rng.random_range(0.0..0.5);
        let s = random_similarity(&mut rng, n);
        let w_data: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = WeightMatrix::new(Matrix::from_vec(n, n, w_data).unwrap()).unwrap();
        let cfg = HalConfig { gamma, epsilon: eps };

        let sv = s.values();
        let wv = w.values();
        let x = |i: usize, j: usize| wv.get(i, j) * (sv.get(i, j) - eps);
        let mut value = 0.0;
        for i in 0..n {
            let col: f64 = (0..n).filter(|&m| m != i).map(|m| (gamma * x(m, i)).exp()).sum();
            let row: f64 = (0..n).filter(|&t| t != i).map(|t| (gamma * x(i, t)).exp()).sum();
            value += (1.0 + col).ln() / gamma + (1.0 + row).ln() / gamma
                - (1.0 + wv.get(i, i) * sv.get(i, i)).ln();
        }
        value /= n as f64;

        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    let w_ii = wv.get(i, i);
                    d.set(i, j, -w_ii / (1.0 + w_ii * sv.get(i, i)) / n as f64);
                } else {
                    let col: f64 = (0..n).filter(|&m| m != j).map(|m| (gamma * x(m, j)).exp()).sum();
                    let row: f64 = (0..n).filter(|&t| t != i).map(|t| (gamma * x(i, t)).exp()).sum();
                    let e = (gamma * x(i, j)).exp();
                    d.set(i, j, wv.get(i, j) * (e / (1.0 + col) + e / (1.0 + row)) / n as f64);
                }
            }
        }

        let fast = hal_loss(&s, &w, &cfg).unwrap();
        close(fast.value, value, "hal value");
        close_matrices(&fast.d_s, &d, "hal gradient");
    }
}

pub fn check_knn(instances: usize) {
    let mut rng = rng_for(5);
    for _ in 0..instances {
        let b = rng.random_range(2..=200);
        let d = rng.random_range(1..=16);
        let data: Vec<f64> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let points = Matrix::from_vec(b, d, data).unwrap();
        let query: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exclude: Vec<usize> = (0..b).filter(|_| rng.random_range(0.0..1.0) < 0.1).collect();
        let usable = b - exclude.len();
        if usable == 0 {
            continue;
        }
        let k = rng.random_range(1..=usable.min(8));

        let mut scored: Vec<(f64, usize)> = (0..b)
            .filter(|i| !exclude.contains(i))
            .map(|i| {
                let row = points.row(i);
                let dist: f64 = row.iter().zip(&query).map(|(p, q)| (p - q) * (p - q)).sum();
                (dist, i)
            })
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<usize> = scored[..k].iter().map(|&(_, i)| i).collect();

        assert_eq!(knn(&query, &points, k, &exclude).unwrap(), expected);
    }
}

pub fn check_rank_ground_truth(instances: usize) {
    let mut rng = rng_for(6);
    for _ in 0..instances {
        let images = rng.random_range(2..=8);
        let cpi = rng.random_range(1..=3);
        let cols = images * cpi;
        let data: Vec<f64> = (0..images * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Matrix::from_vec(images, cols, data).unwrap();

        // Position of index `target` after sorting descending, ties by index.
        let position = |scores: &[f64], target: usize| -> usize {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.iter().position(|&i| i == target).unwrap() + 1
        };

        let mut i2t = Vec::new();
        for i in 0..images {
            let row = s.row(i).to_vec();
            let best = (i * cpi..(i + 1) * cpi).map(|gt| position(&row, gt)).min().unwrap();
            i2t.push(best);
        }
        assert_eq!(rank_ground_truth(&s, Direction::ImageToText, cpi).unwrap(), i2t);

        let mut t2i = Vec::new();
        for j in 0..cols {
            let col: Vec<f64> = (0..images).map(|i| s.get(i, j)).collect();
            t2i.push(position(&col, j / cpi));
        }
        assert_eq!(rank_ground_truth(&s, Direction::TextToImage, cpi).unwrap(), t2i);
    }
}

pub fn check_retrieval_report(instances: usize) {
    let mut rng = rng_for(7);
    for _ in 0..instances {
        let len = rng.random_range(1..=40);
        let ranks: Vec<usize> = (0..len).map(|_| rng.random_range(1..=50)).collect();
        let rep = retrieval_report(&ranks, Direction::ImageToText).unwrap();

        let frac = |k: usize| {
            100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / len as f64
        };
        close(rep.r_at_1, frac(1), "r@1");
        close(rep.r_at_5, frac(5), "r@5");
        close(rep.r_at_10, frac(10), "r@10");

        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let med = if len % 2 == 1 {
            sorted[len / 2] as f64
        } else {
            (sorted[len / 2 - 1] as f64 + sorted[len / 2] as f64) / 2.0
        };
        close(rep.med_r, med, "medR");
        close(rep.mean_r, ranks.iter().sum::<usize>() as f64 / len as f64, "meanR");
    }
}
