mod common;

use hypersolid::geometry::{effective_rank, geometry_report};
use hypersolid::probes::{knn_probe, linear_probe, LinearProbeConfig};
use hypersolid::topology::energy_walk;
use hypersolid::{Array, EmbeddingSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn clustered(seed: u64, n: usize, d: usize, k: usize, sigma: f64) -> EmbeddingSet {
    let centers = gaussian_rows(seed ^ 0xabc, k, d);
    let noise = gaussian_rows(seed, n, d);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| centers[i % k].iter().zip(&noise[i]).map(|(c, e)| c + sigma * e).collect())
        .collect();
    EmbeddingSet::new(Array::from_rows(&rows).unwrap(), Some((0..n).map(|i| i % k).collect())).unwrap()
}

fn rescale_rows(set: &EmbeddingSet, factors: &[f64]) -> EmbeddingSet {
    let rows: Vec<Vec<f64>> = (0..set.len())
        .map(|i| set.row(i).iter().map(|v| v * factors[i]).collect())
        .collect();
    EmbeddingSet::new(Array::from_rows(&rows).unwrap(), set.labels().map(|l| l.to_vec())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn knn_invariant_to_row_rescaling(seed in any::<u64>(), k in 1usize..8) {
        let train = clustered(seed, 60, 5, 4, 1.0);
        let test = clustered(seed.wrapping_add(1), 30, 5, 4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..60).map(|_| 2f64.powi(rng.random_range(-8..8))).collect();
        let a = knn_probe(&train, &test, k).unwrap();
        let b = knn_probe(&rescale_rows(&train, &f), &test, k).unwrap();
        prop_assert_eq!(a.top1, b.top1);
        prop_assert_eq!(a.top5, b.top5);
        prop_assert!(a.top1 <= a.top5);
    }

    #[test]
    fn effective_rank_bounds(seed in any::<u64>(), n in 2usize..20, d in 1usize..12) {
        let rows = gaussian_rows(seed, n, d);
        let m = Array::from_rows(&rows).unwrap();
        let r = effective_rank(&m).unwrap();
        prop_assert!(r >= 1.0 - 1e-12);
        prop_assert!(r <= n.min(d) as f64 + 1e-9);
    }

    #[test]
    fn geometry_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let set = clustered(seed, 80, 6, 4, 0.7);
        let scaled = EmbeddingSet::new(set.vectors().scale(c), set.labels().map(|l| l.to_vec())).unwrap();
        let a = geometry_report(&set, 2000, seed).unwrap();
        let b = geometry_report(&scaled, 2000, seed).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * x.abs().max(1.0);
        prop_assert!(close(a.anisotropy.unwrap(), b.anisotropy.unwrap()));
        prop_assert!(close(a.cvn, b.cvn));
        prop_assert!(close(a.mpa_degrees, b.mpa_degrees));
        prop_assert!(close(a.d_prime.unwrap().value, b.d_prime.unwrap().value));
        prop_assert!(close(a.embedding_rank.unwrap(), b.embedding_rank.unwrap()));
        prop_assert!(close(a.centroid_rank.unwrap(), b.centroid_rank.unwrap()));
        let (sr, cr, er) = (a.structure_ratio.unwrap(), a.centroid_rank.unwrap(), a.embedding_rank.unwrap());
        prop_assert!((sr * cr - er).abs() <= 4.0 * f64::EPSILON * er);
    }

    #[test]
    fn energy_matches_exhaustive_search(seed in any::<u64>(), steps in 2usize..12) {
        let set = clustered(seed, 25, 4, 3, 0.5);
        let rows: Vec<Vec<f64>> = (0..set.len()).map(|i| set.row(i).to_vec()).collect();
        let pairs = [(0, 1), (2, 9), (4, 4), (7, 20)];
        let profile = energy_walk(&set, &pairs, steps, false).unwrap();
        for trace in &profile.traces {
            for (s, e) in trace.energy.iter().enumerate() {
                let t = s as f64 / steps as f64;
                let p: Vec<f64> = rows[trace.from].iter().zip(&rows[trace.to])
                    .map(|(a, b)| (1.0 - t) * a + t * b).collect();
                prop_assert_eq!(*e, common::brute_energy(&p, &rows));
            }
            prop_assert_eq!(trace.energy[0], 0.0);
            prop_assert_eq!(*trace.energy.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn energy_invariant_to_point_scale(seed in any::<u64>(), c in 1e-2f64..1e2) {
        let set = clustered(seed, 20, 4, 2, 0.5);
        let rows: Vec<Vec<f64>> = (0..set.len()).map(|i| set.row(i).to_vec()).collect();
        let p: Vec<f64> = rows[0].iter().zip(&rows[5]).map(|(a, b)| 0.5 * (a + b)).collect();
        let q: Vec<f64> = p.iter().map(|v| v * c).collect();
        let a = common::brute_energy(&p, &rows);
        let b = common::brute_energy(&q, &rows);
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn knn_separates_interleaved_clusters() {
    // 1-D values embedded as 2-D directions: class 0 near angle 0, class 1 near π/2
    let angle = |i: usize, base: f64| base + 0.01 * i as f64;
    let rows: Vec<[f64; 2]> = (0..20)
        .map(|i| {
            let a = angle(i / 2, if i % 2 == 0 { 0.0 } else { 1.5 });
            [a.cos(), a.sin()]
        })
        .collect();
    let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let set = EmbeddingSet::new(Array::from_rows(&rows).unwrap(), Some(labels)).unwrap();
    assert_eq!(knn_probe(&set, &set, 3).unwrap().top1, 1.0);
}

#[test]
fn knn_with_k_equal_to_train_size_uses_every_vote() {
    // 3 of class 0, 2 of class 1: every test point gets a 3-2 vote for class 0
    let train = EmbeddingSet::new(
        Array::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [0.5, 0.5]]).unwrap(),
        Some(vec![0, 0, 1, 1, 0]),
    )
    .unwrap();
    let test = EmbeddingSet::new(
        Array::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.2, 0.8], [0.7, 0.3]]).unwrap(),
        Some(vec![1, 0, 1, 0]),
    )
    .unwrap();
    let r = knn_probe(&train, &test, 5).unwrap();
    assert_eq!(r.top1, 0.5);
    assert_eq!(r.top5, 1.0);
}

#[test]
fn linear_probe_on_random_labels_is_near_chance() {
    let k = 4;
    let n = 4000;
    let rows = gaussian_rows(3, n, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let all = EmbeddingSet::new(Array::from_rows(&rows).unwrap(), Some(labels)).unwrap();
    let train = all.select(&(0..n / 2).collect::<Vec<_>>()).unwrap();
    let test = all.select(&(n / 2..n).collect::<Vec<_>>()).unwrap();
    let r = linear_probe(&train, &test, &LinearProbeConfig::default()).unwrap();
    assert!((r.top1 - 1.0 / k as f64).abs() < 0.05, "{}", r.top1);
}

#[test]
fn linear_probe_on_identical_split_matches_training_accuracy() {
    let set = clustered(9, 200, 6, 5, 0.8);
    let cfg = LinearProbeConfig::default();
    let a = linear_probe(&set, &set, &cfg).unwrap();
    let b = linear_probe(&set, &set, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.top1 > 0.9);
}
